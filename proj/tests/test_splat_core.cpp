#include "doctest.h"
#include "test_util.hpp"

#include "blobforge/core/error.hpp"
#include "blobforge/splat/scene_io.hpp"

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace bf;
using namespace bf::testing;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "blobforge_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("concat keeps both blob lists and unions extents") {
    std::mt19937_64 rng(1);
    const GaussianScene a = random_scene(rng, 3);
    const GaussianScene b = random_scene(rng, 5, 2.0);
    const GaussianScene c = concat(a, b);
    REQUIRE(c.size() == 8);
    for (std::size_t i = 0; i < 3; ++i) CHECK(c[i] == a[i]);
    for (std::size_t i = 0; i < 5; ++i) CHECK(c[3 + i] == b[i]);
    for (const auto& blob : c.blobs()) CHECK(c.extent().contains(blob.position.cast<double>()));
    CHECK(concat(a, GaussianScene{}) == a);
}

TEST_CASE("concat renders like one merged depth-sorted blob list") {
    std::mt19937_64 rng(2);
    const GaussianScene a = random_scene(rng, 2);
    const GaussianScene b = random_scene(rng, 3);
    const GaussianScene c = concat(a, b);
    const Camera cam = test_camera(16);
    CHECK(max_abs_diff(render(c, cam).rgb, brute_force_composite(c, cam, Vec3::Ones())) < 1e-6);
}

TEST_CASE("remove deletes listed blobs and preserves order") {
    std::mt19937_64 rng(3);
    const GaussianScene s = random_scene(rng, 10);
    const std::vector<std::size_t> idx{2, 7};
    const GaussianScene r = remove(s, idx);
    REQUIRE(r.size() == 8);
    std::vector<std::size_t> expect{0, 1, 3, 4, 5, 6, 8, 9};
    for (std::size_t k = 0; k < expect.size(); ++k) CHECK(r[k] == s[expect[k]]);
    CHECK(remove(s, std::vector<std::size_t>{}) == s);
    CHECK(remove(r, std::vector<std::size_t>{}) == r);
}

TEST_CASE("remove rejects out-of-range indices and leaves the scene alone") {
    std::mt19937_64 rng(4);
    const GaussianScene s = random_scene(rng, 4);
    const GaussianScene copy = s;
    CHECK_THROWS_AS(remove(s, std::vector<std::size_t>{1, 4}), InvalidArgument);
    CHECK(s == copy);
}

TEST_CASE("remove equals zeroing opacities") {
    std::mt19937_64 rng(5);
    const GaussianScene s = random_scene(rng, 10);
    const std::vector<std::size_t> idx{0, 3, 4};
    GaussianScene z = s;
    for (auto i : idx) z.mutable_blobs()[i].opacity_logit = -1e30f;
    const Camera cam = test_camera(16);
    CHECK(max_abs_diff(render(remove(s, idx), cam).rgb, render(z, cam).rgb) < 1e-6);
}

TEST_CASE("concat then removing the second range recovers the first operand") {
    std::mt19937_64 rng(6);
    const GaussianScene a = random_scene(rng, 4);
    const GaussianScene b = random_scene(rng, 6);
    std::vector<std::size_t> second(6);
    std::iota(second.begin(), second.end(), 4);
    CHECK(remove(concat(a, b), second) == a);
}

TEST_CASE("densify_and_prune: below thresholds is a no-op") {
    std::mt19937_64 rng(7);
    const GaussianScene s = random_scene(rng, 20);
    const std::vector<double> g(20, 0.0);
    const auto res = densify_and_prune(s, g, DensifyOptions{}, rng);
    CHECK(res.scene == s);
    CHECK(res.cloned + res.split + res.pruned == 0);
}

TEST_CASE("densify_and_prune: prunes transparent blobs") {
    std::mt19937_64 rng(8);
    GaussianScene s = random_scene(rng, 5);
    s.mutable_blobs()[2].opacity_logit = static_cast<float>(logit(0.001));
    const auto res = densify_and_prune(s, std::vector<double>(5, 0.0), DensifyOptions{}, rng);
    CHECK(res.scene.size() == 4);
    CHECK(res.pruned == 1);
}

TEST_CASE("densify_and_prune: large high-gradient blob splits into two smaller children") {
    std::mt19937_64 rng(9);
    GaussianScene s = random_scene(rng, 4);
    s.mutable_blobs()[1].log_scale = Vec3f(-0.5f, -1.f, -0.8f);
    std::vector<double> g(4, 0.0);
    g[1] = 1e-3;
    const auto res = densify_and_prune(s, g, DensifyOptions{}, rng);
    CHECK(res.split == 1);
    REQUIRE(res.scene.size() == 5);
    const GaussianBlob& parent = s[1];
    const Mat3 inv = parent.covariance().inverse();
    for (std::size_t k = 3; k < 5; ++k) {
        const GaussianBlob& child = res.scene[k];
        for (int a = 0; a < 3; ++a)
            CHECK(std::exp(child.log_scale[a]) == doctest::Approx(std::exp(parent.log_scale[a]) / 1.6).epsilon(1e-6));
        const Vec3 d = child.position.cast<double>() - parent.position.cast<double>();
        CHECK(std::sqrt(d.dot(inv * d)) <= 3.0 + 1e-4);
        CHECK(res.origin[k] == -1);
        CHECK(res.parent[k] == 1);
    }
    CHECK(res.parent[0] == 0);
    CHECK(res.parent[2] == 3);
}

TEST_CASE("densify_and_prune: small blobs clone, size cap honoured, invariants kept") {
    std::mt19937_64 rng(10);
    GaussianScene s = random_scene(rng, 30, 1.0, -7.0, -6.0);
    std::vector<double> g(30, 1.0);
    DensifyOptions opts;
    opts.max_blobs = 40;
    const auto res = densify_and_prune(s, g, opts, rng);
    CHECK(res.cloned == 10);
    CHECK(res.scene.size() == 40);
    for (const auto& b : res.scene.blobs()) {
        CHECK(b.opacity() > 0.0);
        CHECK(b.opacity() < 1.0);
        CHECK(std::abs(b.rotation.cast<double>().norm() - 1.0) < 1e-6);
    }
}

TEST_CASE("scene save/load round-trips bitwise") {
    std::mt19937_64 rng(11);
    const GaussianScene s = random_scene(rng, 4096);
    const auto path = temp_path("roundtrip.ply");
    save_scene(s, path);
    const GaussianScene back = load_scene(path);
    CHECK(back == s);
    CHECK(back.generation() == s.generation());
}

TEST_CASE("load_scene names the record holding a NaN") {
    std::mt19937_64 rng(12);
    GaussianScene s = random_scene(rng, 5);
    s.mutable_blobs()[3].position.y() = std::numeric_limits<float>::quiet_NaN();
    const auto path = temp_path("nan.ply");
    save_scene(s, path);
    try {
        load_scene(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("record 3") != std::string::npos);
    }
}

TEST_CASE("load_scene rejects truncated files and bad headers") {
    std::mt19937_64 rng(13);
    const auto path = temp_path("trunc.ply");
    save_scene(random_scene(rng, 8), path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 10);
    CHECK_THROWS_AS(load_scene(path), IoError);

    const auto bad = temp_path("bad.ply");
    std::ofstream(bad) << "ply\nformat binary_little_endian 1.0\nelement vertex -3\nend_header\n";
    CHECK_THROWS_AS(load_scene(bad), IoError);
}

TEST_CASE("importing a 4096-point cloud gives 4096 default blobs") {
    std::mt19937_64 rng(14);
    const auto path = temp_path("cloud.xyz");
    {
        std::ofstream f(path);
        std::uniform_real_distribution<double> u(-1, 1);
        for (int i = 0; i < 4096; ++i) f << u(rng) << ' ' << u(rng) << ' ' << u(rng) << '\n';
    }
    const PointCloud pc = load_point_cloud(path);
    REQUIRE(pc.points.size() == 4096);
    const GaussianScene s = scene_from_points(pc.points, pc.colors);
    CHECK(s.size() == 4096);
    const auto nn = nearest_neighbor_distances(pc.points);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(s[i].opacity() == doctest::Approx(0.1).epsilon(1e-6));
        CHECK(std::exp(s[i].log_scale[0]) == doctest::Approx(nn[i]).epsilon(1e-5));
    }
}

TEST_CASE("nearest_neighbor_distances agrees with a brute-force scan") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Vec3> pts(500);
    for (auto& p : pts) p = Vec3(u(rng), 0.3 * u(rng), u(rng));
    const auto nn = nearest_neighbor_distances(pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double best = 1e30;
        for (std::size_t j = 0; j < pts.size(); ++j)
            if (j != i) best = std::min(best, (pts[i] - pts[j]).norm());
        CHECK(nn[i] == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("uniform sphere init: 4096 blobs inside the ball") {
    std::mt19937_64 rng(16);
    const GaussianScene s = init_uniform_sphere(rng);
    CHECK(s.size() == 4096);
    for (const auto& b : s.blobs()) CHECK(b.position.norm() <= 1.0f + 1e-6f);
}
