#include "blobforge/core/adamw.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/field/checkpoint.hpp"
#include "blobforge/field/volume.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

using namespace bf;

namespace {

HashFieldConfig small_config(double init_range = 1e-4) {
    HashFieldConfig c;
    c.grid.levels = 4;
    c.grid.base_resolution = 4;
    c.grid.max_resolution = 32;
    c.grid.log2_table = 12;
    c.grid.init_range = init_range;
    c.hidden = 16;
    c.geo_features = 8;
    c.sh_degree = 2;
    c.seed = 5;
    return c;
}

/// Analytic density: constant inside a ball, zero outside.
struct SphereField : RadianceField {
    double radius = 0.5;
    double inside = 10.0;
    FieldSample query(const Vec3& p, const Vec3&) const override {
        return {p.norm() <= radius ? inside : 0.0, Vec3(0.8, 0.3, 0.1)};
    }
    Aabb bounds() const override { return {Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }
};

/// Smooth Gaussian blob of density with a position-dependent colour.
struct GaussianField : RadianceField {
    FieldSample query(const Vec3& p, const Vec3&) const override {
        return {40.0 * std::exp(-p.squaredNorm() / 0.09),
                Vec3(0.5 + 0.4 * std::tanh(p.x()), 0.5 + 0.4 * std::tanh(p.y()), 0.6)};
    }
    Aabb bounds() const override { return {Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }
};

/// Huge density everywhere; occupancy decides what is visible.
struct WallField : RadianceField {
    FieldSample query(const Vec3&, const Vec3&) const override { return {1e5, Vec3(0.2, 0.4, 0.6)}; }
    Aabb bounds() const override { return {Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }
};

Camera front_camera(int size) {
    return look_at(Vec3(0.4, 0.3, -3.0), Vec3::Zero(), Vec3(0, -1, 0), 0.7, size, size);
}

/// Distance from the ball centre to the nearest point of a voxel.
double voxel_min_dist(const OccupancyGrid& g, int i, int j, int k) {
    const Vec3 vs = g.voxel_size();
    const Vec3 lo = g.bounds.lo + Vec3(i, j, k).cwiseProduct(vs);
    const Vec3 hi = lo + vs;
    return Vec3::Zero().cwiseMax(lo).cwiseMin(hi).norm();
}

} // namespace

TEST_CASE("hash_index: dense row-major layout") {
    HashGridConfig c;
    c.resolutions = {16};
    c.log2_table = 13; // 17^3 = 4913 <= 8192
    std::mt19937_64 rng(1);
    HashGrid g(c, rng);
    REQUIRE(g.dense(0));
    CHECK(g.rows(0) == 17u * 17u * 17u);
    CHECK(g.hash_index({0, 0, 0}, 0) == 0u);
    CHECK(g.hash_index({1, 0, 0}, 0) == 1u);
    CHECK(g.hash_index({0, 1, 0}, 0) == 17u);
    CHECK(g.hash_index({0, 0, 1}, 0) == 289u);
    // Bijective over all corners.
    std::vector<int> seen(g.rows(0), 0);
    for (int z = 0; z <= 16; ++z)
        for (int y = 0; y <= 16; ++y)
            for (int x = 0; x <= 16; ++x) ++seen[g.hash_index({x, y, z}, 0)];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
}

TEST_CASE("hash_index: hashed level spreads cells evenly") {
    HashGridConfig c;
    c.resolutions = {512};
    c.log2_table = 12;
    std::mt19937_64 rng(2);
    HashGrid g(c, rng, true);
    REQUIRE_FALSE(g.dense(0));
    // Independent reference hash.
    auto ref = [](std::uint64_t x, std::uint64_t y, std::uint64_t z) {
        return ((x * 1ULL) ^ (y * 2654435761ULL) ^ (z * 805459861ULL)) % 4096ULL;
    };
    std::uniform_int_distribution<int> u(0, 512);
    std::vector<int> load(4096, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const int x = u(rng), y = u(rng), z = u(rng);
        const auto h = g.hash_index({x, y, z}, 0);
        REQUIRE(h == ref(x, y, z));
        ++load[h];
    }
    const double mean = static_cast<double>(n) / 4096.0;
    CHECK(*std::max_element(load.begin(), load.end()) <= 3.0 * mean);
}

TEST_CASE("level resolutions follow a geometric progression") {
    HashGridConfig c; // 16 levels, 16 -> 2048
    const auto r = c.level_resolutions();
    REQUIRE(r.size() == 16u);
    CHECK(r.front() == 16);
    CHECK(r.back() == 2048);
    CHECK(std::is_sorted(r.begin(), r.end(), std::less_equal<>()));
    for (std::size_t k = 1; k < r.size(); ++k) CHECK(r[k] > r[k - 1]);
    HashGridConfig bad;
    bad.resolutions = {8, 8};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("encode: corner nodes, zero features, barycentric weights") {
    HashGridConfig c;
    c.resolutions = {4, 8};
    c.log2_table = 10;
    c.init_range = 1.0;
    std::mt19937_64 rng(3);
    HashGrid g(c, rng);
    const int d = g.feature_dim();
    std::vector<double> out(g.output_dim());

    SUBCASE("exact corner returns that row") {
        const Vec3 u(0.25, 0.5, 0.75); // corner (1,2,3) of level 0, (2,4,6) of level 1
        g.encode(u, out);
        const auto r0 = g.row_offset(0) + g.hash_index({1, 2, 3}, 0);
        const auto r1 = g.row_offset(1) + g.hash_index({2, 4, 6}, 1);
        for (int k = 0; k < d; ++k) {
            CHECK(out[k] == g.params()[r0 * d + k]);
            CHECK(out[d + k] == g.params()[r1 * d + k]);
        }
    }
    SUBCASE("zero features encode to zero") {
        HashGrid z(c, rng, true);
        z.encode(Vec3(0.31, 0.77, 0.05), out);
        CHECK(std::all_of(out.begin(), out.end(), [](double v) { return v == 0.0; }));
    }
    SUBCASE("cell centre weights are 1/8") {
        const auto cs = g.corners(Vec3(1.5 / 4, 2.5 / 4, 0.5 / 4), 0);
        for (double w : cs.weight) CHECK(w == doctest::Approx(0.125).epsilon(1e-12));
    }
    SUBCASE("random points match a direct trilinear oracle") {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        for (int t = 0; t < 100; ++t) {
            const Vec3 u(u01(rng), u01(rng), u01(rng));
            g.encode(u, out);
            for (int l = 0; l < 2; ++l) {
                const int R = g.resolution(l);
                const Vec3 x = u * R;
                const Vec3 b = x.array().floor();
                const Vec3 f = x - b;
                for (int k = 0; k < d; ++k) {
                    double expect = 0.0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const double w = (dx ? f.x() : 1 - f.x()) * (dy ? f.y() : 1 - f.y()) * (dz ? f.z() : 1 - f.z());
                                const std::int64_t cx = static_cast<std::int64_t>(b.x()) + dx;
                                const std::int64_t cy = static_cast<std::int64_t>(b.y()) + dy;
                                const std::int64_t cz = static_cast<std::int64_t>(b.z()) + dz;
                                // Row-major for the dense levels used here.
                                const std::size_t row = g.row_offset(l) + cx + (R + 1) * (cy + (R + 1) * cz);
                                expect += w * g.params()[row * d + k];
                            }
                    CHECK(out[l * d + k] == doctest::Approx(expect).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("encode is Lipschitz within a cell") {
    HashGridConfig c;
    c.resolutions = {4, 8, 16};
    c.log2_table = 12;
    c.init_range = 1.0;
    std::mt19937_64 rng(4);
    HashGrid g(c, rng);
    double fmax = 0.0;
    for (double v : g.params()) fmax = std::max(fmax, std::abs(v));
    // Each feature is multilinear in the cell: |d feature / du| <= 2 fmax R per axis.
    const double lip = 2.0 * fmax * 16 * std::sqrt(3.0) * std::sqrt(static_cast<double>(g.output_dim()));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<double> a(g.output_dim()), b(g.output_dim());
    for (int t = 0; t < 200; ++t) {
        const Vec3 p(u01(rng), u01(rng), u01(rng));
        const Vec3 q = (p + Vec3::Constant(1e-3 * u01(rng))).cwiseMin(1.0);
        g.encode(p, a);
        g.encode(q, b);
        double dist = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) dist += (a[i] - b[i]) * (a[i] - b[i]);
        CHECK(std::sqrt(dist) <= lip * (p - q).norm() + 1e-12);
    }
}

TEST_CASE("query: zero tables give softplus(bias) and rgb stays in range") {
    HashField f(small_config(), true);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double expect = std::log1p(std::exp(-1.0));
    for (int t = 0; t < 200; ++t) {
        const Vec3 p(u(rng), u(rng), u(rng));
        const Vec3 dir = Vec3(u(rng), u(rng), u(rng)).normalized();
        CHECK(f.query(p, dir).sigma == doctest::Approx(expect).epsilon(1e-12));
        CHECK(f.density(p) == doctest::Approx(expect).epsilon(1e-12));
    }
    HashField r(small_config(2.0));
    for (int t = 0; t < 10000; ++t) {
        const auto s = r.query(Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng)));
        REQUIRE(s.sigma >= 0.0);
        REQUIRE((s.rgb.array() >= 0.0).all());
        REQUIRE((s.rgb.array() <= 1.0).all());
    }
}

TEST_CASE("sh_encode: band 0 constant and unit-sphere orthonormality") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n;
    const int m = 16;
    std::vector<double> gram(m * m, 0.0), y(m);
    const int samples = 200000;
    for (int s = 0; s < samples; ++s) {
        const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
        sh_encode(d, 3, y);
        CHECK_MESSAGE(y[0] == doctest::Approx(0.28209479177387814), "band 0");
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) gram[i * m + j] += y[i] * y[j];
    }
    const double area = 4.0 * std::numbers::pi / samples;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) CHECK(gram[i * m + j] * area == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(0.03).scale(1.0));
}

TEST_CASE("volrender: empty occupancy shows the background") {
    HashField f(small_config(1.0));
    const auto occ = OccupancyGrid::filled(f.bounds(), false);
    VolumeOptions o;
    o.background = Vec3(0.1, 0.2, 0.3);
    const auto r = volrender(f, front_camera(16), occ, o);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            CHECK(r.alpha.at(x, y) == 0.0);
            for (int c = 0; c < 3; ++c) CHECK(r.rgb.at(x, y, c) == o.background[c]);
        }
}

TEST_CASE("volrender: opaque slab saturates alpha at its entry depth") {
    WallField wall;
    auto occ = OccupancyGrid::filled(wall.bounds(), false);
    const int k = 20; // slab z in [0.25, 0.3125)
    for (int j = 0; j < occ.resolution; ++j)
        for (int i = 0; i < occ.resolution; ++i) occ.set(i, j, k, true);
    const Camera cam = look_at(Vec3(0, 0, -3), Vec3::Zero(), Vec3(0, -1, 0), 0.4, 16, 16);
    VolumeOptions o;
    const double delta = o.step_for(wall.bounds());
    const auto r = volrender(wall, cam, occ, o);
    const double entry = -1.0 + k * occ.voxel_size().z() + 3.0; // camera z of the slab face
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            CHECK(r.alpha.at(x, y) == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(std::abs(r.depth.at(x, y) - entry) <= delta);
            CHECK(r.rgb.at(x, y, 2) == doctest::Approx(0.6).epsilon(1e-6));
        }
}

TEST_CASE("volrender: hash-field gradients match finite differences (8x8)") {
    auto cfg = small_config(0.8);
    cfg.density_bias = 0.5;
    HashField f(cfg);
    const Camera cam = front_camera(8);
    const auto occ = OccupancyGrid::filled(f.bounds(), true);
    VolumeOptions o;
    o.step = 0.02;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> uw(-1.0, 1.0);
    std::vector<Vec3> w(64);
    for (auto& v : w) v = Vec3(uw(rng), uw(rng), uw(rng));

    auto loss = [&](const HashField& m) {
        double l = 0.0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                l += w[y * 8 + x].dot(march_ray_model(m, camera_ray(cam, x + 0.5, y + 0.5), occ, o).rgb);
        return l;
    };
    auto g = f.make_gradients();
    double alpha_sum = 0.0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            alpha_sum += march_ray_backward(f, camera_ray(cam, x + 0.5, y + 0.5), occ, o, w[y * 8 + x], g).alpha;
    REQUIRE(alpha_sum > 5.0); // the render is not trivially transparent
    REQUIRE(alpha_sum < 63.0);

    auto check_block = [&](std::span<double> params, auto analytic, std::vector<std::size_t> idx, std::string what, double rel_step) {
        int good = 0, total = 0;
        for (std::size_t i : idx) {
            const double old = params[i];
            const double h = rel_step * std::max(1.0, std::abs(old));
            params[i] = old + h;
            const double lp = loss(f);
            params[i] = old - h;
            const double lm = loss(f);
            params[i] = old;
            const double fd = (lp - lm) / (2 * h);
            const double an = analytic(i);
            const double err = std::abs(fd - an) / std::max(std::abs(fd) + std::abs(an), 1e-6);
            ++total;
            good += err < 1e-3 ? 1 : 0;
            if (err >= 1e-3) MESSAGE(what << " " << i << " fd " << fd << " analytic " << an);
        }
        INFO(what << ": " << good << "/" << total);
        CHECK(good >= 0.99 * total);
    };

    // Decoder weights move ReLU pre-activations directly, so a tiny step avoids
    // crossing kinks; table gradients are small and need a larger one.
    std::vector<std::size_t> dens(f.density_mlp().param_count()), col(f.color_mlp().param_count());
    for (std::size_t i = 0; i < dens.size(); ++i) dens[i] = i;
    for (std::size_t i = 0; i < col.size(); ++i) col[i] = i;
    check_block(f.density_mlp().params(), [&](std::size_t i) { return g.density[i]; }, dens, "density head", 1e-7);
    check_block(f.color_mlp().params(), [&](std::size_t i) { return g.color[i]; }, col, "colour head", 1e-7);

    // Touched table entries (sampled) plus some untouched ones, which must be zero.
    auto touched = std::vector<std::uint32_t>(g.table.touched().begin(), g.table.touched().end());
    REQUIRE(!touched.empty());
    std::shuffle(touched.begin(), touched.end(), rng);
    std::vector<std::size_t> tab;
    const int d = f.grid().feature_dim();
    for (std::size_t i = 0; i < std::min<std::size_t>(touched.size(), 150); ++i)
        for (int k = 0; k < d; ++k) tab.push_back(static_cast<std::size_t>(touched[i]) * d + k);
    check_block(f.grid().params(), [&](std::size_t i) { return g.table.values()[i]; }, tab, "tables", 1e-5);
}

TEST_CASE("extract_occupancy: thresholds and analytic sphere") {
    SUBCASE("sub-threshold constant field is empty") {
        HashField f(small_config(), true);
        f.density_mlp().params()[0] = 0.0;
        auto cfg = small_config();
        cfg.density_bias = -12.0;
        HashField dim(cfg, true);
        CHECK(extract_occupancy(dim, 0.01).empty());
        CHECK(extract_occupancy(f, 0.01).count() == 32u * 32u * 32u); // softplus(-1) = 0.31
    }
    SUBCASE("sphere within a one-voxel shell") {
        SphereField s;
        const auto g = extract_occupancy(s, 0.01);
        CHECK(g.resolution == 32);
        const double shell = g.voxel_size().norm();
        int mismatched = 0;
        for (int k = 0; k < 32; ++k)
            for (int j = 0; j < 32; ++j)
                for (int i = 0; i < 32; ++i) {
                    const bool truth = voxel_min_dist(g, i, j, k) <= s.radius;
                    if (truth == g.at(i, j, k)) continue;
                    ++mismatched;
                    CHECK(std::abs(g.voxel_center(i, j, k).norm() - s.radius) <= shell);
                }
        CHECK(g.count() > 0u);
        MESSAGE("boundary voxels differing from exact intersection: " << mismatched);
    }
    SUBCASE("lowering tau never removes voxels") {
        HashField f(small_config(3.0));
        std::vector<double> taus = {5.0, 2.0, 1.0, 0.5, 0.1};
        OccupancyGrid prev = extract_occupancy(f, taus[0]);
        for (std::size_t i = 1; i < taus.size(); ++i) {
            auto next = extract_occupancy(f, taus[i]);
            CHECK(prev.subset_of(next));
            prev = std::move(next);
        }
    }
}

TEST_CASE("extracted occupancy renders like the full grid") {
    GaussianField gf;
    const auto occ = extract_occupancy(gf, 1e-5);
    REQUIRE(occ.count() < 32u * 32u * 32u);
    const auto full = OccupancyGrid::filled(gf.bounds(), true);
    const Camera cam = front_camera(24);
    const auto a = volrender(gf, cam, full);
    const auto b = volrender(gf, cam, occ);
    CHECK(max_abs_diff(a.rgb, b.rgb) < 1e-4);
    CHECK(max_abs_diff(a.alpha, b.alpha) < 1e-4);
}

TEST_CASE("fitted field separates a sphere's inside from outside") {
    HashFieldConfig cfg;
    cfg.grid.levels = 6;
    cfg.grid.base_resolution = 8;
    cfg.grid.max_resolution = 96;
    cfg.grid.log2_table = 15;
    cfg.hidden = 32;
    cfg.geo_features = 8;
    cfg.sh_degree = 1;
    cfg.seed = 9;
    HashField f(cfg);
    const double radius = 0.5;
    AdamWOptions ao;
    ao.lr = 1e-2;
    ao.weight_decay = 0.0;
    AdamW ot(f.grid().params().size(), ao), od(f.density_mlp().param_count(), ao);
    auto g = f.make_gradients();
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    HashField::Tape tape;
    for (int it = 0; it < 1500; ++it) {
        g.clear();
        for (int s = 0; s < 256; ++s) {
            const Vec3 p(u(rng), u(rng), u(rng));
            f.forward(p, Vec3::UnitZ(), tape);
            const double target = p.norm() <= radius ? 5.0 : -6.0;
            f.backward_raw(tape, 2.0 * (tape.raw.sigma_pre - target) / 256.0, Vec3::Zero(), g);
        }
        g.table.sort_touched();
        ot.step_rows(f.grid().params(), g.table.values(), g.table.touched(), f.grid().feature_dim());
        od.step(f.density_mlp().params(), g.density);
    }
    const double voxel = 2.0 / 32.0;
    double in = 0.0, out = 0.0;
    std::normal_distribution<double> n;
    for (int s = 0; s < 500; ++s) {
        const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
        in += f.density((radius - 2 * voxel) * d);
        out += f.density((radius + 2 * voxel) * d);
    }
    INFO("mean sigma inside " << in / 500 << ", outside " << out / 500);
    CHECK(in >= 100.0 * out);
}

TEST_CASE("rendering is deterministic") {
    HashField a(small_config(0.5)), b(small_config(0.5));
    CHECK(a == b);
    const auto occ = extract_occupancy(a, 0.3);
    const Camera cam = front_camera(16);
    const auto r1 = volrender(a, cam, occ);
    const auto r2 = volrender(b, cam, occ);
    CHECK(r1.rgb.data == r2.rgb.data);
    CHECK(r1.depth.data == r2.depth.data);
}

TEST_CASE("checkpoint round trip and version check") {
    const auto dir = std::filesystem::temp_directory_path() / "blobforge_test_field";
    std::filesystem::create_directories(dir);
    HashField f(small_config(0.5));
    quantize_to_float32(f);
    const auto occ = extract_occupancy(f, 0.3);
    const auto path = dir / "field.bfc";
    save_field(path, f, &occ);
    const HashField g = load_field(path);
    CHECK(g == f);
    CHECK(g.config().grid.level_resolutions() == f.config().grid.level_resolutions());
    const auto c = read_container(path, kFieldCheckpointKind, kFieldCheckpointVersion);
    CHECK(c.meta["field"]["log2_table"] == 12);
    CHECK(c.meta["field"]["feature_dim"] == 2);
    REQUIRE(occupancy_from_container(c).has_value());
    CHECK(*occupancy_from_container(c) == occ);

    CHECK_THROWS_AS(read_container(path, kFieldCheckpointKind, kFieldCheckpointVersion + 1), IoError);
    CHECK_THROWS_AS(read_container(path, "blobforge.other", kFieldCheckpointVersion), IoError);
    std::string bytes = encode_container(c);
    CHECK_THROWS_AS(decode_container(bytes.substr(0, bytes.size() - 3), kFieldCheckpointKind, 1), IoError);
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_container(bytes, kFieldCheckpointKind, 1), IoError);
    std::filesystem::remove_all(dir);
}
