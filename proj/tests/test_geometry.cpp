#include "blobforge/core/error.hpp"
#include "blobforge/geometry/mesh.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <map>
#include <random>

using namespace bf;

namespace {

/// Signed-distance style density: the iso level sits exactly at |p| = radius.
struct SphereField final : RadianceField {
    double radius = 0.5, iso = 0.01;
    FieldSample query(const Vec3& p, const Vec3&) const override {
        return {iso + (radius - p.norm()), Vec3(0.2, 0.6, 0.9)};
    }
    Aabb bounds() const override { return {Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }
};

struct ConstantField final : RadianceField {
    double sigma = 0.0;
    FieldSample query(const Vec3&, const Vec3&) const override { return {sigma, Vec3::Zero()}; }
    Aabb bounds() const override { return {Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }
};

/// Random density at the grid samples with an outside border, so every
/// inside/outside configuration shows up many times.
struct NoiseField final : RadianceField {
    int n;
    std::vector<double> v;
    NoiseField(int res, std::uint64_t seed) : n(res + 1), v(static_cast<std::size_t>(n) * n * n) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i) {
                    const bool border = i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1;
                    v[i + n * (j + n * k)] = border ? -1.0 : u(rng);
                }
    }
    FieldSample query(const Vec3& p, const Vec3&) const override {
        const Vec3 g = (p + Vec3::Ones()) * 0.5 * (n - 1);
        const int i = std::clamp(static_cast<int>(std::lround(g.x())), 0, n - 1);
        const int j = std::clamp(static_cast<int>(std::lround(g.y())), 0, n - 1);
        const int k = std::clamp(static_cast<int>(std::lround(g.z())), 0, n - 1);
        return {v[i + n * (j + n * k)], Vec3::Zero()};
    }
    Aabb bounds() const override { return {Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }
};

TriangleMesh unit_cube() {
    TriangleMesh m;
    for (int c = 0; c < 8; ++c) m.vertices.emplace_back(c & 1, (c >> 1) & 1, (c >> 2) & 1);
    m.triangles = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                   {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
    return m;
}

std::filesystem::path tmp(const char* name) { return std::filesystem::temp_directory_path() / name; }

} // namespace

TEST_CASE("sphere extraction at 128^3 matches the analytic isosurface") {
    SphereField f;
    const TriangleMesh m = extract_mesh(f);
    REQUIRE_FALSE(m.empty());
    const double voxel = 2.0 / 128;
    double worst = 0.0;
    for (const auto& v : m.vertices) worst = std::max(worst, std::abs(v.norm() - 0.5));
    MESSAGE("max radius error " << worst << " (voxel " << voxel << ")");
    CHECK(worst <= 1.5 * voxel);
    CHECK(m.euler_characteristic() == 2);
    CHECK(m.watertight());
    REQUIRE(m.normals.size() == m.vertices.size());
    REQUIRE(m.colors.size() == m.vertices.size());
    std::size_t outward = 0;
    for (std::size_t i = 0; i < m.vertices.size(); ++i) outward += m.normals[i].dot(m.vertices[i].normalized()) > 0.99;
    CHECK(outward == m.vertices.size());
    // Triangle winding agrees with the outward normals.
    std::size_t agree = 0;
    for (const auto& t : m.triangles) {
        const Vec3 n = (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]);
        agree += n.dot(m.vertices[t[0]]) > 0.0;
    }
    CHECK(agree == m.triangles.size());
    CHECK(m.colors[0].isApprox(Vec3(0.2, 0.6, 0.9)));
}

TEST_CASE("no degenerate triangles after cleanup") {
    SphereField f;
    const TriangleMesh m = extract_mesh(f, {.resolution = 48});
    for (const auto& t : m.triangles) {
        CHECK(t[0] != t[1]);
        CHECK(t[1] != t[2]);
        CHECK(t[0] != t[2]);
        const Vec3 a = m.vertices[t[0]];
        CHECK(0.5 * (m.vertices[t[1]] - a).cross(m.vertices[t[2]] - a).norm() > kDegenerateArea);
    }
}

TEST_CASE("random fields give closed consistently oriented meshes") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        NoiseField f(10, seed);
        const TriangleMesh m = extract_mesh(f, {.resolution = 10, .iso_level = 0.0, .normals = false, .colors = false});
        REQUIRE_FALSE(m.empty());
        CHECK(m.watertight());
        // Every directed edge appears once: neighbouring triangles agree on orientation.
        std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
        for (const auto& t : m.triangles)
            for (int i = 0; i < 3; ++i) ++directed[{t[i], t[(i + 1) % 3]}];
        bool once = true;
        for (const auto& [e, count] : directed) once = once && count == 1 && directed.count({e.second, e.first}) == 1;
        CHECK(once);
    }
}

TEST_CASE("sub-iso field gives an empty mesh") {
    ConstantField f;
    f.sigma = 0.001;
    const TriangleMesh m = extract_mesh(f, {.resolution = 16});
    CHECK(m.empty());
    CHECK(m.vertices.empty());
    CHECK(m.euler_characteristic() == 0);
}

TEST_CASE("resolution guard") {
    SphereField f;
    CHECK_THROWS_AS(extract_mesh(f, {.resolution = 1024}), InvalidArgument);
    CHECK_THROWS_AS(extract_mesh(f, {.resolution = 0}), InvalidArgument);
}

TEST_CASE("raising the iso level never grows the enclosed volume") {
    SphereField f;
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double iso : {-0.2, 0.0, 0.01, 0.1, 0.3, 0.6}) {
        const std::size_t n = count_inside(f, 32, iso);
        CHECK(n <= prev);
        prev = n;
    }
}

TEST_CASE("extraction is deterministic") {
    SphereField f;
    const TriangleMesh a = extract_mesh(f, {.resolution = 40});
    const TriangleMesh b = extract_mesh(f, {.resolution = 40});
    REQUIRE(a.vertices.size() == b.vertices.size());
    CHECK(std::memcmp(a.vertices.data(), b.vertices.data(), a.vertices.size() * sizeof(Vec3)) == 0);
    CHECK(a.triangles == b.triangles);
}

TEST_CASE("cube OBJ round trip") {
    const TriangleMesh cube = unit_cube();
    CHECK(cube.watertight());
    CHECK(cube.euler_characteristic() == 2);
    const auto path = tmp("bf_cube.obj");
    export_mesh(cube, path, MeshFormat::obj);
    const TriangleMesh back = load_mesh(path, MeshFormat::obj);
    CHECK(back.vertices.size() == 8);
    CHECK(back.triangles.size() == 12);
    CHECK(back.vertices == cube.vertices);
    CHECK(back.triangles == cube.triangles);
}

TEST_CASE("OBJ reload is within float32 printing precision") {
    SphereField f;
    const TriangleMesh m = extract_mesh(f, {.resolution = 24});
    const auto path = tmp("bf_sphere.obj");
    export_mesh(m, path, mesh_format_from_path(path));
    const TriangleMesh back = load_mesh(path, MeshFormat::obj);
    REQUIRE(back.vertices.size() == m.vertices.size());
    CHECK(back.triangles == m.triangles);
    CHECK(back.normals.size() == m.normals.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
        for (int a = 0; a < 3; ++a)
            CHECK(static_cast<float>(back.vertices[i][a]) == static_cast<float>(m.vertices[i][a]));
}

TEST_CASE("sphere PLY reload is bitwise equal") {
    SphereField f;
    const TriangleMesh m = extract_mesh(f, {.resolution = 32});
    const auto path = tmp("bf_sphere.ply");
    export_mesh(m, path, MeshFormat::ply);
    const TriangleMesh back = load_mesh(path, MeshFormat::ply);
    REQUIRE(back.vertices.size() == m.vertices.size());
    CHECK(std::memcmp(back.vertices.data(), m.vertices.data(), m.vertices.size() * sizeof(Vec3)) == 0);
    CHECK(back.triangles == m.triangles);
    REQUIRE(back.colors.size() == m.colors.size());
    CHECK((back.colors[0] - m.colors[0]).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
}

TEST_CASE("empty mesh writes valid files") {
    const TriangleMesh empty;
    for (auto fmt : {MeshFormat::obj, MeshFormat::ply}) {
        const auto path = tmp(fmt == MeshFormat::obj ? "bf_empty.obj" : "bf_empty.ply");
        export_mesh(empty, path, fmt);
        const TriangleMesh back = load_mesh(path, fmt);
        CHECK(back.vertices.empty());
        CHECK(back.triangles.empty());
    }
}

TEST_CASE("export errors") {
    CHECK_THROWS_AS(export_mesh(unit_cube(), "/nonexistent-dir/x.obj", MeshFormat::obj), std::exception);
    CHECK_THROWS_AS(export_mesh(unit_cube(), "/nonexistent-dir/x.ply", MeshFormat::ply), IoError);
    CHECK_THROWS_AS(mesh_format_from_path("mesh.stl"), InvalidArgument);
    TriangleMesh bad = unit_cube();
    bad.triangles.push_back({0, 1, 99});
    CHECK_THROWS_AS(export_mesh(bad, tmp("bf_bad.obj"), MeshFormat::obj), InvalidArgument);
}
