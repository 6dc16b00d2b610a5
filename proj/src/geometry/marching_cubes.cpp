#include "blobforge/core/error.hpp"
#include "blobforge/core/parallel.hpp"
#include "blobforge/geometry/mesh.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <map>
#include <unordered_map>

namespace bf {

namespace {

// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
constexpr std::array<std::array<int, 2>, 12> kEdges = {{{0, 1}, {2, 3}, {4, 5}, {6, 7},   // along x
                                                        {0, 2}, {1, 3}, {4, 6}, {5, 7},   // along y
                                                        {0, 4}, {1, 5}, {2, 6}, {3, 7}}}; // along z

// Faces with corners in counter-clockwise order seen from outside the cell.
constexpr std::array<std::array<int, 4>, 6> kFaces = {{{0, 4, 6, 2},   // -x
                                                       {1, 3, 7, 5},   // +x
                                                       {0, 1, 5, 4},   // -y
                                                       {2, 6, 7, 3},   // +y
                                                       {0, 2, 3, 1},   // -z
                                                       {4, 5, 7, 6}}}; // +z

int edge_between(int a, int b) {
    for (int e = 0; e < 12; ++e)
        if ((kEdges[e][0] == a && kEdges[e][1] == b) || (kEdges[e][0] == b && kEdges[e][1] == a)) return e;
    return -1;
}

int faces_of_edge(int e) {
    int mask = 0;
    for (int f = 0; f < 6; ++f)
        for (int i = 0; i < 4; ++i)
            if (edge_between(kFaces[f][i], kFaces[f][(i + 1) % 4]) == e) mask |= 1 << f;
    return mask;
}

constexpr int kCentroid = 12; ///< stands for the mean of a polygon's vertices

struct Polygon {
    std::vector<int> loop;                  ///< cell edges, boundary order
    std::vector<std::array<int, 3>> tris;   ///< entries are edges or kCentroid
};

/// Surface polygons for each of the 256 inside/outside configurations. On
/// every face, each crossing where the boundary leaves the inside region is
/// joined to the crossing where it entered, walking back over inside corners
/// only; this separates inside corners on ambiguous faces and, since it
/// depends only on the face, neighbouring cells always agree.
struct CaseTable {
    std::array<std::vector<Polygon>, 256> polys;

    CaseTable() {
        std::array<int, 12> face_mask;
        for (int e = 0; e < 12; ++e) face_mask[e] = faces_of_edge(e);
        for (int cfg = 0; cfg < 256; ++cfg) {
            auto inside = [&](int c) { return (cfg >> c) & 1; };
            std::array<int, 12> next;
            next.fill(-1);
            for (const auto& f : kFaces)
                for (int i = 0; i < 4; ++i) {
                    const int a = f[i], b = f[(i + 1) % 4];
                    if (!(inside(a) && !inside(b))) continue; // leaving edge
                    int j = i;
                    while (inside(f[(j + 3) % 4])) j = (j + 3) % 4;
                    next[edge_between(f[i], b)] = edge_between(f[(j + 3) % 4], f[j]);
                }
            std::array<bool, 12> used{};
            for (int e = 0; e < 12; ++e) {
                if (next[e] < 0 || used[e]) continue;
                Polygon poly;
                for (int k = e; !used[k]; k = next[k]) {
                    used[k] = true;
                    poly.loop.push_back(k);
                }
                triangulate(poly, face_mask);
                polys[cfg].push_back(std::move(poly));
            }
        }
        // Orient so normals point away from the inside corner of case 1.
        const auto& t = polys[1].front().tris.front();
        auto mid = [](int e) -> Vec3 {
            const int a = kEdges[e][0], b = kEdges[e][1];
            return 0.5 * (Vec3(a & 1, (a >> 1) & 1, (a >> 2) & 1) + Vec3(b & 1, (b >> 1) & 1, (b >> 2) & 1));
        };
        const Vec3 n = (mid(t[1]) - mid(t[0])).cross(mid(t[2]) - mid(t[0]));
        if (n.dot(mid(t[0])) < 0.0)
            for (auto& list : polys)
                for (auto& poly : list)
                    for (auto& tri : poly.tris) std::swap(tri[1], tri[2]);
    }

    // A fan diagonal lying in a cell face could be generated by the
    // neighbouring cell too, giving an edge with four triangles. Pick a fan
    // apex whose diagonals all cross the cell interior, else use the centroid.
    static void triangulate(Polygon& poly, const std::array<int, 12>& face_mask) {
        const auto& L = poly.loop;
        const std::size_t n = L.size();
        for (std::size_t s = 0; s < n; ++s) {
            bool ok = true;
            for (std::size_t k = 2; k + 1 < n && ok; ++k) ok = (face_mask[L[s]] & face_mask[L[(s + k) % n]]) == 0;
            if (!ok) continue;
            for (std::size_t k = 1; k + 1 < n; ++k) poly.tris.push_back({L[s], L[(s + k) % n], L[(s + k + 1) % n]});
            return;
        }
        for (std::size_t k = 0; k < n; ++k) poly.tris.push_back({kCentroid, L[k], L[(k + 1) % n]});
    }
};

const CaseTable& case_table() {
    static const CaseTable table;
    return table;
}

struct Grid {
    int n; // samples per axis = resolution + 1
    Aabb bounds;
    std::vector<double> v;
    [[nodiscard]] std::size_t at(int i, int j, int k) const {
        return static_cast<std::size_t>(i) + static_cast<std::size_t>(n) * (j + static_cast<std::size_t>(n) * k);
    }
    [[nodiscard]] Vec3 point(int i, int j, int k) const {
        return bounds.lo + Vec3(i, j, k).cwiseProduct(bounds.size()) / (n - 1);
    }
};

Grid sample_grid(const RadianceField& field, int resolution) {
    Grid g{resolution + 1, field.bounds(), {}};
    g.v.resize(static_cast<std::size_t>(g.n) * g.n * g.n);
    parallel_chunks(static_cast<std::size_t>(g.n), 1, [&](std::size_t, std::size_t k0, std::size_t k1) {
        for (int k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
            for (int j = 0; j < g.n; ++j)
                for (int i = 0; i < g.n; ++i) g.v[g.at(i, j, k)] = field.density(g.point(i, j, k));
    });
    return g;
}

} // namespace

std::size_t count_inside(const RadianceField& field, int resolution, double iso_level) {
    const Grid g = sample_grid(field, resolution);
    return static_cast<std::size_t>(std::count_if(g.v.begin(), g.v.end(), [&](double x) { return x >= iso_level; }));
}

TriangleMesh extract_mesh(const RadianceField& field, const MeshOptions& opts) {
    if (opts.resolution < 1) throw InvalidArgument("mesh resolution must be positive");
    if (opts.resolution > opts.max_resolution)
        throw InvalidArgument(fmt::format("mesh resolution {} exceeds the configured maximum {}", opts.resolution,
                                          opts.max_resolution));
    if (!std::isfinite(opts.iso_level)) throw InvalidArgument("iso level must be finite");
    const Grid g = sample_grid(field, opts.resolution);
    const auto& table = case_table();
    const double iso = opts.iso_level;
    const int r = opts.resolution;

    TriangleMesh mesh;
    // One vertex per crossed grid edge, keyed by (lower corner, axis).
    std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
    auto vertex_on = [&](int i, int j, int k, int e) {
        const int a = kEdges[e][0], b = kEdges[e][1];
        const int ai = i + (a & 1), aj = j + ((a >> 1) & 1), ak = k + ((a >> 2) & 1);
        const int axis = e / 4;
        const std::uint64_t key = (static_cast<std::uint64_t>(g.at(ai, aj, ak)) << 2) | static_cast<std::uint64_t>(axis);
        if (auto it = edge_vertex.find(key); it != edge_vertex.end()) return it->second;
        const int bi = i + (b & 1), bj = j + ((b >> 1) & 1), bk = k + ((b >> 2) & 1);
        const double va = g.v[g.at(ai, aj, ak)], vb = g.v[g.at(bi, bj, bk)];
        const double t = va == vb ? 0.5 : std::clamp((iso - va) / (vb - va), 0.0, 1.0);
        const Vec3 p = (1.0 - t) * g.point(ai, aj, ak) + t * g.point(bi, bj, bk);
        const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
        mesh.vertices.push_back(p);
        edge_vertex.emplace(key, id);
        return id;
    };
    for (int k = 0; k < r; ++k)
        for (int j = 0; j < r; ++j)
            for (int i = 0; i < r; ++i) {
                int cfg = 0;
                for (int c = 0; c < 8; ++c)
                    if (g.v[g.at(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))] >= iso) cfg |= 1 << c;
                for (const auto& poly : table.polys[cfg]) {
                    std::array<std::uint32_t, 13> id{};
                    for (int e : poly.loop) id[e] = vertex_on(i, j, k, e);
                    if (poly.tris.front()[0] == kCentroid) {
                        Vec3 c = Vec3::Zero();
                        for (int e : poly.loop) c += mesh.vertices[id[e]];
                        id[kCentroid] = static_cast<std::uint32_t>(mesh.vertices.size());
                        mesh.vertices.push_back(c / static_cast<double>(poly.loop.size()));
                    }
                    for (const auto& t : poly.tris) mesh.triangles.push_back({id[t[0]], id[t[1]], id[t[2]]});
                }
            }
    cleanup_mesh(mesh);
    if (mesh.empty()) return mesh;

    if (opts.normals || opts.colors) {
        const double h = 0.5 * g.bounds.size().minCoeff() / r;
        mesh.normals.resize(mesh.vertices.size());
        parallel_chunks(mesh.vertices.size(), 256, [&](std::size_t, std::size_t b, std::size_t e) {
            for (std::size_t v = b; v < e; ++v) {
                const Vec3& p = mesh.vertices[v];
                Vec3 grad;
                for (int a = 0; a < 3; ++a) {
                    Vec3 d = Vec3::Zero();
                    d[a] = h;
                    grad[a] = (field.density(p + d) - field.density(p - d)) / (2 * h);
                }
                const double n = grad.norm();
                mesh.normals[v] = n > 0.0 ? Vec3(-grad / n) : Vec3::UnitZ();
            }
        });
    }
    if (opts.colors) {
        mesh.colors.resize(mesh.vertices.size());
        parallel_chunks(mesh.vertices.size(), 256, [&](std::size_t, std::size_t b, std::size_t e) {
            for (std::size_t v = b; v < e; ++v) mesh.colors[v] = field.query(mesh.vertices[v], -mesh.normals[v]).rgb;
        });
    }
    if (!opts.normals) mesh.normals.clear();
    return mesh;
}

} // namespace bf
