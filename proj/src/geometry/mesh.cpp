#include "blobforge/core/error.hpp"
#include "blobforge/geometry/mesh.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <map>
#include <set>

namespace bf {

namespace {

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
}

} // namespace

long TriangleMesh::euler_characteristic() const {
    std::set<std::uint32_t> verts;
    std::set<std::uint64_t> edges;
    for (const auto& t : triangles)
        for (int i = 0; i < 3; ++i) {
            verts.insert(t[i]);
            edges.insert(edge_key(t[i], t[(i + 1) % 3]));
        }
    return static_cast<long>(verts.size()) - static_cast<long>(edges.size()) + static_cast<long>(triangles.size());
}

bool TriangleMesh::watertight() const {
    if (triangles.empty()) return false;
    std::map<std::uint64_t, int> uses;
    for (const auto& t : triangles)
        for (int i = 0; i < 3; ++i) ++uses[edge_key(t[i], t[(i + 1) % 3])];
    return std::all_of(uses.begin(), uses.end(), [](const auto& kv) { return kv.second == 2; });
}

void TriangleMesh::validate() const {
    for (const auto& t : triangles)
        for (auto i : t)
            if (i >= vertices.size())
                throw InvalidArgument(fmt::format("triangle index {} out of range ({} vertices)", i, vertices.size()));
    if (!normals.empty() && normals.size() != vertices.size()) throw InvalidArgument("normal count mismatch");
    if (!colors.empty() && colors.size() != vertices.size()) throw InvalidArgument("colour count mismatch");
}

void cleanup_mesh(TriangleMesh& mesh) {
    mesh.validate();
    const std::size_t n = mesh.vertices.size();
    auto less = [](const Vec3& a, const Vec3& b) {
        return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
    };
    std::map<Vec3, std::uint32_t, decltype(less)> first(less);
    std::vector<std::uint32_t> remap(n);
    for (std::size_t v = 0; v < n; ++v) remap[v] = first.emplace(mesh.vertices[v], static_cast<std::uint32_t>(v)).first->second;

    std::vector<std::array<std::uint32_t, 3>> kept;
    kept.reserve(mesh.triangles.size());
    for (auto t : mesh.triangles) {
        for (auto& i : t) i = remap[i];
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
        const Vec3& a = mesh.vertices[t[0]];
        const double area = 0.5 * (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).norm();
        if (!(area > kDegenerateArea)) continue;
        kept.push_back(t);
    }

    std::vector<std::int64_t> index(n, -1);
    TriangleMesh out;
    for (auto& t : kept)
        for (auto& i : t) {
            if (index[i] < 0) {
                index[i] = static_cast<std::int64_t>(out.vertices.size());
                out.vertices.push_back(mesh.vertices[i]);
                if (!mesh.normals.empty()) out.normals.push_back(mesh.normals[i]);
                if (!mesh.colors.empty()) out.colors.push_back(mesh.colors[i]);
            }
            i = static_cast<std::uint32_t>(index[i]);
        }
    out.triangles = std::move(kept);
    mesh = std::move(out);
}

} // namespace bf
