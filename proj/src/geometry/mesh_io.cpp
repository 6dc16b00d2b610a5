#include "blobforge/core/error.hpp"
#include "blobforge/core/ply.hpp"
#include "blobforge/geometry/mesh.hpp"

#include <fmt/core.h>
#include <fmt/os.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bf {

namespace {

std::uint8_t to_byte(double c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
    auto out = fmt::output_file(path.string());
    out.print("# blobforge mesh: {} vertices, {} triangles\n", mesh.vertices.size(), mesh.triangles.size());
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const Vec3& p = mesh.vertices[v];
        if (mesh.colors.empty())
            out.print("v {:.9g} {:.9g} {:.9g}\n", p.x(), p.y(), p.z());
        else {
            const Vec3& c = mesh.colors[v];
            out.print("v {:.9g} {:.9g} {:.9g} {:.6g} {:.6g} {:.6g}\n", p.x(), p.y(), p.z(), c.x(), c.y(), c.z());
        }
    }
    for (const auto& n : mesh.normals) out.print("vn {:.9g} {:.9g} {:.9g}\n", n.x(), n.y(), n.z());
    const bool with_normals = !mesh.normals.empty();
    for (const auto& t : mesh.triangles) {
        if (with_normals)
            out.print("f {0}//{0} {1}//{1} {2}//{2}\n", t[0] + 1, t[1] + 1, t[2] + 1);
        else
            out.print("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1);
    }
}

TriangleMesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
    TriangleMesh mesh;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const char* what) {
        throw IoError(fmt::format("{}:{}: {}", path.string(), lineno, what));
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p.x() >> p.y() >> p.z())) fail("bad vertex");
            mesh.vertices.push_back(p);
            Vec3 c;
            if (ss >> c.x() >> c.y() >> c.z()) mesh.colors.push_back(c);
        } else if (tag == "vn") {
            Vec3 n;
            if (!(ss >> n.x() >> n.y() >> n.z())) fail("bad normal");
            mesh.normals.push_back(n);
        } else if (tag == "f") {
            std::vector<std::int64_t> idx;
            std::string tok;
            while (ss >> tok) {
                long long i = 0;
                try {
                    i = std::stoll(tok.substr(0, tok.find('/')));
                } catch (const std::exception&) {
                    fail("bad face index");
                }
                if (i < 0) i += static_cast<long long>(mesh.vertices.size()) + 1;
                if (i < 1) fail("bad face index");
                idx.push_back(i - 1);
            }
            if (idx.size() < 3) fail("face with fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k)
                mesh.triangles.push_back({static_cast<std::uint32_t>(idx[0]), static_cast<std::uint32_t>(idx[k]),
                                          static_cast<std::uint32_t>(idx[k + 1])});
        }
    }
    if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size()) fail("colours on some vertices only");
    mesh.validate();
    return mesh;
}

template <typename T> void put(std::ostream& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T)); // little-endian host
    out.write(b, sizeof(T));
}

void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
    const bool nrm = !mesh.normals.empty(), col = !mesh.colors.empty();
    out << "ply\nformat binary_little_endian 1.0\ncomment blobforge mesh\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    if (nrm) out << "property float nx\nproperty float ny\nproperty float nz\n";
    if (col) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "element face " << mesh.triangles.size() << "\n";
    out << "property list uchar uint vertex_indices\nend_header\n";
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        for (int a = 0; a < 3; ++a) put(out, mesh.vertices[v][a]);
        if (nrm)
            for (int a = 0; a < 3; ++a) put(out, static_cast<float>(mesh.normals[v][a]));
        if (col)
            for (int a = 0; a < 3; ++a) put(out, to_byte(mesh.colors[v][a]));
    }
    for (const auto& t : mesh.triangles) {
        put(out, std::uint8_t{3});
        for (auto i : t) put(out, i);
    }
    if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

TriangleMesh read_ply(const std::filesystem::path& path) {
    const ply::File file = ply::read(path);
    TriangleMesh mesh;
    const ply::Element* vert = file.find("vertex");
    if (!vert) throw IoError(fmt::format("{}: no vertex element", path.string()));
    auto column = [&](const char* name) -> const std::vector<double>* {
        const int i = vert->find(name);
        return i < 0 ? nullptr : &vert->columns[static_cast<std::size_t>(i)];
    };
    const auto *x = column("x"), *y = column("y"), *z = column("z");
    if (!x || !y || !z) throw IoError(fmt::format("{}: vertex element lacks x/y/z", path.string()));
    for (std::size_t v = 0; v < vert->count; ++v) mesh.vertices.emplace_back((*x)[v], (*y)[v], (*z)[v]);
    if (const auto *nx = column("nx"), *ny = column("ny"), *nz = column("nz"); nx && ny && nz)
        for (std::size_t v = 0; v < vert->count; ++v) mesh.normals.emplace_back((*nx)[v], (*ny)[v], (*nz)[v]);
    if (const auto *r = column("red"), *g = column("green"), *b = column("blue"); r && g && b)
        for (std::size_t v = 0; v < vert->count; ++v) mesh.colors.push_back(Vec3((*r)[v], (*g)[v], (*b)[v]) / 255.0);
    if (const ply::Element* face = file.find("face"))
        for (const auto& list : face->lists) {
            if (list.size() < 3) throw IoError(fmt::format("{}: face with fewer than 3 vertices", path.string()));
            for (std::size_t k = 1; k + 1 < list.size(); ++k) {
                for (auto i : {list[0], list[k], list[k + 1]})
                    if (i < 0) throw IoError(fmt::format("{}: negative face index", path.string()));
                mesh.triangles.push_back({static_cast<std::uint32_t>(list[0]), static_cast<std::uint32_t>(list[k]),
                                          static_cast<std::uint32_t>(list[k + 1])});
            }
        }
    try {
        mesh.validate();
    } catch (const InvalidArgument& e) {
        throw IoError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return mesh;
}

} // namespace

MeshFormat mesh_format_from_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".obj") return MeshFormat::obj;
    if (ext == ".ply") return MeshFormat::ply;
    throw InvalidArgument(fmt::format("unknown mesh extension '{}' (expected .obj or .ply)", ext));
}

void export_mesh(const TriangleMesh& mesh, const std::filesystem::path& path, MeshFormat format) {
    mesh.validate();
    if (format == MeshFormat::obj)
        write_obj(mesh, path);
    else
        write_ply(mesh, path);
}

TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
    return format == MeshFormat::obj ? read_obj(path) : read_ply(path);
}

} // namespace bf
