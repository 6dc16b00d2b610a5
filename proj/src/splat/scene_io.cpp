#include "blobforge/splat/scene_io.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/core/ply.hpp"

#include <fmt/core.h>
#include "json.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bf {

namespace {

constexpr std::array<const char*, kBlobParams> kPropertyNames = {
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity_logit", "r", "g", "b"};

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

} // namespace

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << scene.size() << "\n";
    for (const char* name : kPropertyNames) out << "property float " << name << "\n";
    out << "end_header\n";
    std::vector<float> rec(kBlobParams);
    for (const auto& b : scene.blobs()) {
        std::size_t k = 0;
        for (int i = 0; i < 3; ++i) rec[k++] = b.position[i];
        for (int i = 0; i < 4; ++i) rec[k++] = b.rotation[i];
        for (int i = 0; i < 3; ++i) rec[k++] = b.log_scale[i];
        rec[k++] = b.opacity_logit;
        for (int i = 0; i < 3; ++i) rec[k++] = b.color[i];
        out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size() * sizeof(float)));
    }
    if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));

    const auto& e = scene.extent();
    nlohmann::json side = {
        {"format_version", 1},
        {"count", scene.size()},
        {"generation", scene.generation()},
        {"extent", e.empty() ? nlohmann::json(nullptr)
                             : nlohmann::json{{"min", {e.lo.x(), e.lo.y(), e.lo.z()}}, {"max", {e.hi.x(), e.hi.y(), e.hi.z()}}}},
    };
    std::ofstream js(sidecar_path(path));
    if (!js) throw IoError(fmt::format("cannot open sidecar for '{}'", path.string()));
    js << side.dump(2) << "\n";
}

GaussianScene load_scene(const std::filesystem::path& path) {
    const ply::File file = ply::read(path);
    if (!file.binary) throw IoError(fmt::format("{}: scene files must be binary_little_endian", path.string()));
    const ply::Element* v = file.find("vertex");
    if (!v) throw IoError(fmt::format("{}: no vertex element", path.string()));
    std::array<int, kBlobParams> col{};
    for (std::size_t k = 0; k < kBlobParams; ++k) {
        col[k] = v->find(kPropertyNames[k]);
        if (col[k] < 0) throw IoError(fmt::format("{}: missing vertex property '{}'", path.string(), kPropertyNames[k]));
        if (v->properties[col[k]].type != ply::Scalar::f32)
            throw IoError(fmt::format("{}: property '{}' must be float", path.string(), kPropertyNames[k]));
    }
    std::vector<GaussianBlob> blobs(v->count);
    for (std::size_t r = 0; r < v->count; ++r) {
        std::array<float, kBlobParams> rec{};
        for (std::size_t k = 0; k < kBlobParams; ++k) {
            rec[k] = static_cast<float>(v->columns[col[k]][r]);
            if (!std::isfinite(rec[k]))
                throw IoError(fmt::format("{}: record {} has non-finite '{}'", path.string(), r, kPropertyNames[k]));
        }
        auto& b = blobs[r];
        b.position = Vec3f(rec[0], rec[1], rec[2]);
        b.rotation = Vec4f(rec[3], rec[4], rec[5], rec[6]);
        b.log_scale = Vec3f(rec[7], rec[8], rec[9]);
        b.opacity_logit = rec[10];
        b.color = Vec3f(rec[11], rec[12], rec[13]);
    }

    std::uint64_t generation = 0;
    const auto side = sidecar_path(path);
    if (std::filesystem::exists(side)) {
        std::ifstream js(side);
        nlohmann::json j;
        try {
            js >> j;
        } catch (const nlohmann::json::exception& ex) {
            throw IoError(fmt::format("{}: malformed sidecar: {}", side.string(), ex.what()));
        }
        if (j.value("count", v->count) != v->count)
            throw IoError(fmt::format("{}: sidecar count disagrees with PLY", side.string()));
        generation = j.value("generation", std::uint64_t{0});
    }
    return GaussianScene(std::move(blobs), generation);
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
    PointCloud pc;
    const auto ext = path.extension().string();
    if (ext == ".ply") {
        const ply::File file = ply::read(path);
        const ply::Element* v = file.find("vertex");
        if (!v) throw IoError(fmt::format("{}: no vertex element", path.string()));
        const int x = v->find("x"), y = v->find("y"), z = v->find("z");
        if (x < 0 || y < 0 || z < 0) throw IoError(fmt::format("{}: vertex element lacks x/y/z", path.string()));
        const int r = v->find("red"), g = v->find("green"), b = v->find("blue");
        const bool has_color = r >= 0 && g >= 0 && b >= 0;
        const bool byte_color = has_color && v->properties[r].type == ply::Scalar::u8;
        for (std::size_t i = 0; i < v->count; ++i) {
            Vec3 p(v->columns[x][i], v->columns[y][i], v->columns[z][i]);
            if (!p.allFinite()) throw IoError(fmt::format("{}: point {} is not finite", path.string(), i));
            pc.points.push_back(p);
            if (has_color) {
                Vec3 c(v->columns[r][i], v->columns[g][i], v->columns[b][i]);
                pc.colors.push_back(byte_color ? Vec3(c / 255.0) : c);
            }
        }
        return pc;
    }
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    std::size_t lineno = 0;
    bool byte_color = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::vector<double> vals;
        double d;
        while (ls >> d) vals.push_back(d);
        if (vals.size() != 3 && vals.size() != 6)
            throw IoError(fmt::format("{}:{}: expected 3 or 6 numbers", path.string(), lineno));
        Vec3 p(vals[0], vals[1], vals[2]);
        if (!p.allFinite()) throw IoError(fmt::format("{}:{}: point is not finite", path.string(), lineno));
        pc.points.push_back(p);
        if (vals.size() == 6) {
            Vec3 c(vals[3], vals[4], vals[5]);
            if (c.maxCoeff() > 1.0) byte_color = true;
            pc.colors.push_back(c);
        }
    }
    if (!pc.colors.empty() && pc.colors.size() != pc.points.size())
        throw IoError(fmt::format("{}: colors given for only some points", path.string()));
    if (byte_color)
        for (auto& c : pc.colors) c /= 255.0;
    return pc;
}

} // namespace bf
