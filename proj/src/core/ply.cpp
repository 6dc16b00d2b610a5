#include "blobforge/core/ply.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bf::ply {

namespace {

Scalar parse_scalar(const std::string& t, const std::filesystem::path& path) {
    if (t == "char" || t == "int8") return Scalar::i8;
    if (t == "uchar" || t == "uint8") return Scalar::u8;
    if (t == "short" || t == "int16") return Scalar::i16;
    if (t == "ushort" || t == "uint16") return Scalar::u16;
    if (t == "int" || t == "int32") return Scalar::i32;
    if (t == "uint" || t == "uint32") return Scalar::u32;
    if (t == "float" || t == "float32") return Scalar::f32;
    if (t == "double" || t == "float64") return Scalar::f64;
    throw IoError(fmt::format("{}: unknown PLY scalar type '{}'", path.string(), t));
}

std::size_t scalar_size(Scalar s) {
    switch (s) {
    case Scalar::i8:
    case Scalar::u8: return 1;
    case Scalar::i16:
    case Scalar::u16: return 2;
    case Scalar::i32:
    case Scalar::u32:
    case Scalar::f32: return 4;
    case Scalar::f64: return 8;
    }
    return 0;
}

template <typename T>
T load_le(const char* p) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

double decode(Scalar s, const char* p) {
    switch (s) {
    case Scalar::i8: return load_le<std::int8_t>(p);
    case Scalar::u8: return load_le<std::uint8_t>(p);
    case Scalar::i16: return load_le<std::int16_t>(p);
    case Scalar::u16: return load_le<std::uint16_t>(p);
    case Scalar::i32: return load_le<std::int32_t>(p);
    case Scalar::u32: return load_le<std::uint32_t>(p);
    case Scalar::f32: return load_le<float>(p);
    case Scalar::f64: return load_le<double>(p);
    }
    return 0.0;
}

} // namespace

int Element::find(const std::string& prop) const {
    for (std::size_t i = 0; i < properties.size(); ++i)
        if (properties[i].name == prop) return static_cast<int>(i);
    return -1;
}

const Element* File::find(const std::string& element) const {
    for (const auto& e : elements)
        if (e.name == element) return &e;
    return nullptr;
}

File read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
        throw IoError(fmt::format("{}: missing 'ply' magic", path.string()));

    File file;
    bool have_format = false;
    while (true) {
        if (!std::getline(in, line)) throw IoError(fmt::format("{}: header ended before end_header", path.string()));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "end_header") break;
        if (kw == "comment" || kw == "obj_info" || kw.empty()) continue;
        if (kw == "format") {
            std::string fmt_name, version;
            ls >> fmt_name >> version;
            if (fmt_name == "ascii") {
                file.binary = false;
            } else if (fmt_name == "binary_little_endian") {
                file.binary = true;
            } else {
                throw IoError(fmt::format("{}: unsupported PLY format '{}'", path.string(), fmt_name));
            }
            have_format = true;
        } else if (kw == "element") {
            Element e;
            long long count = -1;
            ls >> e.name >> count;
            if (e.name.empty() || count < 0)
                throw IoError(fmt::format("{}: malformed element line '{}'", path.string(), line));
            e.count = static_cast<std::size_t>(count);
            file.elements.push_back(std::move(e));
        } else if (kw == "property") {
            if (file.elements.empty())
                throw IoError(fmt::format("{}: property before any element", path.string()));
            Property p;
            std::string t;
            ls >> t;
            if (t == "list") {
                std::string ct, vt;
                ls >> ct >> vt >> p.name;
                p.is_list = true;
                p.count_type = parse_scalar(ct, path);
                p.type = parse_scalar(vt, path);
            } else {
                p.type = parse_scalar(t, path);
                ls >> p.name;
            }
            if (p.name.empty()) throw IoError(fmt::format("{}: malformed property line '{}'", path.string(), line));
            file.elements.back().properties.push_back(p);
        } else {
            throw IoError(fmt::format("{}: unknown header keyword '{}'", path.string(), kw));
        }
    }
    if (!have_format) throw IoError(fmt::format("{}: missing format line", path.string()));

    for (auto& e : file.elements) {
        e.columns.assign(e.properties.size(), {});
        for (std::size_t k = 0; k < e.properties.size(); ++k)
            if (!e.properties[k].is_list) e.columns[k].resize(e.count);
        const bool has_list = std::any_of(e.properties.begin(), e.properties.end(), [](auto& p) { return p.is_list; });
        if (has_list) e.lists.resize(e.count);

        if (file.binary) {
            std::size_t fixed = 0;
            for (const auto& p : e.properties)
                if (!p.is_list) fixed += scalar_size(p.type);
            std::vector<char> buf(64);
            for (std::size_t r = 0; r < e.count; ++r) {
                for (std::size_t k = 0; k < e.properties.size(); ++k) {
                    const auto& p = e.properties[k];
                    if (!p.is_list) {
                        const std::size_t sz = scalar_size(p.type);
                        if (!in.read(buf.data(), static_cast<std::streamsize>(sz)))
                            throw IoError(fmt::format("{}: truncated data in element '{}' at record {}", path.string(), e.name, r));
                        e.columns[k][r] = decode(p.type, buf.data());
                        continue;
                    }
                    const std::size_t csz = scalar_size(p.count_type);
                    if (!in.read(buf.data(), static_cast<std::streamsize>(csz)))
                        throw IoError(fmt::format("{}: truncated list in element '{}' at record {}", path.string(), e.name, r));
                    const auto n = static_cast<long long>(decode(p.count_type, buf.data()));
                    if (n < 0) throw IoError(fmt::format("{}: negative list length at record {}", path.string(), r));
                    const std::size_t vsz = scalar_size(p.type);
                    auto& list = e.lists[r];
                    for (long long j = 0; j < n; ++j) {
                        if (!in.read(buf.data(), static_cast<std::streamsize>(vsz)))
                            throw IoError(fmt::format("{}: truncated list in element '{}' at record {}", path.string(), e.name, r));
                        list.push_back(static_cast<std::int64_t>(decode(p.type, buf.data())));
                    }
                }
            }
        } else {
            for (std::size_t r = 0; r < e.count; ++r) {
                if (!std::getline(in, line))
                    throw IoError(fmt::format("{}: truncated data in element '{}' at record {}", path.string(), e.name, r));
                std::istringstream ls(line);
                for (std::size_t k = 0; k < e.properties.size(); ++k) {
                    const auto& p = e.properties[k];
                    if (!p.is_list) {
                        double v;
                        if (!(ls >> v))
                            throw IoError(fmt::format("{}: malformed record {} of element '{}'", path.string(), r, e.name));
                        e.columns[k][r] = v;
                        continue;
                    }
                    long long n;
                    if (!(ls >> n) || n < 0)
                        throw IoError(fmt::format("{}: malformed list at record {}", path.string(), r));
                    for (long long j = 0; j < n; ++j) {
                        long long v;
                        if (!(ls >> v)) throw IoError(fmt::format("{}: malformed list at record {}", path.string(), r));
                        e.lists[r].push_back(v);
                    }
                }
            }
        }
    }
    return file;
}

} // namespace bf::ply
