#include "blobforge/core/container.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bf {

static_assert(std::endian::native == std::endian::little, "container format assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'B', 'F', 'C', 'T'};
constexpr std::uint32_t kFormat = 1;
} // namespace

const ContainerSection* Container::find(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

const ContainerSection& Container::at(const std::string& name) const {
    if (const auto* s = find(name)) return *s;
    throw IoError(fmt::format("{} checkpoint has no section '{}'", kind, name));
}

ContainerSection& Container::add(std::string name) {
    if (find(name)) throw InvalidArgument("duplicate container section '" + name + "'");
    sections.push_back({});
    sections.back().name = std::move(name);
    return sections.back();
}

void Container::erase_prefix(const std::string& prefix) {
    std::erase_if(sections, [&](const ContainerSection& s) { return s.name.rfind(prefix, 0) == 0; });
}

std::string encode_container(const Container& c) {
    nlohmann::json h = {{"kind", c.kind}, {"version", c.version}, {"meta", c.meta}};
    h["sections"] = nlohmann::json::array();
    for (const auto& s : c.sections)
        h["sections"].push_back({{"name", s.name}, {"meta", s.meta}, {"floats", s.floats.size()}, {"bytes", s.bytes.size()}});
    const std::string hs = h.dump();
    std::string out(kMagic, 4);
    out.append(reinterpret_cast<const char*>(&kFormat), 4);
    const std::uint64_t n = hs.size();
    out.append(reinterpret_cast<const char*>(&n), 8);
    out += hs;
    for (const auto& s : c.sections) {
        out.append(reinterpret_cast<const char*>(s.floats.data()), s.floats.size() * 4);
        out.append(reinterpret_cast<const char*>(s.bytes.data()), s.bytes.size());
    }
    return out;
}

Container decode_container(std::string_view b, const std::string& kind, int version) {
    if (b.size() < 16 || std::memcmp(b.data(), kMagic, 4) != 0) throw IoError("not a checkpoint container (bad magic)");
    std::uint32_t fmt_v;
    std::uint64_t hn;
    std::memcpy(&fmt_v, b.data() + 4, 4);
    std::memcpy(&hn, b.data() + 8, 8);
    if (fmt_v != kFormat) throw IoError(fmt::format("unsupported container format {}", fmt_v));
    if (hn > b.size() - 16) throw IoError("container header truncated");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(b.substr(16, hn));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("container header is not JSON: ") + e.what());
    }
    Container c;
    try {
        c.kind = h.at("kind").get<std::string>();
        c.version = h.at("version").get<int>();
        c.meta = h.at("meta");
        if (c.kind != kind) throw IoError(fmt::format("checkpoint holds '{}', expected '{}'", c.kind, kind));
        if (c.version != version)
            throw IoError(fmt::format("{} checkpoint version {} does not match supported version {}", kind, c.version, version));
        std::size_t off = 16 + hn;
        for (const auto& sj : h.at("sections")) {
            ContainerSection s;
            s.name = sj.at("name").get<std::string>();
            s.meta = sj.at("meta");
            const auto nf = sj.at("floats").get<std::uint64_t>();
            const auto nb = sj.at("bytes").get<std::uint64_t>();
            if (nf > (b.size() - off) / 4 || nb > b.size() - off - nf * 4)
                throw IoError(fmt::format("container section '{}' truncated", s.name));
            s.floats.resize(nf);
            std::memcpy(s.floats.data(), b.data() + off, nf * 4);
            off += nf * 4;
            s.bytes.assign(b.begin() + static_cast<std::ptrdiff_t>(off), b.begin() + static_cast<std::ptrdiff_t>(off + nb));
            off += nb;
            c.sections.push_back(std::move(s));
        }
        if (off != b.size()) throw IoError("trailing bytes after the last container section");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed container header: ") + e.what());
    }
    return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
    const std::string bytes = encode_container(c);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
}

Container read_container(const std::filesystem::path& path, const std::string& kind, int version) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_container(ss.str(), kind, version);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<float> to_float32(std::span<const double> v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

void from_float32(std::span<const float> in, std::span<double> out) {
    if (in.size() != out.size()) throw IoError(fmt::format("tensor holds {} values, expected {}", in.size(), out.size()));
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i];
}

} // namespace bf
