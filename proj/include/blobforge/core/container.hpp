#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bf {

/// Named payload: float32 tensor and/or raw bytes, plus free-form metadata.
struct ContainerSection {
    std::string name;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<float> floats;
    std::vector<std::uint8_t> bytes;
};

/// Self-describing binary file: "BFCT", u32 format version, u64 header size,
/// JSON header {kind, version, meta, sections: [{name, meta, floats, bytes}]},
/// then each section's little-endian float32 values followed by its bytes.
struct Container {
    std::string kind;
    int version = 1;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<ContainerSection> sections;

    [[nodiscard]] const ContainerSection* find(const std::string& name) const;
    /// Throws IoError when absent.
    [[nodiscard]] const ContainerSection& at(const std::string& name) const;
    ContainerSection& add(std::string name);
    /// Drops every section whose name starts with `prefix`.
    void erase_prefix(const std::string& prefix);
};

std::string encode_container(const Container& c);
/// Throws IoError on malformed data, a different kind or a different version.
Container decode_container(std::string_view bytes, const std::string& kind, int version);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path, const std::string& kind, int version);

/// FNV-1a 64-bit hash, for state checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Doubles narrowed to float32, as stored on disk.
std::vector<float> to_float32(std::span<const double> v);
void from_float32(std::span<const float> in, std::span<double> out);

} // namespace bf
