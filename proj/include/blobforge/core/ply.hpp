#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bf::ply {

enum class Scalar { i8, u8, i16, u16, i32, u32, f32, f64 };

struct Property {
    std::string name;
    Scalar type = Scalar::f32;
    bool is_list = false;
    Scalar count_type = Scalar::u8;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
    /// Scalar properties: one column per property, values widened to double.
    std::vector<std::vector<double>> columns;
    /// List properties (e.g. vertex_indices): one list per record.
    std::vector<std::vector<std::int64_t>> lists;

    [[nodiscard]] int find(const std::string& prop) const;
};

struct File {
    bool binary = true;
    std::vector<Element> elements;
    [[nodiscard]] const Element* find(const std::string& element) const;
};

/// Reads ascii or binary_little_endian PLY. Throws IoError with the offending
/// location on malformed headers or truncated data.
File read(const std::filesystem::path& path);

} // namespace bf::ply
