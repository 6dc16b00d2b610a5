#pragma once

#include "blobforge/field/field.hpp"

#include <array>
#include <filesystem>
#include <vector>

namespace bf {

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;
    std::vector<Vec3> normals; ///< optional, per vertex
    std::vector<Vec3> colors;  ///< optional, per vertex, [0,1]

    [[nodiscard]] bool empty() const { return triangles.empty(); }
    /// V - E + F over the triangles' vertices and undirected edges.
    [[nodiscard]] long euler_characteristic() const;
    /// Every undirected edge is shared by exactly two triangles.
    [[nodiscard]] bool watertight() const;
    /// Throws InvalidArgument on out-of-range indices or attribute size mismatch.
    void validate() const;
};

inline constexpr double kDegenerateArea = 1e-12;

/// Merges bit-identical vertex positions, drops triangles with repeated
/// indices or area <= kDegenerateArea, then removes unreferenced vertices.
void cleanup_mesh(TriangleMesh& mesh);

struct MeshOptions {
    int resolution = 128;
    double iso_level = 0.01; ///< defaults to the occupancy threshold
    int max_resolution = 512; ///< memory guard
    bool normals = true;
    bool colors = true;
};

/// Marching cubes over density samples at (resolution + 1)^3 grid corners of
/// the field bounds. Inside means density >= iso_level. Normals are minus the
/// central-difference density gradient; colours are queried looking at the
/// surface from outside. An empty level set gives an empty mesh.
TriangleMesh extract_mesh(const RadianceField& field, const MeshOptions& opts = {});

/// Grid samples at or above the iso level (an enclosed-volume proxy).
std::size_t count_inside(const RadianceField& field, int resolution, double iso_level);

enum class MeshFormat { obj, ply };
MeshFormat mesh_format_from_path(const std::filesystem::path& path);

/// OBJ is ASCII with %.9g coordinates ("v x y z [r g b]"); PLY is binary
/// little-endian with double coordinates and uchar colours.
void export_mesh(const TriangleMesh& mesh, const std::filesystem::path& path, MeshFormat format);
TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format);

} // namespace bf
