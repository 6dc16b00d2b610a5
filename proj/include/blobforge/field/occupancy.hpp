#pragma once

#include "blobforge/field/field.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace bf {

inline constexpr int kOccupancyResolution = 32;
inline constexpr double kDefaultOccupancyThreshold = 0.01;

/// Binary voxel grid over an axis-aligned box.
struct OccupancyGrid {
    int resolution = kOccupancyResolution;
    Aabb bounds;
    double threshold = kDefaultOccupancyThreshold;
    std::vector<std::uint8_t> bits;

    static OccupancyGrid filled(const Aabb& bounds, bool value, int resolution = kOccupancyResolution);

    [[nodiscard]] std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) + static_cast<std::size_t>(resolution) * (j + static_cast<std::size_t>(resolution) * k);
    }
    [[nodiscard]] bool at(int i, int j, int k) const { return bits[index(i, j, k)] != 0; }
    void set(int i, int j, int k, bool v) { bits[index(i, j, k)] = v ? 1 : 0; }
    [[nodiscard]] Vec3 voxel_size() const { return bounds.size() / resolution; }
    [[nodiscard]] Vec3 voxel_center(int i, int j, int k) const;
    /// Voxel containing p, or {-1,-1,-1} outside the bounds.
    [[nodiscard]] std::array<int, 3> voxel_of(const Vec3& p) const;
    /// True when p lies in an occupied voxel.
    [[nodiscard]] bool occupied(const Vec3& p) const;
    [[nodiscard]] std::size_t count() const;
    [[nodiscard]] bool empty() const { return count() == 0; }
    [[nodiscard]] bool subset_of(const OccupancyGrid& o) const;
    bool operator==(const OccupancyGrid& o) const {
        return resolution == o.resolution && bits == o.bits && bounds.lo == o.bounds.lo && bounds.hi == o.bounds.hi;
    }
};

/// Voxel occupied iff the largest density over an s^3 stencil of points
/// inside it reaches tau.
OccupancyGrid extract_occupancy(const RadianceField& field, double tau = kDefaultOccupancyThreshold,
                                int resolution = kOccupancyResolution, int stencil = 3);

} // namespace bf
