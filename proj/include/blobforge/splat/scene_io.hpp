#pragma once

#include "blobforge/splat/scene.hpp"

#include <filesystem>

namespace bf {

/// Binary little-endian PLY (x y z rot_0..3 scale_0..2 opacity_logit r g b,
/// float32) plus a JSON sidecar "<path>.json" holding extent and counters.
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);
GaussianScene load_scene(const std::filesystem::path& path);

/// Point cloud from ".xyz"/".txt" (x y z [r g b] per line, colors in [0,1] or
/// 0..255) or a PLY with x/y/z (and optional red/green/blue) vertex properties.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> colors; ///< empty when the file carries none
};
PointCloud load_point_cloud(const std::filesystem::path& path);

} // namespace bf
