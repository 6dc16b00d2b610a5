#include "blobforge/guidance/camera_sampling.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <numbers>

namespace bf {

void CameraDistribution::validate() const {
    if (!(elevation_max >= elevation_min) || !(azimuth_max >= azimuth_min) || !(radius_max >= radius_min))
        throw InvalidArgument("camera distribution: empty range");
    if (!(radius_min > near)) throw InvalidArgument(fmt::format("camera distribution: radius {} inside near plane", radius_min));
    if (elevation_min < -90.0 || elevation_max > 90.0) throw InvalidArgument("camera distribution: elevation outside [-90, 90]");
}

OrbitPose sample_pose(const CameraDistribution& dist, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    OrbitPose p;
    p.elevation_deg = dist.elevation_min + (dist.elevation_max - dist.elevation_min) * u(rng);
    p.azimuth_deg = dist.azimuth_min + (dist.azimuth_max - dist.azimuth_min) * u(rng);
    p.radius = dist.radius_min + (dist.radius_max - dist.radius_min) * u(rng);
    return p;
}

Vec3 orbit_direction(double elevation_deg, double azimuth_deg) {
    const double el = elevation_deg * std::numbers::pi / 180.0;
    const double az = azimuth_deg * std::numbers::pi / 180.0;
    return {std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)};
}

Camera camera_from_pose(const CameraDistribution& dist, const OrbitPose& pose) {
    const Vec3 eye = dist.look_at + pose.radius * orbit_direction(pose.elevation_deg, pose.azimuth_deg);
    return look_at(eye, dist.look_at, Vec3::UnitY(), dist.fov_y, dist.width, dist.height, dist.near, dist.far);
}

Camera sample_camera(const CameraDistribution& dist, std::mt19937_64& rng) {
    return camera_from_pose(dist, sample_pose(dist, rng));
}

Camera zoom_in_camera(const Vec3& center, double radius, const CameraDistribution& base, const OrbitPose& pose,
                      double zeta) {
    if (!(radius > 0.0)) throw InvalidArgument("zoom_in_camera: region radius must be positive");
    if (!(zeta > 0.0)) throw InvalidArgument("zoom_in_camera: zoom margin must be positive");
    const double half_fov_y = 0.5 * base.fov_y;
    const double half_fov_x = std::atan(std::tan(half_fov_y) * base.width / base.height);
    const double half_fov = std::min(half_fov_x, half_fov_y);
    // Distance at which the sphere's silhouette cone has half-angle
    // atan(tan(half_fov) / zeta), i.e. it spans exactly 1/zeta of the image.
    const double k = zeta / std::tan(half_fov);
    const double dist = radius * std::sqrt(1.0 + k * k);
    const Vec3 eye = center + dist * orbit_direction(pose.elevation_deg, pose.azimuth_deg);
    const double near = std::clamp(0.5 * (dist - radius), 1e-4, base.near);
    const double far = std::max(base.far, dist + 10.0 * radius);
    return look_at(eye, center, Vec3::UnitY(), base.fov_y, base.width, base.height, near, far);
}

Camera zoom_in_camera(const Vec3& center, double radius, const CameraDistribution& base, std::mt19937_64& rng,
                      double zeta) {
    return zoom_in_camera(center, radius, base, sample_pose(base, rng), zeta);
}

} // namespace bf
