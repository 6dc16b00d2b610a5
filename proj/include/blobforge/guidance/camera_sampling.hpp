#pragma once

#include "blobforge/splat/camera.hpp"

#include <random>

namespace bf {

/// Orbit-camera sampling law: elevation/azimuth in degrees, distance to the
/// look-at point in world units. World up is +y.
struct CameraDistribution {
    double elevation_min = -10.0, elevation_max = 45.0;
    double azimuth_min = -180.0, azimuth_max = 180.0;
    double radius_min = 2.5, radius_max = 3.5;
    Vec3 look_at = Vec3::Zero();
    double fov_y = 0.7; ///< radians
    int width = 256, height = 256;
    double near = 0.05, far = 100.0;

    /// Throws InvalidArgument on empty ranges or radius inside the near plane.
    void validate() const;
};

struct OrbitPose {
    double elevation_deg = 0.0;
    double azimuth_deg = 0.0;
    double radius = 3.0;
};

OrbitPose sample_pose(const CameraDistribution& dist, std::mt19937_64& rng);
Vec3 orbit_direction(double elevation_deg, double azimuth_deg);
Camera camera_from_pose(const CameraDistribution& dist, const OrbitPose& pose);
Camera sample_camera(const CameraDistribution& dist, std::mt19937_64& rng);

/// Default zoom margin: the region spans 1/zeta of the image.
inline constexpr double kDefaultZoomMargin = 1.25;

/// Camera aimed at a spherical region from a direction drawn from `base`. The
/// distance makes the sphere's silhouette span 1/zeta of the narrower image
/// axis: radius * sqrt(1 + (zeta / tan(fov / 2))^2).
Camera zoom_in_camera(const Vec3& center, double radius, const CameraDistribution& base, std::mt19937_64& rng,
                      double zeta = kDefaultZoomMargin);
Camera zoom_in_camera(const Vec3& center, double radius, const CameraDistribution& base, const OrbitPose& pose,
                      double zeta = kDefaultZoomMargin);

} // namespace bf
