#pragma once

#include "blobforge/core/math.hpp"

namespace bf {

/// Pinhole camera. Camera space: +x right, +y down, +z forward (view direction).
/// Pixel (x, y) has its centre at (x + 0.5, y + 0.5).
struct Camera {
    Mat3 rotation = Mat3::Identity(); ///< world-to-camera rotation
    Vec3 translation = Vec3::Zero();  ///< world-to-camera translation
    double fx = 100.0, fy = 100.0;
    double cx = 32.0, cy = 32.0;
    int width = 64, height = 64;
    double near = 0.01, far = 100.0;

    [[nodiscard]] Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    [[nodiscard]] Vec3 position() const { return -rotation.transpose() * translation; }
    [[nodiscard]] Vec2 project(const Vec3& cam) const {
        return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy};
    }
    /// Unit world-space direction through the centre of pixel (x, y).
    [[nodiscard]] Vec3 ray_direction(double px, double py) const;
    [[nodiscard]] double fov_y() const { return 2.0 * std::atan(0.5 * height / fy); }
    [[nodiscard]] double fov_x() const { return 2.0 * std::atan(0.5 * width / fx); }

    /// Throws InvalidArgument unless near > 0, far > near and resolution >= 8x8.
    void validate() const;

    /// Camera whose view of x equals this camera's view of r*x + t, so that
    /// rendering T(scene) here matches rendering scene from composed(r, t).
    [[nodiscard]] Camera composed(const Mat3& r, const Vec3& t) const;
};

/// Camera at `eye` looking at `target`, vertical field of view in radians,
/// principal point at the image centre.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y, int width, int height,
               double near = 0.01, double far = 100.0);

} // namespace bf
