#include "blobforge/splat/camera.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

namespace bf {

Vec3 Camera::ray_direction(double px, double py) const {
    const Vec3 d_cam((px - cx) / fx, (py - cy) / fy, 1.0);
    return (rotation.transpose() * d_cam).normalized();
}

void Camera::validate() const {
    if (!(near > 0.0)) throw InvalidArgument(fmt::format("camera: near must be > 0 (got {})", near));
    if (!(far > near)) throw InvalidArgument(fmt::format("camera: far {} must exceed near {}", far, near));
    if (width < 8 || height < 8)
        throw InvalidArgument(fmt::format("camera: resolution {}x{} below 8x8", width, height));
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera: focal lengths must be positive");
}

Camera Camera::composed(const Mat3& r, const Vec3& t) const {
    Camera c = *this;
    c.rotation = rotation * r;
    c.translation = rotation * t + translation;
    return c;
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y, int width, int height,
               double near, double far) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-9) right = forward.cross(std::abs(forward.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY());
    right.normalize();
    const Vec3 down = forward.cross(right);
    Camera c;
    c.rotation.row(0) = right.transpose();
    c.rotation.row(1) = down.transpose();
    c.rotation.row(2) = forward.transpose();
    c.translation = -c.rotation * eye;
    c.width = width;
    c.height = height;
    c.fy = 0.5 * height / std::tan(0.5 * fov_y);
    c.fx = c.fy;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    c.near = near;
    c.far = far;
    return c;
}

} // namespace bf
