#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>

namespace bf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

using Vec3f = Eigen::Vector3f;
using Vec4f = Eigen::Vector4f;

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

/// Rotation matrix of a (w, x, y, z) quaternion; the quaternion is normalized first.
inline Mat3 quat_to_matrix(const Vec4& q) {
    const Vec4 n = q / q.norm();
    return Eigen::Quaterniond(n[0], n[1], n[2], n[3]).toRotationMatrix();
}

inline Vec4 matrix_to_quat(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    return {q.w(), q.x(), q.y(), q.z()};
}

/// Hamilton product a*b in (w, x, y, z) layout.
inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

struct Aabb {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

    [[nodiscard]] bool empty() const { return (lo.array() > hi.array()).any(); }
    void extend(const Vec3& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    void extend(const Aabb& b) {
        if (b.empty()) return;
        extend(b.lo);
        extend(b.hi);
    }
    [[nodiscard]] bool contains(const Vec3& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
    [[nodiscard]] Vec3 center() const { return 0.5 * (lo + hi); }
    [[nodiscard]] Vec3 size() const { return hi - lo; }
    [[nodiscard]] double diagonal() const { return empty() ? 0.0 : size().norm(); }
};

} // namespace bf
