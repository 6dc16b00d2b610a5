#pragma once

#include "blobforge/interact/selection.hpp"

namespace bf {

/// x -> a x + t
struct Affine {
    Mat3 a = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    [[nodiscard]] Vec3 apply(const Vec3& x) const { return a * x + t; }
    /// Throws InvalidArgument for a singular matrix.
    [[nodiscard]] Affine inverse() const;
    [[nodiscard]] bool is_identity() const { return a == Mat3::Identity() && t == Vec3::Zero(); }

    static Affine translation(const Vec3& t) { return {Mat3::Identity(), t}; }
    static Affine rotation_about(const Mat3& r, const Vec3& pivot) { return {r, pivot - r * pivot}; }
    static Affine scaling_about(const Vec3& s, const Vec3& pivot);
};

/// Polar decomposition a = q * s with q a proper rotation and s symmetric.
/// For det(a) < 0, q is the rotation of -a (the covariance a S a^T is
/// unchanged by the sign flip).
void polar_decompose(const Mat3& a, Mat3& q, Mat3& s);

/// Applies `xf` to the selected blobs: mu' = a mu + t, orientation q R and
/// per-axis scale multiplied by |s r_k| (r_k the blob's k-th principal axis).
/// Unselected blobs are untouched. The covariance is exactly a Sigma a^T when
/// s is isotropic or aligned with the blob's axes. Throws StaleSelection or
/// InvalidArgument (singular a).
GaussianScene transform_part(const GaussianScene& scene, const PartSelection& part, const Affine& xf);

} // namespace bf
