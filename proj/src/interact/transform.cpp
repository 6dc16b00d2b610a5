#include "blobforge/interact/transform.hpp"

#include <Eigen/SVD>
#include <fmt/core.h>

namespace bf {

namespace {
void require_invertible(const Mat3& a) {
    const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
    if (!std::isfinite(a.sum()) || std::abs(a.determinant()) <= 1e-12 * scale * scale * scale)
        throw InvalidArgument(fmt::format("transform matrix is singular (det = {:.3g})", a.determinant()));
}
} // namespace

Affine Affine::inverse() const {
    require_invertible(a);
    const Mat3 ai = a.inverse();
    return {ai, -ai * t};
}

Affine Affine::scaling_about(const Vec3& s, const Vec3& pivot) {
    const Mat3 m = s.asDiagonal();
    return {m, pivot - m * pivot};
}

void polar_decompose(const Mat3& a, Mat3& q, Mat3& s) {
    const double sign = a.determinant() < 0.0 ? -1.0 : 1.0;
    const Mat3 m = sign * a;
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    q = svd.matrixU() * svd.matrixV().transpose();
    s = svd.matrixV() * svd.singularValues().asDiagonal() * svd.matrixV().transpose();
}

GaussianScene transform_part(const GaussianScene& scene, const PartSelection& part, const Affine& xf) {
    part.require_valid(scene);
    require_invertible(xf.a);
    GaussianScene out = scene;
    if (xf.is_identity() || part.empty()) return out;

    const bool linear_identity = xf.a == Mat3::Identity();
    Mat3 q = Mat3::Identity(), s = Mat3::Identity();
    if (!linear_identity) polar_decompose(xf.a, q, s);

    auto& blobs = out.mutable_blobs();
    for (const auto i : part.indices) {
        GaussianBlob& b = blobs[i];
        b.position = xf.apply(b.position.cast<double>()).cast<float>();
        if (linear_identity) continue;
        const Mat3 r = b.rotation_matrix();
        for (int k = 0; k < 3; ++k)
            b.log_scale[k] = static_cast<float>(b.log_scale[k] + std::log((s * r.col(k)).norm()));
        b.rotation = matrix_to_quat(q * r).cast<float>();
    }
    out.refresh_extent();
    return out;
}

} // namespace bf
