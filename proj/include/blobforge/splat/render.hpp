#pragma once

#include "blobforge/core/image.hpp"
#include "blobforge/splat/camera.hpp"
#include "blobforge/splat/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace bf {

/// Screen-space footprint of one blob.
struct Projection {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    bool culled = true;
};

/// Isotropic variance added to every projected covariance (pixels^2).
inline constexpr double kLowPassVariance = 0.3;
/// Mahalanobis radius beyond which a blob's contribution (< 1e-9 * opacity)
/// is dropped, both for screen culling and per-pixel tests.
inline constexpr double kCutoffSigma = 6.5;

/// EWA projection: cov2d = J W Sigma W^T J^T + 0.3 I. Blobs in front of the
/// near plane only; others come back with culled = true.
Projection project(const GaussianBlob& blob, const Camera& camera);

struct RenderOutput {
    Image rgb;   ///< H x W x 3
    Image alpha; ///< H x W x 1
    Image depth; ///< H x W x 1, alpha-normalised expected camera-space depth, 0 where alpha = 0
    Vec3 background = Vec3::Ones();
    std::uint64_t scene_generation = 0;
    std::size_t scene_size = 0;
    /// Final transmittance per pixel (1 - alpha), kept for the backward pass.
    std::vector<double> transmittance;
};

RenderOutput render(const GaussianScene& scene, const Camera& camera, const Vec3& background = Vec3::Ones());

/// Per-blob parameter gradients in the flat kBlobParams layout.
struct BlobGradients {
    std::vector<double> params;           ///< size() * kBlobParams
    std::vector<double> screen_grad_norm; ///< |dL/dmean2d| per blob, for densification

    BlobGradients() = default;
    explicit BlobGradients(std::size_t n) : params(n * kBlobParams, 0.0), screen_grad_norm(n, 0.0) {}
    [[nodiscard]] std::size_t size() const { return screen_grad_norm.size(); }
    [[nodiscard]] std::span<double, kBlobParams> of(std::size_t i) {
        return std::span<double, kBlobParams>(params.data() + i * kBlobParams, kBlobParams);
    }
    [[nodiscard]] std::span<const double, kBlobParams> of(std::size_t i) const {
        return std::span<const double, kBlobParams>(params.data() + i * kBlobParams, kBlobParams);
    }
    BlobGradients& operator+=(const BlobGradients& o);
    void scale(double s);
};

/// Zeroes gradients of blobs outside the mask (mask[i] != 0 keeps blob i).
struct GradientGate {
    std::vector<std::uint8_t> mask;
    [[nodiscard]] bool allows(std::size_t i) const { return mask[i] != 0; }
};

/// Backward of render() for dL/d(rgb). `forward` must come from render() of
/// this scene generation and size; otherwise InvalidArgument.
BlobGradients render_backward(const GaussianScene& scene, const Camera& camera, const RenderOutput& forward,
                              const Image& upstream_rgb_grad, const GradientGate* gate = nullptr);

/// Applies a rigid motion to every blob: positions r*x + t, orientations r*R.
GaussianScene rigid_transform(const GaussianScene& scene, const Mat3& r, const Vec3& t);

} // namespace bf
