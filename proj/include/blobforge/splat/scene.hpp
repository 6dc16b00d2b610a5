#pragma once

#include "blobforge/core/math.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace bf {

/// One anisotropic Gaussian. Parameters are stored in float32, the on-disk
/// precision; covariance is rotation * diag(exp(2 * log_scale)) * rotation^T.
struct GaussianBlob {
    Vec3f position = Vec3f::Zero();
    Vec4f rotation{1.f, 0.f, 0.f, 0.f}; // (w, x, y, z), unit norm
    Vec3f log_scale = Vec3f::Constant(-3.f);
    float opacity_logit = 0.f;
    Vec3f color = Vec3f::Constant(0.5f);

    [[nodiscard]] double opacity() const { return sigmoid(opacity_logit); }
    [[nodiscard]] Mat3 rotation_matrix() const { return quat_to_matrix(rotation.cast<double>()); }
    [[nodiscard]] Mat3 covariance() const;
    /// Largest standard deviation over the three principal axes.
    [[nodiscard]] double max_sigma() const { return std::exp(static_cast<double>(log_scale.maxCoeff())); }

    bool operator==(const GaussianBlob&) const = default;
};

/// Number of scalar parameters per blob in flat layouts:
/// position(3) rotation(4) log_scale(3) opacity_logit(1) color(3).
inline constexpr std::size_t kBlobParams = 14;

void pack_blob(const GaussianBlob& b, std::span<double, kBlobParams> out);
void unpack_blob(std::span<const double, kBlobParams> in, GaussianBlob& b);

class GaussianScene {
public:
    GaussianScene() = default;
    explicit GaussianScene(std::vector<GaussianBlob> blobs, std::uint64_t generation = 0);

    [[nodiscard]] std::size_t size() const { return blobs_.size(); }
    [[nodiscard]] bool empty() const { return blobs_.empty(); }
    [[nodiscard]] const std::vector<GaussianBlob>& blobs() const { return blobs_; }
    [[nodiscard]] const GaussianBlob& operator[](std::size_t i) const { return blobs_[i]; }

    /// Mutable access for parameter updates that do not change the blob count.
    /// Call refresh_extent() afterwards if positions moved.
    std::vector<GaussianBlob>& mutable_blobs() { return blobs_; }

    /// Replaces the blob list (structural change, bumps the generation).
    void assign(std::vector<GaussianBlob> blobs);

    [[nodiscard]] const Aabb& extent() const { return extent_; }
    void refresh_extent();
    [[nodiscard]] std::uint64_t generation() const { return generation_; }
    void set_generation(std::uint64_t g) { generation_ = g; }
    void bump_generation() { ++generation_; }

    /// Enforces per-blob invariants after an optimizer step: unit quaternion,
    /// scales no larger than the scene extent, opacity strictly inside (0,1),
    /// color inside [0,1].
    void sanitize(double max_scale);

    bool operator==(const GaussianScene& o) const { return blobs_ == o.blobs_; }

private:
    std::vector<GaussianBlob> blobs_;
    Aabb extent_;
    std::uint64_t generation_ = 0;
};

/// a then b; parameters bit-preserved, extent is the union.
GaussianScene concat(const GaussianScene& a, const GaussianScene& b);

/// Deletes the listed blobs, preserving the order of the survivors.
/// Throws InvalidArgument (scene untouched) when an index is out of range.
GaussianScene remove(const GaussianScene& scene, std::span<const std::size_t> indices);

struct DensifyOptions {
    double grad_threshold = 2e-4;     ///< mean screen-space positional gradient
    double opacity_threshold = 0.005; ///< prune below
    double split_scale_divisor = 1.6;
    double percent_dense = 0.01;      ///< clone when max sigma <= percent_dense * extent diagonal
    std::size_t max_blobs = 200000;
};

/// Mean screen-space positional gradient norm per blob, accumulated over views.
class DensifyStats {
public:
    explicit DensifyStats(std::size_t n = 0) : sum_(n, 0.0), count_(n, 0) {}
    void accumulate(std::span<const double> screen_grad_norm);
    [[nodiscard]] std::vector<double> mean() const;
    [[nodiscard]] std::size_t size() const { return sum_.size(); }
    void reset(std::size_t n);

private:
    std::vector<double> sum_;
    std::vector<std::uint32_t> count_;
};

struct DensifyResult {
    GaussianScene scene;
    /// Old index of each surviving blob, -1 for clones and split children.
    std::vector<std::int64_t> origin;
    /// Old index each blob derives from (survivor, clone source or split parent).
    std::vector<std::int64_t> parent;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
};

/// Clones small / splits large blobs whose mean gradient exceeds the threshold,
/// then prunes low-opacity blobs. Never exceeds opts.max_blobs.
DensifyResult densify_and_prune(const GaussianScene& scene, std::span<const double> mean_grad,
                                const DensifyOptions& opts, std::mt19937_64& rng);

/// Nearest-neighbour distance for each point (brute force over a uniform grid).
std::vector<double> nearest_neighbor_distances(std::span<const Vec3> points);

struct PointInitOptions {
    double opacity = 0.1;
    Vec3 color{0.5, 0.5, 0.5};
};

/// Blobs at the given points with isotropic scale equal to the nearest-neighbour distance.
GaussianScene scene_from_points(std::span<const Vec3> points, std::span<const Vec3> colors,
                                const PointInitOptions& opts = {});

/// Uniform samples inside a ball (default: 4096 points in the unit sphere).
GaussianScene init_uniform_sphere(std::mt19937_64& rng, std::size_t count = 4096, double radius = 1.0,
                                  const Vec3& center = Vec3::Zero(), const PointInitOptions& opts = {});

} // namespace bf
