#pragma once

#include "blobforge/core/adamw.hpp"
#include "blobforge/splat/render.hpp"
#include "blobforge/splat/scene.hpp"

#include <array>

namespace bf {

/// Per-group learning rates for blob parameters.
struct SplatLearningRates {
    double position = 0.005;
    double scale = 0.003;
    double rotation = 0.003;
    double color = 0.01;
    double opacity = 0.003;
};

struct SplatOptimizerOptions {
    SplatLearningRates lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double eps = 1e-15;
};

/// AdamW over a GaussianScene, one moment block per parameter group.
class SplatOptimizer {
public:
    enum Group { kPosition, kRotation, kScale, kOpacity, kColor, kGroups };

    SplatOptimizer() = default;
    SplatOptimizer(std::size_t blobs, const SplatOptimizerOptions& opts);

    [[nodiscard]] const SplatOptimizerOptions& options() const { return opts_; }
    [[nodiscard]] std::size_t size() const { return blobs_; }

    /// One step; when `gate` is given only its blobs (all parameters) move,
    /// the rest stay bitwise unchanged (no weight decay either). Enforces
    /// blob invariants on the touched blobs afterwards.
    void step(GaussianScene& scene, const BlobGradients& grads, const GradientGate* gate = nullptr);

    /// Carries moments across densify_and_prune (origin from DensifyResult).
    void remap(std::span<const std::int64_t> origin);
    /// Multiplies every group's base learning rate (for decay schedules).
    void set_lr_scale(double s);
    [[nodiscard]] double lr_scale() const { return lr_scale_; }
    [[nodiscard]] const AdamW& group(Group g) const { return adam_[g]; }

    /// Fresh state for a scene of `blobs` blobs.
    void reset(std::size_t blobs);

    bool operator==(const SplatOptimizer& o) const;

private:
    static constexpr std::array<std::size_t, kGroups> kOffset{0, 3, 7, 10, 11};
    static constexpr std::array<std::size_t, kGroups> kWidth{3, 4, 3, 1, 3};

    SplatOptimizerOptions opts_{};
    std::size_t blobs_ = 0;
    double lr_scale_ = 1.0;
    std::array<AdamW, kGroups> adam_{};
};

} // namespace bf
