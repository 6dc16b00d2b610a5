#pragma once

#include "blobforge/guidance/guidance.hpp"
#include "blobforge/interact/selection.hpp"
#include "blobforge/splat/optimizer.hpp"

namespace bf {

struct SemanticEditReport {
    bool applied = false;
    double loss = 0.0;
    std::string skip_reason;
};

/// One local semantic edit iteration: guidance under `prompt` on a view
/// zoomed onto the part, gradients gated to the part, one optimizer step.
/// Blobs outside the part stay bitwise unchanged.
SemanticEditReport semantic_edit_step(GaussianScene& scene, const PartSelection& part, SplatOptimizer& opt,
                                      const std::string& prompt, double t, GuidanceProvider& provider,
                                      const CameraDistribution& cameras, std::mt19937_64& rng, GuidanceContext& ctx);

/// Bounding sphere of B(P), the zoom target for part-local guidance.
GuidanceRegion part_region(const GaussianScene& scene, const PartSelection& part);

} // namespace bf
