#include "blobforge/interact/semantic.hpp"

namespace bf {

GuidanceRegion part_region(const GaussianScene& scene, const PartSelection& part) {
    const Aabb box = part_bounds(scene, part);
    if (box.empty()) throw InvalidArgument("part is empty");
    return {box.center(), std::max(0.5 * box.diagonal(), 1e-6)};
}

SemanticEditReport semantic_edit_step(GaussianScene& scene, const PartSelection& part, SplatOptimizer& opt,
                                      const std::string& prompt, double t, GuidanceProvider& provider,
                                      const CameraDistribution& cameras, std::mt19937_64& rng, GuidanceContext& ctx) {
    const GradientGate gate = gate_gradients(part, scene);
    SemanticEditReport rep;
    if (part.empty()) return rep;
    const SplatGuidanceResult g = guidance_step(scene, part_region(scene, part), prompt, t, provider, cameras, rng, ctx, &gate);
    if (!g.applied()) {
        rep.skip_reason = g.exchange.skip_reason;
        return rep;
    }
    opt.step(scene, g.grads, &gate);
    rep.applied = true;
    rep.loss = g.loss();
    return rep;
}

} // namespace bf
