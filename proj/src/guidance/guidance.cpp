#include "blobforge/guidance/guidance.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

#include <algorithm>

namespace bf {

double schedule_t(double progress, const TSchedule& s) {
    if (s.override_t) return *s.override_t;
    const double p = std::clamp(progress, 0.0, 1.0);
    return s.start + (s.end - s.start) * p;
}

GuidanceExchange exchange_guidance(GuidanceProvider& provider, GuidanceContext& ctx, const Camera& camera,
                                   const Image& rgb, const std::string& prompt, double t) {
    GuidanceRequest req;
    req.session = ctx.session;
    req.nonce = ctx.next_nonce++;
    req.prompt = prompt;
    req.t = t;
    req.camera = camera;
    req.rgb = rgb;
    req.validate();

    GuidanceExchange ex;
    ex.camera = camera;
    try {
        GuidanceResponse resp = provider.evaluate(req);
        resp.validate(req);
        ex.response = std::move(resp);
    } catch (const GuidanceTimeout& e) {
        ex.timed_out = true;
        ex.skip_reason = e.what();
    } catch (const GuidanceError& e) {
        ex.skip_reason = e.what();
    }
    return ex;
}

SplatGuidanceResult guidance_step_at(const GaussianScene& scene, const Camera& camera, const std::string& prompt,
                                     double t, GuidanceProvider& provider, GuidanceContext& ctx,
                                     const GradientGate* gate) {
    const RenderOutput fwd = render(scene, camera);
    SplatGuidanceResult out;
    out.exchange = exchange_guidance(provider, ctx, camera, fwd.rgb, prompt, t);
    if (out.applied()) out.grads = render_backward(scene, camera, fwd, out.exchange.response->gradient, gate);
    return out;
}

SplatGuidanceResult guidance_step(const GaussianScene& scene, const GuidanceRegion& region, const std::string& prompt,
                                  double t, GuidanceProvider& provider, const CameraDistribution& cameras,
                                  std::mt19937_64& rng, GuidanceContext& ctx, const GradientGate* gate) {
    const Camera cam = zoom_in_camera(region.center, region.radius, cameras, rng, ctx.zoom_margin);
    return guidance_step_at(scene, cam, prompt, t, provider, ctx, gate);
}

} // namespace bf
