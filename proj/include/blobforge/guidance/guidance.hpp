#pragma once

#include "blobforge/guidance/camera_sampling.hpp"
#include "blobforge/guidance/provider.hpp"
#include "blobforge/splat/render.hpp"

#include <functional>
#include <optional>
#include <random>
#include <string>

namespace bf {

/// Linear annealing of the denoising step; `override_t` always wins.
struct TSchedule {
    double start = 0.98;
    double end = 0.3;
    std::optional<double> override_t;
};

/// t at stage progress in [0, 1] (clamped).
double schedule_t(double progress, const TSchedule& schedule = {});

/// Spherical region the guidance camera zooms onto.
struct GuidanceRegion {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
};

/// Per-session request numbering.
struct GuidanceContext {
    std::string session = "local";
    std::uint64_t next_nonce = 1;
    double zoom_margin = kDefaultZoomMargin;
};

/// Outcome of one provider round trip. `response` is empty when the step was
/// skipped; `skip_reason` then says why (timeout, rejected response, ...).
struct GuidanceExchange {
    Camera camera;
    std::optional<GuidanceResponse> response;
    std::string skip_reason;
    bool timed_out = false;
};

/// Sends `rgb` rendered from `camera` and validates the answer. Timeouts and
/// invalid responses turn into a skip, never an exception.
GuidanceExchange exchange_guidance(GuidanceProvider& provider, GuidanceContext& ctx, const Camera& camera,
                                   const Image& rgb, const std::string& prompt, double t);

struct SplatGuidanceResult {
    GuidanceExchange exchange;
    BlobGradients grads; ///< zero-sized when skipped
    [[nodiscard]] bool applied() const { return exchange.response.has_value(); }
    [[nodiscard]] double loss() const { return applied() ? exchange.response->loss : 0.0; }
};

/// Zoomed view of `region`, provider round trip, backward through the splat
/// renderer (gated if `gate` is given).
SplatGuidanceResult guidance_step(const GaussianScene& scene, const GuidanceRegion& region,
                                  const std::string& prompt, double t, GuidanceProvider& provider,
                                  const CameraDistribution& cameras, std::mt19937_64& rng, GuidanceContext& ctx,
                                  const GradientGate* gate = nullptr);

/// Same, with the camera fixed by the caller.
SplatGuidanceResult guidance_step_at(const GaussianScene& scene, const Camera& camera, const std::string& prompt,
                                     double t, GuidanceProvider& provider, GuidanceContext& ctx,
                                     const GradientGate* gate = nullptr);

} // namespace bf
