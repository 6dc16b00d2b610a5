#pragma once

#include "blobforge/core/image.hpp"
#include "blobforge/field/occupancy.hpp"
#include "blobforge/splat/camera.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace bf {

struct VolumeOptions {
    double step = 0.0; ///< march step; 0 means bounds diagonal / 512
    Vec3 background = Vec3::Ones();
    double min_transmittance = 1e-6; ///< rays stop once T drops below this

    [[nodiscard]] double step_for(const Aabb& b) const { return step > 0.0 ? step : b.diagonal() / 512.0; }
};

struct VolumeRender {
    Image rgb;   ///< H x W x 3
    Image alpha; ///< H x W x 1
    Image depth; ///< H x W x 1, alpha-normalised camera z, 0 where alpha = 0
};

struct Ray {
    Vec3 origin;
    Vec3 dir;    ///< unit
    double tmin; ///< clip (near plane along this ray)
    double tmax;
    double z_scale; ///< camera z per unit t
};

Ray camera_ray(const Camera& cam, double px, double py);

/// Entry/exit distances of a ray through a box, nullopt when it misses.
std::optional<std::pair<double, double>> intersect_box(const Aabb& b, const Vec3& o, const Vec3& d);

struct RayResult {
    Vec3 rgb = Vec3::Zero();
    double alpha = 0.0;
    double depth = 0.0;
};

/// Samples sit at t_j = t_enter + (j + 0.5) * step from the box entry; only
/// samples inside occupied voxels contribute. alpha_j = 1 - exp(-sigma_j step),
/// composited front to back over the background.
RayResult march_ray(const RadianceField& field, const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts);

VolumeRender volrender(const RadianceField& field, const Camera& cam, const OccupancyGrid& occ,
                       const VolumeOptions& opts = {});

/// Forward and backward of one ray for a differentiable model.
/// Model needs: typename Tape; FieldSample forward(p, dir, Tape&) const.
/// backward(tape, dL/dsigma, dL/drgb, grads) is called per contributing sample.
/// Returns the ray colour; `upstream` is dL/d(colour).
template <class Model, class Grads>
RayResult march_ray_backward(const Model& model, const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts,
                             const Vec3& upstream, Grads& grads);

/// Same, with the upstream gradient computed from the ray's forward result.
template <class Model, class Grads, class Upstream>
RayResult march_ray_backward_fn(const Model& model, const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts,
                                Upstream&& upstream_of, Grads& grads);

/// Forward only through a differentiable model (same sample positions).
template <class Model>
RayResult march_ray_model(const Model& model, const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts);

// ---------------------------------------------------------------------------

namespace detail {

struct MarchSample {
    double t;
    double sigma;
    Vec3 rgb;
};

/// Walks the sample lattice; visit(t, p) returns the FieldSample.
template <class Visit>
RayResult march_generic(const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts, Visit&& visit,
                        std::vector<MarchSample>* record) {
    RayResult r;
    const auto hit = intersect_box(occ.bounds, ray.origin, ray.dir);
    double transmittance = 1.0;
    double depth_acc = 0.0;
    if (hit) {
        const double step = opts.step_for(occ.bounds);
        const double t0 = hit->first;
        const double t1 = std::min(hit->second, ray.tmax);
        for (long j = 0;; ++j) {
            const double t = t0 + (static_cast<double>(j) + 0.5) * step;
            if (t > t1) break;
            if (t < ray.tmin) continue;
            const Vec3 p = ray.origin + t * ray.dir;
            if (!occ.occupied(p)) continue;
            const FieldSample s = visit(p);
            const double a = 1.0 - std::exp(-s.sigma * step);
            const double w = transmittance * a;
            r.rgb += w * s.rgb;
            depth_acc += w * t * ray.z_scale;
            if (record) record->push_back({t, s.sigma, s.rgb});
            transmittance *= 1.0 - a;
            if (transmittance < opts.min_transmittance) break;
        }
    }
    r.alpha = 1.0 - transmittance;
    r.depth = r.alpha > 0.0 ? depth_acc / r.alpha : 0.0;
    r.rgb += transmittance * opts.background;
    return r;
}

} // namespace detail

template <class Model>
RayResult march_ray_model(const Model& model, const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts) {
    thread_local typename Model::Tape tape;
    return detail::march_generic(ray, occ, opts, [&](const Vec3& p) { return model.forward(p, ray.dir, tape); },
                                 nullptr);
}

template <class Model, class Grads, class Upstream>
RayResult march_ray_backward_fn(const Model& model, const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts,
                                Upstream&& upstream_of, Grads& grads) {
    // One tape per sample so the backward sweep needs no recomputation.
    thread_local std::vector<typename Model::Tape> tapes;
    thread_local std::vector<detail::MarchSample> samples;
    samples.clear();
    std::size_t used = 0;
    const RayResult r = detail::march_generic(
        ray, occ, opts,
        [&](const Vec3& p) {
            if (used == tapes.size()) tapes.emplace_back();
            return model.forward(p, ray.dir, tapes[used++]);
        },
        &samples);
    const Vec3 upstream = upstream_of(r);
    const double step = opts.step_for(occ.bounds);
    // tail_j = colour contributed behind sample j (later samples + background);
    // dC/dsigma_j = step * (T_{j+1} c_j - tail_j), dC/dc_j = T_j alpha_j.
    double transmittance = 1.0;
    Vec3 prefix = Vec3::Zero();
    for (std::size_t j = 0; j < samples.size(); ++j) {
        const auto& s = samples[j];
        const double a = 1.0 - std::exp(-s.sigma * step);
        const double w = transmittance * a;
        prefix += w * s.rgb;
        const double t_next = transmittance * (1.0 - a);
        const Vec3 tail = r.rgb - prefix;
        const double dsigma = step * upstream.dot(t_next * s.rgb - tail);
        const Vec3 drgb = w * upstream;
        if (dsigma != 0.0 || drgb != Vec3::Zero()) model.backward(tapes[j], dsigma, drgb, grads);
        transmittance = t_next;
    }
    return r;
}

template <class Model, class Grads>
RayResult march_ray_backward(const Model& model, const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts,
                             const Vec3& upstream, Grads& grads) {
    return march_ray_backward_fn(model, ray, occ, opts, [&](const RayResult&) { return upstream; }, grads);
}

} // namespace bf
