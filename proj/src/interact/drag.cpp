#include "blobforge/interact/drag.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

namespace bf {

const char* to_string(DragMode m) { return m == DragMode::Rigid ? "rigid" : "deformable"; }

DragMode drag_mode_from_string(const std::string& s) {
    if (s == "rigid") return DragMode::Rigid;
    if (s == "deformable") return DragMode::Deformable;
    throw InvalidArgument("unknown drag mode '" + s + "'");
}

DragSession::DragSession(const GaussianScene& scene, const Vec3& source, const Vec3& target, double radius,
                         DragOptions opts)
    : opts_(std::move(opts)), p_s_(source), p_t_(target), r_(radius), rng_(opts_.seed) {
    if (!(radius > 0.0)) throw InvalidArgument("drag radius must be positive");
    alpha_ = opts_.alpha > 0.0 ? opts_.alpha : 0.01 * scene.extent().diagonal();
    if (!(alpha_ > 0.0)) throw InvalidArgument("drag step length must be positive (empty or degenerate scene?)");
    eps_ = opts_.epsilon > 0.0 ? opts_.epsilon : alpha_;
    d0_ = (p_t_ - p_s_).norm();
    if (opts_.views_per_step == 0) throw InvalidArgument("drag needs at least one guidance view per step");
    sel_ = select_sphere(scene, p_s_, r_);
    opt_ = SplatOptimizer(scene.size(), opts_.optimizer);
    stats_.reset(scene.size());
    ctx_.session = "drag";
    if (opts_.mode == DragMode::Rigid) freeze(scene);
}

void DragSession::freeze(const GaussianScene& scene) {
    frozen_.clear();
    for (const auto i : sel_.indices) frozen_.push_back((p_s_ - scene[i].position.cast<double>()).norm());
}

void DragSession::set_mode(DragMode m, const GaussianScene& scene) {
    opts_.mode = m;
    if (m == DragMode::Rigid) {
        sel_.require_valid(scene);
        freeze(scene);
    } else {
        frozen_.clear();
    }
}

double DragSession::rigid_loss(const GaussianScene& scene) const {
    if (opts_.mode != DragMode::Rigid) return 0.0;
    double l = 0.0;
    for (std::size_t k = 0; k < sel_.indices.size(); ++k)
        l += std::abs((p_s_ - scene[sel_.indices[k]].position.cast<double>()).norm() - frozen_[k]);
    return l;
}

double DragSession::motion_loss(const GaussianScene& scene) const {
    double l = 0.0;
    for (const auto i : sel_.indices) l += (scene[i].position.cast<double>() - p_t_).cwiseAbs().sum();
    return l;
}

StepReport drag_step(DragSession& s, GaussianScene& scene, GuidanceProvider* provider) {
    if (scene.size() != s.opt_.size() || (s.opts_.mode == DragMode::Rigid && !s.sel_.valid_for(scene)))
        throw StaleSelection("scene changed structurally outside the drag session");
    if (s.converged()) throw InvalidArgument(fmt::format("drag already within {} of the target", s.eps_));
    if (s.steps_ >= s.opts_.max_steps) throw InvalidArgument(fmt::format("drag exhausted {} steps", s.opts_.max_steps));

    const GaussianScene scene_before = scene;
    const DragSession session_before = s;

    StepReport rep;
    rep.step = s.steps_ + 1;

    // Fixed-length move towards the target.
    const Vec3 offset = s.alpha_ * (s.p_t_ - s.p_s_).normalized();
    auto& blobs = scene.mutable_blobs();
    for (const auto i : s.sel_.indices) blobs[i].position = (blobs[i].position.cast<double>() + offset).cast<float>();
    s.p_s_ += offset;
    scene.refresh_extent();
    if (s.opts_.mode == DragMode::Deformable) s.sel_ = select_sphere(scene, s.p_s_, s.r_);
    const GradientGate gate = gate_gradients(s.sel_, scene);

    BlobGradients grads(scene.size());
    const auto& w = s.opts_.weights;
    if (provider && w.guidance != 0.0) {
        const double progress = s.d0_ > 0.0 ? 1.0 - s.distance() / s.d0_ : 1.0;
        const double t = schedule_t(progress, s.opts_.t_schedule);
        for (std::size_t k = 0; k < s.opts_.views_per_step; ++k) {
            SplatGuidanceResult g =
                guidance_step(scene, GuidanceRegion{s.p_s_, s.r_}, s.opts_.prompt, t, *provider, s.opts_.cameras,
                              s.rng_, s.ctx_, &gate);
            if (!g.applied()) {
                const std::uint64_t nonce = s.ctx_.next_nonce;
                scene = scene_before;
                s = session_before;
                s.ctx_.next_nonce = nonce;
                rep.aborted = true;
                rep.abort_reason = g.exchange.skip_reason;
                rep.distance = s.distance();
                rep.selected = s.sel_.size();
                return rep;
            }
            s.stats_.accumulate(g.grads.screen_grad_norm);
            g.grads.scale(w.guidance / static_cast<double>(s.opts_.views_per_step));
            grads += g.grads;
            rep.guidance_loss += g.loss() / static_cast<double>(s.opts_.views_per_step);
        }
        rep.guidance_applied = true;
    }

    // Motion term: l1 pull towards the target (subgradient 0 at the kink).
    rep.motion_loss = s.motion_loss(scene);
    if (w.motion != 0.0) {
        for (const auto i : s.sel_.indices) {
            auto g = grads.of(i);
            for (int c = 0; c < 3; ++c) {
                const double d = blobs[i].position[c] - s.p_t_[c];
                g[c] += w.motion * static_cast<double>((d > 0.0) - (d < 0.0));
            }
        }
    }
    rep.rigid_loss = s.rigid_loss(scene);
    rep.total_loss = w.guidance * rep.guidance_loss + w.motion * rep.motion_loss +
                     (s.opts_.mode == DragMode::Rigid ? w.rigid * rep.rigid_loss : 0.0);

    s.opt_.step(scene, grads, &gate);

    // Rigid term as a proximal step: the l1 distance penalty is non-smooth, so each
    // selected blob moves radially towards its frozen distance by at most
    // lr * lambda_rigid (the soft-threshold of the penalty).
    if (s.opts_.mode == DragMode::Rigid && w.rigid > 0.0) {
        const double reach = s.opts_.optimizer.lr.position * s.opt_.lr_scale() * w.rigid;
        for (std::size_t k = 0; k < s.sel_.indices.size(); ++k) {
            GaussianBlob& b = blobs[s.sel_.indices[k]];
            const Vec3 v = b.position.cast<double>() - s.p_s_;
            const double d = v.norm();
            if (d < 1e-12) continue;
            const double move = std::clamp(s.frozen_[k] - d, -reach, reach);
            b.position = (s.p_s_ + v * ((d + move) / d)).cast<float>();
        }
        scene.refresh_extent();
    }

    ++s.steps_;
    if (s.opts_.mode == DragMode::Deformable && s.opts_.densify_interval > 0 &&
        s.steps_ % s.opts_.densify_interval == 0) {
        const std::vector<double> mean = s.stats_.mean();
        DensifyResult d = densify_and_prune(scene, mean, s.opts_.densify, s.rng_);
        if (d.scene.generation() != scene.generation()) {
            s.opt_.remap(d.origin);
            scene = std::move(d.scene);
            scene.refresh_extent();
            s.sel_ = select_sphere(scene, s.p_s_, s.r_);
            rep.densified = true;
        }
        s.stats_.reset(scene.size());
    }

    rep.distance = s.distance();
    rep.selected = s.sel_.size();
    rep.converged = s.converged();
    return rep;
}

void finish_drag(DragSession& s, GaussianScene& scene) {
    if (scene.size() != s.opt_.size()) throw StaleSelection("scene changed structurally outside the drag session");
    DensifyResult d = densify_and_prune(scene, s.stats_.mean(), s.opts_.densify, s.rng_);
    if (d.scene.generation() == scene.generation()) return;
    s.opt_.remap(d.origin);
    s.sel_ = remap_selection(s.sel_, d);
    if (s.opts_.mode == DragMode::Rigid) s.freeze(d.scene);
    scene = std::move(d.scene);
    scene.refresh_extent();
    s.stats_.reset(scene.size());
}

std::vector<StepReport> run_drag(DragSession& s, GaussianScene& scene, GuidanceProvider* provider) {
    std::vector<StepReport> out;
    while (!s.converged() && s.steps() < s.options().max_steps) {
        out.push_back(drag_step(s, scene, provider));
        if (out.back().aborted) return out;
    }
    finish_drag(s, scene);
    return out;
}

} // namespace bf
