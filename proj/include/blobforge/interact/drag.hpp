#pragma once

#include "blobforge/guidance/guidance.hpp"
#include "blobforge/interact/selection.hpp"
#include "blobforge/splat/optimizer.hpp"

#include <optional>
#include <random>
#include <string>

namespace bf {

enum class DragMode { Deformable, Rigid };

const char* to_string(DragMode m);
DragMode drag_mode_from_string(const std::string& s);

struct DragWeights {
    double motion = 1.0;
    double rigid = 10.0; ///< only used in rigid mode
    double guidance = 1.0;
};

struct DragOptions {
    DragMode mode = DragMode::Deformable;
    double alpha = 0.0;   ///< step length; 0 means 1% of the scene extent diagonal
    double epsilon = 0.0; ///< convergence radius; 0 means alpha
    DragWeights weights;
    std::size_t max_steps = 10000;
    std::size_t densify_interval = 100; ///< 0 disables
    DensifyOptions densify;
    std::size_t views_per_step = 1;     ///< zoomed guidance views per step
    std::string prompt;
    TSchedule t_schedule;
    CameraDistribution cameras;
    SplatOptimizerOptions optimizer;
    std::uint64_t seed = 0;
};

struct StepReport {
    std::size_t step = 0;
    double guidance_loss = 0.0;
    double motion_loss = 0.0;
    double rigid_loss = 0.0;
    double total_loss = 0.0;
    double distance = 0.0; ///< |p_s - p_t| after the step
    std::size_t selected = 0;
    bool guidance_applied = false;
    bool aborted = false; ///< guidance failed; scene and session rolled back
    std::string abort_reason;
    bool densified = false;
    bool converged = false;
};

/// State of one drag: moving source p_s, target p_t, selection radius r and
/// the frozen reference geometry for the rigid constraint.
class DragSession {
public:
    DragSession(const GaussianScene& scene, const Vec3& source, const Vec3& target, double radius, DragOptions opts);

    [[nodiscard]] const Vec3& source() const { return p_s_; }
    [[nodiscard]] const Vec3& target() const { return p_t_; }
    [[nodiscard]] double radius() const { return r_; }
    [[nodiscard]] double alpha() const { return alpha_; }
    [[nodiscard]] double epsilon() const { return eps_; }
    [[nodiscard]] DragMode mode() const { return opts_.mode; }
    [[nodiscard]] const DragOptions& options() const { return opts_; }
    [[nodiscard]] const PartSelection& selection() const { return sel_; }
    [[nodiscard]] std::size_t steps() const { return steps_; }
    [[nodiscard]] double distance() const { return (p_t_ - p_s_).norm(); }
    [[nodiscard]] bool converged() const { return distance() <= eps_; }
    [[nodiscard]] const SplatOptimizer& optimizer() const { return opt_; }
    [[nodiscard]] GuidanceContext& guidance_context() { return ctx_; }

    /// Frozen |p_s* - p_i*| for each selected blob (rigid mode), aligned with selection().indices.
    [[nodiscard]] const std::vector<double>& frozen_distances() const { return frozen_; }

    /// Switches mode mid-session. Entering rigid mode freezes the current
    /// selection and distances as the new reference.
    void set_mode(DragMode m, const GaussianScene& scene);
    void set_target(const Vec3& target) { p_t_ = target; }
    void set_weights(const DragWeights& w) { opts_.weights = w; }

    /// L_rigid at the given scene state (0 in deformable mode).
    [[nodiscard]] double rigid_loss(const GaussianScene& scene) const;
    /// L_motion = sum over selected |mu_i - p_t|_1.
    [[nodiscard]] double motion_loss(const GaussianScene& scene) const;

private:
    friend StepReport drag_step(DragSession&, GaussianScene&, GuidanceProvider*);
    friend void finish_drag(DragSession&, GaussianScene&);
    void freeze(const GaussianScene& scene);

    DragOptions opts_;
    Vec3 p_s_, p_t_;
    double r_ = 0.0, alpha_ = 0.0, eps_ = 0.0, d0_ = 0.0;
    PartSelection sel_;
    std::vector<double> frozen_;
    std::size_t steps_ = 0;
    SplatOptimizer opt_;
    DensifyStats stats_;
    std::mt19937_64 rng_;
    GuidanceContext ctx_;
};

/// One drag iteration: fixed-length offset of the selected blobs (and of p_s), K
/// zoomed guidance views, motion and rigid terms, one optimizer step on the
/// selected blobs, periodic densification (deformable mode). With a null
/// provider the guidance term is absent. A failed guidance call rolls the
/// scene and the session back and reports aborted = true.
/// Throws InvalidArgument when already converged or out of steps, and
/// StaleSelection when the scene changed outside the session.
StepReport drag_step(DragSession& session, GaussianScene& scene, GuidanceProvider* provider);

/// Steps until convergence, max_steps or an aborted step, then finish_drag.
std::vector<StepReport> run_drag(DragSession& session, GaussianScene& scene, GuidanceProvider* provider);

/// Closing densify/prune pass ("fill the gaps") using the statistics gathered
/// since the last one. In rigid mode this is the only pass, so the selection
/// stays fixed while dragging.
void finish_drag(DragSession& session, GaussianScene& scene);

} // namespace bf
