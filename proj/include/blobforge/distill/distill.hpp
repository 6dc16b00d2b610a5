#pragma once

#include "blobforge/core/adamw.hpp"
#include "blobforge/field/volume.hpp"
#include "blobforge/guidance/camera_sampling.hpp"
#include "blobforge/splat/scene.hpp"

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <tuple>

namespace bf {

struct DistillConfig {
    int cameras_per_step = 4; ///< M
    int steps = 6000;
    CameraDistribution cameras = [] {
        CameraDistribution d;
        d.width = d.height = 64;
        return d;
    }();
    /// Pixels drawn per camera per step; 0 renders every pixel.
    int rays_per_camera = 64;
    double lr = 1e-2;       ///< initial learning rate
    double lr_final = 1e-3; ///< reached at the last step (exponential decay)
    AdamWOptions adam{1e-2, 0.9, 0.999, 1e-15, 0.01};
    int occupancy_interval = 250;
    double occupancy_threshold = kDefaultOccupancyThreshold;
    int eval_interval = 500; ///< held-out PSNR cadence; 0 disables
    int heldout_cameras = 16;
    std::uint64_t seed = 0;
    /// Teacher renders are keyed by pose snapped to these bins.
    bool cache_teacher = true;
    double cache_bin_degrees = 1.0;
    double cache_bin_radius = 0.01;
    std::size_t cache_capacity = 2048;
    VolumeOptions volume;
    int divergence_window = 500;
    double divergence_factor = 10.0;
    int checkpoint_interval = 0; ///< 0 disables
    std::filesystem::path checkpoint_path;

    void validate() const;
};

struct DistillRecord {
    int step = 0;
    double loss = 0.0;
    double psnr = std::numeric_limits<double>::quiet_NaN(); ///< NaN when not evaluated
};

class DistillDiverged : public std::runtime_error {
public:
    DistillDiverged(const std::string& what, int step, double loss, double initial)
        : std::runtime_error(what), step(step), loss(loss), initial_loss(initial) {}
    int step;
    double loss;
    double initial_loss;
};

/// Mean absolute difference over pixels and channels.
double distill_loss(const Image& student, const Image& teacher);

/// Box around every blob's 3-sigma ellipsoid, padded by `margin` of its size.
Aabb teacher_bounds(const GaussianScene& scene, double margin = 0.05);

/// Fits a hash field to renders of a frozen splat scene.
class Distiller {
public:
    /// The scene is read only; the field is updated in place.
    Distiller(const GaussianScene& teacher, HashField& field, DistillConfig cfg);

    /// One optimizer step, plus evaluation / occupancy refresh / checkpoint
    /// when due. Throws DistillDiverged.
    DistillRecord step();
    /// Held-out PSNR over the fixed evaluation cameras.
    [[nodiscard]] double evaluate() const;

    [[nodiscard]] int steps_done() const { return step_; }
    [[nodiscard]] const std::vector<DistillRecord>& trace() const { return trace_; }
    [[nodiscard]] const OccupancyGrid& occupancy() const { return occ_; }
    void refresh_occupancy();
    [[nodiscard]] const std::vector<Camera>& heldout() const { return heldout_; }
    [[nodiscard]] double learning_rate() const;
    [[nodiscard]] std::size_t cache_hits() const { return hits_; }
    [[nodiscard]] std::size_t cache_misses() const { return misses_; }
    [[nodiscard]] const DistillConfig& config() const { return cfg_; }

private:
    struct TeacherView {
        Camera camera;
        std::vector<float> rgb; // H x W x 3
    };
    const TeacherView& teacher_view(const OrbitPose& pose);

    const GaussianScene& teacher_;
    HashField& field_;
    DistillConfig cfg_;
    OccupancyGrid occ_;
    std::mt19937_64 rng_;
    AdamW opt_table_, opt_density_, opt_color_;
    HashFieldGradients grads_;
    std::vector<HashFieldGradients> chunk_grads_;
    std::vector<Camera> heldout_;
    std::vector<Image> heldout_targets_;
    std::map<std::tuple<long, long, long>, TeacherView> cache_;
    std::deque<std::tuple<long, long, long>> cache_order_;
    TeacherView scratch_;
    std::size_t hits_ = 0, misses_ = 0;
    int step_ = 0;
    double initial_loss_ = -1.0;
    int diverging_ = 0;
    std::vector<DistillRecord> trace_;
};

struct DistillResult {
    std::vector<DistillRecord> trace;
    OccupancyGrid occupancy;
    double final_psnr = 0.0;
    bool cancelled = false;
};

/// Runs cfg.steps steps (the callback may return false to stop early) and a
/// final evaluation.
DistillResult distill(const GaussianScene& teacher, HashField& field, const DistillConfig& cfg,
                      const std::function<bool(const DistillRecord&)>& progress = {});

/// CSV with header "step,loss,psnr"; psnr empty on steps without evaluation.
void write_metrics_csv(const std::vector<DistillRecord>& trace, const std::filesystem::path& path);

} // namespace bf
