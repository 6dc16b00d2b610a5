#pragma once

#include "blobforge/core/adamw.hpp"
#include "blobforge/field/volume.hpp"
#include "blobforge/guidance/guidance.hpp"
#include "blobforge/refine/overlay.hpp"

namespace bf {

struct RefineOptions {
    int steps = 4000;
    std::string prompt;
    TSchedule t_schedule;
    CameraDistribution cameras = [] {
        CameraDistribution d;
        d.width = d.height = 64;
        return d;
    }();
    int views_per_step = 1;
    AdamWOptions adam{1e-2, 0.9, 0.999, 1e-15, 0.01};
    VolumeOptions volume;
    std::uint64_t seed = 0;

    void validate() const;
};

struct RefineRecord {
    int step = 0;
    double t = 0.0;
    double loss = 0.0;
    int views_applied = 0;
    std::string skip_reason;  ///< last skip of this step, if any
    bool rolled_back = false; ///< non-finite update discarded
};

/// True when no voxel is occupied in both parts (concurrent refinement is
/// only allowed then).
bool parts_disjoint(const OccupancyGrid& a, const OccupancyGrid& b);

/// Optimizes one overlay against guidance on zoomed views of its region.
class RegionRefiner {
public:
    /// `occupancy` is the base field's occupancy, used for rendering.
    RegionRefiner(RefinedField& field, const std::string& overlay_id, const Region& region,
                  const OccupancyGrid& occupancy, GuidanceProvider& provider, GuidanceContext& ctx,
                  RefineOptions opts);

    RefineRecord step();
    [[nodiscard]] int steps_done() const { return step_; }
    [[nodiscard]] const RefineOptions& options() const { return opts_; }

private:
    RefinedField& field_;
    int active_ = -1;
    Region region_;
    const OccupancyGrid& occ_;
    GuidanceProvider& provider_;
    GuidanceContext& ctx_;
    RefineOptions opts_;
    std::mt19937_64 rng_;
    AdamW opt_table_, opt_sigma_, opt_rgb_;
    OverlayGradients grads_;
    std::vector<OverlayGradients> chunk_grads_;
    Aabb part_box_;
    int step_ = 0;
};

std::vector<RefineRecord> refine_region(RefinedField& field, const std::string& overlay_id, const Region& region,
                                        const OccupancyGrid& occupancy, GuidanceProvider& provider,
                                        GuidanceContext& ctx, const RefineOptions& opts);

} // namespace bf
