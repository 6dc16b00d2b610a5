#include "blobforge/refine/refine.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/core/parallel.hpp"

#include <fmt/core.h>

#include <cmath>

namespace bf {

namespace {
constexpr std::size_t kRaysPerChunk = 32;

OverlayGradients make_grads(const RefinementOverlay& o, bool log) {
    OverlayGradients g;
    g.table = log ? RowGradients::log(o.grid.feature_dim()) : RowGradients(o.grid.total_rows(), o.grid.feature_dim());
    g.dsigma.assign(o.dsigma.param_count(), 0.0);
    g.drgb.assign(o.drgb.param_count(), 0.0);
    return g;
}

bool all_zero(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
} // namespace

void RefineOptions::validate() const {
    if (steps <= 0) throw InvalidArgument("refinement step count must be positive");
    if (views_per_step < 1) throw InvalidArgument("refinement needs at least one view per step");
    if (!(adam.lr > 0.0)) throw InvalidArgument("refinement learning rate must be positive");
    cameras.validate();
}

bool parts_disjoint(const OccupancyGrid& a, const OccupancyGrid& b) {
    if (a.bits.size() != b.bits.size()) throw InvalidArgument("part grids differ in resolution");
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        if (a.bits[i] && b.bits[i]) return false;
    return true;
}

RegionRefiner::RegionRefiner(RefinedField& field, const std::string& overlay_id, const Region& region,
                             const OccupancyGrid& occupancy, GuidanceProvider& provider, GuidanceContext& ctx,
                             RefineOptions opts)
    : field_(field), region_(region), occ_(occupancy), provider_(provider), ctx_(ctx), opts_(std::move(opts)),
      rng_(opts_.seed) {
    opts_.validate();
    region_.validate();
    for (int i = 0; i < static_cast<int>(field_.overlays().size()); ++i)
        if (field_.overlays()[i].id == overlay_id) active_ = i;
    if (active_ < 0) throw InvalidArgument("no overlay named '" + overlay_id + "'");
    const auto& o = field_.overlays()[active_];
    opt_table_ = AdamW(o.grid.params().size(), opts_.adam);
    opt_sigma_ = AdamW(o.dsigma.param_count(), opts_.adam);
    opt_rgb_ = AdamW(o.drgb.param_count(), opts_.adam);
    grads_ = make_grads(o, false);
    const Vec3 vs = o.part.voxel_size();
    for (int k = 0; k < o.part.resolution; ++k)
        for (int j = 0; j < o.part.resolution; ++j)
            for (int i = 0; i < o.part.resolution; ++i)
                if (o.part.at(i, j, k)) {
                    const Vec3 lo = o.part.bounds.lo + Vec3(i, j, k).cwiseProduct(vs);
                    part_box_.extend(lo);
                    part_box_.extend(Vec3(lo + vs));
                }
}

RefineRecord RegionRefiner::step() {
    RefineRecord rec;
    rec.step = ++step_;
    rec.t = schedule_t(static_cast<double>(step_ - 1) / std::max(1, opts_.steps - 1), opts_.t_schedule);
    auto& overlay = field_.overlays()[active_];
    const bool serial = thread_count() <= 1;
    grads_.clear();
    const OverlayModel model{field_, active_};

    for (int v = 0; v < opts_.views_per_step; ++v) {
        const Camera cam = zoom_in_camera(region_.center, region_.radius, opts_.cameras, rng_, ctx_.zoom_margin);
        const Image rgb = volrender(field_, cam, occ_, opts_.volume).rgb;
        const auto ex = exchange_guidance(provider_, ctx_, cam, rgb, opts_.prompt, rec.t);
        if (!ex.response) {
            rec.skip_reason = ex.skip_reason;
            continue;
        }
        ++rec.views_applied;
        rec.loss += ex.response->loss;
        const Image& g = ex.response->gradient;
        // Only rays through the part's voxels can reach the overlay.
        std::vector<std::pair<Ray, Vec3>> rays;
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 up(g.at(x, y, 0), g.at(x, y, 1), g.at(x, y, 2));
                if (up == Vec3::Zero()) continue;
                const Ray r = camera_ray(cam, x + 0.5, y + 0.5);
                if (intersect_box(part_box_, r.origin, r.dir)) rays.emplace_back(r, up / opts_.views_per_step);
            }
        const std::size_t chunks = chunk_count(rays.size(), kRaysPerChunk);
        if (!serial)
            while (chunk_grads_.size() < chunks) chunk_grads_.push_back(make_grads(overlay, true));
        parallel_chunks(rays.size(), kRaysPerChunk, [&](std::size_t c, std::size_t b, std::size_t e) {
            auto& cg = serial ? grads_ : chunk_grads_[c];
            if (!serial) cg.clear();
            for (std::size_t i = b; i < e; ++i) march_ray_backward(model, rays[i].first, occ_, opts_.volume, rays[i].second, cg);
        });
        if (!serial)
            for (std::size_t c = 0; c < chunks; ++c) grads_.merge(chunk_grads_[c]);
    }
    if (rec.views_applied == 0) return rec;
    rec.loss /= rec.views_applied;

    // Skip blocks with exactly zero gradient so a fixed point leaves every
    // parameter (weight decay included) untouched.
    const int d = overlay.grid.feature_dim();
    grads_.table.sort_touched();
    const auto touched = grads_.table.touched();
    bool finite = all_finite(grads_.dsigma) && all_finite(grads_.drgb);
    for (auto r : touched)
        for (int k = 0; k < d && finite; ++k) finite = std::isfinite(grads_.table.values()[std::size_t{r} * d + k]);

    std::vector<double> saved_rows;
    saved_rows.reserve(touched.size() * d);
    for (auto r : touched)
        for (int k = 0; k < d; ++k) saved_rows.push_back(overlay.grid.params()[std::size_t{r} * d + k]);
    const std::vector<double> saved_sigma(overlay.dsigma.params().begin(), overlay.dsigma.params().end());
    const std::vector<double> saved_rgb(overlay.drgb.params().begin(), overlay.drgb.params().end());

    if (finite) {
        if (!touched.empty()) opt_table_.step_rows(overlay.grid.params(), grads_.table.values(), touched, d);
        if (!all_zero(grads_.dsigma)) opt_sigma_.step(overlay.dsigma.params(), grads_.dsigma);
        if (!all_zero(grads_.drgb)) opt_rgb_.step(overlay.drgb.params(), grads_.drgb);
        std::vector<double> check(overlay.dsigma.params().begin(), overlay.dsigma.params().end());
        check.insert(check.end(), overlay.drgb.params().begin(), overlay.drgb.params().end());
        finite = all_finite(check);
        for (auto r : touched)
            for (int k = 0; k < d && finite; ++k) finite = std::isfinite(overlay.grid.params()[std::size_t{r} * d + k]);
    }
    if (!finite) {
        std::size_t i = 0;
        for (auto r : touched)
            for (int k = 0; k < d; ++k) overlay.grid.params()[std::size_t{r} * d + k] = saved_rows[i++];
        std::copy(saved_sigma.begin(), saved_sigma.end(), overlay.dsigma.params().begin());
        std::copy(saved_rgb.begin(), saved_rgb.end(), overlay.drgb.params().begin());
        // Moments may hold non-finite values too; restart them.
        opt_table_ = AdamW(overlay.grid.params().size(), opts_.adam);
        opt_sigma_ = AdamW(overlay.dsigma.param_count(), opts_.adam);
        opt_rgb_ = AdamW(overlay.drgb.param_count(), opts_.adam);
        rec.rolled_back = true;
    }
    return rec;
}

std::vector<RefineRecord> refine_region(RefinedField& field, const std::string& overlay_id, const Region& region,
                                        const OccupancyGrid& occupancy, GuidanceProvider& provider,
                                        GuidanceContext& ctx, const RefineOptions& opts) {
    RegionRefiner r(field, overlay_id, region, occupancy, provider, ctx, opts);
    std::vector<RefineRecord> out;
    while (r.steps_done() < opts.steps) out.push_back(r.step());
    return out;
}

} // namespace bf
