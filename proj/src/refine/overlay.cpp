#include "blobforge/refine/overlay.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/splat/camera_json.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

namespace bf {

using nlohmann::json;

void Region::validate() const {
    if (!center.allFinite() || !std::isfinite(radius)) throw InvalidArgument("region must be finite");
    if (!(radius > 0.0)) throw InvalidArgument(fmt::format("region radius must be positive, got {}", radius));
}

OccupancyGrid intersect_region(const OccupancyGrid& occ, const Region& region) {
    region.validate();
    OccupancyGrid out = occ;
    for (int k = 0; k < occ.resolution; ++k)
        for (int j = 0; j < occ.resolution; ++j)
            for (int i = 0; i < occ.resolution; ++i)
                if (occ.at(i, j, k) && !region.contains(occ.voxel_center(i, j, k))) out.set(i, j, k, false);
    return out;
}

std::vector<int> OverlayConfig::level_resolutions(int base_max_resolution) const {
    if (!resolutions.empty()) return resolutions;
    std::vector<int> r(levels);
    for (int k = 0; k < levels; ++k)
        r[k] = static_cast<int>(std::floor(base_max_resolution * std::pow(growth, k + 1) + 1e-9));
    return r;
}

std::size_t OverlayConfig::memory_bytes(int base_max_resolution) const {
    std::size_t rows = 0;
    const std::size_t cap = std::size_t{1} << log2_table;
    for (int r : level_resolutions(base_max_resolution)) {
        const double corners = std::pow(static_cast<double>(r) + 1.0, 3.0);
        rows += corners <= static_cast<double>(cap) ? static_cast<std::size_t>(corners) : cap;
    }
    const std::size_t in = static_cast<std::size_t>(level_resolutions(base_max_resolution).size()) * feature_dim;
    const std::size_t mlp = (in * hidden + hidden) * 2 + (hidden + 1) + (hidden * 3 + 3);
    return (rows * feature_dim + mlp) * sizeof(double) * 3;
}

namespace {

HashGridConfig overlay_grid_config(const OverlayConfig& cfg, int base_max) {
    HashGridConfig g;
    g.resolutions = cfg.level_resolutions(base_max);
    g.levels = static_cast<int>(g.resolutions.size());
    g.log2_table = cfg.log2_table;
    g.feature_dim = cfg.feature_dim;
    g.init_range = cfg.init_range;
    return g;
}

} // namespace

RefinementOverlay build_overlay(const HashField& field, const OccupancyGrid& part, const OverlayConfig& cfg,
                                std::string id) {
    if (part.bits.empty() || part.empty()) throw EmptyPart("part occupancy is empty: the region holds no occupied voxel");
    if (id.empty()) throw InvalidArgument("overlay id must not be empty");
    const int base_max = field.grid().resolution(field.grid().levels() - 1);
    const auto res = cfg.level_resolutions(base_max);
    if (res.empty()) throw InvalidArgument("overlay needs at least one level");
    if (res.front() <= base_max)
        throw InvalidArgument(fmt::format("overlay level 0 resolution {} is not finer than the base field's {}",
                                          res.front(), base_max));
    if (cfg.hidden < 1) throw InvalidArgument("overlay hidden width must be positive");
    const std::size_t need = cfg.memory_bytes(base_max);
    if (need > cfg.memory_budget)
        throw InvalidArgument(fmt::format("overlay needs {:.1f} MiB ({} levels x 2^{} rows x {} features, with optimizer "
                                          "state) but the budget is {:.1f} MiB",
                                          need / 1048576.0, res.size(), cfg.log2_table, cfg.feature_dim,
                                          cfg.memory_budget / 1048576.0));

    RefinementOverlay o;
    o.id = std::move(id);
    o.config = cfg;
    o.part = part;
    o.bounds = field.bounds();
    std::mt19937_64 rng(cfg.seed);
    o.grid = HashGrid(overlay_grid_config(cfg, base_max), rng);
    const int in = o.grid.output_dim();
    o.dsigma = Mlp({in, cfg.hidden, 1}, rng, true);
    o.drgb = Mlp({in, cfg.hidden, 3}, rng, true);
    return o;
}

RefinementOverlay::Residual RefinementOverlay::forward(const Vec3& p, Tape& t) const {
    t.features.resize(grid.output_dim());
    grid.encode((p - bounds.lo).cwiseQuotient(bounds.size()), t.features, t.corners);
    double s;
    double c[3];
    dsigma.forward(t.features, {&s, 1}, t.sigma);
    drgb.forward(t.features, c, t.rgb);
    return {s, Vec3(c[0], c[1], c[2])};
}

RefinementOverlay::Residual RefinementOverlay::residual(const Vec3& p) const {
    thread_local Tape t;
    return forward(p, t);
}

std::size_t RefinementOverlay::parameter_count() const {
    return grid.params().size() + dsigma.param_count() + drgb.param_count();
}

void OverlayGradients::clear() {
    table.clear();
    std::fill(dsigma.begin(), dsigma.end(), 0.0);
    std::fill(drgb.begin(), drgb.end(), 0.0);
}

void OverlayGradients::merge(const OverlayGradients& o) {
    table.merge(o.table);
    for (std::size_t i = 0; i < dsigma.size(); ++i) dsigma[i] += o.dsigma[i];
    for (std::size_t i = 0; i < drgb.size(); ++i) drgb[i] += o.drgb[i];
}

RefinementOverlay* RefinedField::find(const std::string& id) {
    for (auto& o : overlays_)
        if (o.id == id) return &o;
    return nullptr;
}

FieldSample RefinedField::query(const Vec3& p, const Vec3& dir) const {
    const auto raw = base_->query_raw(p, dir);
    double s = raw.sigma_pre;
    Vec3 rgb(sigmoid(raw.rgb_pre[0]), sigmoid(raw.rgb_pre[1]), sigmoid(raw.rgb_pre[2]));
    for (const auto& o : overlays_) {
        if (!o.covers(p)) continue;
        const auto r = o.residual(p);
        s += r.sigma_pre;
        rgb += r.rgb;
    }
    return {softplus(s), rgb.cwiseMax(0.0).cwiseMin(1.0)};
}

double RefinedField::density(const Vec3& p) const {
    const bool any = std::any_of(overlays_.begin(), overlays_.end(), [&](const auto& o) { return o.covers(p); });
    return any ? query(p, Vec3::UnitZ()).sigma : base_->density(p);
}

FieldSample RefinedField::forward(const Vec3& p, const Vec3& dir, Tape& t, int active) const {
    base_->forward(p, dir, t.base);
    double s = t.base.raw.sigma_pre;
    Vec3 rgb = t.base.out.rgb;
    t.active_covers = false;
    for (int i = 0; i < static_cast<int>(overlays_.size()); ++i) {
        const auto& o = overlays_[i];
        if (!o.covers(p)) continue;
        RefinementOverlay::Residual r;
        if (i == active) {
            r = o.forward(p, t.overlay);
            t.active_covers = true;
        } else {
            r = o.residual(p);
        }
        s += r.sigma_pre;
        rgb += r.rgb;
    }
    t.sigma_pre = s;
    t.rgb_unclamped = rgb;
    t.out = {softplus(s), rgb.cwiseMax(0.0).cwiseMin(1.0)};
    return t.out;
}

void RefinedField::backward(const Tape& t, double dsigma, const Vec3& drgb, OverlayGradients& g, int active) const {
    if (!t.active_covers) return;
    const auto& o = overlays_[active];
    const double gs = dsigma * sigmoid(t.sigma_pre);
    double gc[3];
    for (int c = 0; c < 3; ++c) gc[c] = (t.rgb_unclamped[c] >= 0.0 && t.rgb_unclamped[c] <= 1.0) ? drgb[c] : 0.0;
    thread_local std::vector<double> gf1, gf2;
    gf1.assign(o.dsigma.inputs(), 0.0);
    gf2.assign(o.drgb.inputs(), 0.0);
    o.dsigma.backward(t.overlay.sigma, {&gs, 1}, g.dsigma, gf1);
    o.drgb.backward(t.overlay.rgb, gc, g.drgb, gf2);
    const int d = o.grid.feature_dim();
    for (int l = 0; l < o.grid.levels(); ++l) {
        const auto& c = t.overlay.corners[l];
        for (int j = 0; j < 8; ++j) {
            if (c.weight[j] == 0.0) continue;
            for (int k = 0; k < d; ++k) {
                const double v = c.weight[j] * (gf1[l * d + k] + gf2[l * d + k]);
                if (v != 0.0) g.table.add(c.row[j], k, v);
            }
        }
    }
}

void quantize_to_float32(RefinementOverlay& o) {
    for (auto& v : o.grid.params()) v = static_cast<float>(v);
    for (auto& v : o.dsigma.params()) v = static_cast<float>(v);
    for (auto& v : o.drgb.params()) v = static_cast<float>(v);
}

void append_overlay(Container& c, const RefinementOverlay& o) {
    const std::string pre = "overlay." + o.id + ".";
    if (!c.meta.contains("overlays")) c.meta["overlays"] = json::array();
    c.meta["overlays"].push_back(o.id);
    auto& t = c.add(pre + "tables");
    t.meta = {{"id", o.id},
              {"enabled", o.enabled},
              {"resolutions", o.grid.config().resolutions},
              {"log2_table", o.config.log2_table},
              {"feature_dim", o.config.feature_dim},
              {"growth", o.config.growth},
              {"hidden", o.config.hidden},
              {"init_range", o.config.init_range},
              {"memory_budget", o.config.memory_budget},
              {"seed", o.config.seed}};
    t.floats = to_float32(o.grid.params());
    c.add(pre + "dsigma").floats = to_float32(o.dsigma.params());
    c.add(pre + "drgb").floats = to_float32(o.drgb.params());
    auto& p = c.add(pre + "part");
    p.meta = {{"resolution", o.part.resolution}, {"threshold", o.part.threshold},
              {"bounds_lo", vec3_to_json(o.part.bounds.lo)}, {"bounds_hi", vec3_to_json(o.part.bounds.hi)}};
    p.bytes = o.part.bits;
}

std::vector<RefinementOverlay> overlays_from_container(const Container& c, const HashField& field) {
    std::vector<RefinementOverlay> out;
    if (!c.meta.contains("overlays")) return out;
    try {
        for (const auto& idj : c.meta["overlays"]) {
            const std::string id = idj.get<std::string>();
            const std::string pre = "overlay." + id + ".";
            const auto& t = c.at(pre + "tables");
            OverlayConfig cfg;
            cfg.resolutions = t.meta.at("resolutions").get<std::vector<int>>();
            cfg.levels = static_cast<int>(cfg.resolutions.size());
            cfg.log2_table = t.meta.at("log2_table").get<int>();
            cfg.feature_dim = t.meta.at("feature_dim").get<int>();
            cfg.growth = t.meta.at("growth").get<double>();
            cfg.hidden = t.meta.at("hidden").get<int>();
            cfg.init_range = t.meta.at("init_range").get<double>();
            cfg.memory_budget = t.meta.at("memory_budget").get<std::size_t>();
            cfg.seed = t.meta.at("seed").get<std::uint64_t>();
            const auto& ps = c.at(pre + "part");
            OccupancyGrid part;
            part.resolution = ps.meta.at("resolution").get<int>();
            part.threshold = ps.meta.at("threshold").get<double>();
            part.bounds.lo = vec3_from_json(ps.meta.at("bounds_lo"));
            part.bounds.hi = vec3_from_json(ps.meta.at("bounds_hi"));
            part.bits = ps.bytes;
            if (part.bits.size() != static_cast<std::size_t>(part.resolution) * part.resolution * part.resolution)
                throw IoError("overlay part bitmap size does not match its resolution");
            RefinementOverlay o = build_overlay(field, part, cfg, id);
            o.enabled = t.meta.at("enabled").get<bool>();
            from_float32(t.floats, o.grid.params());
            from_float32(c.at(pre + "dsigma").floats, o.dsigma.params());
            from_float32(c.at(pre + "drgb").floats, o.drgb.params());
            out.push_back(std::move(o));
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed overlay section: ") + e.what());
    }
    return out;
}

} // namespace bf
