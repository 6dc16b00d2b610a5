#include "blobforge/distill/distill.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/core/parallel.hpp"
#include "blobforge/field/checkpoint.hpp"
#include "blobforge/splat/render.hpp"

#include <fmt/core.h>

#include <cmath>
#include <fstream>

namespace bf {

namespace {
constexpr std::size_t kRaysPerChunk = 16;

double sgn(double x) { return (x > 0.0) - (x < 0.0); }
} // namespace

void DistillConfig::validate() const {
    if (cameras_per_step < 1) throw InvalidArgument("distillation needs at least one camera per step");
    if (steps <= 0) throw InvalidArgument("distillation step count must be positive");
    if (rays_per_camera < 0) throw InvalidArgument("rays per camera must be non-negative");
    if (!(lr > 0.0) || !(lr_final > 0.0)) throw InvalidArgument("learning rates must be positive");
    if (occupancy_interval < 0 || eval_interval < 0 || checkpoint_interval < 0)
        throw InvalidArgument("intervals must be non-negative");
    if (heldout_cameras < 1) throw InvalidArgument("need at least one held-out camera");
    if (cache_teacher && (!(cache_bin_degrees > 0.0) || !(cache_bin_radius > 0.0) || cache_capacity == 0))
        throw InvalidArgument("teacher cache bins and capacity must be positive");
    if (divergence_window < 1 || !(divergence_factor > 1.0)) throw InvalidArgument("bad divergence detector settings");
    if (checkpoint_interval > 0 && checkpoint_path.empty()) throw InvalidArgument("checkpoint interval needs a path");
    cameras.validate();
}

double distill_loss(const Image& student, const Image& teacher) {
    if (!student.same_shape(teacher)) throw InvalidArgument("distill_loss: image shapes differ");
    if (student.data.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < student.data.size(); ++i) acc += std::abs(student.data[i] - teacher.data[i]);
    return acc / static_cast<double>(student.data.size());
}

Aabb teacher_bounds(const GaussianScene& scene, double margin) {
    Aabb b;
    for (const auto& blob : scene.blobs()) {
        const Vec3 p = blob.position.cast<double>();
        const double r = 3.0 * blob.max_sigma();
        b.extend(p - Vec3::Constant(r));
        b.extend(p + Vec3::Constant(r));
    }
    if (b.empty()) throw InvalidArgument("cannot bound an empty scene");
    const Vec3 pad = margin * b.size().cwiseMax(1e-3);
    return {b.lo - pad, b.hi + pad};
}

Distiller::Distiller(const GaussianScene& teacher, HashField& field, DistillConfig cfg)
    : teacher_(teacher), field_(field), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    occ_ = extract_occupancy(field_, cfg_.occupancy_threshold);
    opt_table_ = AdamW(field_.grid().params().size(), cfg_.adam);
    opt_density_ = AdamW(field_.density_mlp().param_count(), cfg_.adam);
    opt_color_ = AdamW(field_.color_mlp().param_count(), cfg_.adam);
    grads_ = field_.make_gradients();

    std::mt19937_64 eval_rng(cfg_.seed ^ 0x5bd1e995ULL);
    for (int i = 0; i < cfg_.heldout_cameras; ++i) {
        heldout_.push_back(sample_camera(cfg_.cameras, eval_rng));
        heldout_targets_.push_back(render(teacher_, heldout_.back(), cfg_.volume.background).rgb);
    }
}

double Distiller::learning_rate() const {
    const double f = cfg_.steps > 1 ? static_cast<double>(std::min(step_, cfg_.steps - 1)) / (cfg_.steps - 1) : 0.0;
    return cfg_.lr * std::pow(cfg_.lr_final / cfg_.lr, f);
}

void Distiller::refresh_occupancy() { occ_ = extract_occupancy(field_, cfg_.occupancy_threshold); }

const Distiller::TeacherView& Distiller::teacher_view(const OrbitPose& pose) {
    auto fill = [&](TeacherView& v, const OrbitPose& p) {
        v.camera = camera_from_pose(cfg_.cameras, p);
        const Image img = render(teacher_, v.camera, cfg_.volume.background).rgb;
        v.rgb.assign(img.data.begin(), img.data.end());
    };
    if (!cfg_.cache_teacher) {
        ++misses_;
        fill(scratch_, pose);
        return scratch_;
    }
    const auto& d = cfg_.cameras;
    const long ke = std::lround(pose.elevation_deg / cfg_.cache_bin_degrees);
    const long ka = std::lround(pose.azimuth_deg / cfg_.cache_bin_degrees);
    const long kr = std::lround(pose.radius / cfg_.cache_bin_radius);
    const auto key = std::make_tuple(ke, ka, kr);
    if (auto it = cache_.find(key); it != cache_.end()) {
        ++hits_;
        return it->second;
    }
    ++misses_;
    OrbitPose snapped;
    snapped.elevation_deg = std::clamp(ke * cfg_.cache_bin_degrees, d.elevation_min, d.elevation_max);
    snapped.azimuth_deg = std::clamp(ka * cfg_.cache_bin_degrees, d.azimuth_min, d.azimuth_max);
    snapped.radius = std::clamp(kr * cfg_.cache_bin_radius, d.radius_min, d.radius_max);
    if (cache_.size() >= cfg_.cache_capacity) {
        cache_.erase(cache_order_.front());
        cache_order_.pop_front();
    }
    cache_order_.push_back(key);
    auto& v = cache_[key];
    fill(v, snapped);
    return v;
}

DistillRecord Distiller::step() {
    struct RayTarget {
        Ray ray;
        Vec3 rgb;
    };
    std::vector<RayTarget> rays;
    const int w = cfg_.cameras.width, h = cfg_.cameras.height;
    std::uniform_int_distribution<int> px(0, w * h - 1);
    for (int m = 0; m < cfg_.cameras_per_step; ++m) {
        const TeacherView& v = teacher_view(sample_pose(cfg_.cameras, rng_));
        auto add = [&](int idx) {
            const int x = idx % w, y = idx / w;
            const std::size_t o = static_cast<std::size_t>(idx) * 3;
            rays.push_back({camera_ray(v.camera, x + 0.5, y + 0.5), Vec3(v.rgb[o], v.rgb[o + 1], v.rgb[o + 2])});
        };
        if (cfg_.rays_per_camera == 0)
            for (int i = 0; i < w * h; ++i) add(i);
        else
            for (int i = 0; i < cfg_.rays_per_camera; ++i) add(px(rng_));
    }

    const std::size_t n = rays.size();
    // A single worker accumulates straight into the dense gradients; several
    // workers keep per-chunk partials reduced in chunk order.
    const bool serial = thread_count() <= 1;
    const std::size_t chunks = chunk_count(n, kRaysPerChunk);
    if (!serial)
        while (chunk_grads_.size() < chunks) chunk_grads_.push_back(field_.make_chunk_gradients());
    std::vector<double> chunk_loss(chunks, 0.0);
    const double norm = 1.0 / (3.0 * static_cast<double>(n));
    grads_.clear();
    parallel_chunks(n, kRaysPerChunk, [&](std::size_t c, std::size_t begin, std::size_t end) {
        auto& g = serial ? grads_ : chunk_grads_[c];
        if (!serial) g.clear();
        double loss = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const auto& rt = rays[i];
            march_ray_backward_fn(
                field_, rt.ray, occ_, cfg_.volume,
                [&](const RayResult& r) {
                    const Vec3 d = r.rgb - rt.rgb;
                    loss += d.cwiseAbs().sum();
                    return Vec3(sgn(d.x()) * norm, sgn(d.y()) * norm, sgn(d.z()) * norm);
                },
                g);
        }
        chunk_loss[c] = loss;
    });
    double loss = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
        if (!serial) grads_.merge(chunk_grads_[c]);
        loss += chunk_loss[c];
    }
    loss *= norm;

    const double lr = learning_rate();
    for (AdamW* o : {&opt_table_, &opt_density_, &opt_color_}) o->options().lr = lr;
    grads_.table.sort_touched();
    opt_table_.step_rows(field_.grid().params(), grads_.table.values(), grads_.table.touched(),
                         field_.grid().feature_dim());
    opt_density_.step(field_.density_mlp().params(), grads_.density);
    opt_color_.step(field_.color_mlp().params(), grads_.color);
    ++step_;

    DistillRecord rec{step_, loss};
    if (!std::isfinite(loss))
        throw DistillDiverged(fmt::format("distillation loss became non-finite at step {}", step_), step_, loss,
                              initial_loss_);
    if (initial_loss_ < 0.0) initial_loss_ = loss;
    diverging_ = loss > cfg_.divergence_factor * initial_loss_ ? diverging_ + 1 : 0;
    if (diverging_ >= cfg_.divergence_window)
        throw DistillDiverged(fmt::format("distillation diverged: loss {:.6g} above {}x the initial {:.6g} for {} "
                                          "consecutive steps (step {}, lr {:.3g})",
                                          loss, cfg_.divergence_factor, initial_loss_, diverging_, step_, lr),
                              step_, loss, initial_loss_);

    if (cfg_.occupancy_interval > 0 && step_ % cfg_.occupancy_interval == 0) refresh_occupancy();
    if (cfg_.eval_interval > 0 && step_ % cfg_.eval_interval == 0) rec.psnr = evaluate();
    if (cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0)
        save_field(cfg_.checkpoint_path, field_, &occ_);
    trace_.push_back(rec);
    return rec;
}

double Distiller::evaluate() const {
    double err = 0.0;
    for (std::size_t i = 0; i < heldout_.size(); ++i)
        err += mse(volrender(field_, heldout_[i], occ_, cfg_.volume).rgb, heldout_targets_[i]);
    err /= static_cast<double>(heldout_.size());
    return err > 0.0 ? -10.0 * std::log10(err) : std::numeric_limits<double>::infinity();
}

DistillResult distill(const GaussianScene& teacher, HashField& field, const DistillConfig& cfg,
                      const std::function<bool(const DistillRecord&)>& progress) {
    Distiller d(teacher, field, cfg);
    DistillResult res;
    while (d.steps_done() < cfg.steps) {
        const auto rec = d.step();
        if (progress && !progress(rec)) {
            res.cancelled = true;
            break;
        }
    }
    d.refresh_occupancy();
    res.final_psnr = d.evaluate();
    res.trace = d.trace();
    res.occupancy = d.occupancy();
    return res;
}

void write_metrics_csv(const std::vector<DistillRecord>& trace, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << "step,loss,psnr\n";
    for (const auto& r : trace) {
        f << r.step << ',' << fmt::format("{:.9g}", r.loss) << ',';
        if (!std::isnan(r.psnr)) f << fmt::format("{:.6f}", r.psnr);
        f << '\n';
    }
}

} // namespace bf
