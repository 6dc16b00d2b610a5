#include "blobforge/splat/optimizer.hpp"
#include "blobforge/core/error.hpp"

#include <algorithm>

namespace bf {

SplatOptimizer::SplatOptimizer(std::size_t blobs, const SplatOptimizerOptions& opts) : opts_(opts) { reset(blobs); }

namespace {
std::array<double, SplatOptimizer::kGroups> base_lrs(const SplatLearningRates& lr) {
    return {lr.position, lr.rotation, lr.scale, lr.opacity, lr.color};
}
} // namespace

void SplatOptimizer::set_lr_scale(double s) {
    if (!(s >= 0.0)) throw InvalidArgument("SplatOptimizer: negative learning-rate scale");
    lr_scale_ = s;
    const auto lrs = base_lrs(opts_.lr);
    for (int g = 0; g < kGroups; ++g) adam_[g].options().lr = lrs[g] * s;
}

void SplatOptimizer::reset(std::size_t blobs) {
    blobs_ = blobs;
    const auto lrs = base_lrs(opts_.lr);
    for (int g = 0; g < kGroups; ++g) {
        AdamWOptions o;
        o.lr = lrs[g] * lr_scale_;
        o.beta1 = opts_.beta1;
        o.beta2 = opts_.beta2;
        o.eps = opts_.eps;
        o.weight_decay = opts_.weight_decay;
        adam_[g] = AdamW(blobs * kWidth[g], o);
    }
}

void SplatOptimizer::step(GaussianScene& scene, const BlobGradients& grads, const GradientGate* gate) {
    if (scene.size() != blobs_ || grads.size() != blobs_) throw InvalidArgument("SplatOptimizer: blob count mismatch");
    if (gate && gate->mask.size() != blobs_) throw InvalidArgument("SplatOptimizer: gate size mismatch");
    const double max_scale = std::max(scene.extent().diagonal(), 1e-3);
    auto& blobs = scene.mutable_blobs();
    std::vector<double> params, g;
    std::vector<std::uint8_t> mask;
    for (int grp = 0; grp < kGroups; ++grp) {
        const std::size_t w = kWidth[grp], off = kOffset[grp];
        params.assign(blobs_ * w, 0.0);
        g.assign(blobs_ * w, 0.0);
        mask.assign(blobs_ * w, 1);
        for (std::size_t i = 0; i < blobs_; ++i) {
            std::array<double, kBlobParams> p{};
            pack_blob(blobs[i], p);
            const auto gi = grads.of(i);
            for (std::size_t k = 0; k < w; ++k) {
                params[i * w + k] = p[off + k];
                g[i * w + k] = gi[off + k];
                if (gate && !gate->allows(i)) mask[i * w + k] = 0;
            }
        }
        if (gate) {
            adam_[grp].step_masked(params, g, mask);
        } else {
            adam_[grp].step(params, g);
        }
        for (std::size_t i = 0; i < blobs_; ++i) {
            if (gate && !gate->allows(i)) continue;
            std::array<double, kBlobParams> p{};
            pack_blob(blobs[i], p);
            for (std::size_t k = 0; k < w; ++k) p[off + k] = params[i * w + k];
            unpack_blob(p, blobs[i]);
        }
    }
    if (!gate) {
        scene.sanitize(max_scale);
    } else {
        // Sanitize a copy of the touched blobs only so gated-out blobs stay bitwise fixed.
        GaussianScene touched;
        std::vector<GaussianBlob> sel;
        for (std::size_t i = 0; i < blobs_; ++i)
            if (gate->allows(i)) sel.push_back(blobs[i]);
        touched.mutable_blobs() = std::move(sel);
        touched.sanitize(max_scale);
        std::size_t k = 0;
        for (std::size_t i = 0; i < blobs_; ++i)
            if (gate->allows(i)) blobs[i] = touched[k++];
    }
    scene.refresh_extent();
}

void SplatOptimizer::remap(std::span<const std::int64_t> origin) {
    for (int g = 0; g < kGroups; ++g) adam_[g].remap(origin, kWidth[g]);
    blobs_ = origin.size();
}

bool SplatOptimizer::operator==(const SplatOptimizer& o) const {
    if (blobs_ != o.blobs_) return false;
    for (int g = 0; g < kGroups; ++g) {
        const auto& a = adam_[g];
        const auto& b = o.adam_[g];
        if (a.steps() != b.steps()) return false;
        if (!std::equal(a.first_moment().begin(), a.first_moment().end(), b.first_moment().begin())) return false;
        if (!std::equal(a.second_moment().begin(), a.second_moment().end(), b.second_moment().begin())) return false;
    }
    return true;
}

} // namespace bf
