#include "blobforge/guidance/provider.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

#include <cmath>

namespace bf {

void GuidanceRequest::validate() const {
    if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument(fmt::format("guidance t = {} outside (0, 1]", t));
    if (rgb.channels != 3) throw InvalidArgument("guidance image must have 3 channels");
    if (rgb.width != camera.width || rgb.height != camera.height)
        throw InvalidArgument(fmt::format("guidance image {}x{} does not match camera {}x{}", rgb.width, rgb.height,
                                          camera.width, camera.height));
}

void GuidanceResponse::validate(const GuidanceRequest& req) const {
    if (!gradient.same_shape(req.rgb))
        throw GuidanceError(fmt::format("gradient {}x{}x{} does not match request {}x{}x3", gradient.width,
                                        gradient.height, gradient.channels, req.rgb.width, req.rgb.height));
    for (std::size_t i = 0; i < gradient.data.size(); ++i)
        if (!std::isfinite(gradient.data[i])) throw GuidanceError(fmt::format("non-finite gradient at element {}", i));
    if (!std::isfinite(loss)) throw GuidanceError("non-finite loss");
}

GuidanceResponse PhotometricProvider::evaluate(const GuidanceRequest& req) {
    const Image target = target_(req.camera);
    if (!target.same_shape(req.rgb)) throw GuidanceError("photometric target shape mismatch");
    GuidanceResponse out;
    out.nonce = req.nonce;
    out.provider = id();
    out.gradient = Image(req.rgb.width, req.rgb.height, 3);
    double loss = 0.0;
    for (std::size_t i = 0; i < target.data.size(); ++i) {
        const double d = req.rgb.data[i] - target.data[i];
        loss += d * d;
        out.gradient.data[i] = 2.0 * d;
    }
    out.loss = loss;
    return out;
}

GuidanceResponse ConstantProvider::evaluate(const GuidanceRequest& req) {
    GuidanceResponse out;
    out.nonce = req.nonce;
    out.provider = id();
    out.loss = loss_;
    out.gradient = Image(req.rgb.width, req.rgb.height, 3);
    for (std::size_t p = 0; p < out.gradient.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c) out.gradient.data[p * 3 + c] = g_[c];
    return out;
}

GuidanceResponse RecordingProvider::evaluate(const GuidanceRequest& req) {
    GuidanceResponse r = inner_->evaluate(req);
    std::lock_guard lock(mu_);
    log_.push_back(r);
    return r;
}

std::vector<GuidanceResponse> RecordingProvider::take() {
    std::lock_guard lock(mu_);
    return std::exchange(log_, {});
}

GuidanceResponse ReplayProvider::evaluate(const GuidanceRequest& req) {
    if (log_.empty()) throw GuidanceError("replay log exhausted");
    if (log_.front().nonce != req.nonce)
        throw GuidanceError(fmt::format("replay log out of sync: expected nonce {}, got {}", log_.front().nonce, req.nonce));
    GuidanceResponse r = std::move(log_.front());
    log_.pop_front();
    return r;
}

} // namespace bf
