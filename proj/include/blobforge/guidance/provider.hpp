#pragma once

#include "blobforge/core/image.hpp"
#include "blobforge/splat/camera.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace bf {

struct GuidanceRequest {
    std::string session;
    std::uint64_t nonce = 0;
    std::string prompt;
    double t = 1.0; ///< denoising step, (0, 1]
    Camera camera;
    Image rgb;      ///< H x W x 3 render

    /// Throws InvalidArgument: t outside (0,1], image not 3-channel or not
    /// matching the camera resolution.
    void validate() const;
};

struct GuidanceResponse {
    std::uint64_t nonce = 0;
    std::string provider;
    double loss = 0.0;
    Image gradient; ///< dL/d(rgb), H x W x 3

    /// Throws GuidanceError when the gradient shape differs from the request
    /// or holds a non-finite value.
    void validate(const GuidanceRequest& req) const;
};

class GuidanceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GuidanceTimeout : public GuidanceError {
public:
    using GuidanceError::GuidanceError;
};

/// Anything that turns a rendered view into an image-space gradient.
class GuidanceProvider {
public:
    virtual ~GuidanceProvider() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    virtual GuidanceResponse evaluate(const GuidanceRequest& req) = 0;
};

/// L = sum (render - target)^2, G = 2 (render - target). The target is
/// produced per request camera, typically by rendering a reference scene.
class PhotometricProvider final : public GuidanceProvider {
public:
    using TargetFn = std::function<Image(const Camera&)>;
    explicit PhotometricProvider(TargetFn target) : target_(std::move(target)) {}
    [[nodiscard]] std::string id() const override { return "photometric"; }
    GuidanceResponse evaluate(const GuidanceRequest& req) override;

private:
    TargetFn target_;
};

/// Returns the same per-channel gradient everywhere; for contract tests.
class ConstantProvider final : public GuidanceProvider {
public:
    explicit ConstantProvider(const Vec3& g, double loss = 0.0) : g_(g), loss_(loss) {}
    [[nodiscard]] std::string id() const override { return "constant"; }
    GuidanceResponse evaluate(const GuidanceRequest& req) override;

private:
    Vec3 g_;
    double loss_;
};

/// Forwards to another provider and keeps every successful response.
class RecordingProvider final : public GuidanceProvider {
public:
    explicit RecordingProvider(std::shared_ptr<GuidanceProvider> inner) : inner_(std::move(inner)) {}
    [[nodiscard]] std::string id() const override { return inner_->id(); }
    GuidanceResponse evaluate(const GuidanceRequest& req) override;
    /// Removes and returns the responses recorded so far.
    std::vector<GuidanceResponse> take();

private:
    std::shared_ptr<GuidanceProvider> inner_;
    std::mutex mu_;
    std::vector<GuidanceResponse> log_;
};

/// Serves previously recorded responses in order. A request whose nonce does
/// not match the next record (or an exhausted log) raises GuidanceError.
class ReplayProvider final : public GuidanceProvider {
public:
    explicit ReplayProvider(std::vector<GuidanceResponse> log) : log_(log.begin(), log.end()) {}
    [[nodiscard]] std::string id() const override { return "replay"; }
    GuidanceResponse evaluate(const GuidanceRequest& req) override;
    [[nodiscard]] std::size_t remaining() const { return log_.size(); }

private:
    std::deque<GuidanceResponse> log_;
};

} // namespace bf
