#pragma once

#include "blobforge/guidance/provider.hpp"

#include <chrono>
#include <memory>
#include <string>
#include <string_view>

namespace bf {

/// Provider protocol framing: u32 little-endian header length, JSON header,
/// then width*height*3 little-endian float32 values (interleaved rgb).
/// Request header: {version, session, nonce, prompt, t, width, height, camera}.
/// Response header: {version, nonce, provider, loss, width, height} or {version, error}.
inline constexpr int kGuidanceWireVersion = 1;

std::string encode_request(const GuidanceRequest& req);
GuidanceRequest decode_request(std::string_view bytes);
std::string encode_response(const GuidanceResponse& resp);
std::string encode_error(const std::string& message);
/// Throws GuidanceError for error frames and malformed input.
GuidanceResponse decode_response(std::string_view bytes);

inline constexpr std::chrono::seconds kGuidanceTimeout{30};

/// HTTP POST client for the provider protocol, e.g. "http://127.0.0.1:8765/guidance".
class RemoteProvider final : public GuidanceProvider {
public:
    explicit RemoteProvider(std::string endpoint, std::chrono::milliseconds timeout = kGuidanceTimeout);
    [[nodiscard]] std::string id() const override { return "remote:" + endpoint_; }
    GuidanceResponse evaluate(const GuidanceRequest& req) override;

private:
    std::string endpoint_;
    std::string origin_;
    std::string path_;
    std::chrono::milliseconds timeout_;
};

/// Serves a provider over HTTP on POST /guidance (background thread).
class ProviderServer {
public:
    explicit ProviderServer(std::shared_ptr<GuidanceProvider> provider);
    ~ProviderServer();
    ProviderServer(const ProviderServer&) = delete;
    ProviderServer& operator=(const ProviderServer&) = delete;

    /// Binds (port 0 picks a free port) and starts serving; returns the port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    /// Blocks serving on the calling thread.
    void run(const std::string& host, int port);
    void stop();
    [[nodiscard]] std::string endpoint() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace bf
