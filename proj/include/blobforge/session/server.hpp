#pragma once

#include "blobforge/session/service.hpp"

#include <memory>

namespace bf {

/// WebSocket endpoint for the session protocol. Each "hello" names a session
/// (created on first use); sessions share nothing.
class SessionServer {
public:
    using ProviderFactory = std::function<std::shared_ptr<GuidanceProvider>()>;
    explicit SessionServer(SessionConfig cfg, ProviderFactory providers = {});
    ~SessionServer();
    SessionServer(const SessionServer&) = delete;
    SessionServer& operator=(const SessionServer&) = delete;

    /// Binds (port 0 picks a free port), serves in the background, returns the port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();
    /// Blocks until stop() is called from another thread.
    void wait();

    /// Session by name, created if needed.
    std::shared_ptr<SessionService> session(const std::string& name);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace bf
