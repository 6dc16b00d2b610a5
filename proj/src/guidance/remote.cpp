#include "blobforge/guidance/wire.hpp"
#include "blobforge/core/error.hpp"

#include "httplib.h"

#include <fmt/core.h>

#include <thread>

namespace bf {

RemoteProvider::RemoteProvider(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
    const auto scheme = endpoint_.find("://");
    if (scheme == std::string::npos) throw InvalidArgument("guidance endpoint needs a scheme: " + endpoint_);
    const auto slash = endpoint_.find('/', scheme + 3);
    origin_ = endpoint_.substr(0, slash);
    path_ = slash == std::string::npos ? "/guidance" : endpoint_.substr(slash);
}

GuidanceResponse RemoteProvider::evaluate(const GuidanceRequest& req) {
    httplib::Client cli(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    const auto res = cli.Post(path_, encode_request(req), "application/octet-stream");
    if (!res) {
        const auto err = res.error();
        const std::string what = httplib::to_string(err);
        if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
            throw GuidanceTimeout(fmt::format("guidance provider {} timed out ({})", endpoint_, what));
        throw GuidanceError(fmt::format("guidance provider {} unreachable ({})", endpoint_, what));
    }
    if (res->status != 200 && res->body.empty())
        throw GuidanceError(fmt::format("guidance provider returned HTTP {}", res->status));
    GuidanceResponse r = decode_response(res->body);
    if (r.nonce != req.nonce) throw GuidanceError("guidance response nonce mismatch");
    return r;
}

struct ProviderServer::Impl {
    std::shared_ptr<GuidanceProvider> provider;
    httplib::Server server;
    std::thread thread;
    std::mutex mu; // one outstanding evaluation at a time
    std::string host;
    int port = 0;
};

ProviderServer::ProviderServer(std::shared_ptr<GuidanceProvider> provider) : impl_(std::make_unique<Impl>()) {
    impl_->provider = std::move(provider);
    impl_->server.Post("/guidance", [this](const httplib::Request& rq, httplib::Response& rs) {
        try {
            const GuidanceRequest req = decode_request(rq.body);
            req.validate();
            std::lock_guard lock(impl_->mu);
            GuidanceResponse resp = impl_->provider->evaluate(req);
            resp.nonce = req.nonce;
            rs.set_content(encode_response(resp), "application/octet-stream");
        } catch (const std::exception& e) {
            rs.status = 400;
            rs.set_content(encode_error(e.what()), "application/octet-stream");
        }
    });
}

ProviderServer::~ProviderServer() { stop(); }

int ProviderServer::start(const std::string& host, int port) {
    impl_->host = host;
    impl_->port = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (impl_->port < 0) throw IoError(fmt::format("cannot bind guidance server to {}:{}", host, port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->port;
}

void ProviderServer::run(const std::string& host, int port) {
    impl_->host = host;
    impl_->port = port;
    if (!impl_->server.listen(host, port)) throw IoError(fmt::format("cannot serve guidance on {}:{}", host, port));
}

void ProviderServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::string ProviderServer::endpoint() const { return fmt::format("http://{}:{}/guidance", impl_->host, impl_->port); }

} // namespace bf
