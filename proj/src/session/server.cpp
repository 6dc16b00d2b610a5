#include "blobforge/session/server.hpp"

#include "blobforge/core/error.hpp"
#include "blobforge/session/protocol.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/core.h>

#include <atomic>
#include <condition_variable>
#include <list>
#include <optional>

namespace bf {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

class Connection {
public:
    Connection(tcp::socket socket, SessionServer& server) : ws_(std::move(socket)), server_(server) {}

    ~Connection() { close(); }

    void start() {
        reader_ = std::thread([this] { read_loop(); });
        framer_ = std::thread([this] { frame_loop(); });
    }

    void close() {
        {
            std::lock_guard lock(frame_mu_);
            closing_ = true;
        }
        frame_cv_.notify_all();
        boost::system::error_code ec;
        beast::get_lowest_layer(ws_).shutdown(tcp::socket::shutdown_both, ec);
        if (reader_.joinable() && reader_.get_id() != std::this_thread::get_id()) reader_.join();
        if (framer_.joinable()) framer_.join();
        if (service_ && listener_) service_->remove_listener(listener_);
    }

    [[nodiscard]] bool done() const { return done_.load(); }

private:
    void send(const json& msg) {
        std::lock_guard lock(write_mu_);
        boost::system::error_code ec;
        ws_.text(true);
        ws_.write(asio::buffer(msg.dump()), ec);
    }

    void attach(const std::string& name) {
        if (service_ && listener_) service_->remove_listener(listener_);
        service_ = server_.session(name.empty() ? "default" : name);
        listener_ = service_->add_listener([this](const json& m) { send(m); });
    }

    void read_loop() {
        boost::system::error_code ec;
        ws_.accept(ec);
        if (ec) {
            done_ = true;
            return;
        }
        for (;;) {
            beast::flat_buffer buf;
            ws_.read(buf, ec);
            if (ec) break;
            const std::string text = beast::buffers_to_string(buf.data());
            ClientMessage m;
            try {
                m = parse_client_message(text);
            } catch (const ProtocolError& e) {
                send(make_error("bad_message", e.what()));
                continue;
            }
            try {
                handle(m);
            } catch (const std::exception& e) {
                send(make_error("internal", e.what(), m.id));
            }
        }
        done_ = true;
        frame_cv_.notify_all();
    }

    void handle(const ClientMessage& m) {
        if (m.type == ClientMessage::Type::hello) {
            attach(m.session);
            const auto src = service_->frame_source();
            json hello = make_hello(service_->id(), src->stage, src->generation);
            hello["id"] = m.id;
            send(hello);
            return;
        }
        if (!service_) attach("default");
        switch (m.type) {
        case ClientMessage::Type::command: send(make_result(m.id, service_->submit(m.command))); break;
        case ClientMessage::Type::frame_request: {
            std::lock_guard lock(frame_mu_);
            if (pending_) ++dropped_; // latest request wins
            pending_ = m;
            frame_cv_.notify_all();
            break;
        }
        case ClientMessage::Type::ping: send({{"type", "pong"}, {"id", m.id}}); break;
        default: break;
        }
    }

    void frame_loop() {
        for (;;) {
            ClientMessage m;
            std::uint64_t dropped = 0;
            {
                std::unique_lock lock(frame_mu_);
                frame_cv_.wait(lock, [&] { return closing_ || done_ || pending_; });
                if (closing_ || done_) return;
                m = std::move(*pending_);
                pending_.reset();
                dropped = dropped_;
            }
            try {
                const auto src = service_->frame_source();
                const Camera cam = camera_from_view(m.view, service_->with_session([](Session& s) {
                    return s.config().edit_cameras;
                }));
                send(make_frame(m.id, src->render(cam), dropped));
            } catch (const std::exception& e) {
                send(make_error("frame_failed", e.what(), m.id));
            }
        }
    }

    websocket::stream<tcp::socket> ws_;
    SessionServer& server_;
    std::shared_ptr<SessionService> service_;
    int listener_ = 0;
    std::mutex write_mu_;
    std::thread reader_, framer_;
    std::mutex frame_mu_;
    std::condition_variable frame_cv_;
    std::optional<ClientMessage> pending_;
    std::uint64_t dropped_ = 0;
    bool closing_ = false;
    std::atomic<bool> done_{false};
};

} // namespace

struct SessionServer::Impl {
    SessionConfig cfg;
    ProviderFactory providers;
    asio::io_context io;
    std::optional<tcp::acceptor> acceptor;
    std::thread accept_thread;
    std::atomic<bool> stopping{false};
    std::mutex mu;
    std::condition_variable stopped_cv;
    bool stopped = true;
    std::map<std::string, std::shared_ptr<SessionService>> sessions;
    std::list<std::unique_ptr<Connection>> connections;
};

SessionServer::SessionServer(SessionConfig cfg, ProviderFactory providers) : impl_(std::make_unique<Impl>()) {
    cfg.validate();
    impl_->cfg = std::move(cfg);
    impl_->providers = std::move(providers);
}

SessionServer::~SessionServer() { stop(); }

std::shared_ptr<SessionService> SessionServer::session(const std::string& name) {
    std::lock_guard lock(impl_->mu);
    auto& s = impl_->sessions[name];
    if (!s) {
        s = std::make_shared<SessionService>(impl_->cfg, name);
        if (impl_->providers)
            if (auto p = impl_->providers()) s->set_provider(std::move(p));
    }
    return s;
}

int SessionServer::start(const std::string& host, int port) {
    auto& im = *impl_;
    im.acceptor.emplace(im.io);
    const tcp::endpoint ep(asio::ip::make_address(host), static_cast<unsigned short>(port));
    im.acceptor->open(ep.protocol());
    im.acceptor->set_option(asio::socket_base::reuse_address(true));
    im.acceptor->bind(ep);
    im.acceptor->listen();
    im.acceptor->non_blocking(true);
    im.stopping = false;
    {
        std::lock_guard lock(im.mu);
        im.stopped = false;
    }
    im.accept_thread = std::thread([this] {
        auto& im = *impl_;
        while (!im.stopping) {
            boost::system::error_code ec;
            tcp::socket sock(im.io);
            im.acceptor->accept(sock, ec);
            if (ec == asio::error::would_block || ec == asio::error::try_again) {
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            } else if (!ec) {
                sock.non_blocking(false);
                auto conn = std::make_unique<Connection>(std::move(sock), *this);
                conn->start();
                std::lock_guard lock(im.mu);
                im.connections.push_back(std::move(conn));
            }
            std::lock_guard lock(im.mu);
            im.connections.remove_if([](const auto& c) { return c->done(); });
        }
    });
    return im.acceptor->local_endpoint().port();
}

void SessionServer::stop() {
    auto& im = *impl_;
    im.stopping = true;
    if (im.accept_thread.joinable()) im.accept_thread.join();
    std::list<std::unique_ptr<Connection>> conns;
    {
        std::lock_guard lock(im.mu);
        conns.swap(im.connections);
    }
    conns.clear();
    if (im.acceptor) {
        boost::system::error_code ec;
        im.acceptor->close(ec);
        im.acceptor.reset();
    }
    std::lock_guard lock(im.mu);
    im.stopped = true;
    im.stopped_cv.notify_all();
}

void SessionServer::wait() {
    std::unique_lock lock(impl_->mu);
    impl_->stopped_cv.wait(lock, [&] { return impl_->stopped; });
}

} // namespace bf
