#include "blobforge/core/error.hpp"
#include "blobforge/session/protocol.hpp"
#include "blobforge/session/server.hpp"

#include "test_util.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <doctest.h>

#include <cstring>

using namespace bf;
using nlohmann::json;

namespace {

SessionConfig tiny_config() {
    SessionConfig c;
    c.field.grid.levels = 4;
    c.field.grid.max_resolution = 32;
    c.field.grid.log2_table = 12;
    c.field.hidden = 16;
    c.field.geo_features = 8;
    c.distill.steps = 20;
    c.distill.rays_per_camera = 16;
    c.distill.eval_interval = 0;
    c.distill.heldout_cameras = 2;
    c.distill.cameras.width = c.distill.cameras.height = 24;
    c.drag.cameras.width = c.drag.cameras.height = 24;
    c.drag.densify_interval = 0;
    c.frame_volume.step = 0.05;
    return c;
}

/// Minimal synchronous client. Pushed messages (metrics, job status) are kept
/// aside while waiting for a reply with a given id.
class Client {
public:
    explicit Client(int port) : ws_(io_) {
        namespace asio = boost::asio;
        asio::ip::tcp::resolver resolver(io_);
        asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
        ws_.handshake("127.0.0.1", "/");
    }

    void send(const json& m) { ws_.write(boost::asio::buffer(m.dump())); }
    void send_raw(const std::string& s) { ws_.write(boost::asio::buffer(s)); }

    json read() {
        boost::beast::flat_buffer buf;
        ws_.read(buf);
        return json::parse(boost::beast::buffers_to_string(buf.data()));
    }

    json reply(const json& id) {
        for (;;) {
            json m = read();
            if (m.contains("id") && m.at("id") == id) return m;
            pushed.push_back(std::move(m));
        }
    }

    json command(const json& cmd) {
        const int id = next_id_++;
        send({{"type", "command"}, {"id", id}, {"command", cmd}});
        return reply(id);
    }

    ~Client() {
        boost::system::error_code ec;
        ws_.close(boost::beast::websocket::close_code::normal, ec);
    }

    std::vector<json> pushed;

private:
    boost::asio::io_context io_;
    boost::beast::websocket::stream<boost::asio::ip::tcp::socket> ws_;
    int next_id_ = 1000;
};

} // namespace

TEST_CASE("client messages parse and validate") {
    auto m = parse_client_message(R"({"type":"hello","schema":1,"session":"a"})");
    CHECK(m.type == ClientMessage::Type::hello);
    CHECK(m.session == "a");
    m = parse_client_message(R"({"type":"command","id":3,"command":{"cmd":"status"}})");
    CHECK(m.type == ClientMessage::Type::command);
    CHECK(m.id == 3);
    CHECK(m.command.at("cmd") == "status");
    m = parse_client_message(R"({"type":"frame_request","id":"f","orbit":{"elevation":10,"azimuth":20,"radius":3}})");
    CHECK(m.type == ClientMessage::Type::frame_request);
    CHECK(m.view.contains("orbit"));

    CHECK_THROWS_AS(parse_client_message("{nope"), ProtocolError);
    CHECK_THROWS_AS(parse_client_message(R"({"type":"teleport"})"), ProtocolError);
    CHECK_THROWS_AS(parse_client_message(R"({"type":"hello","schema":2})"), ProtocolError);
    CHECK_THROWS_AS(parse_client_message(R"({"type":"command","id":1})"), ProtocolError);
    CHECK_THROWS_AS(parse_client_message(R"({"type":"frame_request","id":1})"), ProtocolError);
    CHECK_THROWS_AS(parse_client_message(R"([1,2])"), ProtocolError);
}

TEST_CASE("frame messages round trip") {
    std::mt19937_64 rng(1);
    Session s(tiny_config());
    REQUIRE(s.apply({{"cmd", "init"}, {"count", 50}, {"radius", 0.5}}).ok());
    const Frame f = s.render_frame(testing::test_camera(20));
    const json msg = make_frame(7, f, 2);
    CHECK(msg.at("type") == "frame");
    CHECK(msg.at("dropped") == 2);
    const DecodedFrame d = decode_frame(msg);
    CHECK(d.generation == f.generation);
    CHECK(d.stage == "stage1");
    CHECK(d.camera.width == 20);
    REQUIRE(d.depth.data.size() == f.depth.data.size());
    for (std::size_t i = 0; i < f.depth.data.size(); ++i) CHECK(d.depth.data[i] == static_cast<float>(f.depth.data[i]));
    // PNG quantises to 8 bits.
    REQUIRE(d.rgb.data.size() == f.rgb.data.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < f.rgb.data.size(); ++i) worst = std::max(worst, std::abs(d.rgb.data[i] - f.rgb.data[i]));
    CHECK(worst <= 0.5 / 255.0 + 1e-9);
}

TEST_CASE("results and errors carry codes") {
    CommandResult r;
    r.code = ErrorCode::stage_mismatch;
    r.message = "x";
    const json j = make_result("a", r);
    CHECK(j.at("type") == "result");
    CHECK(j.at("id") == "a");
    CHECK(j.at("ok") == false);
    CHECK(j.at("code") == "stage_mismatch");
    CHECK(make_error("bad_message", "m").at("type") == "error");
}

TEST_CASE("websocket end to end with isolated sessions") {
    SessionServer server(tiny_config());
    const int port = server.start("127.0.0.1", 0);
    REQUIRE(port > 0);

    Client a(port), b(port);
    a.send({{"type", "hello"}, {"schema", kProtocolSchema}, {"session", "alpha"}, {"id", 1}});
    const json ha = a.reply(1);
    CHECK(ha.at("type") == "hello");
    CHECK(ha.at("session") == "alpha");
    CHECK(ha.at("stage") == "stage1");
    b.send({{"type", "hello"}, {"session", "beta"}, {"id", 1}});
    CHECK(b.reply(1).at("session") == "beta");

    json r = a.command({{"cmd", "init"}, {"count", 60}, {"radius", 0.5}});
    CHECK(r.at("ok") == true);
    CHECK(r.at("data").at("blobs") == 60);
    r = a.command({{"cmd", "select_sphere"}, {"center", {0, 0, 0}}, {"radius", 0.3}});
    CHECK(r.at("ok") == true);
    r = a.command({{"cmd", "remove"}});
    CHECK(r.at("ok") == true);
    r = a.command({{"cmd", "make_region"}, {"id", "x"}, {"center", {0, 0, 0}}, {"radius", 0.2}});
    CHECK(r.at("ok") == false);
    CHECK(r.at("code") == "stage_mismatch");

    // beta is untouched by alpha's commands.
    r = b.command({{"cmd", "status"}});
    CHECK(r.at("data").at("blobs") == 0);
    CHECK(r.at("data").at("log_size") == 0);

    r = a.command({{"cmd", "get_log"}});
    REQUIRE(r.at("data").size() == 3);
    CHECK(r.at("data")[0].at("cmd") == "init");

    a.send({{"type", "frame_request"}, {"id", "f1"}, {"orbit", {{"elevation", 15}, {"azimuth", 30}, {"radius", 3},
                                                                {"width", 32}, {"height", 32}}}});
    const json fm = a.reply("f1");
    REQUIRE(fm.at("type") == "frame");
    const DecodedFrame d = decode_frame(fm);
    CHECK(d.rgb.width == 32);
    CHECK(d.generation == 3);

    a.send({{"type", "ping"}, {"id", "p"}});
    CHECK(a.reply("p").at("type") == "pong");
    a.send_raw("not json");
    json err;
    do {
        err = a.read();
    } while (err.at("type") != "error");
    CHECK(err.at("code") == "bad_message");

    // A distillation job streams metrics and a final job status.
    r = a.command({{"cmd", "transition_stage2"}});
    CHECK(r.at("ok") == true);
    json status;
    for (;;) {
        status = a.read();
        if (status.at("type") == "job_status" && status.at("state") != "running") break;
    }
    CHECK(status.at("state") == "finished");
    CHECK(a.command({{"cmd", "status"}}).at("data").at("stage") == "stage2");

    // The server keeps sessions by name across connections.
    CHECK(server.session("alpha")->with_session([](Session& s) { return s.stage(); }) == Stage::StageII);
    server.stop();
}

TEST_CASE("base64 round trip at every padding length") {
    for (std::size_t n = 0; n < 12; ++n) {
        std::string raw;
        for (std::size_t i = 0; i < n; ++i) raw.push_back(static_cast<char>(i * 37 + 200));
        CHECK(base64_decode(base64_encode(raw)) == raw);
    }
    CHECK_THROWS_AS(base64_decode("ab$d"), InvalidArgument);
    CHECK_THROWS_AS(base64_decode("YQ==YQ=="), InvalidArgument);
}
