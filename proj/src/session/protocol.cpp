#include "blobforge/session/protocol.hpp"

#include "blobforge/core/error.hpp"
#include "blobforge/splat/camera_json.hpp"

#include <fmt/core.h>

#include <cstring>

namespace bf {

using nlohmann::json;

namespace {

std::string png_b64(const Image& img) {
    const auto bytes = encode_png(img);
    return base64_encode({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

Image png_from_b64(const std::string& text) {
    const std::string raw = base64_decode(text);
    return decode_png({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
}

} // namespace

ClientMessage parse_client_message(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ProtocolError(fmt::format("malformed JSON: {}", e.what()));
    }
    if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
        throw ProtocolError("message must be an object with a string 'type'");
    ClientMessage m;
    m.id = j.value("id", json(nullptr));
    const std::string type = j.at("type").get<std::string>();
    if (type == "hello") {
        m.type = ClientMessage::Type::hello;
        const int schema = j.value("schema", kProtocolSchema);
        if (schema != kProtocolSchema)
            throw ProtocolError(fmt::format("schema {} not supported (server speaks {})", schema, kProtocolSchema));
        if (j.contains("session") && !j.at("session").is_string()) throw ProtocolError("'session' must be a string");
        m.session = j.value("session", std::string());
    } else if (type == "command") {
        m.type = ClientMessage::Type::command;
        if (!j.contains("command") || !j.at("command").is_object()) throw ProtocolError("command message needs 'command'");
        m.command = j.at("command");
        if (!m.command.contains("cmd") || !m.command.at("cmd").is_string())
            throw ProtocolError("'command' needs a string 'cmd'");
    } else if (type == "frame_request") {
        m.type = ClientMessage::Type::frame_request;
        if (!j.contains("camera") && !j.contains("orbit")) throw ProtocolError("frame_request needs 'camera' or 'orbit'");
        m.view = j;
    } else if (type == "ping") {
        m.type = ClientMessage::Type::ping;
    } else {
        throw ProtocolError(fmt::format("unknown message type '{}'", type));
    }
    return m;
}

json make_hello(const std::string& session, Stage stage, std::uint64_t generation) {
    return {{"type", "hello"}, {"schema", kProtocolSchema}, {"session", session}, {"stage", to_string(stage)},
            {"generation", generation}};
}

json make_result(const json& id, const CommandResult& r) {
    json out = r.to_json();
    out["type"] = "result";
    out["id"] = id;
    return out;
}

json make_frame(const json& id, const Frame& f, std::uint64_t dropped) {
    std::vector<float> depth(f.depth.data.begin(), f.depth.data.end());
    std::string raw(depth.size() * sizeof(float), '\0');
    std::memcpy(raw.data(), depth.data(), raw.size());
    return {{"type", "frame"},
            {"id", id},
            {"generation", f.generation},
            {"stage", to_string(f.stage)},
            {"width", f.rgb.width},
            {"height", f.rgb.height},
            {"camera", camera_to_json(f.camera)},
            {"rgb_png", png_b64(f.rgb)},
            {"alpha_png", png_b64(f.alpha)},
            {"depth_f32", base64_encode(raw)},
            {"dropped", dropped}};
}

json make_metrics(const json& payload) {
    json out = payload;
    out["type"] = "metrics";
    return out;
}

json make_job_status(const std::string& job, const std::string& state, const json& detail) {
    return {{"type", "job_status"}, {"job", job}, {"state", state}, {"detail", detail.is_null() ? json::object() : detail}};
}

json make_error(const std::string& code, const std::string& message, const json& id) {
    return {{"type", "error"}, {"id", id}, {"code", code}, {"message", message}};
}

DecodedFrame decode_frame(const json& msg) {
    if (msg.value("type", std::string()) != "frame") throw ProtocolError("not a frame message");
    DecodedFrame f;
    f.generation = msg.at("generation").get<std::uint64_t>();
    f.stage = msg.at("stage").get<std::string>();
    f.camera = camera_from_json(msg.at("camera"));
    f.rgb = png_from_b64(msg.at("rgb_png").get<std::string>());
    f.alpha = png_from_b64(msg.at("alpha_png").get<std::string>());
    const std::string raw = base64_decode(msg.at("depth_f32").get<std::string>());
    const int w = msg.at("width").get<int>(), h = msg.at("height").get<int>();
    if (raw.size() != static_cast<std::size_t>(w) * h * sizeof(float)) throw ProtocolError("depth payload size mismatch");
    std::vector<float> depth(static_cast<std::size_t>(w) * h);
    std::memcpy(depth.data(), raw.data(), raw.size());
    f.depth = Image(w, h, 1);
    std::copy(depth.begin(), depth.end(), f.depth.data.begin());
    return f;
}

Camera camera_from_view(const json& view, const CameraDistribution& base) {
    if (view.contains("camera")) return camera_from_json(view.at("camera"));
    const json& o = view.at("orbit");
    CameraDistribution d = base;
    d.width = o.value("width", d.width);
    d.height = o.value("height", d.height);
    if (o.contains("look_at")) d.look_at = vec3_from_json(o.at("look_at"));
    return camera_from_pose(d, {o.value("elevation", 0.0), o.value("azimuth", 0.0), o.value("radius", 3.0)});
}

} // namespace bf
