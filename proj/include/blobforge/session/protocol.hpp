#pragma once

#include "blobforge/session/session.hpp"

#include <stdexcept>
#include <string_view>

namespace bf {

/// Version of the JSON message schema spoken over the session socket.
inline constexpr int kProtocolSchema = 1;

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Client to server:
///   {"type":"hello","schema":1,"session":"name"?}
///   {"type":"command","id":any,"command":{"cmd":...}}
///   {"type":"frame_request","id":any,"camera":{...}} or "orbit":{elevation,azimuth,radius,width,height}
///   {"type":"ping","id":any}
/// Server to client: hello, result, frame, metrics, job_status, error, pong.
struct ClientMessage {
    enum class Type { hello, command, frame_request, ping };
    Type type = Type::ping;
    nlohmann::json id;
    std::string session;     ///< hello
    nlohmann::json command;  ///< command
    nlohmann::json view;     ///< frame_request: the object holding "camera" or "orbit"
};

/// Throws ProtocolError on malformed JSON, unknown types, a schema mismatch
/// or missing fields.
ClientMessage parse_client_message(std::string_view text);

nlohmann::json make_hello(const std::string& session, Stage stage, std::uint64_t generation);
nlohmann::json make_result(const nlohmann::json& id, const CommandResult& r);
/// rgb and alpha as base64 PNG; depth as base64 little-endian float32.
nlohmann::json make_frame(const nlohmann::json& id, const Frame& f, std::uint64_t dropped = 0);
nlohmann::json make_metrics(const nlohmann::json& payload);
nlohmann::json make_job_status(const std::string& job, const std::string& state, const nlohmann::json& detail = {});
nlohmann::json make_error(const std::string& code, const std::string& message, const nlohmann::json& id = nullptr);

/// Client-side view of a frame message.
struct DecodedFrame {
    std::uint64_t generation = 0;
    std::string stage;
    Camera camera;
    Image rgb, alpha, depth;
};
DecodedFrame decode_frame(const nlohmann::json& msg);

/// Camera for a frame request (the same shapes commands accept).
Camera camera_from_view(const nlohmann::json& view, const CameraDistribution& base);

} // namespace bf
