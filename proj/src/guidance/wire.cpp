#include "blobforge/guidance/wire.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/splat/camera_json.hpp"

#include "json.hpp"

#include <fmt/core.h>

#include <bit>
#include <cstring>

namespace bf {

static_assert(std::endian::native == std::endian::little, "wire codec assumes a little-endian host");

namespace {

using nlohmann::json;

std::string frame(const json& header, const Image* payload) {
    const std::string h = header.dump();
    std::string out(4, '\0');
    const auto len = static_cast<std::uint32_t>(h.size());
    std::memcpy(out.data(), &len, 4);
    out += h;
    if (payload) {
        const std::size_t off = out.size();
        out.resize(off + payload->data.size() * 4);
        for (std::size_t i = 0; i < payload->data.size(); ++i) {
            const auto f = static_cast<float>(payload->data[i]);
            std::memcpy(out.data() + off + i * 4, &f, 4);
        }
    }
    return out;
}

json unframe(std::string_view bytes, std::string_view& payload) {
    if (bytes.size() < 4) throw GuidanceError("guidance frame shorter than its length prefix");
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data(), 4);
    if (len > bytes.size() - 4) throw GuidanceError(fmt::format("guidance header length {} exceeds frame", len));
    json h;
    try {
        h = json::parse(bytes.substr(4, len));
    } catch (const json::exception& e) {
        throw GuidanceError(std::string("guidance header is not JSON: ") + e.what());
    }
    if (h.value("version", 0) != kGuidanceWireVersion)
        throw GuidanceError(fmt::format("unsupported guidance wire version {}", h.value("version", 0)));
    payload = bytes.substr(4 + len);
    return h;
}

Image read_payload(std::string_view payload, int w, int h) {
    if (w <= 0 || h <= 0) throw GuidanceError("guidance payload has no pixels");
    const std::size_t n = static_cast<std::size_t>(w) * h * 3;
    if (payload.size() != n * 4)
        throw GuidanceError(fmt::format("guidance payload is {} bytes, expected {}", payload.size(), n * 4));
    Image img(w, h, 3);
    for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, payload.data() + i * 4, 4);
        img.data[i] = f;
    }
    return img;
}

} // namespace

std::string encode_request(const GuidanceRequest& req) {
    const json h = {{"version", kGuidanceWireVersion}, {"session", req.session}, {"nonce", req.nonce},
                    {"prompt", req.prompt}, {"t", req.t}, {"width", req.rgb.width}, {"height", req.rgb.height},
                    {"camera", camera_to_json(req.camera)}};
    return frame(h, &req.rgb);
}

GuidanceRequest decode_request(std::string_view bytes) {
    std::string_view payload;
    const json h = unframe(bytes, payload);
    GuidanceRequest req;
    try {
        req.session = h.at("session").get<std::string>();
        req.nonce = h.at("nonce").get<std::uint64_t>();
        req.prompt = h.at("prompt").get<std::string>();
        req.t = h.at("t").get<double>();
        req.camera = camera_from_json(h.at("camera"));
        req.rgb = read_payload(payload, h.at("width").get<int>(), h.at("height").get<int>());
    } catch (const json::exception& e) {
        throw GuidanceError(std::string("malformed guidance request: ") + e.what());
    }
    return req;
}

std::string encode_response(const GuidanceResponse& resp) {
    const json h = {{"version", kGuidanceWireVersion}, {"nonce", resp.nonce}, {"provider", resp.provider},
                    {"loss", resp.loss}, {"width", resp.gradient.width}, {"height", resp.gradient.height}};
    return frame(h, &resp.gradient);
}

std::string encode_error(const std::string& message) {
    return frame(json{{"version", kGuidanceWireVersion}, {"error", message}}, nullptr);
}

GuidanceResponse decode_response(std::string_view bytes) {
    std::string_view payload;
    const json h = unframe(bytes, payload);
    if (h.contains("error")) throw GuidanceError("provider error: " + h["error"].get<std::string>());
    GuidanceResponse r;
    try {
        r.nonce = h.at("nonce").get<std::uint64_t>();
        r.provider = h.at("provider").get<std::string>();
        r.loss = h.at("loss").get<double>();
        r.gradient = read_payload(payload, h.at("width").get<int>(), h.at("height").get<int>());
    } catch (const json::exception& e) {
        throw GuidanceError(std::string("malformed guidance response: ") + e.what());
    }
    return r;
}

} // namespace bf
