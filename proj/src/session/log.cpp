#include "blobforge/core/error.hpp"
#include "blobforge/session/log.hpp"

#include <boost/beast/core/detail/base64.hpp>
#include <fmt/core.h>

#include <cstring>
#include <fstream>

namespace bf {

namespace b64 = boost::beast::detail::base64;

std::string base64_encode(std::string_view bytes) {
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

std::string base64_decode(std::string_view text) {
    std::string out(b64::decoded_size(text.size()), '\0');
    const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
    // The decoder stops at padding; anything else left over is garbage.
    if (text.find_first_not_of('=', read) != std::string_view::npos || text.size() - read > 2)
        throw InvalidArgument("invalid base64 payload");
    out.resize(written);
    return out;
}

nlohmann::json guidance_record_to_json(const GuidanceRecord& r) {
    if (!r.response) return {{"error", r.error}, {"timeout", r.timeout}};
    const auto& g = r.response->gradient;
    std::string raw(g.data.size() * sizeof(double), '\0');
    std::memcpy(raw.data(), g.data.data(), raw.size());
    return {{"nonce", r.response->nonce}, {"provider", r.response->provider}, {"loss", r.response->loss},
            {"width", g.width},           {"height", g.height},               {"channels", g.channels},
            {"gradient", base64_encode(raw)}};
}

GuidanceRecord guidance_record_from_json(const nlohmann::json& j) {
    GuidanceRecord r;
    if (j.contains("error")) {
        r.error = j.at("error").get<std::string>();
        r.timeout = j.value("timeout", false);
        return r;
    }
    GuidanceResponse resp;
    resp.nonce = j.at("nonce").get<std::uint64_t>();
    resp.provider = j.at("provider").get<std::string>();
    resp.loss = j.at("loss").get<double>();
    resp.gradient = Image(j.at("width").get<int>(), j.at("height").get<int>(), j.at("channels").get<int>());
    const std::string raw = base64_decode(j.at("gradient").get<std::string>());
    if (raw.size() != resp.gradient.data.size() * sizeof(double))
        throw InvalidArgument("logged gradient size does not match its shape");
    std::memcpy(resp.gradient.data.data(), raw.data(), raw.size());
    r.response = std::move(resp);
    return r;
}

nlohmann::json log_entry_to_json(const LogEntry& e) {
    nlohmann::json g = nlohmann::json::array();
    for (const auto& r : e.guidance) g.push_back(guidance_record_to_json(r));
    return {{"seq", e.seq}, {"command", e.command}, {"provider", e.provider}, {"guidance", std::move(g)}};
}

LogEntry log_entry_from_json(const nlohmann::json& j) {
    LogEntry e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.command = j.at("command");
    e.provider = j.value("provider", false);
    for (const auto& r : j.value("guidance", nlohmann::json::array())) e.guidance.push_back(guidance_record_from_json(r));
    return e;
}

void write_command_log(const std::vector<LogEntry>& log, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write command log '{}'", path.string()));
    for (const auto& e : log) f << log_entry_to_json(e).dump() << '\n';
    if (!f) throw IoError(fmt::format("write failed: '{}'", path.string()));
}

void append_command_log(const LogEntry& entry, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::app);
    if (!f) throw IoError(fmt::format("cannot append to command log '{}'", path.string()));
    f << log_entry_to_json(entry).dump() << '\n';
}

std::vector<LogEntry> read_command_log(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError(fmt::format("cannot open command log '{}'", path.string()));
    std::vector<LogEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(log_entry_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw IoError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return out;
}

std::string SessionProvider::id() const {
    if (replaying_) return "replay";
    return live_ ? live_->id() : "none";
}

void SessionProvider::begin(std::optional<std::vector<GuidanceRecord>> replay) {
    replaying_ = replay.has_value();
    records_ = replay ? std::move(*replay) : std::vector<GuidanceRecord>{};
    cursor_ = 0;
}

std::vector<GuidanceRecord> SessionProvider::end() {
    const bool was_replay = replaying_;
    const std::size_t unused = records_.size() - cursor_;
    replaying_ = false;
    cursor_ = 0;
    auto out = std::move(records_);
    records_.clear();
    if (was_replay && unused != 0)
        throw ReplayDiverged(fmt::format("replay diverged: {} logged guidance responses were not requested", unused));
    return out;
}

GuidanceResponse SessionProvider::evaluate(const GuidanceRequest& req) {
    if (replaying_) {
        if (cursor_ >= records_.size()) throw ReplayDiverged("replay diverged: no logged guidance response left");
        const GuidanceRecord& r = records_[cursor_++];
        if (!r.response) {
            if (r.timeout) throw GuidanceTimeout(r.error);
            throw GuidanceError(r.error);
        }
        if (r.response->nonce != req.nonce)
            throw ReplayDiverged(fmt::format("replay diverged: logged nonce {} but request nonce {}", r.response->nonce,
                                            req.nonce));
        return *r.response;
    }
    if (!live_) throw GuidanceError("no guidance provider configured");
    GuidanceRecord rec;
    try {
        rec.response = live_->evaluate(req);
    } catch (const GuidanceTimeout& e) {
        rec.error = e.what();
        rec.timeout = true;
        records_.push_back(rec);
        throw;
    } catch (const std::exception& e) {
        // Anything else is reported as a provider failure so that live runs
        // and replays take the same path.
        rec.error = e.what();
        records_.push_back(rec);
        throw GuidanceError(rec.error);
    }
    records_.push_back(rec);
    return *rec.response;
}

} // namespace bf
