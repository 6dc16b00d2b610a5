#pragma once

#include "blobforge/guidance/provider.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bf {

std::string base64_encode(std::string_view bytes);
/// Throws InvalidArgument on characters outside the alphabet.
std::string base64_decode(std::string_view text);

/// One guidance round trip as seen by the session: either a response or the
/// provider failure (so replays reproduce skipped steps too).
struct GuidanceRecord {
    std::optional<GuidanceResponse> response;
    std::string error;
    bool timeout = false;
};

/// Gradients are stored as base64 of raw little-endian float64, so a replay
/// hands the optimizer bit-identical values.
nlohmann::json guidance_record_to_json(const GuidanceRecord& r);
GuidanceRecord guidance_record_from_json(const nlohmann::json& j);

/// One successfully applied command with everything a replay needs.
struct LogEntry {
    std::uint64_t seq = 0;
    nlohmann::json command;
    bool provider = false; ///< a guidance provider was attached
    std::vector<GuidanceRecord> guidance;
};

nlohmann::json log_entry_to_json(const LogEntry& e);
LogEntry log_entry_from_json(const nlohmann::json& j);

/// JSON lines, one entry per line.
void write_command_log(const std::vector<LogEntry>& log, const std::filesystem::path& path);
void append_command_log(const LogEntry& entry, const std::filesystem::path& path);
std::vector<LogEntry> read_command_log(const std::filesystem::path& path);

/// Logged guidance no longer matches what the replayed command asks for. Not a
/// GuidanceError, so guidance loops cannot absorb it as a provider failure.
class ReplayDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Guidance provider owned by a session. Live mode forwards to the configured
/// provider and records every outcome; replay mode serves logged outcomes.
class SessionProvider final : public GuidanceProvider {
public:
    void set_live(std::shared_ptr<GuidanceProvider> live) { live_ = std::move(live); }
    [[nodiscard]] bool has_live() const { return live_ != nullptr; }
    [[nodiscard]] std::string id() const override;
    GuidanceResponse evaluate(const GuidanceRequest& req) override;

    /// Starts a command: live when `replay` is empty.
    void begin(std::optional<std::vector<GuidanceRecord>> replay = std::nullopt);
    /// Records gathered since begin(); in replay mode, throws GuidanceError if
    /// logged records were left unused.
    std::vector<GuidanceRecord> end();
    [[nodiscard]] bool replaying() const { return replaying_; }

private:
    std::shared_ptr<GuidanceProvider> live_;
    bool replaying_ = false;
    std::vector<GuidanceRecord> records_;
    std::size_t cursor_ = 0;
};

} // namespace bf
