#pragma once

#include "blobforge/distill/distill.hpp"
#include "blobforge/geometry/mesh.hpp"
#include "blobforge/interact/drag.hpp"
#include "blobforge/refine/refine.hpp"
#include "blobforge/session/log.hpp"

#include "json.hpp"

#include <atomic>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>

namespace bf {

enum class Stage { StageI, Distilling, StageII };
const char* to_string(Stage s);

/// Distinct failure classes reported to clients.
enum class ErrorCode {
    ok,
    invalid_argument,
    unknown_command,
    stage_mismatch,
    stale_selection,
    busy,
    not_found,
    nothing_to_undo,
    guidance_unavailable,
    distill_diverged,
    cancelled,
    io_error,
    internal,
};
const char* to_string(ErrorCode c);

struct CommandResult {
    ErrorCode code = ErrorCode::ok;
    std::string message;
    nlohmann::json data = nlohmann::json::object();
    std::uint64_t generation = 0; ///< session generation after the command

    [[nodiscard]] bool ok() const { return code == ErrorCode::ok; }
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Thrown by handlers to report a specific error code.
class CommandError : public std::runtime_error {
public:
    CommandError(ErrorCode code, const std::string& what) : std::runtime_error(what), code(code) {}
    ErrorCode code;
};

/// Everything configurable about a session. Loaded from JSON; unknown keys are
/// rejected so typos do not silently fall back to defaults.
struct SessionConfig {
    std::uint64_t seed = 0;
    std::size_t undo_depth = 32;
    HashFieldConfig field = [] {
        HashFieldConfig c;
        c.grid.levels = 8;
        c.grid.base_resolution = 8;
        c.grid.log2_table = 16;
        c.grid.max_resolution = 256;
        c.hidden = 32;
        c.geo_features = 16;
        c.sh_degree = 1;
        return c;
    }();
    DistillConfig distill;
    double psnr_floor = 28.0; ///< below this the transition reports a warning
    OverlayConfig overlay;
    RefineOptions refine;
    DragOptions drag;
    CameraDistribution edit_cameras; ///< semantic edits
    SplatOptimizerOptions edit_optimizer;
    MeshOptions mesh;
    VolumeOptions frame_volume;
    int occupancy_resolution = kOccupancyResolution;

    void validate() const;
    /// Effective values of the constants a reviewer may want to audit.
    [[nodiscard]] nlohmann::json introspect() const;
};

SessionConfig session_config_from_json(const nlohmann::json& j);
nlohmann::json session_config_to_json(const SessionConfig& c);
SessionConfig load_session_config(const std::filesystem::path& path);

/// State captured by undo snapshots. Large members are shared and copied on
/// write, so a snapshot costs little until the live state diverges from it.
struct SessionState {
    Stage stage = Stage::StageI;
    GaussianScene scene;
    std::shared_ptr<const GaussianScene> frozen; ///< Stage I scene kept for audit after transition
    std::optional<PartSelection> selection;
    std::shared_ptr<const HashField> field;
    std::shared_ptr<const OccupancyGrid> occupancy;
    std::shared_ptr<RefinedField> refined;
    std::map<std::string, Region> regions;
    double transition_psnr = 0.0;
};

struct Frame {
    std::uint64_t generation = 0;
    Stage stage = Stage::StageI;
    Camera camera;
    Image rgb, alpha, depth;
};

/// Renderable view of a session, safe to use from other threads.
struct FrameSource {
    std::uint64_t generation = 0;
    Stage stage = Stage::StageI;
    std::shared_ptr<const GaussianScene> scene;
    std::shared_ptr<const RefinedField> refined;
    std::shared_ptr<const HashField> field; ///< keeps refined->base() alive
    std::shared_ptr<const OccupancyGrid> occupancy;
    VolumeOptions volume;

    [[nodiscard]] Frame render(const Camera& camera) const;
};

/// Session checkpoint container kind.
inline constexpr const char* kSessionCheckpointKind = "blobforge.session";
inline constexpr int kSessionCheckpointVersion = 1;

/// The session state machine. Not thread safe: SessionService serialises
/// access. Every successful command is appended to the log together with the
/// guidance outcomes it consumed, so replay() rebuilds the same state.
class Session {
public:
    explicit Session(SessionConfig cfg = {}, std::string id = "session");

    [[nodiscard]] const std::string& id() const { return id_; }
    [[nodiscard]] const SessionConfig& config() const { return cfg_; }
    [[nodiscard]] Stage stage() const { return state_.stage; }
    [[nodiscard]] const SessionState& state() const { return state_; }
    [[nodiscard]] std::uint64_t generation() const { return generation_; }
    [[nodiscard]] const std::vector<LogEntry>& log() const { return log_; }
    [[nodiscard]] std::size_t undo_size() const { return undo_.size(); }
    [[nodiscard]] std::size_t redo_size() const { return redo_.size(); }
    [[nodiscard]] bool drag_active() const { return drag_ != nullptr; }
    [[nodiscard]] const DragSession* drag() const { return drag_.get(); }
    [[nodiscard]] std::vector<std::string> active_refinements() const;

    void set_provider(std::shared_ptr<GuidanceProvider> p) { provider_.set_live(std::move(p)); }
    [[nodiscard]] bool has_provider() const { return provider_.has_live(); }

    /// Streams progress of long commands (distillation records, drag and
    /// refine step reports). Called on the applying thread.
    using MetricsSink = std::function<void(const nlohmann::json&)>;
    void set_metrics_sink(MetricsSink sink) { metrics_ = std::move(sink); }
    /// Polled by long commands; when set they stop and fail with `cancelled`.
    void set_cancel_flag(const std::atomic<bool>* flag) { cancel_ = flag; }

    /// Applies one command. Never throws for command-level failures; the state
    /// is left as it was before a failed command.
    CommandResult apply(const nlohmann::json& command);
    /// Applies a logged entry with its guidance outcomes (no live provider use).
    CommandResult apply_logged(const LogEntry& entry);

    [[nodiscard]] FrameSource frame_source() const;
    [[nodiscard]] Frame render_frame(const Camera& camera) const { return frame_source().render(camera); }

    /// Checkpoint of the current state (deterministic bytes).
    [[nodiscard]] std::string checkpoint() const;
    void save(const std::filesystem::path& path) const;
    /// Replaces the state by a checkpoint (pushes an undo snapshot).
    void restore(const std::string& bytes);

    /// Fresh session from `cfg` fed every entry of `log`.
    static Session replay(const SessionConfig& cfg, const std::vector<LogEntry>& log, std::string id = "replay");

private:
    CommandResult run(const nlohmann::json& command, std::optional<std::vector<GuidanceRecord>> replay);
    nlohmann::json dispatch(const std::string& name, const nlohmann::json& cmd);
    void push_undo(const std::string& label);
    std::uint64_t command_seed() const;
    void require_stage(Stage s, const std::string& cmd) const;
    void require_idle(const std::string& cmd) const;
    GuidanceProvider* provider_or_null();
    GuidanceProvider& provider_required(const std::string& cmd);
    RefinedField& mutable_refined();
    bool cancelled() const { return cancel_ && cancel_->load(); }

    nlohmann::json cmd_init(const nlohmann::json& c);
    nlohmann::json cmd_import(const nlohmann::json& c);
    nlohmann::json cmd_select_sphere(const nlohmann::json& c);
    nlohmann::json cmd_select_masks(const nlohmann::json& c);
    nlohmann::json cmd_select_indices(const nlohmann::json& c);
    nlohmann::json cmd_remove(const nlohmann::json& c);
    nlohmann::json cmd_concat(const nlohmann::json& c);
    nlohmann::json cmd_transform(const nlohmann::json& c);
    nlohmann::json cmd_drag_begin(const nlohmann::json& c);
    nlohmann::json cmd_step_params(const nlohmann::json& c);
    nlohmann::json cmd_drag_step(const nlohmann::json& c);
    nlohmann::json cmd_drag_end(const nlohmann::json& c);
    nlohmann::json cmd_semantic_edit(const nlohmann::json& c);
    nlohmann::json cmd_transition(const nlohmann::json& c);
    nlohmann::json cmd_make_region(const nlohmann::json& c);
    nlohmann::json cmd_build_overlay(const nlohmann::json& c);
    nlohmann::json cmd_set_overlay(const nlohmann::json& c);
    nlohmann::json cmd_refine_begin(const nlohmann::json& c);
    nlohmann::json cmd_refine_step(const nlohmann::json& c);
    nlohmann::json cmd_refine_end(const nlohmann::json& c);
    nlohmann::json cmd_extract_mesh(const nlohmann::json& c);
    nlohmann::json cmd_save(const nlohmann::json& c);
    nlohmann::json cmd_load(const nlohmann::json& c);
    nlohmann::json cmd_undo(const nlohmann::json& c);
    nlohmann::json cmd_redo(const nlohmann::json& c);

    std::string id_;
    SessionConfig cfg_;
    SessionState state_;
    std::deque<std::pair<std::string, SessionState>> undo_, redo_;
    std::uint64_t generation_ = 0;
    std::vector<LogEntry> log_;
    SessionProvider provider_;
    GuidanceContext ctx_;
    std::unique_ptr<DragSession> drag_;
    SplatOptimizer edit_opt_;
    struct ActiveRefine {
        Region region;
        std::unique_ptr<RegionRefiner> refiner;
    };
    std::map<std::string, ActiveRefine> refines_;
    bool attach_provider_ = false; ///< the running command may call the provider
    MetricsSink metrics_;
    const std::atomic<bool>* cancel_ = nullptr;
};

/// Commands that change nothing and are not logged.
bool is_query_command(const std::string& name);

} // namespace bf
