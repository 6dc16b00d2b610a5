#include "blobforge/session/session.hpp"
#include "blobforge/session/protocol.hpp"

#include "blobforge/core/container.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/field/checkpoint.hpp"
#include "blobforge/interact/semantic.hpp"
#include "blobforge/interact/transform.hpp"
#include "blobforge/splat/camera_json.hpp"
#include "blobforge/splat/scene_io.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <fstream>
#include <set>

namespace bf {

using nlohmann::json;

const char* to_string(Stage s) {
    switch (s) {
    case Stage::StageI: return "stage1";
    case Stage::Distilling: return "distilling";
    case Stage::StageII: return "stage2";
    }
    return "?";
}

namespace {

Stage stage_from_string(const std::string& s) {
    if (s == "stage1") return Stage::StageI;
    if (s == "distilling") return Stage::Distilling;
    if (s == "stage2") return Stage::StageII;
    throw InvalidArgument(fmt::format("unknown stage '{}'", s));
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Vec3 vec3_at(const json& c, const char* key) {
    if (!c.contains(key)) throw InvalidArgument(fmt::format("missing field '{}'", key));
    return vec3_from_json(c.at(key));
}

json selection_json(const PartSelection& s) {
    return {{"count", s.size()}, {"scene_generation", s.scene_generation}, {"scene_size", s.scene_size}};
}

json report_json(const StepReport& r) {
    return {{"step", r.step},
            {"guidance_loss", r.guidance_loss},
            {"motion_loss", r.motion_loss},
            {"rigid_loss", r.rigid_loss},
            {"total_loss", r.total_loss},
            {"distance", r.distance},
            {"selected", r.selected},
            {"guidance_applied", r.guidance_applied},
            {"aborted", r.aborted},
            {"abort_reason", r.abort_reason},
            {"densified", r.densified},
            {"converged", r.converged}};
}

std::vector<float> pack_scene(const GaussianScene& s) {
    std::vector<double> flat(s.size() * kBlobParams);
    for (std::size_t i = 0; i < s.size(); ++i)
        pack_blob(s[i], std::span<double, kBlobParams>(flat.data() + i * kBlobParams, kBlobParams));
    return to_float32(flat);
}

GaussianScene unpack_scene(const ContainerSection& sec, std::uint64_t generation) {
    if (sec.floats.size() % kBlobParams != 0) throw IoError(fmt::format("section '{}' has a partial blob", sec.name));
    std::vector<double> flat(sec.floats.size());
    from_float32(sec.floats, flat);
    std::vector<GaussianBlob> blobs(flat.size() / kBlobParams);
    for (std::size_t i = 0; i < blobs.size(); ++i)
        unpack_blob(std::span<const double, kBlobParams>(flat.data() + i * kBlobParams, kBlobParams), blobs[i]);
    return GaussianScene(std::move(blobs), generation);
}

DragMode mode_from(const json& c, DragMode fallback) {
    if (c.contains("mode")) return drag_mode_from_string(c.at("mode").get<std::string>());
    if (c.contains("rigid")) return c.at("rigid").get<bool>() ? DragMode::Rigid : DragMode::Deformable;
    return fallback;
}

DragWeights weights_from(const json& c, DragWeights w) {
    if (!c.contains("weights")) return w;
    const json& j = c.at("weights");
    w.motion = j.value("motion", w.motion);
    w.rigid = j.value("rigid", w.rigid);
    w.guidance = j.value("guidance", w.guidance);
    return w;
}

const std::set<std::string> kQueries = {"status", "config", "get_log"};

} // namespace

const char* to_string(ErrorCode c) {
    switch (c) {
    case ErrorCode::ok: return "ok";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::unknown_command: return "unknown_command";
    case ErrorCode::stage_mismatch: return "stage_mismatch";
    case ErrorCode::stale_selection: return "stale_selection";
    case ErrorCode::busy: return "busy";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::nothing_to_undo: return "nothing_to_undo";
    case ErrorCode::guidance_unavailable: return "guidance_unavailable";
    case ErrorCode::distill_diverged: return "distill_diverged";
    case ErrorCode::cancelled: return "cancelled";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::internal: return "internal";
    }
    return "?";
}

bool is_query_command(const std::string& name) { return kQueries.count(name) != 0; }

json CommandResult::to_json() const {
    return {{"ok", ok()}, {"code", bf::to_string(code)}, {"message", message}, {"data", data},
            {"generation", generation}};
}

Frame FrameSource::render(const Camera& camera) const {
    Frame f;
    f.generation = generation;
    f.stage = stage;
    f.camera = camera;
    if (stage == Stage::StageII && refined) {
        VolumeRender v = volrender(*refined, camera, *occupancy, volume);
        f.rgb = std::move(v.rgb);
        f.alpha = std::move(v.alpha);
        f.depth = std::move(v.depth);
    } else {
        RenderOutput r = bf::render(scene ? *scene : GaussianScene{}, camera);
        f.rgb = std::move(r.rgb);
        f.alpha = std::move(r.alpha);
        f.depth = std::move(r.depth);
    }
    return f;
}

Session::Session(SessionConfig cfg, std::string id) : id_(std::move(id)), cfg_(std::move(cfg)) {
    cfg_.validate();
    ctx_.session = id_;
}

std::vector<std::string> Session::active_refinements() const {
    std::vector<std::string> ids;
    for (const auto& [id, r] : refines_) ids.push_back(id);
    return ids;
}

std::uint64_t Session::command_seed() const { return mix64(cfg_.seed ^ mix64(log_.size() + 1)); }

void Session::require_stage(Stage s, const std::string& cmd) const {
    if (state_.stage != s)
        throw CommandError(ErrorCode::stage_mismatch,
                           fmt::format("'{}' needs {} but the session is in {}", cmd, to_string(s), to_string(state_.stage)));
}

void Session::require_idle(const std::string& cmd) const {
    if (drag_) throw CommandError(ErrorCode::busy, fmt::format("'{}' not allowed while a drag is active", cmd));
    if (!refines_.empty())
        throw CommandError(ErrorCode::busy, fmt::format("'{}' not allowed while a refinement is active", cmd));
}

void Session::push_undo(const std::string& label) {
    undo_.emplace_back(label, state_);
    while (undo_.size() > cfg_.undo_depth) undo_.pop_front();
    redo_.clear();
}

GuidanceProvider* Session::provider_or_null() { return attach_provider_ ? &provider_ : nullptr; }

GuidanceProvider& Session::provider_required(const std::string& cmd) {
    if (!attach_provider_)
        throw CommandError(ErrorCode::guidance_unavailable, fmt::format("'{}' needs a guidance provider", cmd));
    return provider_;
}

RefinedField& Session::mutable_refined() {
    if (!state_.refined) throw CommandError(ErrorCode::stage_mismatch, "no field yet");
    if (state_.refined.use_count() > 1) state_.refined = std::make_shared<RefinedField>(*state_.refined);
    return *state_.refined;
}

CommandResult Session::apply(const json& command) { return run(command, std::nullopt); }

CommandResult Session::apply_logged(const LogEntry& entry) {
    attach_provider_ = entry.provider;
    return run(entry.command, entry.guidance);
}

CommandResult Session::run(const json& command, std::optional<std::vector<GuidanceRecord>> replay) {
    CommandResult res;
    const bool replaying = replay.has_value();
    if (!replaying) attach_provider_ = provider_.has_live();
    const bool attach = attach_provider_;
    std::string name;
    if (!command.is_object() || !command.contains("cmd") || !command.at("cmd").is_string()) {
        res.code = ErrorCode::invalid_argument;
        res.message = "a command is a JSON object with a string field 'cmd'";
        res.generation = generation_;
        return res;
    }
    name = command.at("cmd").get<std::string>();

    if (is_query_command(name)) {
        try {
            res.data = dispatch(name, command);
        } catch (const std::exception& e) {
            res.code = ErrorCode::internal;
            res.message = e.what();
        }
        res.generation = generation_;
        return res;
    }

    // Everything a failed command could have touched.
    SessionState state_backup = state_;
    auto undo_backup = undo_;
    auto redo_backup = redo_;
    GuidanceContext ctx_backup = ctx_;
    std::unique_ptr<DragSession> drag_backup = drag_ ? std::make_unique<DragSession>(*drag_) : nullptr;
    SplatOptimizer edit_backup = edit_opt_;

    provider_.begin(std::move(replay));
    try {
        if (command.contains("expect_generation") && command.at("expect_generation").get<std::uint64_t>() != generation_)
            throw CommandError(ErrorCode::stale_selection,
                               fmt::format("command built against generation {} but the session is at {}",
                                           command.at("expect_generation").get<std::uint64_t>(), generation_));
        res.data = dispatch(name, command);
        LogEntry entry;
        entry.guidance = provider_.end();
        entry.seq = log_.size();
        entry.command = command;
        entry.provider = attach;
        log_.push_back(std::move(entry));
        ++generation_;
    } catch (const std::exception& e) {
        try {
            provider_.end();
        } catch (const std::exception&) {
        }
        state_ = std::move(state_backup);
        undo_ = std::move(undo_backup);
        redo_ = std::move(redo_backup);
        ctx_ = ctx_backup;
        if (drag_ || drag_backup) drag_ = std::move(drag_backup);
        edit_opt_ = std::move(edit_backup);
        res.message = e.what();
        if (const auto* ce = dynamic_cast<const CommandError*>(&e))
            res.code = ce->code;
        else if (dynamic_cast<const StaleSelection*>(&e))
            res.code = ErrorCode::stale_selection;
        else if (dynamic_cast<const DistillDiverged*>(&e))
            res.code = ErrorCode::distill_diverged;
        else if (dynamic_cast<const ReplayDiverged*>(&e))
            res.code = ErrorCode::invalid_argument;
        else if (dynamic_cast<const IoError*>(&e))
            res.code = ErrorCode::io_error;
        else if (dynamic_cast<const GuidanceError*>(&e))
            res.code = ErrorCode::guidance_unavailable;
        else if (dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const json::exception*>(&e) ||
                 dynamic_cast<const std::invalid_argument*>(&e))
            res.code = ErrorCode::invalid_argument;
        else
            res.code = ErrorCode::internal;
    }
    res.generation = generation_;
    return res;
}

json Session::dispatch(const std::string& name, const json& c) {
    using Handler = json (Session::*)(const json&);
    static const std::map<std::string, Handler> table = {
        {"init", &Session::cmd_init},
        {"import", &Session::cmd_import},
        {"select_sphere", &Session::cmd_select_sphere},
        {"select_masks", &Session::cmd_select_masks},
        {"select_indices", &Session::cmd_select_indices},
        {"remove", &Session::cmd_remove},
        {"concat", &Session::cmd_concat},
        {"transform", &Session::cmd_transform},
        {"drag_begin", &Session::cmd_drag_begin},
        {"step_params", &Session::cmd_step_params},
        {"drag_step", &Session::cmd_drag_step},
        {"drag_end", &Session::cmd_drag_end},
        {"semantic_edit", &Session::cmd_semantic_edit},
        {"transition_stage2", &Session::cmd_transition},
        {"make_region", &Session::cmd_make_region},
        {"build_overlay", &Session::cmd_build_overlay},
        {"set_overlay", &Session::cmd_set_overlay},
        {"refine_begin", &Session::cmd_refine_begin},
        {"refine_step", &Session::cmd_refine_step},
        {"refine_end", &Session::cmd_refine_end},
        {"extract_mesh", &Session::cmd_extract_mesh},
        {"save", &Session::cmd_save},
        {"load", &Session::cmd_load},
        {"undo", &Session::cmd_undo},
        {"redo", &Session::cmd_redo},
    };
    if (name == "status") {
        json overlays = json::array();
        if (state_.refined)
            for (const auto& o : state_.refined->overlays())
                overlays.push_back({{"id", o.id}, {"enabled", o.enabled}, {"part_voxels", o.part.count()}});
        json regions = json::object();
        for (const auto& [id, r] : state_.regions) regions[id] = {{"center", vec3_to_json(r.center)}, {"radius", r.radius}};
        return {{"session", id_},
                {"stage", to_string(state_.stage)},
                {"generation", generation_},
                {"blobs", state_.scene.size()},
                {"scene_generation", state_.scene.generation()},
                {"selection", state_.selection ? selection_json(*state_.selection) : json(nullptr)},
                {"drag_active", drag_ != nullptr},
                {"refinements", active_refinements()},
                {"overlays", overlays},
                {"regions", regions},
                {"log_size", log_.size()},
                {"undo", undo_.size()},
                {"redo", redo_.size()},
                {"provider", provider_.id()}};
    }
    if (name == "config") return cfg_.introspect();
    if (name == "get_log") {
        json out = json::array();
        for (const auto& e : log_) out.push_back(e.command);
        return out;
    }
    const auto it = table.find(name);
    if (it == table.end()) throw CommandError(ErrorCode::unknown_command, fmt::format("unknown command '{}'", name));
    return (this->*(it->second))(c);
}

// ---- Stage I ---------------------------------------------------------------

json Session::cmd_init(const json& c) {
    require_stage(Stage::StageI, "init");
    require_idle("init");
    std::mt19937_64 rng(c.value("seed", command_seed()));
    PointInitOptions po;
    po.opacity = c.value("opacity", po.opacity);
    if (c.contains("color")) po.color = vec3_from_json(c.at("color"));
    const Vec3 center = c.contains("center") ? vec3_from_json(c.at("center")) : Vec3::Zero();
    const auto count = c.value("count", std::size_t{4096});
    if (count == 0) throw InvalidArgument("init needs count > 0");
    push_undo("init");
    const std::uint64_t gen = state_.scene.generation() + 1;
    state_.scene = init_uniform_sphere(rng, count, c.value("radius", 1.0), center, po);
    state_.scene.set_generation(gen);
    state_.selection.reset();
    return {{"blobs", state_.scene.size()}};
}

json Session::cmd_import(const json& c) {
    require_stage(Stage::StageI, "import");
    require_idle("import");
    const std::filesystem::path path = c.at("path").get<std::string>();
    GaussianScene scene;
    if (c.value("kind", std::string("scene")) == "points") {
        const PointCloud pc = load_point_cloud(path);
        PointInitOptions po;
        po.opacity = c.value("opacity", po.opacity);
        scene = scene_from_points(pc.points, pc.colors, po);
    } else {
        scene = load_scene(path);
    }
    push_undo("import");
    const std::uint64_t gen = state_.scene.generation() + 1;
    state_.scene = std::move(scene);
    state_.scene.set_generation(gen);
    state_.selection.reset();
    return {{"blobs", state_.scene.size()}};
}

json Session::cmd_select_sphere(const json& c) {
    require_stage(Stage::StageI, "select_sphere");
    require_idle("select_sphere");
    state_.selection = select_sphere(state_.scene, vec3_at(c, "center"), c.at("radius").get<double>());
    return selection_json(*state_.selection);
}

json Session::cmd_select_masks(const json& c) {
    require_stage(Stage::StageI, "select_masks");
    require_idle("select_masks");
    std::vector<MaskView> views;
    for (const auto& v : c.at("views")) {
        MaskView mv;
        mv.camera = camera_from_view(v, cfg_.edit_cameras);
        mv.id = v.value("id", fmt::format("view{}", views.size()));
        Image m;
        if (v.contains("mask_png")) {
            const std::string raw = base64_decode(v.at("mask_png").get<std::string>());
            m = decode_png({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
        } else {
            m = read_png(v.at("mask_path").get<std::string>());
        }
        // Keep the first channel only: masks may arrive as grey or rgb(a).
        mv.mask = Image(m.width, m.height, 1);
        for (std::size_t p = 0; p < m.pixel_count(); ++p) mv.mask.data[p] = m.data[p * m.channels];
        views.push_back(std::move(mv));
    }
    state_.selection = select_by_masks(state_.scene, views);
    return selection_json(*state_.selection);
}

json Session::cmd_select_indices(const json& c) {
    require_stage(Stage::StageI, "select_indices");
    require_idle("select_indices");
    state_.selection = select_indices(state_.scene, c.at("indices").get<std::vector<std::size_t>>());
    return selection_json(*state_.selection);
}

json Session::cmd_remove(const json& c) {
    require_stage(Stage::StageI, "remove");
    require_idle("remove");
    std::vector<std::size_t> idx;
    if (c.contains("indices")) {
        idx = c.at("indices").get<std::vector<std::size_t>>();
    } else {
        if (!state_.selection) throw InvalidArgument("remove needs a selection or explicit indices");
        state_.selection->require_valid(state_.scene);
        idx = state_.selection->indices;
    }
    push_undo("remove");
    const std::uint64_t gen = state_.scene.generation() + 1;
    const std::size_t before = state_.scene.size();
    state_.scene = remove(state_.scene, idx);
    state_.scene.set_generation(gen);
    // A selection not consumed here goes stale and is refused later.
    if (!c.contains("indices")) state_.selection.reset();
    return {{"removed", before - state_.scene.size()}, {"blobs", state_.scene.size()}};
}

json Session::cmd_concat(const json& c) {
    require_stage(Stage::StageI, "concat");
    require_idle("concat");
    const GaussianScene other = load_scene(c.at("path").get<std::string>());
    push_undo("concat");
    const std::uint64_t gen = state_.scene.generation() + 1;
    state_.scene = concat(state_.scene, other);
    state_.scene.set_generation(gen);
    return {{"blobs", state_.scene.size()}};
}

json Session::cmd_transform(const json& c) {
    require_stage(Stage::StageI, "transform");
    require_idle("transform");
    if (!state_.selection) throw InvalidArgument("transform needs a selection");
    state_.selection->require_valid(state_.scene);
    Vec3 pivot = Vec3::Zero();
    if (c.contains("pivot")) {
        pivot = vec3_from_json(c.at("pivot"));
    } else if (!state_.selection->empty()) {
        for (auto i : state_.selection->indices) pivot += state_.scene[i].position.cast<double>();
        pivot /= static_cast<double>(state_.selection->size());
    }
    Mat3 a = Mat3::Identity();
    if (c.contains("matrix")) {
        const auto m = c.at("matrix").get<std::vector<double>>();
        if (m.size() != 9) throw InvalidArgument("matrix needs 9 row-major values");
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) a(r, k) = m[3 * r + k];
    }
    if (c.contains("rotation")) {
        const json& r = c.at("rotation");
        const Vec3 axis = vec3_from_json(r.at("axis"));
        if (!(axis.norm() > 0.0)) throw InvalidArgument("rotation axis must be non-zero");
        a = Eigen::AngleAxisd(r.at("angle").get<double>(), axis.normalized()).toRotationMatrix() * a;
    }
    if (c.contains("scale")) {
        const json& s = c.at("scale");
        const Vec3 sv = s.is_number() ? Vec3::Constant(s.get<double>()) : vec3_from_json(s);
        a = sv.asDiagonal() * a;
    }
    Affine xf{a, pivot - a * pivot};
    if (c.contains("translation")) xf.t += vec3_from_json(c.at("translation"));
    push_undo("transform");
    state_.scene = transform_part(state_.scene, *state_.selection, xf);
    return {{"moved", state_.selection->size()}};
}

json Session::cmd_drag_begin(const json& c) {
    require_stage(Stage::StageI, "drag_begin");
    require_idle("drag_begin");
    DragOptions o = cfg_.drag;
    o.mode = mode_from(c, o.mode);
    o.weights = weights_from(c, o.weights);
    o.alpha = c.value("alpha", o.alpha);
    o.epsilon = c.value("epsilon", o.epsilon);
    o.max_steps = c.value("max_steps", o.max_steps);
    o.views_per_step = c.value("views_per_step", o.views_per_step);
    o.densify_interval = c.value("densify_interval", o.densify_interval);
    o.prompt = c.value("prompt", o.prompt);
    if (c.contains("t")) o.t_schedule.override_t = c.at("t").get<double>();
    o.seed = c.value("seed", command_seed());
    auto session = std::make_unique<DragSession>(state_.scene, vec3_at(c, "source"), vec3_at(c, "target"),
                                                 c.at("radius").get<double>(), o);
    push_undo("drag");
    drag_ = std::move(session);
    return {{"selected", drag_->selection().size()},
            {"alpha", drag_->alpha()},
            {"epsilon", drag_->epsilon()},
            {"distance", drag_->distance()},
            {"mode", to_string(drag_->mode())},
            {"rigid_weight", drag_->options().weights.rigid}};
}

json Session::cmd_step_params(const json& c) {
    if (!drag_) throw CommandError(ErrorCode::not_found, "no active drag");
    if (c.contains("target")) drag_->set_target(vec3_from_json(c.at("target")));
    if (c.contains("weights")) drag_->set_weights(weights_from(c, drag_->options().weights));
    if (c.contains("mode") || c.contains("rigid")) drag_->set_mode(mode_from(c, drag_->mode()), state_.scene);
    return {{"mode", to_string(drag_->mode())},
            {"target", vec3_to_json(drag_->target())},
            {"distance", drag_->distance()},
            {"weights", {{"motion", drag_->options().weights.motion},
                         {"rigid", drag_->options().weights.rigid},
                         {"guidance", drag_->options().weights.guidance}}}};
}

json Session::cmd_drag_step(const json& c) {
    if (!drag_) throw CommandError(ErrorCode::not_found, "no active drag");
    const auto steps = c.value("steps", std::size_t{1});
    json last;
    for (std::size_t k = 0; k < steps; ++k) {
        if (drag_->converged()) break;
        if (cancelled()) throw CommandError(ErrorCode::cancelled, "drag cancelled");
        const StepReport r = drag_step(*drag_, state_.scene, provider_or_null());
        last = report_json(r);
        if (metrics_) metrics_({{"job", "drag"}, {"report", last}});
    }
    if (last.is_null()) last = {{"distance", drag_->distance()}, {"converged", drag_->converged()}, {"step", drag_->steps()}};
    return last;
}

json Session::cmd_drag_end(const json&) {
    if (!drag_) throw CommandError(ErrorCode::not_found, "no active drag");
    finish_drag(*drag_, state_.scene);
    json out = {{"steps", drag_->steps()},
                {"distance", drag_->distance()},
                {"converged", drag_->converged()},
                {"blobs", state_.scene.size()}};
    drag_.reset();
    state_.selection.reset();
    return out;
}

json Session::cmd_semantic_edit(const json& c) {
    require_stage(Stage::StageI, "semantic_edit");
    require_idle("semantic_edit");
    if (!state_.selection) throw InvalidArgument("semantic_edit needs a selection");
    state_.selection->require_valid(state_.scene);
    GuidanceProvider& provider = provider_required("semantic_edit");
    const std::string prompt = c.at("prompt").get<std::string>();
    const double t = c.value("t", cfg_.refine.t_schedule.start);
    const auto steps = c.value("steps", 1);
    std::mt19937_64 rng(c.value("seed", command_seed()));
    push_undo("semantic_edit");
    if (edit_opt_.size() != state_.scene.size()) edit_opt_ = SplatOptimizer(state_.scene.size(), cfg_.edit_optimizer);
    int applied = 0;
    double loss = 0.0;
    for (int k = 0; k < steps; ++k) {
        if (cancelled()) throw CommandError(ErrorCode::cancelled, "semantic edit cancelled");
        const SemanticEditReport r = semantic_edit_step(state_.scene, *state_.selection, edit_opt_, prompt, t, provider,
                                                        cfg_.edit_cameras, rng, ctx_);
        applied += r.applied;
        loss = r.loss;
        if (metrics_) metrics_({{"job", "semantic_edit"}, {"step", k + 1}, {"loss", r.loss}, {"applied", r.applied}});
    }
    return {{"applied", applied}, {"loss", loss}};
}

// ---- transition --------------------------------------------------------------

json Session::cmd_transition(const json& c) {
    require_stage(Stage::StageI, "transition_stage2");
    require_idle("transition_stage2");
    DistillConfig dc = cfg_.distill;
    dc.steps = c.value("steps", dc.steps);
    dc.seed = c.value("seed", command_seed());
    dc.rays_per_camera = c.value("rays_per_camera", dc.rays_per_camera);
    dc.eval_interval = c.value("eval_interval", dc.eval_interval);
    dc.cameras_per_step = c.value("cameras_per_step", dc.cameras_per_step);
    if (c.contains("resolution")) dc.cameras.width = dc.cameras.height = c.at("resolution").get<int>();
    dc.lr = c.value("lr", dc.lr);
    dc.lr_final = c.value("lr_final", dc.lr_final);
    dc.validate();
    if (state_.scene.empty()) throw InvalidArgument("transition_stage2 needs a non-empty scene");

    push_undo("transition");
    state_.stage = Stage::Distilling;
    HashFieldConfig fc = cfg_.field;
    fc.bounds = teacher_bounds(state_.scene);
    fc.seed = dc.seed;
    auto field = std::make_shared<HashField>(fc);
    const auto frozen = std::make_shared<const GaussianScene>(state_.scene);
    Distiller distiller(*frozen, *field, dc);
    while (distiller.steps_done() < dc.steps) {
        if (cancelled()) throw CommandError(ErrorCode::cancelled, "distillation cancelled");
        const DistillRecord r = distiller.step();
        if (metrics_ && (std::isfinite(r.psnr) || r.step % 50 == 0))
            metrics_({{"job", "distill"}, {"step", r.step}, {"loss", r.loss},
                      {"psnr", std::isfinite(r.psnr) ? json(r.psnr) : json(nullptr)}});
    }
    distiller.refresh_occupancy();
    const double psnr = distiller.evaluate();
    state_.frozen = frozen;
    state_.field = field;
    state_.occupancy = std::make_shared<const OccupancyGrid>(distiller.occupancy());
    state_.refined = std::make_shared<RefinedField>(field.get());
    state_.selection.reset();
    state_.transition_psnr = psnr;
    state_.stage = Stage::StageII;
    const bool low = !(psnr >= cfg_.psnr_floor);
    return {{"psnr", psnr},
            {"steps", distiller.steps_done()},
            {"status", low ? "warning" : "ok"},
            {"warning", low ? fmt::format("held-out PSNR {:.2f} dB is below the floor {:.2f} dB", psnr, cfg_.psnr_floor)
                            : std::string()},
            {"occupied_voxels", state_.occupancy->count()}};
}

// ---- Stage II ----------------------------------------------------------------

json Session::cmd_make_region(const json& c) {
    require_stage(Stage::StageII, "make_region");
    Region r{vec3_at(c, "center"), c.at("radius").get<double>()};
    r.validate();
    const std::string id = c.at("id").get<std::string>();
    state_.regions[id] = r;
    const OccupancyGrid part = intersect_region(*state_.occupancy, r);
    return {{"id", id}, {"part_voxels", part.count()}};
}

json Session::cmd_build_overlay(const json& c) {
    require_stage(Stage::StageII, "build_overlay");
    require_idle("build_overlay");
    const std::string id = c.at("id").get<std::string>();
    const std::string region_id = c.value("region", id);
    const auto rit = state_.regions.find(region_id);
    if (rit == state_.regions.end()) throw CommandError(ErrorCode::not_found, fmt::format("no region '{}'", region_id));
    if (state_.refined->find(id) != nullptr)
        throw InvalidArgument(fmt::format("overlay '{}' already exists", id));
    OverlayConfig oc = cfg_.overlay;
    oc.seed = c.value("seed", command_seed());
    RefinementOverlay o = build_overlay(*state_.field, intersect_region(*state_.occupancy, rit->second), oc, id);
    const auto params = o.parameter_count();
    const auto voxels = o.part.count();
    push_undo("build_overlay");
    mutable_refined().overlays().push_back(std::move(o));
    return {{"id", id}, {"region", region_id}, {"parameters", params}, {"part_voxels", voxels}};
}

json Session::cmd_set_overlay(const json& c) {
    require_stage(Stage::StageII, "set_overlay");
    require_idle("set_overlay");
    const std::string id = c.at("id").get<std::string>();
    if (!state_.refined->find(id)) throw CommandError(ErrorCode::not_found, fmt::format("no overlay '{}'", id));
    push_undo("set_overlay");
    RefinementOverlay* o = mutable_refined().find(id);
    o->enabled = c.at("enabled").get<bool>();
    return {{"id", id}, {"enabled", o->enabled}};
}

json Session::cmd_refine_begin(const json& c) {
    require_stage(Stage::StageII, "refine_begin");
    if (drag_) throw CommandError(ErrorCode::busy, "a drag is active");
    const std::string id = c.at("overlay").get<std::string>();
    if (refines_.count(id)) throw CommandError(ErrorCode::busy, fmt::format("overlay '{}' is already refining", id));
    const RefinementOverlay* o = state_.refined->find(id);
    if (!o) throw CommandError(ErrorCode::not_found, fmt::format("no overlay '{}'", id));
    for (const auto& [other, active] : refines_)
        if (!parts_disjoint(o->part, state_.refined->find(other)->part))
            throw CommandError(ErrorCode::busy,
                               fmt::format("overlay '{}' overlaps '{}', which is refining", id, other));
    const std::string region_id = c.value("region", id);
    const auto rit = state_.regions.find(region_id);
    if (rit == state_.regions.end()) throw CommandError(ErrorCode::not_found, fmt::format("no region '{}'", region_id));
    GuidanceProvider& provider = provider_required("refine_begin");
    RefineOptions ro = cfg_.refine;
    ro.steps = c.value("steps", ro.steps);
    ro.prompt = c.value("prompt", ro.prompt);
    ro.views_per_step = c.value("views_per_step", ro.views_per_step);
    if (c.contains("t")) ro.t_schedule.override_t = c.at("t").get<double>();
    if (c.contains("resolution")) ro.cameras.width = ro.cameras.height = c.at("resolution").get<int>();
    ro.seed = c.value("seed", command_seed());
    ro.validate();
    // Existing refiners hold references into the live field, so it must not be
    // replaced: only the first concurrent refinement takes a snapshot.
    if (refines_.empty()) {
        push_undo("refine");
        mutable_refined();
    }
    ActiveRefine a;
    a.region = rit->second;
    a.refiner = std::make_unique<RegionRefiner>(*state_.refined, id, a.region, *state_.occupancy, provider, ctx_, ro);
    refines_.emplace(id, std::move(a));
    return {{"overlay", id}, {"region", region_id}, {"steps", ro.steps}};
}

json Session::cmd_refine_step(const json& c) {
    if (refines_.empty()) throw CommandError(ErrorCode::not_found, "no active refinement");
    std::vector<std::string> ids;
    if (c.contains("overlay")) {
        const std::string id = c.at("overlay").get<std::string>();
        if (!refines_.count(id)) throw CommandError(ErrorCode::not_found, fmt::format("overlay '{}' is not refining", id));
        ids.push_back(id);
    } else {
        ids = active_refinements();
    }
    const int steps = c.value("steps", 1);
    json out = json::object();
    for (int k = 0; k < steps; ++k)
        for (const auto& id : ids) {
            if (cancelled()) throw CommandError(ErrorCode::cancelled, "refinement cancelled");
            const RefineRecord r = refines_.at(id).refiner->step();
            json rec = {{"step", r.step},           {"t", r.t},
                        {"loss", r.loss},           {"views_applied", r.views_applied},
                        {"skip_reason", r.skip_reason}, {"rolled_back", r.rolled_back}};
            if (metrics_) metrics_({{"job", "refine"}, {"overlay", id}, {"record", rec}});
            out[id] = rec;
        }
    return out;
}

json Session::cmd_refine_end(const json& c) {
    if (c.contains("overlay")) {
        const std::string id = c.at("overlay").get<std::string>();
        const auto it = refines_.find(id);
        if (it == refines_.end()) throw CommandError(ErrorCode::not_found, fmt::format("overlay '{}' is not refining", id));
        const int steps = it->second.refiner->steps_done();
        refines_.erase(it);
        return {{"overlay", id}, {"steps", steps}};
    }
    if (refines_.empty()) throw CommandError(ErrorCode::not_found, "no active refinement");
    json ended = json::array();
    for (const auto& [id, r] : refines_) ended.push_back(id);
    refines_.clear();
    return {{"ended", ended}};
}

json Session::cmd_extract_mesh(const json& c) {
    require_stage(Stage::StageII, "extract_mesh");
    MeshOptions mo = cfg_.mesh;
    mo.resolution = c.value("resolution", mo.resolution);
    mo.iso_level = c.value("iso", mo.iso_level);
    mo.colors = c.value("colors", mo.colors);
    const TriangleMesh mesh = extract_mesh(*state_.refined, mo);
    json out = {{"vertices", mesh.vertices.size()},
                {"triangles", mesh.triangles.size()},
                {"euler", mesh.euler_characteristic()},
                {"watertight", mesh.watertight()}};
    if (c.contains("path")) {
        const std::filesystem::path path = c.at("path").get<std::string>();
        const MeshFormat fmt = c.contains("format")
                                   ? (c.at("format").get<std::string>() == "ply" ? MeshFormat::ply : MeshFormat::obj)
                                   : mesh_format_from_path(path);
        export_mesh(mesh, path, fmt);
        out["path"] = path.string();
    }
    return out;
}

json Session::cmd_save(const json& c) {
    const std::string path = c.at("path").get<std::string>();
    save(path);
    return {{"path", path}};
}

json Session::cmd_load(const json& c) {
    require_idle("load");
    std::ifstream f(c.at("path").get<std::string>(), std::ios::binary);
    if (!f) throw IoError(fmt::format("cannot open '{}'", c.at("path").get<std::string>()));
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    restore(bytes);
    return {{"stage", to_string(state_.stage)}, {"blobs", state_.scene.size()}};
}

json Session::cmd_undo(const json&) {
    require_idle("undo");
    if (undo_.empty()) throw CommandError(ErrorCode::nothing_to_undo, "undo stack is empty");
    auto [label, snap] = std::move(undo_.back());
    undo_.pop_back();
    redo_.emplace_back(label, std::move(state_));
    state_ = std::move(snap);
    return {{"undone", label}, {"stage", to_string(state_.stage)}, {"blobs", state_.scene.size()}};
}

json Session::cmd_redo(const json&) {
    require_idle("redo");
    if (redo_.empty()) throw CommandError(ErrorCode::nothing_to_undo, "redo stack is empty");
    auto [label, snap] = std::move(redo_.back());
    redo_.pop_back();
    undo_.emplace_back(label, std::move(state_));
    state_ = std::move(snap);
    return {{"redone", label}, {"stage", to_string(state_.stage)}, {"blobs", state_.scene.size()}};
}

// ---- snapshots and persistence -------------------------------------------------

FrameSource Session::frame_source() const {
    FrameSource s;
    s.generation = generation_;
    s.stage = state_.stage;
    s.volume = cfg_.frame_volume;
    s.scene = std::make_shared<const GaussianScene>(state_.stage == Stage::Distilling && state_.frozen ? *state_.frozen
                                                                                                       : state_.scene);
    if (state_.stage == Stage::StageII) {
        s.field = state_.field;
        s.occupancy = state_.occupancy;
        // A copy: the live field keeps changing while the frame renders.
        s.refined = std::make_shared<const RefinedField>(*state_.refined);
    }
    return s;
}

std::string Session::checkpoint() const {
    Container c;
    c.kind = kSessionCheckpointKind;
    c.version = kSessionCheckpointVersion;
    json regions = json::object();
    for (const auto& [id, r] : state_.regions) regions[id] = {{"center", vec3_to_json(r.center)}, {"radius", r.radius}};
    c.meta = {{"stage", to_string(state_.stage)},
              {"scene_generation", state_.scene.generation()},
              {"regions", regions},
              {"transition_psnr", state_.transition_psnr}};
    if (state_.selection)
        c.meta["selection"] = {{"indices", state_.selection->indices},
                               {"scene_generation", state_.selection->scene_generation},
                               {"scene_size", state_.selection->scene_size}};
    c.add("scene.blobs").floats = pack_scene(state_.scene);
    if (state_.frozen) c.add("frozen.blobs").floats = pack_scene(*state_.frozen);
    if (state_.field) {
        append_field(c, *state_.field, state_.occupancy.get());
        for (const auto& o : state_.refined->overlays()) append_overlay(c, o);
    }
    return encode_container(c);
}

void Session::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write '{}'", path.string()));
    const std::string bytes = checkpoint();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError(fmt::format("write failed: '{}'", path.string()));
}

void Session::restore(const std::string& bytes) {
    const Container c = decode_container(bytes, kSessionCheckpointKind, kSessionCheckpointVersion);
    SessionState s;
    s.stage = stage_from_string(c.meta.at("stage").get<std::string>());
    if (s.stage == Stage::Distilling) throw IoError("checkpoint taken mid-distillation");
    s.scene = unpack_scene(c.at("scene.blobs"), c.meta.value("scene_generation", std::uint64_t{0}));
    if (const auto* f = c.find("frozen.blobs")) s.frozen = std::make_shared<const GaussianScene>(unpack_scene(*f, 0));
    const json regions = c.meta.value("regions", json::object());
    for (const auto& [id, r] : regions.items())
        s.regions[id] = Region{vec3_from_json(r.at("center")), r.at("radius").get<double>()};
    s.transition_psnr = c.meta.value("transition_psnr", 0.0);
    if (c.meta.contains("selection")) {
        const json& j = c.meta.at("selection");
        PartSelection sel;
        sel.indices = j.at("indices").get<std::vector<std::size_t>>();
        sel.scene_generation = j.at("scene_generation").get<std::uint64_t>();
        sel.scene_size = j.at("scene_size").get<std::size_t>();
        s.selection = std::move(sel);
    }
    if (s.stage == Stage::StageII) {
        auto field = std::make_shared<const HashField>(field_from_container(c));
        auto occ = occupancy_from_container(c);
        if (!occ) throw IoError("stage II checkpoint without occupancy grid");
        s.field = field;
        s.occupancy = std::make_shared<const OccupancyGrid>(std::move(*occ));
        s.refined = std::make_shared<RefinedField>(field.get());
        s.refined->overlays() = overlays_from_container(c, *field);
    }
    push_undo("load");
    state_ = std::move(s);
}

Session Session::replay(const SessionConfig& cfg, const std::vector<LogEntry>& log, std::string id) {
    Session s(cfg, std::move(id));
    for (const auto& e : log) {
        const CommandResult r = s.apply_logged(e);
        if (!r.ok())
            throw InvalidArgument(fmt::format("replay failed at entry {} ({}): {} [{}]", e.seq,
                                              e.command.value("cmd", std::string("?")), r.message, to_string(r.code)));
    }
    return s;
}

} // namespace bf
