#include "blobforge/core/error.hpp"
#include "blobforge/session/session.hpp"

#include <fmt/core.h>

#include <fstream>

namespace bf {

using nlohmann::json;

namespace {

json cameras_json(const CameraDistribution& d) {
    return {{"elevation_min", d.elevation_min}, {"elevation_max", d.elevation_max}, {"azimuth_min", d.azimuth_min},
            {"azimuth_max", d.azimuth_max},     {"radius_min", d.radius_min},       {"radius_max", d.radius_max},
            {"fov_y", d.fov_y},                 {"resolution", d.width}};
}

void read_cameras(const json& j, CameraDistribution& d) {
    j.at("elevation_min").get_to(d.elevation_min);
    j.at("elevation_max").get_to(d.elevation_max);
    j.at("azimuth_min").get_to(d.azimuth_min);
    j.at("azimuth_max").get_to(d.azimuth_max);
    j.at("radius_min").get_to(d.radius_min);
    j.at("radius_max").get_to(d.radius_max);
    j.at("fov_y").get_to(d.fov_y);
    d.width = d.height = j.at("resolution").get<int>();
}

json adam_json(const AdamWOptions& a) {
    return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

void read_adam(const json& j, AdamWOptions& a) {
    j.at("lr").get_to(a.lr);
    j.at("beta1").get_to(a.beta1);
    j.at("beta2").get_to(a.beta2);
    j.at("eps").get_to(a.eps);
    j.at("weight_decay").get_to(a.weight_decay);
}

json schedule_json(const TSchedule& t) { return {{"start", t.start}, {"end", t.end}}; }

void read_schedule(const json& j, TSchedule& t) {
    j.at("start").get_to(t.start);
    j.at("end").get_to(t.end);
}

/// Overlays `user` onto `base`, rejecting keys `base` does not have.
void merge_known(json& base, const json& user, const std::string& where) {
    if (!user.is_object()) throw InvalidArgument(fmt::format("config: '{}' must be an object", where));
    for (const auto& [key, value] : user.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw InvalidArgument(fmt::format("config: unknown key '{}'", path));
        if (base[key].is_object())
            merge_known(base[key], value, path);
        else
            base[key] = value;
    }
}

} // namespace

json session_config_to_json(const SessionConfig& c) {
    const auto& g = c.field.grid;
    const auto& d = c.distill;
    const auto& o = c.overlay;
    const auto& r = c.refine;
    const auto& dr = c.drag;
    const auto& lr = c.edit_optimizer.lr;
    return {
        {"seed", c.seed},
        {"undo_depth", c.undo_depth},
        {"psnr_floor", c.psnr_floor},
        {"field",
         {{"levels", g.levels},
          {"base_resolution", g.base_resolution},
          {"max_resolution", g.max_resolution},
          {"log2_table", g.log2_table},
          {"feature_dim", g.feature_dim},
          {"hidden", c.field.hidden},
          {"geo_features", c.field.geo_features},
          {"sh_degree", c.field.sh_degree},
          {"density_bias", c.field.density_bias}}},
        {"distill",
         {{"steps", d.steps},
          {"cameras_per_step", d.cameras_per_step},
          {"rays_per_camera", d.rays_per_camera},
          {"lr", d.lr},
          {"lr_final", d.lr_final},
          {"adam", adam_json(d.adam)},
          {"cameras", cameras_json(d.cameras)},
          {"occupancy_interval", d.occupancy_interval},
          {"occupancy_threshold", d.occupancy_threshold},
          {"eval_interval", d.eval_interval},
          {"heldout_cameras", d.heldout_cameras},
          {"cache_teacher", d.cache_teacher},
          {"cache_bin_degrees", d.cache_bin_degrees},
          {"cache_bin_radius", d.cache_bin_radius},
          {"cache_capacity", d.cache_capacity},
          {"divergence_window", d.divergence_window},
          {"divergence_factor", d.divergence_factor}}},
        {"overlay",
         {{"levels", o.levels},
          {"feature_dim", o.feature_dim},
          {"log2_table", o.log2_table},
          {"growth", o.growth},
          {"hidden", o.hidden},
          {"init_range", o.init_range},
          {"memory_budget_mib", o.memory_budget >> 20}}},
        {"refine",
         {{"steps", r.steps},
          {"views_per_step", r.views_per_step},
          {"adam", adam_json(r.adam)},
          {"t_schedule", schedule_json(r.t_schedule)},
          {"cameras", cameras_json(r.cameras)}}},
        {"drag",
         {{"mode", to_string(dr.mode)},
          {"alpha", dr.alpha},
          {"epsilon", dr.epsilon},
          {"weights", {{"motion", dr.weights.motion}, {"rigid", dr.weights.rigid}, {"guidance", dr.weights.guidance}}},
          {"max_steps", dr.max_steps},
          {"densify_interval", dr.densify_interval},
          {"views_per_step", dr.views_per_step},
          {"t_schedule", schedule_json(dr.t_schedule)},
          {"cameras", cameras_json(dr.cameras)},
          {"optimizer",
           {{"beta1", dr.optimizer.beta1},
            {"beta2", dr.optimizer.beta2},
            {"weight_decay", dr.optimizer.weight_decay},
            {"eps", dr.optimizer.eps}}}}},
        {"edit",
         {{"cameras", cameras_json(c.edit_cameras)},
          {"lr",
           {{"position", lr.position},
            {"scale", lr.scale},
            {"rotation", lr.rotation},
            {"color", lr.color},
            {"opacity", lr.opacity}}}}},
        {"mesh", {{"resolution", c.mesh.resolution}, {"iso", c.mesh.iso_level}, {"max_resolution", c.mesh.max_resolution}}},
        {"frame", {{"step", c.frame_volume.step}}},
    };
}

SessionConfig session_config_from_json(const json& user) {
    json j = session_config_to_json(SessionConfig{});
    merge_known(j, user, "");
    SessionConfig c;
    j.at("seed").get_to(c.seed);
    j.at("undo_depth").get_to(c.undo_depth);
    j.at("psnr_floor").get_to(c.psnr_floor);

    const json& f = j.at("field");
    f.at("levels").get_to(c.field.grid.levels);
    f.at("base_resolution").get_to(c.field.grid.base_resolution);
    f.at("max_resolution").get_to(c.field.grid.max_resolution);
    f.at("log2_table").get_to(c.field.grid.log2_table);
    f.at("feature_dim").get_to(c.field.grid.feature_dim);
    f.at("hidden").get_to(c.field.hidden);
    f.at("geo_features").get_to(c.field.geo_features);
    f.at("sh_degree").get_to(c.field.sh_degree);
    f.at("density_bias").get_to(c.field.density_bias);

    const json& d = j.at("distill");
    d.at("steps").get_to(c.distill.steps);
    d.at("cameras_per_step").get_to(c.distill.cameras_per_step);
    d.at("rays_per_camera").get_to(c.distill.rays_per_camera);
    d.at("lr").get_to(c.distill.lr);
    d.at("lr_final").get_to(c.distill.lr_final);
    read_adam(d.at("adam"), c.distill.adam);
    read_cameras(d.at("cameras"), c.distill.cameras);
    d.at("occupancy_interval").get_to(c.distill.occupancy_interval);
    d.at("occupancy_threshold").get_to(c.distill.occupancy_threshold);
    d.at("eval_interval").get_to(c.distill.eval_interval);
    d.at("heldout_cameras").get_to(c.distill.heldout_cameras);
    d.at("cache_teacher").get_to(c.distill.cache_teacher);
    d.at("cache_bin_degrees").get_to(c.distill.cache_bin_degrees);
    d.at("cache_bin_radius").get_to(c.distill.cache_bin_radius);
    d.at("cache_capacity").get_to(c.distill.cache_capacity);
    d.at("divergence_window").get_to(c.distill.divergence_window);
    d.at("divergence_factor").get_to(c.distill.divergence_factor);

    const json& o = j.at("overlay");
    o.at("levels").get_to(c.overlay.levels);
    o.at("feature_dim").get_to(c.overlay.feature_dim);
    o.at("log2_table").get_to(c.overlay.log2_table);
    o.at("growth").get_to(c.overlay.growth);
    o.at("hidden").get_to(c.overlay.hidden);
    o.at("init_range").get_to(c.overlay.init_range);
    c.overlay.memory_budget = o.at("memory_budget_mib").get<std::size_t>() << 20;

    const json& r = j.at("refine");
    r.at("steps").get_to(c.refine.steps);
    r.at("views_per_step").get_to(c.refine.views_per_step);
    read_adam(r.at("adam"), c.refine.adam);
    read_schedule(r.at("t_schedule"), c.refine.t_schedule);
    read_cameras(r.at("cameras"), c.refine.cameras);

    const json& dr = j.at("drag");
    c.drag.mode = drag_mode_from_string(dr.at("mode").get<std::string>());
    dr.at("alpha").get_to(c.drag.alpha);
    dr.at("epsilon").get_to(c.drag.epsilon);
    dr.at("weights").at("motion").get_to(c.drag.weights.motion);
    dr.at("weights").at("rigid").get_to(c.drag.weights.rigid);
    dr.at("weights").at("guidance").get_to(c.drag.weights.guidance);
    dr.at("max_steps").get_to(c.drag.max_steps);
    dr.at("densify_interval").get_to(c.drag.densify_interval);
    dr.at("views_per_step").get_to(c.drag.views_per_step);
    read_schedule(dr.at("t_schedule"), c.drag.t_schedule);
    read_cameras(dr.at("cameras"), c.drag.cameras);
    dr.at("optimizer").at("beta1").get_to(c.drag.optimizer.beta1);
    dr.at("optimizer").at("beta2").get_to(c.drag.optimizer.beta2);
    dr.at("optimizer").at("weight_decay").get_to(c.drag.optimizer.weight_decay);
    dr.at("optimizer").at("eps").get_to(c.drag.optimizer.eps);

    const json& e = j.at("edit");
    read_cameras(e.at("cameras"), c.edit_cameras);
    e.at("lr").at("position").get_to(c.edit_optimizer.lr.position);
    e.at("lr").at("scale").get_to(c.edit_optimizer.lr.scale);
    e.at("lr").at("rotation").get_to(c.edit_optimizer.lr.rotation);
    e.at("lr").at("color").get_to(c.edit_optimizer.lr.color);
    e.at("lr").at("opacity").get_to(c.edit_optimizer.lr.opacity);

    j.at("mesh").at("resolution").get_to(c.mesh.resolution);
    j.at("mesh").at("iso").get_to(c.mesh.iso_level);
    j.at("mesh").at("max_resolution").get_to(c.mesh.max_resolution);
    j.at("frame").at("step").get_to(c.frame_volume.step);
    c.validate();
    return c;
}

SessionConfig load_session_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError(fmt::format("cannot open config '{}'", path.string()));
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw InvalidArgument(fmt::format("config '{}': {}", path.string(), e.what()));
    }
    return session_config_from_json(j);
}

void SessionConfig::validate() const {
    if (undo_depth < 16) throw InvalidArgument(fmt::format("undo_depth must be at least 16 (got {})", undo_depth));
    HashFieldConfig fc = field;
    fc.validate();
    distill.validate();
    refine.validate();
    drag.cameras.validate();
    edit_cameras.validate();
    if (overlay.levels < 1 || overlay.feature_dim < 1 || overlay.log2_table < 1 || overlay.log2_table > 30)
        throw InvalidArgument("overlay: levels, feature_dim and log2_table must be positive (log2_table <= 30)");
    if (mesh.resolution < 1 || mesh.resolution > mesh.max_resolution)
        throw InvalidArgument("mesh: resolution must lie in [1, max_resolution]");
    if (occupancy_resolution != kOccupancyResolution)
        throw InvalidArgument(fmt::format("occupancy resolution is fixed at {}", kOccupancyResolution));
}

json SessionConfig::introspect() const {
    return {
        {"overlay",
         {{"levels", overlay.levels},
          {"feature_dim", overlay.feature_dim},
          {"log2_table", overlay.log2_table},
          {"table_capacity", std::uint64_t{1} << overlay.log2_table},
          {"growth", overlay.growth}}},
        {"optimizer",
         {{"type", "AdamW"},
          {"beta1", refine.adam.beta1},
          {"beta2", refine.adam.beta2},
          {"weight_decay", refine.adam.weight_decay},
          {"distill", adam_json(distill.adam)},
          {"refine", adam_json(refine.adam)},
          {"drag",
           {{"beta1", drag.optimizer.beta1}, {"beta2", drag.optimizer.beta2}, {"weight_decay", drag.optimizer.weight_decay}}}}},
        {"t_schedule", {{"start", refine.t_schedule.start}, {"end", refine.t_schedule.end}, {"drag", schedule_json(drag.t_schedule)}}},
        {"occupancy", {{"resolution", occupancy_resolution}, {"threshold", distill.occupancy_threshold}}},
        {"distill", {{"cameras_per_step", distill.cameras_per_step}, {"steps", distill.steps}, {"resolution", distill.cameras.width}}},
        {"drag", {{"rigid_weight", drag.weights.rigid}}},
        {"undo_depth", undo_depth},
        {"config", session_config_to_json(*this)},
    };
}

} // namespace bf
