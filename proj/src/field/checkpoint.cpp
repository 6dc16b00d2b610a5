#include "blobforge/field/checkpoint.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/splat/camera_json.hpp"

#include <fmt/core.h>

namespace bf {

using nlohmann::json;

json field_config_to_json(const HashFieldConfig& cfg) {
    return {{"levels", cfg.grid.levels},
            {"base_resolution", cfg.grid.base_resolution},
            {"max_resolution", cfg.grid.max_resolution},
            {"log2_table", cfg.grid.log2_table},
            {"feature_dim", cfg.grid.feature_dim},
            {"resolutions", cfg.grid.level_resolutions()},
            {"init_range", cfg.grid.init_range},
            {"hidden", cfg.hidden},
            {"geo_features", cfg.geo_features},
            {"sh_degree", cfg.sh_degree},
            {"density_bias", cfg.density_bias},
            {"bounds_lo", vec3_to_json(cfg.bounds.lo)},
            {"bounds_hi", vec3_to_json(cfg.bounds.hi)},
            {"seed", cfg.seed}};
}

HashFieldConfig field_config_from_json(const json& j) {
    HashFieldConfig c;
    try {
        c.grid.levels = j.value("levels", c.grid.levels);
        c.grid.base_resolution = j.value("base_resolution", c.grid.base_resolution);
        c.grid.max_resolution = j.value("max_resolution", c.grid.max_resolution);
        c.grid.log2_table = j.value("log2_table", c.grid.log2_table);
        c.grid.feature_dim = j.value("feature_dim", c.grid.feature_dim);
        if (j.contains("resolutions")) c.grid.resolutions = j["resolutions"].get<std::vector<int>>();
        c.grid.init_range = j.value("init_range", c.grid.init_range);
        c.hidden = j.value("hidden", c.hidden);
        c.geo_features = j.value("geo_features", c.geo_features);
        c.sh_degree = j.value("sh_degree", c.sh_degree);
        c.density_bias = j.value("density_bias", c.density_bias);
        if (j.contains("bounds_lo")) c.bounds.lo = vec3_from_json(j["bounds_lo"]);
        if (j.contains("bounds_hi")) c.bounds.hi = vec3_from_json(j["bounds_hi"]);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed field config: ") + e.what());
    }
    if (!c.grid.resolutions.empty()) c.grid.levels = static_cast<int>(c.grid.resolutions.size());
    c.validate();
    return c;
}

void append_field(Container& c, const HashField& field, const OccupancyGrid* occ) {
    c.meta["field"] = field_config_to_json(field.config());
    c.meta["field"]["density_mlp"] = field.density_mlp().dims();
    c.meta["field"]["color_mlp"] = field.color_mlp().dims();
    c.add("field.tables").floats = to_float32(field.grid().params());
    c.add("field.density_mlp").floats = to_float32(field.density_mlp().params());
    c.add("field.color_mlp").floats = to_float32(field.color_mlp().params());
    if (occ) {
        auto& s = c.add("field.occupancy");
        s.meta = {{"resolution", occ->resolution}, {"threshold", occ->threshold},
                  {"bounds_lo", vec3_to_json(occ->bounds.lo)}, {"bounds_hi", vec3_to_json(occ->bounds.hi)}};
        s.bytes = occ->bits;
    }
}

HashField field_from_container(const Container& c) {
    if (!c.meta.contains("field")) throw IoError("checkpoint has no field header");
    const json& fj = c.meta["field"];
    HashField f(field_config_from_json(fj), true);
    if (fj.contains("density_mlp") && fj["density_mlp"].get<std::vector<int>>() != f.density_mlp().dims())
        throw IoError("density MLP shape in checkpoint does not match its config");
    if (fj.contains("color_mlp") && fj["color_mlp"].get<std::vector<int>>() != f.color_mlp().dims())
        throw IoError("colour MLP shape in checkpoint does not match its config");
    from_float32(c.at("field.tables").floats, f.grid().params());
    from_float32(c.at("field.density_mlp").floats, f.density_mlp().params());
    from_float32(c.at("field.color_mlp").floats, f.color_mlp().params());
    return f;
}

std::optional<OccupancyGrid> occupancy_from_container(const Container& c) {
    const auto* s = c.find("field.occupancy");
    if (!s) return std::nullopt;
    OccupancyGrid g;
    g.resolution = s->meta.at("resolution").get<int>();
    g.threshold = s->meta.at("threshold").get<double>();
    g.bounds.lo = vec3_from_json(s->meta.at("bounds_lo"));
    g.bounds.hi = vec3_from_json(s->meta.at("bounds_hi"));
    if (s->bytes.size() != static_cast<std::size_t>(g.resolution) * g.resolution * g.resolution)
        throw IoError("occupancy bitmap size does not match its resolution");
    g.bits = s->bytes;
    return g;
}

void save_field(const std::filesystem::path& path, const HashField& field, const OccupancyGrid* occ) {
    Container c;
    c.kind = kFieldCheckpointKind;
    c.version = kFieldCheckpointVersion;
    append_field(c, field, occ);
    write_container(path, c);
}

HashField load_field(const std::filesystem::path& path) {
    return field_from_container(read_container(path, kFieldCheckpointKind, kFieldCheckpointVersion));
}

void quantize_to_float32(HashField& field) {
    for (auto& v : field.grid().params()) v = static_cast<float>(v);
    for (auto& v : field.density_mlp().params()) v = static_cast<float>(v);
    for (auto& v : field.color_mlp().params()) v = static_cast<float>(v);
}

} // namespace bf
