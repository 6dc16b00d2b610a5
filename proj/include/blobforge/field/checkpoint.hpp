#pragma once

#include "blobforge/core/container.hpp"
#include "blobforge/field/field.hpp"
#include "blobforge/field/occupancy.hpp"

#include <optional>

namespace bf {

inline constexpr const char* kFieldCheckpointKind = "blobforge.field";
inline constexpr int kFieldCheckpointVersion = 1;

nlohmann::json field_config_to_json(const HashFieldConfig& cfg);
HashFieldConfig field_config_from_json(const nlohmann::json& j);

/// Adds the "field.*" sections (config, tables, both MLPs, optional occupancy).
void append_field(Container& c, const HashField& field, const OccupancyGrid* occ = nullptr);
HashField field_from_container(const Container& c);
std::optional<OccupancyGrid> occupancy_from_container(const Container& c);

void save_field(const std::filesystem::path& path, const HashField& field, const OccupancyGrid* occ = nullptr);
HashField load_field(const std::filesystem::path& path);

/// Values narrowed to float32 exactly as a checkpoint round trip would.
void quantize_to_float32(HashField& field);

} // namespace bf
