#pragma once

#include "blobforge/splat/camera.hpp"

#include "json.hpp"

namespace bf {

nlohmann::json vec3_to_json(const Vec3& v);
Vec3 vec3_from_json(const nlohmann::json& j);

/// {"rotation": 9 row-major values, "translation": 3, "fx","fy","cx","cy","width","height","near","far"}
nlohmann::json camera_to_json(const Camera& c);
Camera camera_from_json(const nlohmann::json& j);

} // namespace bf
