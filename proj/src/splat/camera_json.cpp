#include "blobforge/splat/camera_json.hpp"
#include "blobforge/core/error.hpp"

namespace bf {

nlohmann::json vec3_to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw InvalidArgument("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json camera_to_json(const Camera& c) {
    nlohmann::json r = nlohmann::json::array();
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) r.push_back(c.rotation(i, k));
    return {{"rotation", r}, {"translation", vec3_to_json(c.translation)},
            {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
            {"width", c.width}, {"height", c.height}, {"near", c.near}, {"far", c.far}};
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    try {
        if (j.contains("eye")) {
            // Convenience form: {"eye", "target", "fov_y" (radians), "width", "height"}
            const Vec3 up = j.contains("up") ? vec3_from_json(j["up"]) : Vec3(0, 1, 0);
            c = look_at(vec3_from_json(j.at("eye")), vec3_from_json(j.at("target")), up, j.value("fov_y", 0.7),
                        j.value("width", 64), j.value("height", 64), j.value("near", 0.01), j.value("far", 100.0));
            c.validate();
            return c;
        }
        const auto& r = j.at("rotation");
        if (r.size() != 9) throw InvalidArgument("camera rotation needs 9 values");
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) c.rotation(i, k) = r[i * 3 + k].get<double>();
        c.translation = vec3_from_json(j.at("translation"));
        c.fx = j.at("fx").get<double>();
        c.fy = j.at("fy").get<double>();
        c.cx = j.at("cx").get<double>();
        c.cy = j.at("cy").get<double>();
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
        c.near = j.at("near").get<double>();
        c.far = j.at("far").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed camera: ") + e.what());
    }
    c.validate();
    return c;
}

} // namespace bf
