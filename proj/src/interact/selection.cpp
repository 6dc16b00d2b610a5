#include "blobforge/interact/selection.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

namespace bf {

bool PartSelection::contains(std::size_t i) const { return std::binary_search(indices.begin(), indices.end(), i); }

void PartSelection::require_valid(const GaussianScene& scene) const {
    if (!valid_for(scene))
        throw StaleSelection(fmt::format("selection made at generation {} ({} blobs), scene is at generation {} ({} blobs)",
                                         scene_generation, scene_size, scene.generation(), scene.size()));
}

namespace {
PartSelection make(const GaussianScene& scene) {
    PartSelection s;
    s.scene_generation = scene.generation();
    s.scene_size = scene.size();
    return s;
}
} // namespace

PartSelection select_sphere(const GaussianScene& scene, const Vec3& center, double radius) {
    if (!(radius > 0.0)) throw InvalidArgument(fmt::format("select_sphere: radius {} must be positive", radius));
    PartSelection s = make(scene);
    s.provenance = SphereProvenance{center, radius};
    for (std::size_t i = 0; i < scene.size(); ++i)
        if ((scene[i].position.cast<double>() - center).norm() <= radius) s.indices.push_back(i);
    return s;
}

PartSelection select_by_masks(const GaussianScene& scene, std::span<const MaskView> views) {
    if (views.empty()) throw InvalidArgument("select_by_masks: at least one view is required");
    MaskProvenance prov;
    prov.views = views.size();
    for (const auto& v : views) {
        v.camera.validate();
        if (v.mask.width != v.camera.width || v.mask.height != v.camera.height)
            throw InvalidArgument(fmt::format("select_by_masks: mask '{}' is {}x{} but its camera is {}x{}", v.id,
                                              v.mask.width, v.mask.height, v.camera.width, v.camera.height));
        if (v.mask.channels < 1) throw InvalidArgument("select_by_masks: mask has no channels");
        prov.mask_ids.push_back(v.id);
    }
    PartSelection s = make(scene);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3 p = scene[i].position.cast<double>();
        const bool inside_all = std::all_of(views.begin(), views.end(), [&](const MaskView& v) {
            const Vec3 c = v.camera.to_camera(p);
            if (!(c.z() > v.camera.near)) return false;
            const Vec2 uv = v.camera.project(c);
            const double fx = std::floor(uv.x()), fy = std::floor(uv.y());
            if (fx < 0 || fy < 0 || fx >= v.camera.width || fy >= v.camera.height) return false;
            return v.mask.at(static_cast<int>(fx), static_cast<int>(fy), 0) >= 0.5;
        });
        if (inside_all) s.indices.push_back(i);
    }
    s.provenance = std::move(prov);
    return s;
}

PartSelection select_indices(const GaussianScene& scene, std::vector<std::size_t> indices) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    if (!indices.empty() && indices.back() >= scene.size())
        throw InvalidArgument(fmt::format("selection index {} out of range ({} blobs)", indices.back(), scene.size()));
    PartSelection s = make(scene);
    s.indices = std::move(indices);
    return s;
}

PartSelection remap_selection(const PartSelection& sel, const DensifyResult& densified) {
    PartSelection out = sel;
    out.indices.clear();
    for (std::size_t i = 0; i < densified.parent.size(); ++i) {
        const auto p = densified.parent[i];
        if (p >= 0 && sel.contains(static_cast<std::size_t>(p))) out.indices.push_back(i);
    }
    out.scene_generation = densified.scene.generation();
    out.scene_size = densified.scene.size();
    return out;
}

GradientGate gate_gradients(const PartSelection& part, const GaussianScene& scene) {
    part.require_valid(scene);
    GradientGate g;
    g.mask.assign(scene.size(), 0);
    for (const auto i : part.indices) g.mask[i] = 1;
    return g;
}

Aabb part_bounds(const GaussianScene& scene, const PartSelection& part) {
    part.require_valid(scene);
    Aabb box;
    for (const auto i : part.indices) {
        const Vec3 p = scene[i].position.cast<double>();
        const Vec3 r = Vec3::Constant(3.0 * scene[i].max_sigma());
        box.extend(p - r);
        box.extend(p + r);
    }
    return box;
}

} // namespace bf
