#pragma once

#include "blobforge/core/error.hpp"
#include "blobforge/core/image.hpp"
#include "blobforge/splat/camera.hpp"
#include "blobforge/splat/render.hpp"
#include "blobforge/splat/scene.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace bf {

/// A selection was made against an older scene generation.
class StaleSelection : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

struct SphereProvenance {
    Vec3 center = Vec3::Zero();
    double radius = 0.0;
};

struct MaskProvenance {
    std::size_t views = 0;
    std::vector<std::string> mask_ids;
};

struct ExplicitProvenance {};

/// An activated part: sorted unique blob indices plus where they came from.
struct PartSelection {
    std::vector<std::size_t> indices;
    std::variant<ExplicitProvenance, SphereProvenance, MaskProvenance> provenance;
    std::uint64_t scene_generation = 0;
    std::size_t scene_size = 0;

    [[nodiscard]] bool empty() const { return indices.empty(); }
    [[nodiscard]] std::size_t size() const { return indices.size(); }
    [[nodiscard]] bool contains(std::size_t i) const;
    [[nodiscard]] bool valid_for(const GaussianScene& scene) const {
        return scene_generation == scene.generation() && scene_size == scene.size();
    }
    /// Throws StaleSelection when the scene changed structurally since selection.
    void require_valid(const GaussianScene& scene) const;
};

/// I(P) = { i : |mu_i - center| <= radius }, boundary inclusive.
PartSelection select_sphere(const GaussianScene& scene, const Vec3& center, double radius);

/// One view for mask selection: single-channel mask, values >= 0.5 are inside.
struct MaskView {
    Camera camera;
    Image mask;
    std::string id;
};

/// Blobs whose centre projects in front of the near plane, inside the image
/// and inside the mask in every view. Throws InvalidArgument on zero views or
/// a mask whose resolution differs from its camera.
PartSelection select_by_masks(const GaussianScene& scene, std::span<const MaskView> views);

/// Selection from explicit indices (sorted and de-duplicated; out of range throws).
PartSelection select_indices(const GaussianScene& scene, std::vector<std::size_t> indices);

/// Carries a selection through densify_and_prune: a blob is selected when the
/// blob it derives from was.
PartSelection remap_selection(const PartSelection& sel, const DensifyResult& densified);

/// Gate passing gradients only for selected blobs.
GradientGate gate_gradients(const PartSelection& part, const GaussianScene& scene);

/// Axis-aligned box of the selected centres inflated by each blob's 3-sigma
/// radius. Empty box for an empty selection.
Aabb part_bounds(const GaussianScene& scene, const PartSelection& part);

} // namespace bf
