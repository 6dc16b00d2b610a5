#pragma once

#include "blobforge/core/container.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/field/field.hpp"
#include "blobforge/field/occupancy.hpp"

#include <string>
#include <vector>

namespace bf {

/// Ball Q = { p : |p - center| <= radius }.
struct Region {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;

    [[nodiscard]] bool contains(const Vec3& p) const { return (p - center).norm() <= radius; }
    /// Throws InvalidArgument unless radius > 0 and everything is finite.
    void validate() const;
};

/// Voxels occupied in `occ` whose centre lies in the region (may be empty).
OccupancyGrid intersect_region(const OccupancyGrid& occ, const Region& region);

/// Thrown when a region holds no occupied voxel.
class EmptyPart : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

struct OverlayConfig {
    int levels = 8;
    int feature_dim = 2;
    int log2_table = 19;
    /// Level k (1-based) has resolution floor(start * growth^k), where start is
    /// the base field's finest resolution.
    double growth = 1.38;
    std::vector<int> resolutions; ///< explicit override
    int hidden = 32;
    double init_range = 1e-4;
    std::size_t memory_budget = std::size_t{1} << 30; ///< bytes: parameters plus optimizer moments
    std::uint64_t seed = 0;

    [[nodiscard]] std::vector<int> level_resolutions(int base_max_resolution) const;
    /// Bytes needed for tables and MLPs with two Adam moments each.
    [[nodiscard]] std::size_t memory_bytes(int base_max_resolution) const;
};

/// Part-specific hash tables plus residual density and colour heads. Only
/// points inside `part` ever read the tables; elsewhere the residual is zero.
class RefinementOverlay {
public:
    RefinementOverlay() = default;

    std::string id;
    bool enabled = true;
    OccupancyGrid part;
    HashGrid grid;
    Mlp dsigma; ///< part features -> pre-activation density residual
    Mlp drgb;   ///< part features -> colour residual
    Aabb bounds; ///< field bounds used to normalise positions
    OverlayConfig config;

    [[nodiscard]] bool covers(const Vec3& p) const { return enabled && part.occupied(p); }

    struct Residual {
        double sigma_pre = 0.0;
        Vec3 rgb = Vec3::Zero();
    };
    struct Tape {
        std::vector<HashGrid::Corners> corners;
        std::vector<double> features;
        Mlp::Tape sigma, rgb;
    };
    /// Residual at p; the caller must have checked covers(p).
    Residual forward(const Vec3& p, Tape& tape) const;
    Residual residual(const Vec3& p) const;

    [[nodiscard]] std::size_t parameter_count() const;
    bool operator==(const RefinementOverlay& o) const {
        return id == o.id && enabled == o.enabled && part == o.part && grid == o.grid && dsigma == o.dsigma &&
               drgb == o.drgb;
    }
};

struct OverlayGradients {
    RowGradients table;
    std::vector<double> dsigma, drgb;
    void clear();
    void merge(const OverlayGradients& o);
};

/// Throws EmptyPart on an empty part and InvalidArgument (with a sizing
/// report) when the configuration exceeds its memory budget.
RefinementOverlay build_overlay(const HashField& field, const OccupancyGrid& part, const OverlayConfig& cfg,
                                std::string id);

/// Base field plus overlays. sigma = softplus(base_pre + sum dsigma_pre),
/// rgb = clamp(base_rgb + sum drgb, 0, 1), summing only overlays covering p.
class RefinedField : public RadianceField {
public:
    RefinedField() = default;
    explicit RefinedField(const HashField* base) : base_(base) {}

    [[nodiscard]] const HashField& base() const { return *base_; }
    void set_base(const HashField* base) { base_ = base; }
    std::vector<RefinementOverlay>& overlays() { return overlays_; }
    [[nodiscard]] const std::vector<RefinementOverlay>& overlays() const { return overlays_; }
    RefinementOverlay* find(const std::string& id);

    [[nodiscard]] FieldSample query(const Vec3& p, const Vec3& dir) const override;
    [[nodiscard]] double density(const Vec3& p) const override;
    [[nodiscard]] Aabb bounds() const override { return base_->bounds(); }

    /// Differentiable with respect to one overlay's parameters (the base and
    /// every other overlay stay frozen).
    struct Tape {
        HashField::Tape base;
        RefinementOverlay::Tape overlay;
        bool active_covers = false;
        double sigma_pre = 0.0;
        Vec3 rgb_unclamped = Vec3::Zero();
        FieldSample out;
    };
    FieldSample forward(const Vec3& p, const Vec3& dir, Tape& tape, int active) const;
    void backward(const Tape& tape, double dsigma, const Vec3& drgb, OverlayGradients& g, int active) const;

private:
    const HashField* base_ = nullptr;
    std::vector<RefinementOverlay> overlays_;
};

/// Adapter exposing RefinedField as a differentiable model of overlay `active`.
struct OverlayModel {
    using Tape = RefinedField::Tape;
    const RefinedField& field;
    int active;
    FieldSample forward(const Vec3& p, const Vec3& dir, Tape& t) const { return field.forward(p, dir, t, active); }
    void backward(const Tape& t, double ds, const Vec3& dc, OverlayGradients& g) const {
        field.backward(t, ds, dc, g, active);
    }
};

/// Values narrowed to float32 as a checkpoint round trip would.
void quantize_to_float32(RefinementOverlay& o);

/// Overlay sections in a field container: "overlay.<id>.{tables,dsigma,drgb,part}".
void append_overlay(Container& c, const RefinementOverlay& o);
/// Every overlay stored in the container, in order.
std::vector<RefinementOverlay> overlays_from_container(const Container& c, const HashField& field);

} // namespace bf
