#pragma once

#include "blobforge/field/hash_grid.hpp"
#include "blobforge/field/mlp.hpp"

#include <span>
#include <vector>

namespace bf {

struct FieldSample {
    double sigma = 0.0;
    Vec3 rgb = Vec3::Zero();
};

/// Anything that can be volume rendered, meshed or used as a teacher.
class RadianceField {
public:
    virtual ~RadianceField() = default;
    [[nodiscard]] virtual FieldSample query(const Vec3& p, const Vec3& dir) const = 0;
    [[nodiscard]] virtual double density(const Vec3& p) const { return query(p, Vec3::UnitZ()).sigma; }
    [[nodiscard]] virtual Aabb bounds() const = 0;
};

/// Real spherical harmonics of a unit direction, bands 0..degree
/// ((degree + 1)^2 values, degree <= 3).
void sh_encode(const Vec3& dir, int degree, std::span<double> out);

struct HashFieldConfig {
    HashGridConfig grid;
    int hidden = 64;
    int geo_features = 16;  ///< density head outputs; the first is raw density
    int sh_degree = 3;      ///< 4 bands, 16 coefficients
    double density_bias = -1.0;
    Aabb bounds{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
    std::uint64_t seed = 0;

    void validate() const;
};

/// Per-step parameter gradients of a HashField.
struct HashFieldGradients {
    RowGradients table;
    std::vector<double> density;
    std::vector<double> color;

    void clear();
    void merge(const HashFieldGradients& o);
    void scale(double s);
};

/// Hash-grid encoding with a density head (softplus, biased) and a colour
/// head on geometry features plus SH-encoded view direction (sigmoid).
class HashField : public RadianceField {
public:
    HashField() = default;
    explicit HashField(const HashFieldConfig& cfg, bool zero_tables = false);

    [[nodiscard]] const HashFieldConfig& config() const { return cfg_; }
    [[nodiscard]] const HashGrid& grid() const { return grid_; }
    HashGrid& grid() { return grid_; }
    [[nodiscard]] const Mlp& density_mlp() const { return density_; }
    Mlp& density_mlp() { return density_; }
    [[nodiscard]] const Mlp& color_mlp() const { return color_; }
    Mlp& color_mlp() { return color_; }

    /// Position mapped to [0,1]^3 over the bounds (not clamped).
    [[nodiscard]] Vec3 normalize(const Vec3& p) const;

    [[nodiscard]] FieldSample query(const Vec3& p, const Vec3& dir) const override;
    [[nodiscard]] double density(const Vec3& p) const override;
    [[nodiscard]] Aabb bounds() const override { return cfg_.bounds; }

    /// Pre-activation outputs: sigma = softplus(sigma_pre), rgb = sigmoid(rgb_pre).
    struct Raw {
        double sigma_pre = 0.0;
        Vec3 rgb_pre = Vec3::Zero();
    };
    [[nodiscard]] Raw query_raw(const Vec3& p, const Vec3& dir) const;

    /// Forward pass keeping what backward needs. Reuse one tape to avoid allocations.
    struct Tape {
        std::vector<HashGrid::Corners> corners;
        std::vector<double> features, geo, color_in;
        Mlp::Tape density, color;
        Raw raw;
        FieldSample out;
    };
    FieldSample forward(const Vec3& p, const Vec3& dir, Tape& tape) const;
    /// Accumulates gradients given dL/dsigma and dL/drgb.
    void backward(const Tape& tape, double dsigma, const Vec3& drgb, HashFieldGradients& g) const;
    /// Same, but taking gradients with respect to the pre-activation outputs.
    void backward_raw(const Tape& tape, double dsigma_pre, const Vec3& drgb_pre, HashFieldGradients& g) const;

    [[nodiscard]] HashFieldGradients make_gradients() const;
    /// Gradients whose table part only logs entries (cheap per-chunk partials).
    [[nodiscard]] HashFieldGradients make_chunk_gradients() const;

    bool operator==(const HashField& o) const {
        return grid_ == o.grid_ && density_ == o.density_ && color_ == o.color_;
    }

private:
    HashFieldConfig cfg_;
    HashGrid grid_;
    Mlp density_, color_;
};

} // namespace bf
