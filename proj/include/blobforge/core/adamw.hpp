#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bf {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
    double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam over one parameter block.
class AdamW {
public:
    AdamW() = default;
    AdamW(std::size_t size, AdamWOptions opts) : opts_(opts), m_(size, 0.0), v_(size, 0.0) {}

    [[nodiscard]] const AdamWOptions& options() const { return opts_; }
    AdamWOptions& options() { return opts_; }
    [[nodiscard]] std::size_t size() const { return m_.size(); }
    [[nodiscard]] std::int64_t steps() const { return step_; }

    /// Dense step over every coordinate.
    void step(std::span<double> params, std::span<const double> grads);

    /// Step touching only the given rows of a row-major [rows x row_width] block
    /// (lazy update for sparse hash-table gradients). Untouched rows keep their
    /// parameters and moments.
    void step_rows(std::span<double> params, std::span<const double> grads,
                   std::span<const std::uint32_t> rows, std::size_t row_width);

    /// Step restricted to coordinates whose mask entry is non-zero.
    void step_masked(std::span<double> params, std::span<const double> grads,
                     std::span<const std::uint8_t> mask);

    void resize(std::size_t size);
    /// Rebuilds moments after a structural change; origin[i] is the old index of
    /// new element i or -1 for fresh state. Element width is `width` scalars.
    void remap(std::span<const std::int64_t> origin, std::size_t width);

    [[nodiscard]] std::span<const double> first_moment() const { return m_; }
    [[nodiscard]] std::span<const double> second_moment() const { return v_; }
    void set_state(std::vector<double> m, std::vector<double> v, std::int64_t step);

private:
    void update(double& p, double g, double& m, double& v, double bc1, double bc2) const;

    AdamWOptions opts_{};
    std::vector<double> m_;
    std::vector<double> v_;
    std::int64_t step_ = 0;
};

} // namespace bf
