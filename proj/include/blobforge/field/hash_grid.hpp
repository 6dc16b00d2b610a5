#pragma once

#include "blobforge/core/math.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace bf {

struct HashGridConfig {
    int levels = 16;
    int base_resolution = 16;
    int max_resolution = 2048;
    int log2_table = 19;  ///< table capacity 2^log2_table rows per level
    int feature_dim = 2;
    /// Explicit per-level resolutions; overrides the geometric progression.
    std::vector<int> resolutions;
    double init_range = 1e-4; ///< table entries start uniform in +-init_range

    /// R_k = floor(base * b^k), b = (max / base)^(1 / (levels - 1)), or the explicit list.
    [[nodiscard]] std::vector<int> level_resolutions() const;
    /// Throws InvalidArgument on non-increasing resolutions or bad sizes.
    void validate() const;
};

/// Multi-level grid whose corner features live in per-level tables. Levels
/// whose (R+1)^3 corners fit the capacity are stored densely (row-major),
/// others through a spatial hash.
class HashGrid {
public:
    HashGrid() = default;
    HashGrid(const HashGridConfig& cfg, std::mt19937_64& rng, bool zero = false);

    [[nodiscard]] const HashGridConfig& config() const { return cfg_; }
    [[nodiscard]] int levels() const { return static_cast<int>(res_.size()); }
    [[nodiscard]] int feature_dim() const { return cfg_.feature_dim; }
    [[nodiscard]] int output_dim() const { return levels() * cfg_.feature_dim; }
    [[nodiscard]] int resolution(int level) const { return res_[level]; }
    [[nodiscard]] bool dense(int level) const { return dense_[level]; }
    [[nodiscard]] std::uint64_t capacity() const { return std::uint64_t{1} << cfg_.log2_table; }
    /// Rows actually allocated for a level (dense levels need fewer than the capacity).
    [[nodiscard]] std::size_t rows(int level) const { return rows_[level]; }
    [[nodiscard]] std::size_t row_offset(int level) const { return offset_[level]; }
    [[nodiscard]] std::size_t total_rows() const { return offset_.back(); }

    /// Row of a grid corner: row-major x + y(R+1) + z(R+1)^2 for dense levels,
    /// (x*1 ^ y*2654435761 ^ z*805459861) mod 2^T otherwise.
    [[nodiscard]] std::uint32_t hash_index(const std::array<std::int64_t, 3>& corner, int level) const;

    /// Flat features, total_rows() x feature_dim.
    [[nodiscard]] std::span<const double> params() const { return params_; }
    [[nodiscard]] std::span<double> params() { return params_; }

    /// Trilinear corner weights and global rows for one level.
    struct Corners {
        std::array<std::uint32_t, 8> row; ///< global row (level offset included)
        std::array<double, 8> weight;
    };
    /// `u` is the position normalised to [0,1]^3 (clamped).
    [[nodiscard]] Corners corners(const Vec3& u, int level) const;

    /// Concatenated per-level features at normalised position u (output_dim values).
    void encode(const Vec3& u, std::span<double> out) const;
    /// Same, recording the corners used so backward can scatter gradients.
    void encode(const Vec3& u, std::span<double> out, std::vector<Corners>& tape) const;

    /// Counts reads of table rows (for access-trace instrumentation).
    [[nodiscard]] std::uint64_t reads() const { return reads_.value.load(); }
    void reset_reads() { reads_.value.store(0); }

    bool operator==(const HashGrid& o) const { return res_ == o.res_ && params_ == o.params_; }

private:
    HashGridConfig cfg_;
    std::vector<int> res_;
    std::vector<bool> dense_;
    std::vector<std::size_t> rows_, offset_;
    std::vector<double> params_;
    struct Counter {
        std::atomic<std::uint64_t> value{0};
        Counter() = default;
        Counter(const Counter& o) : value(o.value.load()) {}
        Counter& operator=(const Counter& o) {
            value.store(o.value.load());
            return *this;
        }
    };
    mutable Counter reads_;
};

/// Sparse accumulator for table gradients: a dense buffer plus the list of
/// rows touched since the last clear, so clearing costs O(touched).
/// A log-mode accumulator (see log()) only records (row, k, value) entries in
/// order; merging it into a dense one replays them, which keeps per-chunk
/// partial gradients cheap and the reduction order fixed.
class RowGradients {
public:
    RowGradients() = default;
    RowGradients(std::size_t rows, int width) : width_(width), g_(rows * width, 0.0), mark_(rows, 0) {}
    static RowGradients log(int width) {
        RowGradients r;
        r.width_ = width;
        r.log_ = true;
        return r;
    }

    void add(std::uint32_t row, int k, double v) {
        if (log_) {
            entries_.push_back({row, k, v});
            return;
        }
        if (!mark_[row]) {
            mark_[row] = 1;
            touched_.push_back(row);
        }
        g_[static_cast<std::size_t>(row) * width_ + k] += v;
    }
    [[nodiscard]] bool is_log() const { return log_; }
    [[nodiscard]] std::span<const double> values() const { return g_; }
    [[nodiscard]] std::span<const std::uint32_t> touched() const { return touched_; }
    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] std::size_t rows() const { return mark_.size(); }
    /// Sorts touched rows (deterministic optimizer order).
    void sort_touched();
    void merge(const RowGradients& o);
    void scale(double s);
    void clear();

private:
    struct Entry {
        std::uint32_t row;
        int k;
        double v;
    };
    int width_ = 0;
    bool log_ = false;
    std::vector<double> g_;
    std::vector<std::uint8_t> mark_;
    std::vector<std::uint32_t> touched_;
    std::vector<Entry> entries_;
};

} // namespace bf
