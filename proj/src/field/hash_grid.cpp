#include "blobforge/field/hash_grid.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

namespace bf {

std::vector<int> HashGridConfig::level_resolutions() const {
    if (!resolutions.empty()) return resolutions;
    std::vector<int> r(levels);
    const double b = levels > 1 ? std::exp((std::log(max_resolution) - std::log(base_resolution)) / (levels - 1)) : 1.0;
    for (int k = 0; k < levels; ++k)
        r[k] = static_cast<int>(std::floor(base_resolution * std::pow(b, k) + 1e-9));
    return r;
}

void HashGridConfig::validate() const {
    if (log2_table < 4 || log2_table > 30) throw InvalidArgument(fmt::format("table size 2^{} out of range", log2_table));
    if (feature_dim < 1) throw InvalidArgument("feature dimension must be positive");
    const auto r = level_resolutions();
    if (r.empty()) throw InvalidArgument("hash grid needs at least one level");
    for (std::size_t k = 0; k < r.size(); ++k) {
        if (r[k] < 1) throw InvalidArgument("level resolution must be positive");
        if (k > 0 && r[k] <= r[k - 1])
            throw InvalidArgument(fmt::format("level resolutions must increase strictly (level {}: {} after {})", k, r[k],
                                              r[k - 1]));
    }
}

HashGrid::HashGrid(const HashGridConfig& cfg, std::mt19937_64& rng, bool zero) : cfg_(cfg) {
    cfg_.validate();
    res_ = cfg_.level_resolutions();
    offset_.push_back(0);
    for (int r : res_) {
        const double corners = std::pow(static_cast<double>(r) + 1.0, 3.0);
        const bool d = corners <= static_cast<double>(capacity());
        dense_.push_back(d);
        rows_.push_back(d ? static_cast<std::size_t>(corners) : capacity());
        offset_.push_back(offset_.back() + rows_.back());
    }
    params_.assign(total_rows() * cfg_.feature_dim, 0.0);
    if (!zero && cfg_.init_range > 0.0) {
        std::uniform_real_distribution<double> u(-cfg_.init_range, cfg_.init_range);
        for (auto& v : params_) v = u(rng);
    }
}

std::uint32_t HashGrid::hash_index(const std::array<std::int64_t, 3>& c, int level) const {
    if (dense_[level]) {
        const std::uint64_t n = static_cast<std::uint64_t>(res_[level]) + 1;
        return static_cast<std::uint32_t>(static_cast<std::uint64_t>(c[0]) + n * (static_cast<std::uint64_t>(c[1]) + n * static_cast<std::uint64_t>(c[2])));
    }
    const std::uint64_t h = (static_cast<std::uint64_t>(c[0]) * 1u) ^ (static_cast<std::uint64_t>(c[1]) * 2654435761u) ^
                            (static_cast<std::uint64_t>(c[2]) * 805459861u);
    return static_cast<std::uint32_t>(h & (capacity() - 1));
}

HashGrid::Corners HashGrid::corners(const Vec3& u, int level) const {
    const int r = res_[level];
    std::array<std::int64_t, 3> base{};
    std::array<double, 3> f{};
    for (int a = 0; a < 3; ++a) {
        const double x = std::clamp(u[a], 0.0, 1.0) * r;
        const auto c = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(x)), r - 1);
        base[a] = c;
        f[a] = x - static_cast<double>(c);
    }
    Corners out;
    for (int k = 0; k < 8; ++k) {
        const std::array<std::int64_t, 3> c{base[0] + (k & 1), base[1] + ((k >> 1) & 1), base[2] + ((k >> 2) & 1)};
        out.row[k] = static_cast<std::uint32_t>(offset_[level] + hash_index(c, level));
        out.weight[k] = ((k & 1) ? f[0] : 1.0 - f[0]) * (((k >> 1) & 1) ? f[1] : 1.0 - f[1]) *
                        (((k >> 2) & 1) ? f[2] : 1.0 - f[2]);
    }
    return out;
}

void HashGrid::encode(const Vec3& u, std::span<double> out) const {
    const int d = cfg_.feature_dim;
    std::uint64_t reads = 0;
    for (int l = 0; l < levels(); ++l) {
        const Corners c = corners(u, l);
        for (int k = 0; k < d; ++k) out[l * d + k] = 0.0;
        for (int j = 0; j < 8; ++j) {
            if (c.weight[j] == 0.0) continue;
            const double* row = params_.data() + static_cast<std::size_t>(c.row[j]) * d;
            for (int k = 0; k < d; ++k) out[l * d + k] += c.weight[j] * row[k];
            ++reads;
        }
    }
    reads_.value.fetch_add(reads, std::memory_order_relaxed);
}

void HashGrid::encode(const Vec3& u, std::span<double> out, std::vector<Corners>& tape) const {
    const int d = cfg_.feature_dim;
    std::uint64_t reads = 0;
    tape.resize(levels());
    for (int l = 0; l < levels(); ++l) {
        tape[l] = corners(u, l);
        const Corners& c = tape[l];
        for (int k = 0; k < d; ++k) out[l * d + k] = 0.0;
        for (int j = 0; j < 8; ++j) {
            if (c.weight[j] == 0.0) continue;
            const double* row = params_.data() + static_cast<std::size_t>(c.row[j]) * d;
            for (int k = 0; k < d; ++k) out[l * d + k] += c.weight[j] * row[k];
            ++reads;
        }
    }
    reads_.value.fetch_add(reads, std::memory_order_relaxed);
}

void RowGradients::sort_touched() { std::sort(touched_.begin(), touched_.end()); }

void RowGradients::merge(const RowGradients& o) {
    if (o.log_) {
        for (const auto& e : o.entries_) add(e.row, e.k, e.v);
        return;
    }
    for (const auto r : o.touched_)
        for (int k = 0; k < width_; ++k) add(r, k, o.g_[static_cast<std::size_t>(r) * width_ + k]);
}

void RowGradients::scale(double s) {
    for (auto& e : entries_) e.v *= s;
    for (const auto r : touched_)
        for (int k = 0; k < width_; ++k) g_[static_cast<std::size_t>(r) * width_ + k] *= s;
}

void RowGradients::clear() {
    entries_.clear();
    for (const auto r : touched_) {
        mark_[r] = 0;
        for (int k = 0; k < width_; ++k) g_[static_cast<std::size_t>(r) * width_ + k] = 0.0;
    }
    touched_.clear();
}

} // namespace bf
