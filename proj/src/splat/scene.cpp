#include "blobforge/splat/scene.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace bf {

Mat3 GaussianBlob::covariance() const {
    const Mat3 r = rotation_matrix();
    const Vec3 s2 = (2.0 * log_scale.cast<double>()).array().exp();
    return r * s2.asDiagonal() * r.transpose();
}

void pack_blob(const GaussianBlob& b, std::span<double, kBlobParams> out) {
    for (int k = 0; k < 3; ++k) out[k] = b.position[k];
    for (int k = 0; k < 4; ++k) out[3 + k] = b.rotation[k];
    for (int k = 0; k < 3; ++k) out[7 + k] = b.log_scale[k];
    out[10] = b.opacity_logit;
    for (int k = 0; k < 3; ++k) out[11 + k] = b.color[k];
}

void unpack_blob(std::span<const double, kBlobParams> in, GaussianBlob& b) {
    for (int k = 0; k < 3; ++k) b.position[k] = static_cast<float>(in[k]);
    for (int k = 0; k < 4; ++k) b.rotation[k] = static_cast<float>(in[3 + k]);
    for (int k = 0; k < 3; ++k) b.log_scale[k] = static_cast<float>(in[7 + k]);
    b.opacity_logit = static_cast<float>(in[10]);
    for (int k = 0; k < 3; ++k) b.color[k] = static_cast<float>(in[11 + k]);
}

GaussianScene::GaussianScene(std::vector<GaussianBlob> blobs, std::uint64_t generation)
    : blobs_(std::move(blobs)), generation_(generation) {
    refresh_extent();
}

void GaussianScene::assign(std::vector<GaussianBlob> blobs) {
    blobs_ = std::move(blobs);
    ++generation_;
    refresh_extent();
}

void GaussianScene::refresh_extent() {
    extent_ = Aabb{};
    for (const auto& b : blobs_) extent_.extend(b.position.cast<double>());
}

void GaussianScene::sanitize(double max_scale) {
    // Keep exp(scale) <= extent and opacity strictly inside (0,1) in float32.
    const float max_log = static_cast<float>(std::log(std::max(max_scale, 1e-6)));
    constexpr float kLogitLimit = 15.f;
    for (auto& b : blobs_) {
        const double n = b.rotation.cast<double>().norm();
        if (n > 0.0 && std::isfinite(n)) {
            b.rotation = (b.rotation.cast<double>() / n).cast<float>();
        } else {
            b.rotation = Vec4f(1.f, 0.f, 0.f, 0.f);
        }
        b.log_scale = b.log_scale.cwiseMin(max_log);
        b.opacity_logit = std::clamp(b.opacity_logit, -kLogitLimit, kLogitLimit);
        b.color = b.color.cwiseMax(0.f).cwiseMin(1.f);
    }
}

GaussianScene concat(const GaussianScene& a, const GaussianScene& b) {
    std::vector<GaussianBlob> blobs;
    blobs.reserve(a.size() + b.size());
    blobs.insert(blobs.end(), a.blobs().begin(), a.blobs().end());
    blobs.insert(blobs.end(), b.blobs().begin(), b.blobs().end());
    return GaussianScene(std::move(blobs), std::max(a.generation(), b.generation()) + 1);
}

GaussianScene remove(const GaussianScene& scene, std::span<const std::size_t> indices) {
    std::vector<std::uint8_t> drop(scene.size(), 0);
    for (const std::size_t i : indices) {
        if (i >= scene.size())
            throw InvalidArgument(fmt::format("remove: index {} out of range (scene has {} blobs)", i, scene.size()));
        drop[i] = 1;
    }
    if (indices.empty()) return scene;
    std::vector<GaussianBlob> kept;
    kept.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (!drop[i]) kept.push_back(scene[i]);
    return GaussianScene(std::move(kept), scene.generation() + 1);
}

void DensifyStats::accumulate(std::span<const double> screen_grad_norm) {
    if (screen_grad_norm.size() != sum_.size()) throw InvalidArgument("DensifyStats: size mismatch");
    for (std::size_t i = 0; i < sum_.size(); ++i) {
        if (screen_grad_norm[i] == 0.0) continue; // blob not visible in this view
        sum_[i] += screen_grad_norm[i];
        ++count_[i];
    }
}

std::vector<double> DensifyStats::mean() const {
    std::vector<double> m(sum_.size(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (count_[i] > 0) m[i] = sum_[i] / count_[i];
    return m;
}

void DensifyStats::reset(std::size_t n) {
    sum_.assign(n, 0.0);
    count_.assign(n, 0);
}

namespace {

/// Sample inside the parent's 3-sigma ellipsoid.
Vec3 sample_in_footprint(const GaussianBlob& b, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Vec3 z(nd(rng), nd(rng), nd(rng));
    if (z.norm() > 3.0) z *= 3.0 / z.norm();
    const Vec3 s = b.log_scale.cast<double>().array().exp();
    return b.position.cast<double>() + b.rotation_matrix() * (s.cwiseProduct(z));
}

} // namespace

DensifyResult densify_and_prune(const GaussianScene& scene, std::span<const double> mean_grad,
                                const DensifyOptions& opts, std::mt19937_64& rng) {
    if (mean_grad.size() != scene.size()) throw InvalidArgument("densify_and_prune: gradient accumulator size mismatch");
    const double extent = scene.extent().diagonal();
    const double split_log = std::log(opts.split_scale_divisor);

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (mean_grad[i] > opts.grad_threshold) candidates.push_back(i);
    // Strongest gradients first when the size cap bites.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return mean_grad[a] > mean_grad[b]; });

    std::vector<std::uint8_t> action(scene.size(), 0); // 1 clone, 2 split
    std::size_t projected = scene.size();
    for (const std::size_t i : candidates) {
        if (projected + 1 > opts.max_blobs) break;
        action[i] = scene[i].max_sigma() <= opts.percent_dense * extent ? 1 : 2;
        ++projected;
    }

    DensifyResult res;
    std::vector<GaussianBlob> out;
    std::vector<std::int64_t> origin, parent;
    out.reserve(projected);
    std::vector<GaussianBlob> added;
    std::vector<std::int64_t> added_parent;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const GaussianBlob& b = scene[i];
        if (action[i] == 2) {
            for (int c = 0; c < 2; ++c) {
                GaussianBlob child = b;
                child.position = sample_in_footprint(b, rng).cast<float>();
                child.log_scale = (b.log_scale.cast<double>().array() - split_log).cast<float>();
                added.push_back(child);
                added_parent.push_back(static_cast<std::int64_t>(i));
            }
            ++res.split;
            continue;
        }
        out.push_back(b);
        origin.push_back(static_cast<std::int64_t>(i));
        parent.push_back(static_cast<std::int64_t>(i));
        if (action[i] == 1) {
            added.push_back(b);
            added_parent.push_back(static_cast<std::int64_t>(i));
            ++res.cloned;
        }
    }
    for (std::size_t k = 0; k < added.size(); ++k) {
        out.push_back(added[k]);
        origin.push_back(-1);
        parent.push_back(added_parent[k]);
    }

    std::vector<GaussianBlob> kept;
    std::vector<std::int64_t> kept_origin, kept_parent;
    kept.reserve(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].opacity() < opts.opacity_threshold) {
            ++res.pruned;
            continue;
        }
        kept.push_back(out[i]);
        kept_origin.push_back(origin[i]);
        kept_parent.push_back(parent[i]);
    }
    if (res.cloned == 0 && res.split == 0 && res.pruned == 0) {
        res.scene = scene;
        res.origin.resize(scene.size());
        std::iota(res.origin.begin(), res.origin.end(), 0);
        res.parent = res.origin;
        return res;
    }
    res.scene = GaussianScene(std::move(kept), scene.generation() + 1);
    res.origin = std::move(kept_origin);
    res.parent = std::move(kept_parent);
    return res;
}

std::vector<double> nearest_neighbor_distances(std::span<const Vec3> points) {
    const std::size_t n = points.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    Aabb box;
    for (const auto& p : points) box.extend(p);
    const double side = std::max(box.size().maxCoeff(), 1e-9);
    const int res = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(n) / 2.0)));
    const double cell = side / res;
    auto cell_of = [&](const Vec3& p) {
        Eigen::Vector3i c = ((p - box.lo) / cell).array().floor().cast<int>();
        return c.cwiseMax(0).cwiseMin(res - 1).eval();
    };
    auto key = [res](int x, int y, int z) { return (static_cast<std::int64_t>(z) * res + y) * res + x; };
    std::unordered_map<std::int64_t, std::vector<std::size_t>> grid;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = cell_of(points[i]);
        grid[key(c.x(), c.y(), c.z())].push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = cell_of(points[i]);
        double best = std::numeric_limits<double>::infinity();
        for (int ring = 0; ring <= res; ++ring) {
            // Every point in rings <= `ring` has been seen; anything outside is
            // at least ring * cell away.
            for (int z = c.z() - ring; z <= c.z() + ring; ++z)
                for (int y = c.y() - ring; y <= c.y() + ring; ++y)
                    for (int x = c.x() - ring; x <= c.x() + ring; ++x) {
                        if (std::max({std::abs(x - c.x()), std::abs(y - c.y()), std::abs(z - c.z())}) != ring) continue;
                        if (x < 0 || y < 0 || z < 0 || x >= res || y >= res || z >= res) continue;
                        const auto it = grid.find(key(x, y, z));
                        if (it == grid.end()) continue;
                        for (const std::size_t j : it->second) {
                            if (j == i) continue;
                            best = std::min(best, (points[j] - points[i]).norm());
                        }
                    }
            if (best <= ring * cell) break;
        }
        out[i] = best;
    }
    return out;
}

GaussianScene scene_from_points(std::span<const Vec3> points, std::span<const Vec3> colors,
                                const PointInitOptions& opts) {
    if (!colors.empty() && colors.size() != points.size())
        throw InvalidArgument("scene_from_points: color count differs from point count");
    const auto nn = nearest_neighbor_distances(points);
    std::vector<GaussianBlob> blobs(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto& b = blobs[i];
        b.position = points[i].cast<float>();
        const double s = nn[i] > 0.0 && std::isfinite(nn[i]) ? nn[i] : 0.01;
        b.log_scale = Vec3f::Constant(static_cast<float>(std::log(s)));
        b.opacity_logit = static_cast<float>(logit(opts.opacity));
        b.color = (colors.empty() ? opts.color : colors[i]).cast<float>();
    }
    return GaussianScene(std::move(blobs));
}

GaussianScene init_uniform_sphere(std::mt19937_64& rng, std::size_t count, double radius, const Vec3& center,
                                  const PointInitOptions& opts) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vec3> pts;
    pts.reserve(count);
    while (pts.size() < count) {
        const Vec3 p(u(rng), u(rng), u(rng));
        if (p.squaredNorm() <= 1.0) pts.push_back(center + radius * p);
    }
    return scene_from_points(pts, {}, opts);
}

} // namespace bf
