#include "blobforge/splat/render.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/core/parallel.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace bf {

namespace {

constexpr int kTile = 16;
constexpr std::size_t kRowsPerChunk = 4;

Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& t) {
    const double iz = 1.0 / t.z();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
    return j;
}

/// Per-blob data shared by forward and backward.
struct Splat {
    std::size_t index = 0;
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero(); ///< inverse of cov2d
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0; ///< inclusive pixel bounds of the cutoff ellipse
};

struct Prepared {
    std::vector<Splat> splats; ///< visible, sorted front to back
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> tiles; ///< indices into splats, in depth order
};

Prepared prepare(const GaussianScene& scene, const Camera& cam) {
    Prepared prep;
    const double cut2 = kCutoffSigma * kCutoffSigma;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const GaussianBlob& b = scene[i];
        const Projection p = project(b, cam);
        if (p.culled) continue;
        Splat s;
        s.index = i;
        s.mean = p.mean2d;
        s.conic = p.cov2d.inverse();
        s.opacity = b.opacity();
        s.color = b.color.cast<double>();
        s.depth = p.depth;
        const double rx = std::sqrt(cut2 * p.cov2d(0, 0));
        const double ry = std::sqrt(cut2 * p.cov2d(1, 1));
        // Pixel centres at x + 0.5 inside [mean - r, mean + r].
        const double fx0 = std::ceil(p.mean2d.x() - rx - 0.5), fx1 = std::floor(p.mean2d.x() + rx - 0.5);
        const double fy0 = std::ceil(p.mean2d.y() - ry - 0.5), fy1 = std::floor(p.mean2d.y() + ry - 0.5);
        if (fx1 < 0.0 || fy1 < 0.0 || fx0 > cam.width - 1 || fy0 > cam.height - 1 || fx0 > fx1 || fy0 > fy1) continue;
        s.x0 = static_cast<int>(std::max(0.0, fx0));
        s.x1 = static_cast<int>(std::min<double>(cam.width - 1, fx1));
        s.y0 = static_cast<int>(std::max(0.0, fy0));
        s.y1 = static_cast<int>(std::min<double>(cam.height - 1, fy1));
        prep.splats.push_back(s);
    }
    std::stable_sort(prep.splats.begin(), prep.splats.end(), [](const Splat& a, const Splat& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });
    prep.tiles_x = (cam.width + kTile - 1) / kTile;
    prep.tiles_y = (cam.height + kTile - 1) / kTile;
    prep.tiles.resize(static_cast<std::size_t>(prep.tiles_x) * prep.tiles_y);
    for (std::size_t k = 0; k < prep.splats.size(); ++k) {
        const Splat& s = prep.splats[k];
        for (int ty = s.y0 / kTile; ty <= s.y1 / kTile; ++ty)
            for (int tx = s.x0 / kTile; tx <= s.x1 / kTile; ++tx)
                prep.tiles[static_cast<std::size_t>(ty) * prep.tiles_x + tx].push_back(static_cast<std::uint32_t>(k));
    }
    return prep;
}

/// One blob's contribution at one pixel.
struct Hit {
    std::uint32_t splat = 0;
    double alpha = 0.0;
    double gauss = 0.0; ///< exp(-q/2)
    Vec2 d = Vec2::Zero();
    double transmittance = 1.0; ///< before this blob
};

/// Walks the depth-ordered list of blobs covering pixel (x, y).
template <typename Fn>
double composite_pixel(const Prepared& prep, int x, int y, Fn&& on_hit) {
    const double cut2 = kCutoffSigma * kCutoffSigma;
    const Vec2 pix(x + 0.5, y + 0.5);
    const auto& list = prep.tiles[static_cast<std::size_t>(y / kTile) * prep.tiles_x + x / kTile];
    double t = 1.0;
    for (const std::uint32_t k : list) {
        const Splat& s = prep.splats[k];
        if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
        const Vec2 d = pix - s.mean;
        const double q = d.dot(s.conic * d);
        if (q > cut2) continue;
        const double g = std::exp(-0.5 * q);
        const double a = s.opacity * g;
        on_hit(Hit{k, a, g, d, t});
        t *= 1.0 - a;
    }
    return t;
}

} // namespace

Projection project(const GaussianBlob& blob, const Camera& cam) {
    Projection p;
    const Vec3 t = cam.to_camera(blob.position.cast<double>());
    p.depth = t.z();
    if (t.z() < cam.near || t.z() > cam.far) return p;
    const auto j = projection_jacobian(cam, t);
    const Eigen::Matrix<double, 2, 3> jw = j * cam.rotation;
    p.cov2d = jw * blob.covariance() * jw.transpose();
    p.cov2d(0, 0) += kLowPassVariance;
    p.cov2d(1, 1) += kLowPassVariance;
    p.cov2d(0, 1) = p.cov2d(1, 0) = 0.5 * (p.cov2d(0, 1) + p.cov2d(1, 0));
    p.mean2d = cam.project(t);
    p.culled = false;
    return p;
}

RenderOutput render(const GaussianScene& scene, const Camera& cam, const Vec3& background) {
    cam.validate();
    RenderOutput out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.alpha = Image(cam.width, cam.height, 1);
    out.depth = Image(cam.width, cam.height, 1);
    out.background = background;
    out.scene_generation = scene.generation();
    out.scene_size = scene.size();
    out.transmittance.assign(out.rgb.pixel_count(), 1.0);

    const Prepared prep = prepare(scene, cam);
    parallel_chunks(static_cast<std::size_t>(cam.height), kRowsPerChunk, [&](std::size_t, std::size_t y0, std::size_t y1) {
        for (int y = static_cast<int>(y0); y < static_cast<int>(y1); ++y) {
            for (int x = 0; x < cam.width; ++x) {
                Vec3 c = Vec3::Zero();
                double z = 0.0;
                const double t = composite_pixel(prep, x, y, [&](const Hit& h) {
                    const Splat& s = prep.splats[h.splat];
                    const double w = h.alpha * h.transmittance;
                    c += w * s.color;
                    z += w * s.depth;
                });
                c += t * background;
                const double a = 1.0 - t;
                for (int k = 0; k < 3; ++k) out.rgb.at(x, y, k) = c[k];
                out.alpha.at(x, y) = a;
                out.depth.at(x, y) = a > 1e-12 ? z / a : 0.0;
                out.transmittance[static_cast<std::size_t>(y) * cam.width + x] = t;
            }
        }
    });
    return out;
}

BlobGradients& BlobGradients::operator+=(const BlobGradients& o) {
    if (o.params.size() != params.size()) throw InvalidArgument("BlobGradients: size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] += o.params[i];
    for (std::size_t i = 0; i < screen_grad_norm.size(); ++i) screen_grad_norm[i] += o.screen_grad_norm[i];
    return *this;
}

void BlobGradients::scale(double s) {
    for (auto& v : params) v *= s;
    for (auto& v : screen_grad_norm) v *= std::abs(s);
}

namespace {

/// Screen-space partial derivatives accumulated per splat.
struct ScreenGrad {
    Vec2 mean = Vec2::Zero();
    double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0; // q = a dx^2 + 2 b dx dy + c dy^2
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();

    ScreenGrad& operator+=(const ScreenGrad& o) {
        mean += o.mean;
        conic_a += o.conic_a;
        conic_b += o.conic_b;
        conic_c += o.conic_c;
        opacity += o.opacity;
        color += o.color;
        return *this;
    }
};

/// dL/dq for q = |n| normalised quaternion rotation, given dL/dR.
Vec4 rotation_grad(const Vec4& q, const Mat3& g) {
    const double qn = q.norm();
    const Vec4 n = q / qn;
    const double w = n[0], x = n[1], y = n[2], z = n[3];
    Vec4 dn;
    dn[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    dn[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                   w * g(2, 1) - 2.0 * x * g(2, 2));
    dn[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                   z * g(2, 1) - 2.0 * y * g(2, 2));
    dn[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2) +
                   x * g(2, 0) + y * g(2, 1));
    return (dn - n * n.dot(dn)) / qn;
}

} // namespace

BlobGradients render_backward(const GaussianScene& scene, const Camera& cam, const RenderOutput& forward,
                              const Image& upstream, const GradientGate* gate) {
    if (forward.scene_generation != scene.generation() || forward.scene_size != scene.size())
        throw InvalidArgument(fmt::format("render_backward: forward pass is stale (generation {} vs scene {})",
                                          forward.scene_generation, scene.generation()));
    if (upstream.width != cam.width || upstream.height != cam.height || upstream.channels != 3)
        throw InvalidArgument("render_backward: upstream gradient must be H x W x 3 at camera resolution");
    if (gate && gate->mask.size() != scene.size()) throw InvalidArgument("render_backward: gate size mismatch");

    BlobGradients grads(scene.size());
    const Prepared prep = prepare(scene, cam);
    const std::size_t ns = prep.splats.size();
    if (ns == 0) return grads;

    const std::size_t chunks = chunk_count(static_cast<std::size_t>(cam.height), kRowsPerChunk);
    std::vector<std::vector<ScreenGrad>> partial(chunks);
    const Vec3 bg = forward.background;

    parallel_chunks(static_cast<std::size_t>(cam.height), kRowsPerChunk, [&](std::size_t chunk, std::size_t y0, std::size_t y1) {
        auto& acc = partial[chunk];
        acc.assign(ns, ScreenGrad{});
        std::vector<Hit> hits;
        for (int y = static_cast<int>(y0); y < static_cast<int>(y1); ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 gc(upstream.at(x, y, 0), upstream.at(x, y, 1), upstream.at(x, y, 2));
                if (gc.isZero(0.0)) continue;
                hits.clear();
                composite_pixel(prep, x, y, [&](const Hit& h) { hits.push_back(h); });
                // U = colour seen behind the current blob, normalised by the
                // transmittance right after it.
                Vec3 behind = bg;
                for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                    const Splat& s = prep.splats[it->splat];
                    ScreenGrad& sg = acc[it->splat];
                    const double w = it->alpha * it->transmittance;
                    sg.color += w * gc;
                    const double dl_dalpha = it->transmittance * gc.dot(s.color - behind);
                    behind = it->alpha * s.color + (1.0 - it->alpha) * behind;
                    sg.opacity += dl_dalpha * it->gauss;
                    const double dl_dq = -0.5 * it->alpha * dl_dalpha;
                    const Vec2& d = it->d;
                    sg.conic_a += dl_dq * d.x() * d.x();
                    sg.conic_b += dl_dq * 2.0 * d.x() * d.y();
                    sg.conic_c += dl_dq * d.y() * d.y();
                    sg.mean += dl_dq * (-2.0 * (s.conic * d));
                }
            }
        }
    });

    std::vector<ScreenGrad> total(ns);
    for (const auto& p : partial)
        for (std::size_t k = 0; k < p.size(); ++k) total[k] += p[k];

    for (std::size_t k = 0; k < ns; ++k) {
        const Splat& s = prep.splats[k];
        const std::size_t i = s.index;
        if (gate && !gate->allows(i)) continue;
        const GaussianBlob& b = scene[i];
        const ScreenGrad& sg = total[k];
        auto out = grads.of(i);

        const Vec3 t = cam.to_camera(b.position.cast<double>());
        const auto j = projection_jacobian(cam, t);
        const Mat3& w = cam.rotation;
        const Eigen::Matrix<double, 2, 3> jw = j * w;
        const Mat3 r = b.rotation_matrix();
        const Vec3 sc = b.log_scale.cast<double>().array().exp();
        const Mat3 m = r * sc.asDiagonal();
        const Mat3 sigma = m * m.transpose();

        Mat2 g_conic;
        g_conic << sg.conic_a, 0.5 * sg.conic_b, 0.5 * sg.conic_b, sg.conic_c;
        const Mat2 g_cov2d = -s.conic * g_conic * s.conic;

        const Mat3 g_sigma = jw.transpose() * g_cov2d * jw;
        const Eigen::Matrix<double, 2, 3> g_jw = 2.0 * g_cov2d * jw * sigma;
        const Eigen::Matrix<double, 2, 3> g_j = g_jw * w.transpose();

        const double iz = 1.0 / t.z(), iz2 = iz * iz, iz3 = iz2 * iz;
        Vec3 g_t = j.transpose() * sg.mean;
        g_t.x() += g_j(0, 2) * (-cam.fx * iz2);
        g_t.y() += g_j(1, 2) * (-cam.fy * iz2);
        g_t.z() += g_j(0, 0) * (-cam.fx * iz2) + g_j(0, 2) * (2.0 * cam.fx * t.x() * iz3) + g_j(1, 1) * (-cam.fy * iz2) +
                   g_j(1, 2) * (2.0 * cam.fy * t.y() * iz3);
        const Vec3 g_pos = w.transpose() * g_t;

        const Mat3 g_m = 2.0 * g_sigma * m;
        const Mat3 g_r = g_m * sc.asDiagonal();
        const Mat3 rt_gm = r.transpose() * g_m;
        const Vec4 g_q = rotation_grad(b.rotation.cast<double>(), g_r);

        const double o = s.opacity;
        for (int c = 0; c < 3; ++c) out[c] = g_pos[c];
        for (int c = 0; c < 4; ++c) out[3 + c] = g_q[c];
        for (int c = 0; c < 3; ++c) out[7 + c] = rt_gm(c, c) * sc[c];
        out[10] = sg.opacity * o * (1.0 - o);
        for (int c = 0; c < 3; ++c) out[11 + c] = sg.color[c];
        grads.screen_grad_norm[i] = sg.mean.norm();
    }
    return grads;
}

GaussianScene rigid_transform(const GaussianScene& scene, const Mat3& r, const Vec3& t) {
    const Vec4 qr = matrix_to_quat(r);
    std::vector<GaussianBlob> blobs = scene.blobs();
    for (auto& b : blobs) {
        b.position = (r * b.position.cast<double>() + t).cast<float>();
        b.rotation = quat_mul(qr, b.rotation.cast<double>()).cast<float>();
    }
    GaussianScene out(std::move(blobs), scene.generation());
    return out;
}

} // namespace bf
