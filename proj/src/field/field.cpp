#include "blobforge/field/field.hpp"
#include "blobforge/core/error.hpp"

#include <fmt/core.h>

namespace bf {

void sh_encode(const Vec3& d, int degree, std::span<double> out) {
    const double x = d.x(), y = d.y(), z = d.z();
    out[0] = 0.28209479177387814;
    if (degree < 1) return;
    out[1] = -0.48860251190291987 * y;
    out[2] = 0.48860251190291987 * z;
    out[3] = -0.48860251190291987 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = 1.0925484305920792 * x * y;
    out[5] = -1.0925484305920792 * y * z;
    out[6] = 0.94617469575755997 * zz - 0.31539156525251999;
    out[7] = -1.0925484305920792 * x * z;
    out[8] = 0.54627421529603959 * (xx - yy);
    if (degree < 3) return;
    out[9] = 0.59004358992664352 * y * (-3.0 * xx + yy);
    out[10] = 2.8906114426405538 * x * y * z;
    out[11] = 0.45704579946446572 * y * (1.0 - 5.0 * zz);
    out[12] = 0.3731763325901154 * z * (5.0 * zz - 3.0);
    out[13] = 0.45704579946446572 * x * (1.0 - 5.0 * zz);
    out[14] = 1.4453057213202769 * z * (xx - yy);
    out[15] = 0.59004358992664352 * x * (-xx + 3.0 * yy);
}

void HashFieldConfig::validate() const {
    grid.validate();
    if (hidden < 1 || geo_features < 1) throw InvalidArgument("field MLP sizes must be positive");
    if (sh_degree < 0 || sh_degree > 3) throw InvalidArgument(fmt::format("SH degree {} not in [0, 3]", sh_degree));
    if (bounds.empty() || (bounds.size().array() <= 0.0).any()) throw InvalidArgument("field bounds must have volume");
}

void HashFieldGradients::clear() {
    table.clear();
    std::fill(density.begin(), density.end(), 0.0);
    std::fill(color.begin(), color.end(), 0.0);
}

void HashFieldGradients::merge(const HashFieldGradients& o) {
    table.merge(o.table);
    for (std::size_t i = 0; i < density.size(); ++i) density[i] += o.density[i];
    for (std::size_t i = 0; i < color.size(); ++i) color[i] += o.color[i];
}

void HashFieldGradients::scale(double s) {
    table.scale(s);
    for (auto& v : density) v *= s;
    for (auto& v : color) v *= s;
}

HashField::HashField(const HashFieldConfig& cfg, bool zero_tables) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    grid_ = HashGrid(cfg_.grid, rng, zero_tables);
    const int sh = (cfg_.sh_degree + 1) * (cfg_.sh_degree + 1);
    density_ = Mlp({grid_.output_dim(), cfg_.hidden, cfg_.geo_features}, rng);
    color_ = Mlp({cfg_.geo_features + sh, cfg_.hidden, 3}, rng);
}

HashFieldGradients HashField::make_gradients() const {
    HashFieldGradients g;
    g.table = RowGradients(grid_.total_rows(), grid_.feature_dim());
    g.density.assign(density_.param_count(), 0.0);
    g.color.assign(color_.param_count(), 0.0);
    return g;
}

HashFieldGradients HashField::make_chunk_gradients() const {
    HashFieldGradients g;
    g.table = RowGradients::log(grid_.feature_dim());
    g.density.assign(density_.param_count(), 0.0);
    g.color.assign(color_.param_count(), 0.0);
    return g;
}

Vec3 HashField::normalize(const Vec3& p) const {
    return (p - cfg_.bounds.lo).cwiseQuotient(cfg_.bounds.size());
}

double HashField::density(const Vec3& p) const {
    thread_local std::vector<double> f, geo;
    f.resize(grid_.output_dim());
    geo.resize(cfg_.geo_features);
    grid_.encode(normalize(p), f);
    density_.forward(f, geo);
    return softplus(geo[0] + cfg_.density_bias);
}

HashField::Raw HashField::query_raw(const Vec3& p, const Vec3& dir) const {
    thread_local Tape t;
    forward(p, dir, t);
    return t.raw;
}

FieldSample HashField::query(const Vec3& p, const Vec3& dir) const {
    thread_local Tape t;
    return forward(p, dir, t);
}

FieldSample HashField::forward(const Vec3& p, const Vec3& dir, Tape& t) const {
    const int sh = (cfg_.sh_degree + 1) * (cfg_.sh_degree + 1);
    t.features.resize(grid_.output_dim());
    t.geo.resize(cfg_.geo_features);
    t.color_in.resize(cfg_.geo_features + sh);
    grid_.encode(normalize(p), t.features, t.corners);
    density_.forward(t.features, t.geo, t.density);
    std::copy(t.geo.begin(), t.geo.end(), t.color_in.begin());
    const double n = dir.norm();
    sh_encode(n > 0.0 ? Vec3(dir / n) : Vec3::UnitZ(), cfg_.sh_degree,
              std::span<double>(t.color_in).subspan(cfg_.geo_features));
    double rgb_pre[3];
    color_.forward(t.color_in, rgb_pre, t.color);
    t.raw.sigma_pre = t.geo[0] + cfg_.density_bias;
    t.raw.rgb_pre = Vec3(rgb_pre[0], rgb_pre[1], rgb_pre[2]);
    t.out.sigma = softplus(t.raw.sigma_pre);
    for (int c = 0; c < 3; ++c) t.out.rgb[c] = sigmoid(rgb_pre[c]);
    return t.out;
}

void HashField::backward(const Tape& t, double dsigma, const Vec3& drgb, HashFieldGradients& g) const {
    Vec3 drgb_pre;
    for (int c = 0; c < 3; ++c) drgb_pre[c] = drgb[c] * t.out.rgb[c] * (1.0 - t.out.rgb[c]);
    backward_raw(t, dsigma * sigmoid(t.raw.sigma_pre), drgb_pre, g);
}

void HashField::backward_raw(const Tape& t, double dsigma_pre, const Vec3& drgb_pre, HashFieldGradients& g) const {
    thread_local std::vector<double> gcolor_in, ggeo, gfeat;
    gcolor_in.assign(color_.inputs(), 0.0);
    const double gout[3] = {drgb_pre[0], drgb_pre[1], drgb_pre[2]};
    color_.backward(t.color, gout, g.color, gcolor_in);
    ggeo.assign(gcolor_in.begin(), gcolor_in.begin() + cfg_.geo_features);
    ggeo[0] += dsigma_pre;
    gfeat.assign(density_.inputs(), 0.0);
    density_.backward(t.density, ggeo, g.density, gfeat);
    const int d = grid_.feature_dim();
    for (int l = 0; l < grid_.levels(); ++l) {
        const auto& c = t.corners[l];
        for (int j = 0; j < 8; ++j) {
            if (c.weight[j] == 0.0) continue;
            for (int k = 0; k < d; ++k) {
                const double v = c.weight[j] * gfeat[l * d + k];
                if (v != 0.0) g.table.add(c.row[j], k, v);
            }
        }
    }
}

} // namespace bf
