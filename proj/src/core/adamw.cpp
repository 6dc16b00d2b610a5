#include "blobforge/core/adamw.hpp"
#include "blobforge/core/error.hpp"

#include <cmath>

namespace bf {

void AdamW::update(double& p, double g, double& m, double& v, double bc1, double bc2) const {
    m = opts_.beta1 * m + (1.0 - opts_.beta1) * g;
    v = opts_.beta2 * v + (1.0 - opts_.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    p -= opts_.lr * opts_.weight_decay * p;
    p -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
}

void AdamW::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw InvalidArgument("AdamW: size mismatch");
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) update(params[i], grads[i], m_[i], v_[i], bc1, bc2);
}

void AdamW::step_rows(std::span<double> params, std::span<const double> grads,
                      std::span<const std::uint32_t> rows, std::size_t row_width) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw InvalidArgument("AdamW: size mismatch");
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (const std::uint32_t r : rows) {
        const std::size_t base = static_cast<std::size_t>(r) * row_width;
        for (std::size_t k = 0; k < row_width; ++k)
            update(params[base + k], grads[base + k], m_[base + k], v_[base + k], bc1, bc2);
    }
}

void AdamW::step_masked(std::span<double> params, std::span<const double> grads,
                        std::span<const std::uint8_t> mask) {
    if (params.size() != m_.size() || grads.size() != m_.size() || mask.size() != m_.size())
        throw InvalidArgument("AdamW: size mismatch");
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i)
        if (mask[i]) update(params[i], grads[i], m_[i], v_[i], bc1, bc2);
}

void AdamW::resize(std::size_t size) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
    step_ = 0;
}

void AdamW::remap(std::span<const std::int64_t> origin, std::size_t width) {
    std::vector<double> m(origin.size() * width, 0.0);
    std::vector<double> v(origin.size() * width, 0.0);
    for (std::size_t i = 0; i < origin.size(); ++i) {
        if (origin[i] < 0) continue;
        const std::size_t src = static_cast<std::size_t>(origin[i]) * width;
        for (std::size_t k = 0; k < width; ++k) {
            m[i * width + k] = m_[src + k];
            v[i * width + k] = v_[src + k];
        }
    }
    m_ = std::move(m);
    v_ = std::move(v);
}

void AdamW::set_state(std::vector<double> m, std::vector<double> v, std::int64_t step) {
    if (m.size() != v.size()) throw InvalidArgument("AdamW: moment sizes differ");
    m_ = std::move(m);
    v_ = std::move(v);
    step_ = step;
}

} // namespace bf
