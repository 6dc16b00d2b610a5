#include "blobforge/field/mlp.hpp"
#include "blobforge/core/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace bf {

Mlp::Mlp(std::vector<int> dims, std::mt19937_64& rng, bool zero_output) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw InvalidArgument("Mlp needs at least an input and an output size");
    for (int d : dims_)
        if (d <= 0) throw InvalidArgument("Mlp layer sizes must be positive");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        offsets_.push_back(n);
        n += static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
    }
    params_.assign(n, 0.0);
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        if (zero_output && l + 2 == dims_.size()) break;
        const double lim = std::sqrt(6.0 / (dims_[l] + dims_[l + 1]));
        std::uniform_real_distribution<double> u(-lim, lim);
        const std::size_t w = static_cast<std::size_t>(dims_[l]) * dims_[l + 1];
        for (std::size_t k = 0; k < w; ++k) params_[offsets_[l] + k] = u(rng);
    }
}

void Mlp::forward(std::span<const double> in, std::span<double> out) const {
    thread_local Tape tape;
    forward(in, out, tape);
}

void Mlp::forward(std::span<const double> in, std::span<double> out, Tape& tape) const {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const std::size_t layers = dims_.size() - 1;
    tape.act.resize(layers + 1);
    tape.act[0].assign(in.begin(), in.end());
    for (std::size_t l = 0; l < layers; ++l) {
        const int ni = dims_[l], no = dims_[l + 1];
        const double* w = params_.data() + offsets_[l];
        Eigen::Map<const Mat> W(w, no, ni);
        Eigen::Map<const Eigen::VectorXd> b(w + static_cast<std::size_t>(ni) * no, no);
        auto& y = tape.act[l + 1];
        y.resize(no);
        Eigen::Map<Eigen::VectorXd> Y(y.data(), no);
        Y.noalias() = W * Eigen::Map<const Eigen::VectorXd>(tape.act[l].data(), ni);
        Y += b;
        if (l + 1 < layers) Y = Y.cwiseMax(0.0);
    }
    std::copy(tape.act[layers].begin(), tape.act[layers].end(), out.begin());
}

void Mlp::backward(const Tape& tape, std::span<const double> grad_out, std::span<double> grad_params,
                   std::span<double> grad_in) const {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const std::size_t layers = dims_.size() - 1;
    thread_local std::vector<double> g, gprev;
    g.assign(grad_out.begin(), grad_out.end());
    for (std::size_t l = layers; l-- > 0;) {
        const int ni = dims_[l], no = dims_[l + 1];
        const double* w = params_.data() + offsets_[l];
        double* gw = grad_params.data() + offsets_[l];
        Eigen::Map<Eigen::VectorXd> G(g.data(), no);
        if (l + 1 < layers) // ReLU on this layer's output
            for (int o = 0; o < no; ++o)
                if (tape.act[l + 1][o] <= 0.0) g[o] = 0.0;
        Eigen::Map<const Eigen::VectorXd> X(tape.act[l].data(), ni);
        Eigen::Map<Mat>(gw, no, ni).noalias() += G * X.transpose();
        Eigen::Map<Eigen::VectorXd>(gw + static_cast<std::size_t>(ni) * no, no) += G;
        const bool need_prev = l > 0 || !grad_in.empty();
        if (!need_prev) continue;
        gprev.resize(ni);
        Eigen::Map<Eigen::VectorXd>(gprev.data(), ni).noalias() = Eigen::Map<const Mat>(w, no, ni).transpose() * G;
        if (l == 0)
            std::copy(gprev.begin(), gprev.end(), grad_in.begin());
        else
            g.swap(gprev);
    }
}

} // namespace bf
