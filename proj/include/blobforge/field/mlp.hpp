#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace bf {

/// Fully connected network: ReLU between layers, linear output.
/// Parameters are stored flat, layer by layer, weights (out x in, row-major)
/// followed by biases.
class Mlp {
public:
    Mlp() = default;
    /// dims = {in, hidden..., out}. Glorot-uniform weights, zero biases;
    /// zero_output zeroes the last layer entirely.
    Mlp(std::vector<int> dims, std::mt19937_64& rng, bool zero_output = false);

    [[nodiscard]] const std::vector<int>& dims() const { return dims_; }
    [[nodiscard]] int inputs() const { return dims_.front(); }
    [[nodiscard]] int outputs() const { return dims_.back(); }
    [[nodiscard]] std::size_t param_count() const { return params_.size(); }
    [[nodiscard]] std::span<const double> params() const { return params_; }
    [[nodiscard]] std::span<double> params() { return params_; }

    /// Activations of every layer (post-ReLU for hidden layers), input first.
    struct Tape {
        std::vector<std::vector<double>> act;
    };

    void forward(std::span<const double> in, std::span<double> out) const;
    void forward(std::span<const double> in, std::span<double> out, Tape& tape) const;
    /// Accumulates dL/dparams into grad (size param_count()) and, when
    /// grad_in is non-empty, writes dL/din.
    void backward(const Tape& tape, std::span<const double> grad_out, std::span<double> grad_params,
                  std::span<double> grad_in) const;

    bool operator==(const Mlp& o) const { return dims_ == o.dims_ && params_ == o.params_; }

private:
    std::vector<int> dims_;
    std::vector<double> params_;
    std::vector<std::size_t> offsets_; // start of each layer's weights
};

} // namespace bf
