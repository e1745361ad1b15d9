#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mldg/autodiff.hpp"

namespace mldg {

enum class Activation { relu, tanh };
enum class OutputKind { logits, q_values };

struct MlpSpec {
    std::vector<std::size_t> layer_sizes;
    Activation activation = Activation::relu;
    OutputKind output = OutputKind::logits;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t param_count() const;
    void validate() const;
};

/// Glorot-uniform weights, zero biases. Layout: W0[in,out], b0[out], W1, b1, ...
ParameterVector init_params(const MlpSpec& spec, std::uint64_t seed);

/// Output of a batched forward pass. `logits` has shape [n, classes].
struct Prediction {
    NodeRef logits;

    /// Row-wise softmax of the current logit values.
    Tensor probabilities(const CompGraph& g) const;
};

/// Places the flat parameters in the graph as a differentiable input.
NodeRef bind_params(CompGraph& g, const ParameterVector& params);

/// Batched forward pass; `theta` is the flat parameter node (possibly adapted
/// parameters rather than a leaf), `x` has shape [n, input_dim].
Prediction forward(CompGraph& g, NodeRef theta, const MlpSpec& spec, NodeRef x);
Prediction forward(CompGraph& g, NodeRef theta, const MlpSpec& spec, const Tensor& x);

/// Mean negative log-probability of the true class.
NodeRef xent_loss(CompGraph& g, const Prediction& pred, std::span<const std::size_t> labels);

/// Graph-free forward pass for one input row, used when acting in an
/// environment. Writes output_dim values into `out`.
void forward_row(const MlpSpec& spec, std::span<const double> theta, std::span<const double> x,
                 std::span<double> out);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace mldg
