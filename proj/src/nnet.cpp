#include "mldg/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mldg {

std::size_t MlpSpec::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
        n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
    return n;
}

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2) throw Error("MLP needs at least 2 layer sizes");
    for (auto s : layer_sizes)
        if (s < 1) throw Error("MLP layer sizes must be >= 1");
}

ParameterVector init_params(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    ParameterVector p;
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        const auto fan_in = spec.layer_sizes[l];
        const auto fan_out = spec.layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        std::vector<double> w(fan_in * fan_out);
        for (auto& v : w) v = u(rng);
        p.add("W" + std::to_string(l), {fan_in, fan_out}, w);
        p.add_zeros("b" + std::to_string(l), {fan_out});
    }
    return p;
}

Tensor Prediction::probabilities(const CompGraph& g) const {
    Tensor t = g.tensor(logits);
    const auto rows = t.shape[0], cols = t.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
        auto p = softmax(std::span<const double>(t.data.data() + i * cols, cols));
        std::copy(p.begin(), p.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
    }
    return t;
}

NodeRef bind_params(CompGraph& g, const ParameterVector& params) {
    return g.input(Tensor({params.size()}, params.data()));
}

Prediction forward(CompGraph& g, NodeRef theta, const MlpSpec& spec, NodeRef x) {
    spec.validate();
    if (numel(g.shape(theta)) != spec.param_count())
        throw Error("forward: parameter vector has " + std::to_string(numel(g.shape(theta))) +
                    " values, spec needs " + std::to_string(spec.param_count()));
    const auto& xs = g.shape(x);
    if (xs.size() != 2 || xs[1] != spec.input_dim())
        throw Error("forward: input of shape " + shape_str(xs) + " for input dimension " +
                    std::to_string(spec.input_dim()));
    NodeRef h = x;
    std::size_t offset = 0;
    const auto layers = spec.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
        const auto w = g.slice(theta, offset, {in, out});
        offset += in * out;
        const auto b = g.slice(theta, offset, {out});
        offset += out;
        h = g.add_row_vec(g.matmul(h, w), b);
        if (l + 1 < layers) h = spec.activation == Activation::relu ? g.relu(h) : g.tanh(h);
    }
    return Prediction{h};
}

Prediction forward(CompGraph& g, NodeRef theta, const MlpSpec& spec, const Tensor& x) {
    return forward(g, theta, spec, g.constant(x));
}

NodeRef xent_loss(CompGraph& g, const Prediction& pred, std::span<const std::size_t> labels) {
    const auto& s = g.shape(pred.logits);
    if (labels.size() != s[0])
        throw Error("xent_loss: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(s[0]) + " predictions");
    if (labels.empty()) throw Error("xent_loss: empty batch");
    for (auto y : labels)
        if (y >= s[1])
            throw Error("xent_loss: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(s[1]) + ")");
    const auto picked = g.gather(g.log_softmax(pred.logits), {labels.begin(), labels.end()});
    return g.affine(g.sum(picked), -1.0 / static_cast<double>(labels.size()));
}

void forward_row(const MlpSpec& spec, std::span<const double> theta, std::span<const double> x,
                 std::span<double> out) {
    thread_local std::vector<double> a, b;
    a.assign(x.begin(), x.end());
    const double* p = theta.data();
    const auto layers = spec.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto in = spec.layer_sizes[l], n_out = spec.layer_sizes[l + 1];
        const double* w = p;
        const double* bias = p + in * n_out;
        b.assign(bias, bias + n_out);
        for (std::size_t i = 0; i < in; ++i) {
            const double ai = a[i];
            const double* wrow = w + i * n_out;
            for (std::size_t j = 0; j < n_out; ++j) b[j] += ai * wrow[j];
        }
        if (l + 1 < layers) {
            if (spec.activation == Activation::relu)
                for (auto& v : b) v = v > 0.0 ? v : 0.0;
            else
                for (auto& v : b) v = std::tanh(v);
        }
        p += in * n_out + n_out;
        std::swap(a, b);
    }
    std::copy(a.begin(), a.end(), out.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    const double mx = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (auto& v : p) z += (v = std::exp(v - mx));
    for (auto& v : p) v /= z;
    return p;
}

}  // namespace mldg
