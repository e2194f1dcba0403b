#pragma once

#include "iorm/ops.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace iorm {

using Rng = std::mt19937_64;

enum class ParamKind { Weight, Bias, Norm, Temperature, BiasTable };

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
    ParamKind kind;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::size_t count_parameters(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

/// Glorot-uniform matrix [in, out].
template <typename T>
Tensor<T> glorot(std::size_t in, std::size_t out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<T> v(in * out);
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>({in, out}, std::move(v), true);
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(numel_of(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
struct Linear {
    Tensor<T> weight;
    Tensor<T> bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
        : weight(glorot<T>(in, out, rng)) {
        if (with_bias) bias = Tensor<T>::zeros({out}, true);
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight, ParamKind::Weight});
        if (bias.defined()) out.push_back({prefix + ".bias", bias, ParamKind::Bias});
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width)
        : gamma(Tensor<T>::full({width}, T{1}, true)), beta(Tensor<T>::zeros({width}, true)) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gamma, beta); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma, ParamKind::Norm});
        out.push_back({prefix + ".beta", beta, ParamKind::Norm});
    }
};

template <typename T>
struct Mlp {
    Linear<T> fc1;
    Linear<T> fc2;

    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

/// Stochastic depth on a residual branch [B, ...]. Identity unless `rng` is set
/// and rate > 0.
template <typename T>
Tensor<T> drop_path(const Tensor<T>& branch, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) return branch;
    std::bernoulli_distribution keep(1.0 - rate);
    std::vector<T> f(branch.dim(0));
    for (auto& v : f) v = keep(*rng) ? static_cast<T>(1.0 / (1.0 - rate)) : T{0};
    return scale_per_sample(branch, std::move(f));
}

} // namespace iorm
