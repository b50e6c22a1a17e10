#pragma once

#include <cstdint>
#include <string>

#include "glyphcrm/graph.hpp"
#include "glyphcrm/rng.hpp"
#include "glyphcrm/tensor.hpp"

namespace glyphcrm {

struct Conv2dParam {
    Tensor weight;  // C_out x C_in x k x k
    Tensor bias;    // C_out
};

struct LinearParam {
    Tensor weight;  // D_in x D_out
    Tensor bias;    // D_out
};

struct NormParam {
    Tensor gain;   // D
    Tensor shift;  // D
};

// He initialization for the weight, zero bias.
Conv2dParam make_conv2d(std::int64_t c_out, std::int64_t c_in, std::int64_t k, Rng& rng);

// stddev <= 0 selects the default 0.5/sqrt(d_in), which matches the usual
// 0.02 at hidden width 768 and keeps attention logits usefully spread at
// small widths.
LinearParam make_linear(std::int64_t d_in, std::int64_t d_out, Rng& rng, float stddev = 0.0f);

NormParam make_norm(std::int64_t d);

std::int64_t param_count(const Conv2dParam& p);
std::int64_t param_count(const LinearParam& p);
std::int64_t param_count(const NormParam& p);

template <typename T>
struct BoundConv2d {
    VarT<T> weight, bias;
};
template <typename T>
struct BoundLinear {
    VarT<T> weight, bias;
};
template <typename T>
struct BoundNorm {
    VarT<T> gain, shift;
};

// Inserts a stored f32 tensor into a graph. The float instantiation shares
// storage; the double instantiation copies at 64-bit precision.
template <typename T>
VarT<T> bind_tensor(GraphT<T>& g, const Tensor& t, bool track, std::string name = {});

template <>
inline VarT<float> bind_tensor<float>(GraphT<float>& g, const Tensor& t, bool track,
                                      std::string name) {
    Tensor v = t;
    v.requires_grad = track;
    return g.leaf(std::move(v), std::move(name));
}

template <>
inline VarT<double> bind_tensor<double>(GraphT<double>& g, const Tensor& t, bool track,
                                        std::string name) {
    TensorT<double> v = t.cast<double>();
    v.requires_grad = track;
    return g.leaf(std::move(v), std::move(name));
}

template <typename T>
BoundConv2d<T> bind(GraphT<T>& g, const Conv2dParam& p, bool track) {
    return {bind_tensor<T>(g, p.weight, track), bind_tensor<T>(g, p.bias, track)};
}

template <typename T>
BoundLinear<T> bind(GraphT<T>& g, const LinearParam& p, bool track) {
    return {bind_tensor<T>(g, p.weight, track), bind_tensor<T>(g, p.bias, track)};
}

template <typename T>
BoundNorm<T> bind(GraphT<T>& g, const NormParam& p, bool track) {
    return {bind_tensor<T>(g, p.gain, track), bind_tensor<T>(g, p.shift, track)};
}

}  // namespace glyphcrm
