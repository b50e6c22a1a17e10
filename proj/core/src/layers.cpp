#include "glyphcrm/layers.hpp"

#include <cmath>

namespace glyphcrm {

Conv2dParam make_conv2d(std::int64_t c_out, std::int64_t c_in, std::int64_t k, Rng& rng) {
    const float stddev = std::sqrt(2.0f / static_cast<float>(c_in * k * k));
    return {Tensor::randn({c_out, c_in, k, k}, rng, stddev), Tensor({c_out})};
}

LinearParam make_linear(std::int64_t d_in, std::int64_t d_out, Rng& rng, float stddev) {
    if (stddev <= 0.0f) stddev = 0.5f / std::sqrt(static_cast<float>(d_in));
    return {Tensor::randn({d_in, d_out}, rng, stddev), Tensor({d_out})};
}

NormParam make_norm(std::int64_t d) {
    return {Tensor::full({d}, 1.0f), Tensor({d})};
}

std::int64_t param_count(const Conv2dParam& p) {
    return static_cast<std::int64_t>(p.weight.size() + p.bias.size());
}

std::int64_t param_count(const LinearParam& p) {
    return static_cast<std::int64_t>(p.weight.size() + p.bias.size());
}

std::int64_t param_count(const NormParam& p) {
    return static_cast<std::int64_t>(p.gain.size() + p.shift.size());
}

}  // namespace glyphcrm
