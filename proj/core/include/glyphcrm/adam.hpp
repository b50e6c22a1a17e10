#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glyphcrm/tensor.hpp"

namespace glyphcrm {

// A named learnable tensor. The tensor handle shares storage with its owner.
struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Adam with decoupled weight decay. Weight decay is applied as
// p -= lr * wd * p before the moment update; bias correction uses the step
// counter t, incremented once per step() call.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                  double weight_decay = 0.01);

    // grads aligned with params. Throws NumericError naming the parameter if
    // a gradient is non-finite; the step is aborted before any mutation.
    void step(std::span<NamedParam> params, std::span<const Tensor> grads, double lr);

    std::int64_t steps() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

    void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t);

    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double epsilon() const { return eps_; }
    double weight_decay() const { return weight_decay_; }

private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace glyphcrm
