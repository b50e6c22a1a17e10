#include "glyphcrm/adam.hpp"

#include <cmath>

#include "glyphcrm/error.hpp"

namespace glyphcrm {

Adam::Adam(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void Adam::step(std::span<NamedParam> params, std::span<const Tensor> grads, double lr) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
    }
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.push_back(Tensor(p.tensor.shape()));
            v_.push_back(Tensor(p.tensor.shape()));
        }
    }
    if (m_.size() != params.size()) {
        throw ShapeError("adam: state holds " + std::to_string(m_.size()) + " moments for " +
                         std::to_string(params.size()) + " params");
    }
    // validate before mutating anything
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!same_shape(params[i].tensor.shape(), grads[i].shape())) {
            throw ShapeError("adam: grad shape " + shape_str(grads[i].shape()) +
                             " does not match param " + params[i].name + " " +
                             shape_str(params[i].tensor.shape()));
        }
        for (float g : grads[i].values()) {
            if (!std::isfinite(g)) {
                throw NumericError("adam: non-finite gradient for parameter " + params[i].name);
            }
        }
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        float* p = params[i].tensor.data();
        const float* g = grads[i].data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const std::size_t n = params[i].tensor.size();
        for (std::size_t j = 0; j < n; ++j) {
            double pj = static_cast<double>(p[j]);
            if (weight_decay_ != 0.0) pj -= lr * weight_decay_ * pj;
            const double gj = static_cast<double>(g[j]);
            const double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
            const double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            p[j] = static_cast<float>(pj - lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

void Adam::restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t) {
    if (m.size() != v.size()) throw ShapeError("adam: moment list sizes differ");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

}  // namespace glyphcrm
