#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "glyphcrm/graph.hpp"
#include "glyphcrm/rng.hpp"
#include "glyphcrm/tensor.hpp"

namespace glyphcrm {

struct GradCheckOptions {
    double step = 1e-3;
    // 0 = check every coordinate; otherwise sample this many per tensor.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t sample_seed = 0x5EED;
    // Return true to skip a coordinate (e.g. an input sitting exactly on a
    // nondifferentiable point such as relu at 0).
    std::function<bool(std::size_t input, std::size_t coord)> exclude;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::size_t compared = 0;
    std::size_t skipped = 0;
    bool pass = false;
};

// Compares the tape gradient of a scalar-valued builder against central
// finite differences at the configured step. Everything runs at 64-bit
// precision: the engine is precision-templated, so the identical op
// implementations execute on double tensors. Each coordinate is probed at
// the full and at half the step; coordinates where the two estimates
// disagree straddle a nondifferentiable point and are skipped. build must
// be callable as
//   VarT<double> build(GraphT<double>& g, const std::vector<VarT<double>>& xs)
// and is re-invoked for every probe evaluation.
template <typename BuildFn>
GradCheckReport grad_check(BuildFn&& build, const std::vector<Tensor>& point, double tolerance,
                           GradCheckOptions opt = {}) {
    std::vector<TensorT<double>> xs;
    xs.reserve(point.size());
    for (const Tensor& t : point) xs.push_back(t.template cast<double>());

    const auto eval = [&](bool with_grad) {
        GraphT<double> g;
        std::vector<VarT<double>> leaves;
        leaves.reserve(xs.size());
        for (auto& x : xs) {
            TensorT<double> v = x.clone();
            v.requires_grad = with_grad;
            leaves.push_back(g.leaf(std::move(v)));
        }
        VarT<double> loss = build(g, leaves);
        if (loss.value().size() != 1) {
            throw ShapeError("grad_check: builder must produce a scalar, got " +
                             shape_str(loss.value().shape()));
        }
        if (!with_grad) return std::pair<double, std::vector<TensorT<double>>>{loss.value()[0], {}};
        g.backward(loss);
        std::vector<TensorT<double>> grads;
        grads.reserve(leaves.size());
        for (auto& lv : leaves) grads.push_back(lv.grad().clone());
        return std::pair<double, std::vector<TensorT<double>>>{loss.value()[0], std::move(grads)};
    };

    const std::vector<TensorT<double>> analytic = eval(true).second;

    GradCheckReport rep;
    rep.tolerance = tolerance;
    Rng rng(opt.sample_seed);

    for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t n = xs[i].size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opt.max_coords_per_tensor > 0 && n > opt.max_coords_per_tensor) {
            // partial Fisher-Yates: first k entries become the sample
            for (std::size_t k = 0; k < opt.max_coords_per_tensor; ++k) {
                const auto j = k + static_cast<std::size_t>(
                                       rng.uniform_int(static_cast<std::int64_t>(n - k)));
                std::swap(coords[k], coords[j]);
            }
            coords.resize(opt.max_coords_per_tensor);
        }
        for (std::size_t c : coords) {
            if (opt.exclude && opt.exclude(i, c)) {
                ++rep.skipped;
                continue;
            }
            const double x0 = xs[i][c];
            const auto probe = [&](double step) {
                xs[i][c] = x0 + step;
                const double fp = eval(false).first;
                xs[i][c] = x0 - step;
                const double fm = eval(false).first;
                xs[i][c] = x0;
                return (fp - fm) / (2.0 * step);
            };
            const double fd_full = probe(opt.step);
            const double fd_quarter = probe(opt.step / 4.0);
            // When the two estimates disagree, a kink (relu corner, max-pool
            // tie) sits inside the probe interval; the derivative is not
            // defined there, so the coordinate is excluded. A wrong tape
            // gradient leaves the two estimates agreeing with each other
            // while differing from the analytic value, and is still caught.
            const double agree_denom = std::max({std::fabs(fd_full), std::fabs(fd_quarter), 0.1});
            if (std::fabs(fd_full - fd_quarter) / agree_denom > std::max(tolerance, 1e-5)) {
                ++rep.skipped;
                continue;
            }
            const double fd = fd_quarter;
            const double an = analytic[i][c];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 0.1});
            const double rel = std::fabs(fd - an) / denom;
            rep.max_rel_error = std::max(rep.max_rel_error, rel);
            ++rep.compared;
        }
    }
    rep.pass = rep.compared > 0 && rep.max_rel_error < tolerance;
    return rep;
}

}  // namespace glyphcrm
