#include <doctest.h>

#include <cmath>

#include "glyphcrm/adam.hpp"
#include "glyphcrm/grad_check.hpp"
#include "glyphcrm/graph.hpp"
#include "testutil.hpp"

using namespace glyphcrm;
using testutil::rand_tensor;

namespace {

template <typename T>
VarT<T> weighted_sum(GraphT<T>& g, VarT<T> x, const Tensor& weights) {
    auto w = g.leaf(weights.template cast<T>());
    return g.sum(g.mul(x, w));
}

}  // namespace

TEST_CASE("grad_check: sum of squares is exact under central differences") {
    Rng rng(1);
    Tensor x = rand_tensor({6}, rng, -2.0f, 2.0f);
    auto rep = grad_check(
        [](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
            return g.sum(g.mul(xs[0], xs[0]));
        },
        {x}, 1e-6);
    CHECK(rep.pass);
    CHECK(rep.compared == 6);
}

TEST_CASE("grad_check across primitives, 5 seeds each") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        Rng wrng(seed + 100);

        {
            // linear at tight tolerance
            Tensor x = rand_tensor({3, 4}, rng);
            Tensor w = rand_tensor({4, 5}, rng);
            Tensor b = rand_tensor({5}, rng);
            Tensor c = rand_tensor({3, 5}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted_sum(g, g.linear(xs[0], xs[1], xs[2]), c);
                },
                {x, w, b}, 1e-6);
            CHECK(rep.pass);
        }
        {
            // softmax at tight tolerance
            Tensor x = rand_tensor({3, 6}, rng, -2.0f, 2.0f);
            Tensor c = rand_tensor({3, 6}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted_sum(g, g.softmax(xs[0]), c);
                },
                {x}, 1e-6);
            CHECK(rep.pass);
        }
        {
            // layer_norm at tight tolerance
            Tensor x = rand_tensor({4, 8}, rng, -2.0f, 2.0f);
            Tensor gain = rand_tensor({8}, rng, 0.5f, 1.5f);
            Tensor shift = rand_tensor({8}, rng);
            Tensor c = rand_tensor({4, 8}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted_sum(g, g.layer_norm(xs[0], xs[1], xs[2]), c);
                },
                {x, gain, shift}, 1e-6);
            CHECK(rep.pass);
        }
        {
            // conv2d + relu + maxpool chain
            Tensor x = rand_tensor({2, 2, 6, 6}, rng);
            Tensor k = rand_tensor({3, 2, 3, 3}, rng);
            Tensor b = rand_tensor({3}, rng);
            Tensor c = rand_tensor({2, 3, 3, 3}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted_sum(g, g.maxpool2(g.relu(g.conv2d(xs[0], xs[1], xs[2], 1, 1))),
                                        c);
                },
                {x, k, b}, 1e-3);
            CHECK(rep.pass);
        }
        {
            // strided conv
            Tensor x = rand_tensor({1, 2, 8, 8}, rng);
            Tensor k = rand_tensor({2, 2, 3, 3}, rng);
            Tensor b = rand_tensor({2}, rng);
            Tensor c = rand_tensor({1, 2, 4, 4}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted_sum(g, g.conv2d(xs[0], xs[1], xs[2], 2, 1), c);
                },
                {x, k, b}, 1e-3);
            CHECK(rep.pass);
        }
        {
            // matmul + transpose + slices + concat + gather
            Tensor a = rand_tensor({3, 4}, rng);
            Tensor b = rand_tensor({3, 4}, rng);
            Tensor c = rand_tensor({3, 3}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    auto prod = g.matmul(xs[0], g.transpose(xs[1]));
                    auto left = g.slice_cols(prod, 0, 2);
                    auto right = g.slice_cols(prod, 2, 1);
                    std::vector<VarT<double>> parts{left, right};
                    auto joined = g.concat_cols(std::span<const VarT<double>>(parts));
                    auto rows = g.gather_rows(joined, {0, 2, 1});
                    return weighted_sum(g, rows, c);
                },
                {a, b}, 1e-3);
            CHECK(rep.pass);
        }
        {
            // cross entropy wrt logits
            Tensor logits = rand_tensor({5, 7}, rng, -1.5f, 1.5f);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return g.cross_entropy(xs[0], {1, -1, 6, 0, 3}, -1);
                },
                {logits}, 1e-3);
            CHECK(rep.pass);
        }
    }
}

TEST_CASE("maxpool gradient routes exactly one unit per window") {
    Rng rng(21);
    Tensor xt = rand_tensor({1, 1, 4, 4}, rng);
    Graph g;
    Tensor tracked = xt;
    tracked.requires_grad = true;
    auto x = g.leaf(tracked);
    auto loss = g.sum(g.maxpool2(x));
    g.backward(loss);
    const Tensor& grad = x.grad();
    // each 2x2 window contributes exactly one 1
    double total = 0;
    for (float v : grad.values()) {
        CHECK((v == 0.0f || v == 1.0f));
        total += v;
    }
    CHECK(total == 4.0);
}

TEST_CASE("relu at exactly zero is excluded via the coordinate filter") {
    Tensor x = Tensor::from({3}, {-1.0f, 0.0f, 2.0f});
    GradCheckOptions opt;
    opt.exclude = [](std::size_t, std::size_t coord) { return coord == 1; };
    auto rep = grad_check(
        [](GraphT<double>& g, const std::vector<VarT<double>>& xs) { return g.sum(g.relu(xs[0])); },
        {x}, 1e-6, opt);
    CHECK(rep.pass);
    CHECK(rep.compared == 2);
    CHECK(rep.skipped == 1);

    // without the exclusion the finite difference sees slope 1/2 at the kink
    auto bad = grad_check(
        [](GraphT<double>& g, const std::vector<VarT<double>>& xs) { return g.sum(g.relu(xs[0])); },
        {x}, 1e-6);
    CHECK_FALSE(bad.pass);
}

TEST_CASE("fan-out accumulates gradients") {
    // f = sum(x*x + x) => df/dx = 2x + 1
    Tensor xt = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
    xt.requires_grad = true;
    Graph g;
    auto x = g.leaf(xt);
    auto loss = g.sum(g.add(g.mul(x, x), x));
    g.backward(loss);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0f * xt[i] + 1.0f));
    }
}

TEST_CASE("backward runs once per graph and requires a scalar root") {
    Graph g;
    Tensor xt = Tensor::from({2}, {1.0f, 2.0f});
    xt.requires_grad = true;
    auto x = g.leaf(xt);
    CHECK_THROWS_AS(g.backward(x), ShapeError);  // non-scalar
    auto s = g.sum(x);
    g.backward(s);
    CHECK_THROWS_AS(g.backward(s), Error);
}

TEST_CASE("adam") {
    SUBCASE("zero gradient and zero weight decay leave parameters unchanged") {
        Adam adam(0.9, 0.999, 1e-8, 0.0);
        Tensor p = Tensor::from({3}, {1.0f, -2.0f, 0.25f});
        std::vector<NamedParam> params{{"p", p}};
        std::vector<Tensor> grads{Tensor({3})};
        adam.step(params, grads, 0.01);
        CHECK(p[0] == 1.0f);
        CHECK(p[1] == -2.0f);
        CHECK(p[2] == 0.25f);
    }

    SUBCASE("first step moves each weight by about -lr*sign(g)") {
        Adam adam(0.9, 0.999, 1e-8, 0.0);
        Tensor p = Tensor({4});
        std::vector<NamedParam> params{{"p", p}};
        Tensor g = Tensor::from({4}, {0.5f, -0.25f, 2.0f, -1e-3f});
        std::vector<Tensor> grads{g};
        const double lr = 0.01;
        adam.step(params, grads, lr);
        // bias correction at t=1 makes m_hat=g, v_hat=g^2
        for (std::size_t i = 0; i < 4; ++i) {
            const double expect = -lr * (g[i] > 0 ? 1.0 : -1.0) *
                                  (std::fabs(g[i]) / (std::fabs(g[i]) + 1e-8));
            CHECK(p[i] == doctest::Approx(expect).epsilon(1e-4));
        }
        CHECK(adam.steps() == 1);
    }

    SUBCASE("decoupled weight decay shrinks before the update") {
        Adam adam(0.9, 0.999, 1e-8, 0.5);
        Tensor p = Tensor::from({1}, {2.0f});
        std::vector<NamedParam> params{{"p", p}};
        std::vector<Tensor> grads{Tensor({1})};  // zero gradient isolates decay
        adam.step(params, grads, 0.1);
        CHECK(p[0] == doctest::Approx(2.0f * (1.0f - 0.1f * 0.5f)));
    }

    SUBCASE("identical runs are bitwise identical") {
        auto run = [] {
            Adam adam;
            Rng rng(3);
            Tensor p = rand_tensor({8}, rng);
            std::vector<NamedParam> params{{"p", p}};
            for (int i = 0; i < 5; ++i) {
                std::vector<Tensor> grads{rand_tensor({8}, rng)};
                adam.step(params, grads, 1e-3);
            }
            return p.clone();
        };
        const Tensor a = run();
        const Tensor b = run();
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }

    SUBCASE("non-finite gradient aborts before mutating, naming the parameter") {
        Adam adam;
        Tensor p = Tensor::from({2}, {1.0f, 1.0f});
        std::vector<NamedParam> params{{"weights.q", p}};
        Tensor g = Tensor::from({2}, {0.1f, std::numeric_limits<float>::quiet_NaN()});
        std::vector<Tensor> grads{g};
        CHECK_THROWS_WITH_AS(adam.step(params, grads, 0.01), doctest::Contains("weights.q"),
                             NumericError);
        CHECK(p[0] == 1.0f);
        CHECK(adam.steps() == 0);
    }
}
