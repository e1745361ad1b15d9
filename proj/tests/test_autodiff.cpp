#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "mldg/autodiff.hpp"
#include "mldg/nnet.hpp"
#include "oracles.hpp"

using namespace mldg;

namespace {

using Builder = std::function<NodeRef(CompGraph&, NodeRef)>;

double eval_scalar(const Builder& b, const Shape& shape, const std::vector<double>& x) {
    CompGraph g;
    return g.item(b(g, g.input(Tensor(shape, x))));
}

std::vector<double> analytic_grad(const Builder& b, const Shape& shape, const std::vector<double>& x) {
    CompGraph g;
    const auto in = g.input(Tensor(shape, x));
    return g.value(grad(g, b(g, in), in));
}

// Contract a tensor node to a scalar with fixed pseudo-random weights so each
// output element gets a distinct adjoint.
NodeRef contract(CompGraph& g, NodeRef y) {
    std::mt19937_64 rng(99);
    const auto w = oracle::random_vector(numel(g.shape(y)), rng);
    return g.dot(y, g.constant(Tensor(g.shape(y), w)));
}

struct OpCase {
    const char* name;
    Shape shape;
    double lo, hi;
    Builder build;
};

std::vector<OpCase> op_cases() {
    auto c = [](CompGraph& g, NodeRef y) { return contract(g, y); };
    std::mt19937_64 rng(5);
    const auto m = oracle::random_vector(12, rng);
    const auto bias = oracle::random_vector(4, rng);
    return {
        {"affine", {3, 4}, -1, 1, [=](CompGraph& g, NodeRef x) { return c(g, g.affine(x, -1.7, 0.3)); }},
        {"tanh", {3, 4}, -2, 2, [=](CompGraph& g, NodeRef x) { return c(g, g.tanh(x)); }},
        {"relu", {3, 4}, 0.2, 1.5, [=](CompGraph& g, NodeRef x) { return c(g, g.relu(g.affine(x, 1.0, -0.7))); }},
        {"exp", {3, 4}, -1, 1, [=](CompGraph& g, NodeRef x) { return c(g, g.exp(x)); }},
        {"log", {3, 4}, 0.5, 2, [=](CompGraph& g, NodeRef x) { return c(g, g.log(x)); }},
        {"recip", {3, 4}, 0.5, 2, [=](CompGraph& g, NodeRef x) { return c(g, g.recip(x)); }},
        {"sqrt", {3, 4}, 0.5, 2, [=](CompGraph& g, NodeRef x) { return c(g, g.sqrt(x)); }},
        {"add_sub_mul", {3, 4}, -1, 1,
         [=](CompGraph& g, NodeRef x) {
             const auto k = g.constant(Tensor({3, 4}, m));
             return c(g, g.mul(g.add(x, k), g.sub(x, g.tanh(x))));
         }},
        {"scalar_mul", {3, 4}, -1, 1,
         [=](CompGraph& g, NodeRef x) { return c(g, g.scalar_mul(g.sum(g.tanh(x)), x)); }},
        {"matmul_transpose", {3, 4}, -1, 1,
         [=](CompGraph& g, NodeRef x) { return c(g, g.matmul(x, g.transpose(g.tanh(x)))); }},
        {"add_row_vec", {3, 4}, -1, 1,
         [=](CompGraph& g, NodeRef x) { return c(g, g.add_row_vec(g.mul(x, x), g.sum_rows(x))); }},
        {"broadcast_rows", {4}, -1, 1,
         [=](CompGraph& g, NodeRef x) { return c(g, g.tanh(g.broadcast_rows(x, 3))); }},
        {"sum_cols_broadcast_cols", {3, 4}, -1, 1,
         [=](CompGraph& g, NodeRef x) { return c(g, g.mul(x, g.broadcast_cols(g.sum_cols(x), 4))); }},
        {"log_softmax", {3, 4}, -2, 2, [=](CompGraph& g, NodeRef x) { return c(g, g.log_softmax(x)); }},
        {"fill_sum", {3, 4}, -1, 1,
         [=](CompGraph& g, NodeRef x) { return c(g, g.mul(g.fill(g.sum(g.tanh(x)), {3, 4}), x)); }},
        {"slice_embed", {12}, -1, 1,
         [=](CompGraph& g, NodeRef x) {
             const auto s = g.slice(x, 2, {2, 4});
             return c(g, g.tanh(g.embed(g.mul(s, s), 3, {3, 4})));
         }},
        {"gather_scatter", {3, 4}, -1, 1,
         [=](CompGraph& g, NodeRef x) {
             const auto picked = g.gather(g.tanh(x), {1, 3, 0});
             const auto idx = std::make_shared<const std::vector<std::size_t>>(
                 std::vector<std::size_t>{2, 2, 1});
             return c(g, g.mul(g.scatter_cols(g.mul(picked, picked), idx, 4), x));
         }},
        {"mlp_bias", {4}, -1, 1,
         [=](CompGraph& g, NodeRef b) {
             const auto k = g.constant(Tensor({3, 4}, m));
             return c(g, g.tanh(g.add_row_vec(k, b)));
         }},
    };
}

}  // namespace

TEST_SUITE("graph_eval") {
    TEST_CASE("square and relu") {
        CompGraph g;
        const auto x = g.placeholder({});
        const auto sq = g.mul(x, x);
        const auto r = g.relu(x);
        const auto vals = g.eval({{x.id, Tensor::scalar(3.0)}});
        CHECK(vals[static_cast<std::size_t>(sq.id)][0] == 9.0);
        CHECK(vals[static_cast<std::size_t>(r.id)][0] == 3.0);
        const auto neg = g.eval({{x.id, Tensor::scalar(-2.0)}});
        CHECK(neg[static_cast<std::size_t>(r.id)][0] == 0.0);
    }

    TEST_CASE("one-hidden-unit network matches hand arithmetic") {
        // x=2, W0=0.5, b0=0.1, W1=-1.5, b1=0.3: h = relu(1.1) = 1.1, y = -1.65 + 0.3
        MlpSpec spec{{1, 1, 1}, Activation::relu, OutputKind::logits};
        CompGraph g;
        const auto theta = g.input(Tensor({4}, {0.5, 0.1, -1.5, 0.3}));
        const auto x = g.placeholder({1, 1});
        const auto y = forward(g, theta, spec, x).logits;
        const auto vals = g.eval({{x.id, Tensor({1, 1}, {2.0})}});
        CHECK(vals[static_cast<std::size_t>(y.id)][0] == doctest::Approx(-1.35).epsilon(1e-15));
    }

    TEST_CASE("errors") {
        CompGraph g;
        const auto x = g.placeholder({2});
        g.exp(x);
        CHECK_THROWS_AS(g.eval({}), Error);
        CHECK_THROWS_AS(g.eval({{x.id, Tensor({3}, {1, 2, 3})}}), Error);
        CHECK_THROWS_AS(g.add(x, g.placeholder({3})), Error);
        CHECK_THROWS_AS(g.matmul(g.placeholder({2, 3}), g.placeholder({2, 3})), Error);
    }

    TEST_CASE("determinism: eager and re-evaluated values are bit-identical") {
        std::mt19937_64 rng(1);
        MlpSpec spec{{3, 8, 2}, Activation::tanh, OutputKind::logits};
        const auto p = init_params(spec, 3);
        CompGraph g;
        const auto theta = bind_params(g, p);
        const auto x = g.input(Tensor({5, 3}, oracle::random_vector(15, rng)));
        const std::vector<std::size_t> labels{0, 1, 1, 0, 1};
        const auto loss = xent_loss(g, forward(g, theta, spec, x), labels);
        const auto dl = grad(g, loss, theta, true);
        const auto a = g.eval({});
        const auto b = g.eval({});
        CHECK(a == b);
        CHECK(a[static_cast<std::size_t>(dl.id)] == g.value(dl));
        CHECK(a[static_cast<std::size_t>(loss.id)][0] == g.item(loss));
    }
}

TEST_SUITE("grad") {
    TEST_CASE("power rule and constant second derivative") {
        CompGraph g;
        const auto x = g.input(Tensor::scalar(3.0));
        const auto f = g.mul(x, x);
        CHECK(g.item(grad(g, f, x)) == 6.0);

        CompGraph h;
        const auto y = h.input(Tensor::scalar(5.0));
        const auto dy = grad(h, h.mul(y, y), y, true);
        CHECK(h.item(dy) == 10.0);
        CHECK(h.item(grad(h, dy, y)) == 2.0);
    }

    TEST_CASE("non-scalar output is rejected") {
        CompGraph g;
        const auto x = g.input(Tensor({2}, {1, 2}));
        CHECK_THROWS_AS(grad(g, g.tanh(x), x), Error);
    }

    TEST_CASE("unreached wrt yields explicit zeros") {
        CompGraph g;
        const auto x = g.input(Tensor({2}, {1, 2}));
        const auto unused = g.input(Tensor({3}, {1, 2, 3}));
        const NodeRef wrt[] = {x, unused};
        const auto gs = grad(g, g.sum(g.mul(x, x)), wrt);
        CHECK(g.value(gs[0]) == std::vector<double>{2, 4});
        CHECK(g.value(gs[1]) == std::vector<double>{0, 0, 0});
    }

    TEST_CASE("20-parameter MLP cross-entropy vs central differences") {
        const std::vector<std::size_t> sizes{3, 3, 2};
        MlpSpec spec{sizes, Activation::tanh, OutputKind::logits};
        REQUIRE(spec.param_count() == 20);
        std::mt19937_64 rng(11);
        const auto theta0 = oracle::random_vector(20, rng);
        const auto xs = oracle::random_vector(18, rng);
        const std::vector<std::size_t> labels{0, 1, 1, 0, 0, 1};

        CompGraph g;
        const auto theta = g.input(Tensor({20}, theta0));
        const auto loss = xent_loss(g, forward(g, theta, spec, Tensor({6, 3}, xs)), labels);
        const auto analytic = g.value(grad(g, loss, theta));
        const auto numeric = oracle::central_diff(
            [&](const std::vector<double>& t) { return oracle::mlp_xent(sizes, true, t, xs, labels); },
            theta0, 1e-4);
        CHECK(oracle::rel_err(analytic, numeric) < 1e-4);
        CHECK(g.item(loss) == doctest::Approx(oracle::mlp_xent(sizes, true, theta0, xs, labels)));
    }

    TEST_CASE("every op: first and second derivatives vs central differences") {
        for (const auto& c : op_cases()) {
            CAPTURE(c.name);
            std::mt19937_64 rng(7);
            const auto x0 = oracle::random_vector(numel(c.shape), rng, c.lo, c.hi);
            const auto analytic = analytic_grad(c.build, c.shape, x0);
            const auto numeric = oracle::central_diff(
                [&](const std::vector<double>& x) { return eval_scalar(c.build, c.shape, x); }, x0, 1e-5);
            CHECK(oracle::rel_err(analytic, numeric) < 1e-4);

            // Hessian-vector product against differences of the gradient.
            const auto v = oracle::random_vector(x0.size(), rng);
            CompGraph g;
            const auto in = g.input(Tensor(c.shape, x0));
            const auto hv = hvp(g, c.build(g, in), in, v);
            const auto cols = oracle::jacobian_fd(
                [&](const std::vector<double>& x) { return analytic_grad(c.build, c.shape, x); }, x0, 1e-5);
            std::vector<double> hv_fd(x0.size(), 0.0);
            for (std::size_t j = 0; j < x0.size(); ++j)
                for (std::size_t i = 0; i < x0.size(); ++i) hv_fd[i] += cols[j][i] * v[j];
            CHECK(oracle::rel_err(hv, hv_fd) < 1e-4);
        }
    }

    TEST_CASE("linearity") {
        std::mt19937_64 rng(3);
        const Shape shape{3, 4};
        const auto x0 = oracle::random_vector(12, rng);
        const Builder f = [](CompGraph& g, NodeRef x) { return contract(g, g.log_softmax(g.tanh(x))); };
        const Builder h = [](CompGraph& g, NodeRef x) { return g.sum(g.exp(g.mul(x, x))); };
        const double a = 0.7, b = -2.3;
        const auto gf = analytic_grad(f, shape, x0);
        const auto gh = analytic_grad(h, shape, x0);
        const auto gab = analytic_grad(
            [&](CompGraph& g, NodeRef x) { return g.add(g.affine(f(g, x), a), g.affine(h(g, x), b)); },
            shape, x0);
        for (std::size_t i = 0; i < x0.size(); ++i)
            CHECK(gab[i] == doctest::Approx(a * gf[i] + b * gh[i]).epsilon(1e-13));
    }
}

TEST_SUITE("hvp") {
    TEST_CASE("identity Hessian") {
        CompGraph g;
        const auto x = g.input(Tensor({3}, {0.3, -1.0, 2.0}));
        const auto loss = g.affine(g.dot(x, x), 0.5);
        const std::vector<double> v{1.5, -2.0, 0.25};
        CHECK(hvp(g, loss, x, v) == v);
    }

    TEST_CASE("off-diagonal Hessian") {
        CompGraph g;
        const auto x = g.input(Tensor({2}, {0.4, 0.9}));
        const auto loss = g.mul(g.slice(x, 0, {}), g.slice(x, 1, {}));
        CHECK(hvp(g, loss, x, std::vector<double>{1.0, 0.0}) == std::vector<double>{0.0, 1.0});
    }

    TEST_CASE("dimension mismatch") {
        CompGraph g;
        const auto x = g.input(Tensor({2}, {0.4, 0.9}));
        CHECK_THROWS_AS(hvp(g, g.dot(x, x), x, std::vector<double>{1.0}), Error);
    }

    TEST_CASE("10-parameter MLP: hvp vs finite-difference Hessian") {
        const std::vector<std::size_t> sizes{1, 2, 2};
        MlpSpec spec{sizes, Activation::tanh, OutputKind::logits};
        REQUIRE(spec.param_count() == 10);
        std::mt19937_64 rng(21);
        const auto theta0 = oracle::random_vector(10, rng);
        const auto xs = oracle::random_vector(4, rng, -2, 2);
        const std::vector<std::size_t> labels{0, 1, 0, 1};
        auto grad_at = [&](const std::vector<double>& t) {
            CompGraph g;
            const auto th = g.input(Tensor({10}, t));
            return g.value(grad(g, xent_loss(g, forward(g, th, spec, Tensor({4, 1}, xs)), labels), th));
        };
        const auto cols = oracle::jacobian_fd(grad_at, theta0, 1e-5);
        for (std::size_t j = 0; j < 10; ++j) {
            std::vector<double> e(10, 0.0);
            e[j] = 1.0;
            CompGraph g;
            const auto th = g.input(Tensor({10}, theta0));
            const auto loss = xent_loss(g, forward(g, th, spec, Tensor({4, 1}, xs)), labels);
            CHECK(oracle::max_abs_diff(hvp(g, loss, th, e), cols[j]) < 1e-3);
        }
    }

    TEST_CASE("second-order symmetry on a tanh network") {
        MlpSpec spec{{2, 5, 3}, Activation::tanh, OutputKind::logits};
        const auto p = init_params(spec, 17);
        std::mt19937_64 rng(2);
        const auto xs = oracle::random_vector(12, rng);
        const std::vector<std::size_t> labels{0, 2, 1, 1, 0, 2};
        const auto n = spec.param_count();
        std::vector<std::vector<double>> h(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> e(n, 0.0);
            e[i] = 1.0;
            CompGraph g;
            const auto th = bind_params(g, p);
            h[i] = hvp(g, xent_loss(g, forward(g, th, spec, Tensor({6, 2}, xs)), labels), th, e);
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(h[i][j] - h[j][i]));
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("ParameterVector manifest") {
    ParameterVector p;
    p.add("a", {2, 3}, std::vector<double>(6, 1.0));
    p.add_zeros("b", {3});
    CHECK(p.size() == 9);
    CHECK(p.entry("b").offset == 6);
    CHECK_THROWS_AS(p.add("c", {2}, std::vector<double>(3, 0.0)), Error);
    CHECK_THROWS_AS(p.add_zeros("a", {1}), Error);
    std::size_t total = 0;
    for (const auto& e : p.manifest()) {
        CHECK(e.offset == total);
        total += numel(e.shape);
    }
    CHECK(total == p.size());
}
