#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "mldg/domains_synth.hpp"
#include "mldg/meta_core.hpp"
#include "oracles.hpp"

using namespace mldg;

namespace {

const MlpSpec kTanhNet{{2, 8, 2}, Activation::tanh, OutputKind::logits};  // 42 weights

struct Instance {
    std::vector<DomainBatch> domains;
    std::vector<double> theta;
    std::vector<std::size_t> train_idx, test_idx;

    MetaSplit split() const {
        MetaSplit s;
        for (auto i : train_idx) s.meta_train.push_back(&domains[i]);
        for (auto i : test_idx) s.meta_test.push_back(&domains[i]);
        return s;
    }
    std::vector<oracle::RefDomain> ref(const std::vector<std::size_t>& idx) const {
        std::vector<oracle::RefDomain> out;
        for (auto i : idx) out.push_back({domains[i].inputs.data, domains[i].labels});
        return out;
    }
};

Instance make_instance(std::uint64_t seed, std::size_t points = 10) {
    std::mt19937_64 rng(seed);
    Instance in;
    in.domains = make_domains(3, points, rng());
    in.theta = oracle::random_vector(kTanhNet.param_count(), rng);
    const std::size_t test = rng() % 3;
    for (std::size_t i = 0; i < 3; ++i) (i == test ? in.test_idx : in.train_idx).push_back(i);
    return in;
}

ParameterVector as_params(const std::vector<double>& theta) {
    return init_params(kTanhNet, 0).with_data(theta);
}

using Builder = ObjectiveTerms (*)(CompGraph&, NodeRef, const MlpSpec&, const MetaSplit&, const MldgConfig&);

double lib_value(Builder b, const Instance& in, const std::vector<double>& theta, const MldgConfig& cfg) {
    CompGraph g;
    const auto th = g.input(Tensor({theta.size()}, theta));
    return g.item(b(g, th, kTanhNet, in.split(), cfg).objective);
}

std::vector<double> lib_grad(Builder b, const Instance& in, const std::vector<double>& theta,
                             const MldgConfig& cfg) {
    CompGraph g;
    const auto th = g.input(Tensor({theta.size()}, theta));
    return g.value(grad(g, b(g, th, kTanhNet, in.split(), cfg).objective, th));
}

// Closures over a 2-vector for the quadratic toys.
LossFn quadratic(std::vector<double> a, std::vector<double> c) {
    // 0.5 * sum a_i (theta_i - c_i)^2
    return [a, c](CompGraph& g, NodeRef th) {
        const auto d = g.sub(th, g.constant(Tensor({c.size()}, c)));
        return g.affine(g.dot(g.mul(d, d), g.constant(Tensor({a.size()}, a))), 0.5);
    };
}

}  // namespace

TEST_CASE("split_indices partitions and is reproducible") {
    Rng a(3), b(3);
    for (int it = 0; it < 50; ++it) {
        const auto s = split_indices(6, 2, a);
        const auto t = split_indices(6, 2, b);
        CHECK(s.meta_train == t.meta_train);
        CHECK(s.meta_test == t.meta_test);
        REQUIRE(s.meta_train.size() == 4);
        REQUIRE(s.meta_test.size() == 2);
        std::vector<int> seen(6, 0);
        for (auto i : s.meta_train) ++seen[i];
        for (auto i : s.meta_test) ++seen[i];
        for (int v : seen) CHECK(v == 1);
    }
    Rng r(1);
    const auto nine = split_indices(9, 1, r);
    CHECK(nine.meta_train.size() == 8);
    CHECK(nine.meta_test.size() == 1);
    CHECK_THROWS_AS(split_indices(3, 3, r), Error);
    CHECK_THROWS_AS(split_indices(3, 0, r), Error);
}

TEST_CASE("meta-test selection is uniform over domains") {
    Rng rng(17);
    std::vector<int> hits(9, 0);
    const int n = 10000;
    for (int it = 0; it < n; ++it) ++hits[split_indices(9, 1, rng).meta_test[0]];
    for (int h : hits) {
        const double f = static_cast<double>(h) / n;
        CHECK(f >= 0.09);
        CHECK(f <= 0.13);
    }
}

TEST_CASE("split_domains keeps domain ids disjoint") {
    const auto ds = make_domains(9, 5, 4);
    Rng rng(9);
    const auto s = split_domains(ds, 1, rng);
    CHECK(s.meta_train.size() == 8);
    CHECK(s.meta_test.size() == 1);
    for (const auto* d : s.meta_train) CHECK(d->domain_id != s.meta_test[0]->domain_id);
}

TEST_CASE("meta-train loss weights each domain equally") {
    auto big = make_domains(2, 1000, 8);
    auto small = make_domains(2, 10, 9);
    std::vector<DomainBatch> ds{small[0], big[1]};
    ds[0].domain_id = 0;
    ds[1].domain_id = 1;
    std::mt19937_64 rng(5);
    const auto theta = oracle::random_vector(kTanhNet.param_count(), rng);
    CompGraph g;
    const auto th = g.input(Tensor({theta.size()}, theta));
    MetaSplit s{{&ds[0], &ds[1]}, {}};
    const double f = g.item(meta_train_loss(g, th, kTanhNet, s));
    const double m0 = oracle::mlp_xent(kTanhNet.layer_sizes, true, theta, ds[0].inputs.data, ds[0].labels);
    const double m1 = oracle::mlp_xent(kTanhNet.layer_sizes, true, theta, ds[1].inputs.data, ds[1].labels);
    CHECK(f == doctest::Approx(0.5 * (m0 + m1)).epsilon(1e-12));
    const double pooled = (m0 * 10 + m1 * 1000) / 1010;
    CHECK(std::abs(f - pooled) > 1e-6);
}

TEST_CASE("perfect single-sample domain has zero meta-train loss") {
    const MlpSpec spec{{1, 2}, Activation::relu, OutputKind::logits};
    DomainBatch d{0, Tensor({1, 1}, {1.0}), {0}};
    CompGraph g;
    // Logits (800, -800) for x=1; the true class has probability 1 in double.
    const auto th = g.input(Tensor({4}, {800.0, -800.0, 0.0, 0.0}));
    MetaSplit s{{&d}, {}};
    CHECK(g.item(meta_train_loss(g, th, spec, s)) == 0.0);
}

TEST_CASE("inner update on a quadratic") {
    CompGraph g;
    const auto th = g.input(Tensor({2}, {1.0, 1.0}));
    const auto loss = quadratic({1.0, 1.0}, {0.0, 0.0})(g, th);
    const auto adapted = inner_update(g, th, loss, 0.1);
    const auto& v = g.value(adapted);
    CHECK(v[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(v[1] == doctest::Approx(0.9).epsilon(1e-15));
    // Jacobian rows: d(theta'_i)/d(theta) = (1 - alpha) e_i.
    for (std::size_t i = 0; i < 2; ++i) {
        const auto row = g.value(grad(g, g.slice(adapted, i, {}), th));
        for (std::size_t j = 0; j < 2; ++j) CHECK(row[j] == doctest::Approx(i == j ? 0.9 : 0.0).epsilon(1e-15));
    }
    CompGraph h;
    const auto th2 = h.input(Tensor({2}, {0.3, -2.0}));
    const auto a0 = inner_update(h, th2, quadratic({2.0, 5.0}, {1.0, 1.0})(h, th2), 0.0);
    CHECK(h.value(a0) == std::vector<double>{0.3, -2.0});
}

TEST_CASE("alpha = 0 reduces every split objective to F + beta G bitwise") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> ub(0.1, 3.0);
    for (int i = 0; i < 100; ++i) {
        const auto in = make_instance(rng());
        MldgConfig cfg;
        cfg.alpha = 0.0;
        cfg.beta = ub(rng);
        CompGraph g;
        const auto th = g.input(Tensor({in.theta.size()}, in.theta));
        const auto s = in.split();
        const double f = g.item(multi_domain_loss(g, th, kTanhNet, s.meta_train));
        const double gv = g.item(multi_domain_loss(g, th, kTanhNet, s.meta_test));
        const double want = f + cfg.beta * gv;
        CHECK(lib_value(mldg_objective, in, in.theta, cfg) == want);
        CHECK(lib_value(taylor_objective, in, in.theta, cfg) == want);
        CHECK(lib_value(mldg_gc_objective, in, in.theta, cfg) == want);
    }
}

TEST_CASE("beta = 0 leaves only the meta-train loss") {
    const auto in = make_instance(3);
    MldgConfig cfg;
    cfg.alpha = 0.3;
    cfg.beta = 0.0;
    const double f = oracle::multi_loss({kTanhNet.layer_sizes, true}, in.theta, in.ref(in.train_idx));
    CHECK(lib_value(mldg_objective, in, in.theta, cfg) == doctest::Approx(f).epsilon(1e-12));
    CHECK(lib_value(mldg_gn_objective, in, in.theta, cfg) == doctest::Approx(f).epsilon(1e-12));
}

TEST_CASE("objective values agree with the reference formulas") {
    const oracle::RefNet net{kTanhNet.layer_sizes, true};
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto in = make_instance(seed);
        MldgConfig cfg;
        cfg.alpha = 0.2;
        cfg.beta = 0.7;
        const auto tr = in.ref(in.train_idx), te = in.ref(in.test_idx);
        using oracle::Objective;
        CHECK(lib_value(mldg_objective, in, in.theta, cfg) ==
              doctest::Approx(oracle::meta_objective(Objective::vanilla, net, in.theta, tr, te, 0.2, 0.7)).epsilon(1e-11));
        CHECK(lib_value(taylor_objective, in, in.theta, cfg) ==
              doctest::Approx(oracle::meta_objective(Objective::taylor, net, in.theta, tr, te, 0.2, 0.7)).epsilon(1e-11));
        CHECK(lib_value(mldg_gc_objective, in, in.theta, cfg) ==
              doctest::Approx(oracle::meta_objective(Objective::gc, net, in.theta, tr, te, 0.2, 0.7)).epsilon(1e-11));
        CHECK(lib_value(mldg_gn_objective, in, in.theta, cfg) ==
              doctest::Approx(oracle::meta_objective(Objective::gn, net, in.theta, tr, te, 0.2, 0.7)).epsilon(1e-11));
    }
}

TEST_CASE("meta-gradients match finite differences of the reference objectives") {
    const oracle::RefNet net{kTanhNet.layer_sizes, true};
    using oracle::Objective;
    const std::pair<Objective, Builder> variants[] = {{Objective::vanilla, mldg_objective},
                                                      {Objective::taylor, taylor_objective},
                                                      {Objective::gc, mldg_gc_objective},
                                                      {Objective::gn, mldg_gn_objective}};
    for (std::uint64_t seed : {11u, 12u}) {
        const auto in = make_instance(seed);
        const auto tr = in.ref(in.train_idx), te = in.ref(in.test_idx);
        MldgConfig cfg;
        cfg.alpha = 0.25;
        cfg.beta = 1.0;
        for (const auto& [kind, build] : variants) {
            const auto an = lib_grad(build, in, in.theta, cfg);
            const auto k = kind;
            const auto fd = oracle::central_diff(
                [&](const std::vector<double>& x) { return oracle::meta_objective(k, net, x, tr, te, 0.25, 1.0); },
                in.theta, 1e-5);
            CHECK(oracle::rel_err(an, fd) < 1e-6);
        }
    }
}

TEST_CASE("vanilla objective gradient on a 2-parameter model") {
    const LossFn f = [](CompGraph& g, NodeRef th) { return g.sum(g.tanh(g.mul(th, g.affine(th, 1.0, 0.5)))); };
    const LossFn gl = [](CompGraph& g, NodeRef th) {
        return g.sum(g.exp(g.affine(g.tanh(th), 0.7, -0.2)));
    };
    auto value = [&](const std::vector<double>& x) {
        CompGraph g;
        return g.item(vanilla_objective(g, g.input(Tensor({2}, x)), f, gl, 0.3, 0.8).objective);
    };
    const std::vector<double> x0{0.4, -0.9};
    CompGraph g;
    const auto th = g.input(Tensor({2}, x0));
    const auto an = g.value(grad(g, vanilla_objective(g, th, f, gl, 0.3, 0.8).objective, th));
    CHECK(oracle::rel_err(an, oracle::central_diff(value, x0, 1e-5)) < 1e-4);
}

TEST_CASE("taylor term vanishes for orthogonal gradients") {
    CompGraph g;
    const auto th = g.input(Tensor({2}, {1.0, 1.0}));
    const auto f = quadratic({1.0, 0.0}, {0.0, 0.0});
    const auto gl = quadratic({0.0, 1.0}, {0.0, 0.0});
    const auto t = taylor_objective(g, th, f, gl, 0.5, 2.0);
    CHECK(g.item(t.objective) == doctest::Approx(0.5 + 2.0 * 0.5).epsilon(1e-15));
}

TEST_CASE("taylor expansion error shrinks about fourfold when alpha halves") {
    std::mt19937_64 rng(123);
    int inside = 0;
    for (int i = 0; i < 40; ++i) {
        const auto in = make_instance(rng());
        auto gap = [&](double a) {
            MldgConfig c;
            c.alpha = a;
            return std::abs(lib_value(mldg_objective, in, in.theta, c) - lib_value(taylor_objective, in, in.theta, c));
        };
        const double r = gap(1e-2) / gap(5e-3);
        inside += r >= 3.0 && r <= 5.0;
    }
    CHECK(inside >= 36);
}

TEST_CASE("gradient cosine regularizer") {
    SUBCASE("identical losses give cosine 1") {
        CompGraph g;
        const auto th = g.input(Tensor({2}, {0.3, -0.4}));
        const auto f = quadratic({1.0, 3.0}, {1.0, 0.0});
        const auto t = gc_objective(g, th, f, f, 0.2, 0.5);
        const double fv = g.item(t.meta_train);
        CHECK(g.item(t.objective) == doctest::Approx(fv + 0.5 * fv - 0.5 * 0.2).epsilon(1e-14));
    }
    SUBCASE("opposite gradients give cosine -1") {
        CompGraph g;
        const auto th = g.input(Tensor({2}, {0.3, -0.4}));
        const LossFn f = [](CompGraph& gg, NodeRef x) { return gg.sum(x); };
        const LossFn gl = [](CompGraph& gg, NodeRef x) { return gg.affine(gg.sum(x), -1.0); };
        const auto t = gc_objective(g, th, f, gl, 0.2, 0.5);
        const double base = g.item(t.meta_train) + 0.5 * g.item(t.meta_test);
        CHECK(g.item(t.objective) == doctest::Approx(base + 0.5 * 0.2).epsilon(1e-14));
    }
    SUBCASE("vanishing gradient drops the term") {
        CompGraph g;
        const auto th = g.input(Tensor({2}, {1.0, 0.0}));
        const auto f = quadratic({1.0, 1.0}, {1.0, 0.0});
        const auto gl = quadratic({1.0, 1.0}, {0.0, 0.0});
        const auto t = gc_objective(g, th, f, gl, 0.2, 0.5);
        CHECK(g.item(t.objective) == g.item(g.add(t.meta_train, g.affine(t.meta_test, 0.5))));
    }
    SUBCASE("matches dot / norms of extracted gradient buffers and stays in [-1, 1]") {
        std::mt19937_64 rng(8);
        for (int i = 0; i < 20; ++i) {
            const auto in = make_instance(rng());
            CompGraph g;
            const auto th = g.input(Tensor({in.theta.size()}, in.theta));
            const auto s = in.split();
            const auto fl = multi_domain_loss(g, th, kTanhNet, s.meta_train);
            const auto gt = multi_domain_loss(g, th, kTanhNet, s.meta_test);
            const auto df = g.value(grad(g, fl, th));
            const auto dg = g.value(grad(g, gt, th));
            double dot = 0, nf = 0, ng = 0;
            for (std::size_t k = 0; k < df.size(); ++k) {
                dot += df[k] * dg[k];
                nf += df[k] * df[k];
                ng += dg[k] * dg[k];
            }
            const double cosine = dot / std::sqrt(nf * ng);
            MldgConfig cfg;
            cfg.alpha = 1.0;
            cfg.beta = 1.0;
            const double obj = lib_value(mldg_gc_objective, in, in.theta, cfg);
            const double term = g.item(fl) + g.item(gt) - obj;
            CHECK(term == doctest::Approx(cosine).epsilon(1e-10));
            CHECK(term >= -1.0 - 1e-12);
            CHECK(term <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("gradient-norm objective closed forms") {
    SUBCASE("alpha = 0, G = 0.5 |theta|^2 at (3, 4)") {
        CompGraph g;
        const auto th = g.input(Tensor({2}, {3.0, 4.0}));
        const auto f = quadratic({1.0, 1.0}, {0.0, 0.0});
        const auto t = gn_objective(g, th, f, f, 0.0, 0.5);
        CHECK(g.item(t.objective) == doctest::Approx(12.5 + 0.5 * 25.0).epsilon(1e-15));
    }
    SUBCASE("penalty vanishes where theta' minimizes G") {
        // F is linear so theta' = theta - alpha (1, 1) lands on G's minimum.
        CompGraph g;
        const auto th = g.input(Tensor({2}, {1.5, 0.5}));
        const LossFn f = [](CompGraph& gg, NodeRef x) { return gg.sum(x); };
        const auto gl = quadratic({1.0, 2.0}, {1.0, 0.0});
        const auto t = gn_objective(g, th, f, gl, 0.5, 3.0);
        CHECK(g.item(t.objective) == doctest::Approx(2.0).epsilon(1e-15));
    }
    SUBCASE("third-order gradient on a 5-parameter tanh model") {
        const std::vector<double> w{0.7, -1.2, 0.4, 0.9, -0.3};
        const LossFn f = [w](CompGraph& g, NodeRef x) {
            return g.sum(g.tanh(g.mul(x, g.constant(Tensor({5}, w)))));
        };
        const LossFn gl = [](CompGraph& g, NodeRef x) { return g.sum(g.square(g.tanh(g.affine(x, 1.3, -0.2)))); };
        auto value = [&](const std::vector<double>& x) {
            CompGraph g;
            return g.item(gn_objective(g, g.input(Tensor({5}, x)), f, gl, 0.4, 0.9).objective);
        };
        const std::vector<double> x0{0.2, -0.5, 0.8, 0.1, -0.9};
        CompGraph g;
        const auto th = g.input(Tensor({5}, x0));
        const auto an = g.value(grad(g, gn_objective(g, th, f, gl, 0.4, 0.9).objective, th));
        CHECK(oracle::rel_err(an, oracle::central_diff(value, x0, 1e-5)) < 1e-3);
    }
}

TEST_CASE("one vanilla step on a quadratic matches the hand-derived update") {
    // F = 0.5 (theta - c)^T A (theta - c), G = 0.5 (theta - d)^T B (theta - d), diagonal A and B.
    const std::vector<double> a{2.0, 0.5}, c{1.0, -1.0}, b{1.0, 3.0}, d{-0.5, 2.0};
    const std::vector<double> th0{0.3, 0.7};
    const double alpha = 0.1, beta = 0.8, gamma = 0.05;
    // Closed form: theta' = theta - alpha A (theta - c); G'(theta') = B (theta' - d);
    // step = F' + beta (I - alpha A) G'(theta').
    std::vector<double> want(2);
    for (int i = 0; i < 2; ++i) {
        const double fp = a[i] * (th0[i] - c[i]);
        const double ad = th0[i] - alpha * fp;
        const double gp = b[i] * (ad - d[i]);
        want[i] = th0[i] - gamma * (fp + beta * (1.0 - alpha * a[i]) * gp);
    }
    CompGraph g;
    const auto th = g.input(Tensor({2}, th0));
    const auto t = vanilla_objective(g, th, quadratic(a, c), quadratic(b, d), alpha, beta);
    const auto dth = g.value(grad(g, t.objective, th));
    for (int i = 0; i < 2; ++i) CHECK(th0[i] - gamma * dth[i] == doctest::Approx(want[i]).epsilon(1e-14));
}

TEST_CASE("mldg_step") {
    const auto ds = make_domains(3, 20, 6);
    const MlpSpec spec{{2, 5, 2}, Activation::tanh, OutputKind::logits};
    const auto p0 = init_params(spec, 2);
    MldgConfig cfg;
    SUBCASE("gamma = 0 leaves parameters unchanged") {
        Rng rng(1);
        const auto r = mldg_step(p0, spec, ds, cfg, rng, 0.0);
        CHECK(r.params.data() == p0.data());
    }
    SUBCASE("aggregate baseline is gradient descent on pooled data") {
        cfg.variant = Variant::aggregate_baseline;
        Rng rng(1);
        const auto r = mldg_step(p0, spec, ds, cfg, rng, 0.3);
        std::vector<double> x;
        std::vector<std::size_t> y;
        for (const auto& d : ds) {
            x.insert(x.end(), d.inputs.data.begin(), d.inputs.data.end());
            y.insert(y.end(), d.labels.begin(), d.labels.end());
        }
        const auto gr = oracle::mlp_xent_grad(spec.layer_sizes, true, p0.data(), x, y);
        for (std::size_t i = 0; i < gr.size(); ++i)
            CHECK(r.params.data()[i] == doctest::Approx(p0.data()[i] - 0.3 * gr[i]).epsilon(1e-12));
        CHECK(std::isnan(r.meta_test));
    }
    SUBCASE("access log sees only the given domains") {
        AccessLog log;
        Rng rng(1);
        mldg_step(p0, spec, ds, cfg, rng, 0.1, &log);
        for (const auto& [id, n] : log.counts) CHECK((id >= 0 && id < 3));
        CHECK(log.count(7) == 0);
    }
}

TEST_CASE("train") {
    const MlpSpec spec{{2, 6, 2}, Activation::tanh, OutputKind::logits};
    SUBCASE("zero iterations returns the initial parameters") {
        const auto ds = make_domains(2, 20, 1);
        MldgConfig cfg;
        cfg.iterations = 0;
        const auto init = init_params(spec, 4);
        const auto r = train(ds, cfg, spec, init);
        CHECK(r.params == init);
        CHECK(r.history.empty());
    }
    SUBCASE("training loss trends down on a separable two-domain toy") {
        SynthOptions opt;
        opt.max_amplitude = 0.0;
        opt.min_amplitude = 0.0;
        const auto ds = make_domains(2, 60, 3, opt);
        MldgConfig cfg;
        cfg.gamma = 0.1;
        cfg.alpha = 0.05;
        Rng rng(2);
        auto p = init_params(spec, 2);
        // Loss over both domains after each step, then a trailing mean of 10.
        std::vector<double> loss;
        for (int it = 0; it < 300; ++it) {
            p = mldg_step(p, spec, ds, cfg, rng, cfg.gamma).params;
            CompGraph g;
            const auto th = bind_params(g, p);
            const std::vector<const DomainBatch*> both{&ds[0], &ds[1]};
            loss.push_back(g.item(multi_domain_loss(g, th, spec, both)));
        }
        std::vector<double> smooth;
        for (std::size_t i = 9; i < loss.size(); ++i) {
            double s = 0;
            for (std::size_t k = i - 9; k <= i; ++k) s += loss[k];
            smooth.push_back(s / 10);
        }
        std::size_t rises = 0;
        for (std::size_t i = 1; i < smooth.size(); ++i) rises += smooth[i] > smooth[i - 1];
        CHECK(rises == 0);
        CHECK(smooth.back() < 0.5 * smooth.front());
    }
    SUBCASE("same seed, same run") {
        const auto ds = make_domains(3, 20, 1);
        MldgConfig cfg;
        cfg.iterations = 20;
        cfg.seed = 9;
        CHECK(train(ds, cfg, spec).params == train(ds, cfg, spec).params);
    }
}

TEST_CASE("config validation and naming") {
    MldgConfig cfg;
    CHECK_NOTHROW(cfg.validate(2));
    cfg.meta_test_count = 2;
    CHECK_THROWS_AS(cfg.validate(2), Error);
    cfg = {};
    cfg.gamma = 0.0;
    CHECK_THROWS_AS(cfg.validate(3), Error);
    cfg = {};
    cfg.alpha = -1.0;
    CHECK_THROWS_AS(cfg.validate(3), Error);
    for (auto v : {Variant::vanilla, Variant::gc, Variant::gn, Variant::taylor, Variant::alpha_zero,
                   Variant::aggregate_baseline})
        CHECK(parse_variant(variant_name(v)) == v);
    CHECK_THROWS_AS(parse_variant("nope"), Error);
}

TEST_CASE("history csv") {
    std::vector<HistoryRow> rows{{0, 0.5, 0.25, 0.75, 1.5}, {1, 0.4, std::nan(""), 0.4, 2.0}};
    std::ostringstream os;
    write_history_csv(os, rows);
    const auto s = os.str();
    CHECK(s.rfind("iteration,F,G,objective,wall_ms\n", 0) == 0);
    CHECK(s.find("0,0.5,0.25,0.75,1.500\n") != std::string::npos);
}

TEST_CASE("accuracy counts argmax matches") {
    const MlpSpec spec{{1, 2}, Activation::relu, OutputKind::logits};
    const auto p = init_params(spec, 0).with_data({1.0, -1.0, 0.0, 0.0});
    DomainBatch d{0, Tensor({4, 1}, {1.0, 2.0, -1.0, -3.0}), {0, 0, 0, 1}};
    CHECK(accuracy(p, spec, d) == doctest::Approx(0.75));
}
