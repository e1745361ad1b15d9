#include "mldg/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

#include "mldg/domains_synth.hpp"

namespace mldg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

ObjectiveTerms variant_terms(CompGraph& g, NodeRef theta, const ToyProblem& p, const MldgConfig& cfg) {
    const auto split = p.split();
    switch (cfg.variant) {
        case Variant::vanilla:
        case Variant::alpha_zero: {
            MldgConfig c = cfg;
            if (cfg.variant == Variant::alpha_zero) c.alpha = 0.0;
            return mldg_objective(g, theta, p.spec, split, c);
        }
        case Variant::taylor: return taylor_objective(g, theta, p.spec, split, cfg);
        case Variant::gc: return mldg_gc_objective(g, theta, p.spec, split, cfg);
        case Variant::gn: return mldg_gn_objective(g, theta, p.spec, split, cfg);
        case Variant::aggregate_baseline: break;
    }
    throw Error("selfcheck: aggregate_baseline has no split objective");
}

}  // namespace

MetaSplit ToyProblem::split() const {
    MetaSplit s;
    for (auto i : partition.meta_train) s.meta_train.push_back(&domains[i]);
    for (auto i : partition.meta_test) s.meta_test.push_back(&domains[i]);
    return s;
}

ToyProblem make_toy_problem(std::uint64_t seed) {
    Rng rng(seed);
    ToyProblem p;
    p.spec = MlpSpec{{2, 8, 2}, Activation::tanh, OutputKind::logits};
    p.params = init_params(p.spec, rng());
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& w : p.params.data()) w = u(rng);
    p.domains = make_domains(3, 12, rng());
    p.partition = split_indices(3, 1, rng);
    return p;
}

double objective_value(const ToyProblem& p, std::span<const double> theta, const MldgConfig& cfg) {
    CompGraph g;
    const auto th = g.input(Tensor({theta.size()}, std::vector<double>(theta.begin(), theta.end())));
    return g.item(variant_terms(g, th, p, cfg).objective);
}

std::vector<double> objective_gradient(const ToyProblem& p, std::span<const double> theta,
                                       const MldgConfig& cfg) {
    CompGraph g;
    const auto th = g.input(Tensor({theta.size()}, std::vector<double>(theta.begin(), theta.end())));
    const auto t = variant_terms(g, th, p, cfg);
    return g.value(grad(g, t.objective, th));
}

CheckResult check_gradients(const SelfcheckOptions& opt) {
    const auto t0 = Clock::now();
    CheckResult r{"meta-gradient vs central differences", true, {}, 0.0};
    double worst = 0.0;
    std::string worst_at;
    for (auto v : {Variant::vanilla, Variant::taylor, Variant::gc, Variant::gn}) {
        for (std::size_t c = 0; c < opt.gradient_cases; ++c) {
            const auto p = make_toy_problem(opt.seed + 101 * c + static_cast<std::uint64_t>(v));
            MldgConfig cfg;
            cfg.variant = v;
            cfg.alpha = 0.1;
            cfg.beta = 1.0;
            const auto theta = p.params.data();
            const auto an = objective_gradient(p, theta, cfg);
            std::vector<double> fd(theta.size());
            auto x = theta;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double x0 = x[i];
                x[i] = x0 + opt.fd_step;
                const double fp = objective_value(p, x, cfg);
                x[i] = x0 - opt.fd_step;
                const double fm = objective_value(p, x, cfg);
                x[i] = x0;
                fd[i] = (fp - fm) / (2.0 * opt.fd_step);
            }
            double diff = 0.0, scale = 0.0;
            for (std::size_t i = 0; i < fd.size(); ++i) {
                diff = std::max(diff, std::abs(an[i] - fd[i]));
                scale = std::max(scale, std::abs(fd[i]));
            }
            const double rel = diff / std::max(scale, 1e-8);
            if (rel > worst) {
                worst = rel;
                worst_at = fmt::format("{} case {}", variant_name(v), c);
            }
            if (!(rel < opt.gradient_tol)) r.passed = false;
        }
    }
    r.detail = fmt::format("max relative error {:.3e} ({}), tolerance {:.0e}", worst, worst_at, opt.gradient_tol);
    r.seconds = seconds_since(t0);
    return r;
}

CheckResult check_alpha_zero(const SelfcheckOptions& opt) {
    const auto t0 = Clock::now();
    CheckResult r{"alpha=0 reduces to F + beta G", true, {}, 0.0};
    std::size_t mismatches = 0;
    Rng rng(opt.seed ^ 0xa5a5a5a5ULL);
    std::uniform_real_distribution<double> ub(0.1, 2.0);
    for (std::size_t i = 0; i < opt.instances; ++i) {
        const auto p = make_toy_problem(rng());
        MldgConfig cfg;
        cfg.alpha = 0.0;
        cfg.beta = ub(rng);
        CompGraph g;
        const auto th = bind_params(g, p.params);
        const auto split = p.split();
        const double obj = g.item(mldg_objective(g, th, p.spec, split, cfg).objective);
        CompGraph h;
        const auto th2 = bind_params(h, p.params);
        const double f = h.item(multi_domain_loss(h, th2, p.spec, split.meta_train));
        const double gv = h.item(multi_domain_loss(h, th2, p.spec, split.meta_test));
        if (obj != f + cfg.beta * gv) ++mismatches;
    }
    r.passed = mismatches == 0;
    r.detail = fmt::format("{} of {} instances differ bitwise", mismatches, opt.instances);
    r.seconds = seconds_since(t0);
    return r;
}

CheckResult check_taylor(const SelfcheckOptions& opt) {
    const auto t0 = Clock::now();
    CheckResult r{"first-order expansion error shrinks quadratically", true, {}, 0.0};
    std::size_t inside = 0;
    Rng rng(opt.seed ^ 0x5a5a5a5aULL);
    for (std::size_t i = 0; i < opt.instances; ++i) {
        const auto p = make_toy_problem(rng());
        auto gap = [&](double alpha) {
            MldgConfig v;
            v.alpha = alpha;
            MldgConfig t = v;
            t.variant = Variant::taylor;
            return std::abs(objective_value(p, p.params.data(), v) - objective_value(p, p.params.data(), t));
        };
        const double ratio = gap(opt.taylor_alpha) / gap(opt.taylor_alpha / 2.0);
        if (ratio >= 3.0 && ratio <= 5.0) ++inside;
    }
    const double frac = static_cast<double>(inside) / static_cast<double>(opt.instances);
    r.passed = frac >= opt.taylor_pass_fraction;
    r.detail = fmt::format("{} of {} error ratios in [3, 5] (need {:.0f}%)", inside, opt.instances,
                           100.0 * opt.taylor_pass_fraction);
    r.seconds = seconds_since(t0);
    return r;
}

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opt) {
    return {check_gradients(opt), check_taylor(opt), check_alpha_zero(opt)};
}

}  // namespace mldg
