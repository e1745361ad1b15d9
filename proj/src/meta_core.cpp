#include "mldg/meta_core.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

namespace mldg {

void DomainBatch::validate() const {
    if (labels.empty()) throw Error(fmt::format("domain {}: no samples", domain_id));
    if (inputs.shape.size() != 2 || inputs.shape[0] != labels.size())
        throw Error(fmt::format("domain {}: inputs {} do not match {} labels", domain_id,
                                shape_str(inputs.shape), labels.size()));
}

IndexSplit split_indices(std::size_t num_domains, std::size_t meta_test_count, Rng& rng) {
    if (meta_test_count < 1 || meta_test_count >= num_domains)
        throw Error(fmt::format("cannot split {} domains with {} meta-test domains", num_domains,
                                meta_test_count));
    std::vector<std::size_t> idx(num_domains);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    IndexSplit s;
    s.meta_test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(meta_test_count));
    s.meta_train.assign(idx.begin() + static_cast<std::ptrdiff_t>(meta_test_count), idx.end());
    std::sort(s.meta_test.begin(), s.meta_test.end());
    std::sort(s.meta_train.begin(), s.meta_train.end());
    return s;
}

MetaSplit split_domains(std::span<const DomainBatch> domains, std::size_t meta_test_count, Rng& rng) {
    const auto s = split_indices(domains.size(), meta_test_count, rng);
    MetaSplit out;
    for (auto i : s.meta_train) out.meta_train.push_back(&domains[i]);
    for (auto i : s.meta_test) out.meta_test.push_back(&domains[i]);
    return out;
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::vanilla: return "vanilla";
        case Variant::gc: return "gc";
        case Variant::gn: return "gn";
        case Variant::taylor: return "taylor";
        case Variant::alpha_zero: return "alpha_zero";
        case Variant::aggregate_baseline: return "aggregate_baseline";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    for (auto v : {Variant::vanilla, Variant::gc, Variant::gn, Variant::taylor, Variant::alpha_zero,
                   Variant::aggregate_baseline})
        if (s == variant_name(v)) return v;
    throw Error("unknown variant '" + s + "'");
}

void MldgConfig::validate(std::size_t num_domains) const {
    if (!(alpha >= 0.0)) throw Error("alpha must be >= 0");
    if (!(beta >= 0.0)) throw Error("beta must be >= 0");
    if (!(gamma > 0.0)) throw Error("gamma must be > 0");
    if (!(gamma_decay > 0.0)) throw Error("gamma_decay must be > 0");
    if (variant != Variant::aggregate_baseline &&
        (meta_test_count < 1 || meta_test_count >= num_domains))
        throw Error(fmt::format("meta_test_count must satisfy 1 <= V < S (V={}, S={})",
                                meta_test_count, num_domains));
}

// ---------------------------------------------------------------------------
// Objectives

NodeRef inner_update(CompGraph& g, NodeRef theta, NodeRef meta_train_loss, double alpha) {
    const auto df = grad(g, meta_train_loss, theta, true);
    return g.sub(theta, g.affine(df, alpha));
}

ObjectiveTerms vanilla_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                                 double alpha, double beta) {
    ObjectiveTerms t;
    t.meta_train = f(g, theta);
    t.adapted = inner_update(g, theta, t.meta_train, alpha);
    t.meta_test = gl(g, t.adapted);
    t.objective = g.add(t.meta_train, g.affine(t.meta_test, beta));
    return t;
}

ObjectiveTerms taylor_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                                double alpha, double beta) {
    ObjectiveTerms t;
    t.meta_train = f(g, theta);
    t.meta_test = gl(g, theta);
    const auto df = grad(g, t.meta_train, theta, true);
    const auto dg = grad(g, t.meta_test, theta, true);
    const auto base = g.add(t.meta_train, g.affine(t.meta_test, beta));
    t.objective = g.add(base, g.affine(g.dot(dg, df), -beta * alpha));
    return t;
}

ObjectiveTerms gc_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                            double alpha, double beta) {
    ObjectiveTerms t;
    t.meta_train = f(g, theta);
    t.meta_test = gl(g, theta);
    const auto df = grad(g, t.meta_train, theta, true);
    const auto dg = grad(g, t.meta_test, theta, true);
    const auto nf2 = g.dot(df, df);
    const auto ng2 = g.dot(dg, dg);
    const auto base = g.add(t.meta_train, g.affine(t.meta_test, beta));
    const bool degenerate = g.has_value(nf2) && g.has_value(ng2) &&
                            (std::sqrt(g.item(nf2)) < kGradEps || std::sqrt(g.item(ng2)) < kGradEps);
    if (degenerate) {
        t.objective = base;
        return t;
    }
    const auto cosine = g.mul(g.dot(df, dg), g.recip(g.mul(g.sqrt(nf2), g.sqrt(ng2))));
    t.objective = g.add(base, g.affine(cosine, -beta * alpha));
    return t;
}

ObjectiveTerms gn_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                            double alpha, double beta) {
    ObjectiveTerms t;
    t.meta_train = f(g, theta);
    t.adapted = inner_update(g, theta, t.meta_train, alpha);
    t.meta_test = gl(g, t.adapted);
    const auto dg = grad(g, t.meta_test, t.adapted, true);
    t.objective = g.add(t.meta_train, g.affine(g.dot(dg, dg), beta));
    return t;
}

ObjectiveTerms build_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                               const MldgConfig& cfg) {
    switch (cfg.variant) {
        case Variant::vanilla: return vanilla_objective(g, theta, f, gl, cfg.alpha, cfg.beta);
        case Variant::alpha_zero: return vanilla_objective(g, theta, f, gl, 0.0, cfg.beta);
        case Variant::taylor: return taylor_objective(g, theta, f, gl, cfg.alpha, cfg.beta);
        case Variant::gc: return gc_objective(g, theta, f, gl, cfg.alpha, cfg.beta);
        case Variant::gn: return gn_objective(g, theta, f, gl, cfg.alpha, cfg.beta);
        case Variant::aggregate_baseline: break;
    }
    throw Error("aggregate_baseline has no split objective");
}

// ---------------------------------------------------------------------------
// Supervised losses

NodeRef domain_loss(CompGraph& g, NodeRef theta, const MlpSpec& spec, const DomainBatch& d,
                    AccessLog* log) {
    d.validate();
    if (log) log->touch(d.domain_id);
    return xent_loss(g, forward(g, theta, spec, d.inputs), d.labels);
}

NodeRef multi_domain_loss(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                          std::span<const DomainBatch* const> domains, AccessLog* log) {
    if (domains.empty()) throw Error("loss over an empty domain list");
    NodeRef total = domain_loss(g, theta, spec, *domains[0], log);
    for (std::size_t i = 1; i < domains.size(); ++i)
        total = g.add(total, domain_loss(g, theta, spec, *domains[i], log));
    return g.affine(total, 1.0 / static_cast<double>(domains.size()));
}

NodeRef pooled_loss(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                    std::span<const DomainBatch* const> domains, AccessLog* log) {
    if (domains.empty()) throw Error("loss over an empty domain list");
    DomainBatch pooled;
    pooled.domain_id = -1;
    std::vector<double> x;
    std::size_t dim = 0;
    for (const auto* d : domains) {
        d->validate();
        if (log) log->touch(d->domain_id);
        dim = d->inputs.shape[1];
        x.insert(x.end(), d->inputs.data.begin(), d->inputs.data.end());
        pooled.labels.insert(pooled.labels.end(), d->labels.begin(), d->labels.end());
    }
    pooled.inputs = Tensor({pooled.labels.size(), dim}, std::move(x));
    return xent_loss(g, forward(g, theta, spec, pooled.inputs), pooled.labels);
}

NodeRef meta_train_loss(CompGraph& g, NodeRef theta, const MlpSpec& spec, const MetaSplit& split) {
    return multi_domain_loss(g, theta, spec, split.meta_train);
}

namespace {

struct SplitLosses {
    LossFn f, g;
};

SplitLosses split_losses(const MlpSpec& spec, const MetaSplit& split, AccessLog* log = nullptr) {
    if (split.meta_train.empty() || split.meta_test.empty())
        throw Error("split needs non-empty meta-train and meta-test sets");
    return {[&spec, &split, log](CompGraph& g, NodeRef th) {
                return multi_domain_loss(g, th, spec, split.meta_train, log);
            },
            [&spec, &split, log](CompGraph& g, NodeRef th) {
                return multi_domain_loss(g, th, spec, split.meta_test, log);
            }};
}

}  // namespace

ObjectiveTerms mldg_objective(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                              const MetaSplit& split, const MldgConfig& cfg) {
    auto l = split_losses(spec, split);
    return vanilla_objective(g, theta, l.f, l.g, cfg.alpha, cfg.beta);
}

ObjectiveTerms taylor_objective(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                                const MetaSplit& split, const MldgConfig& cfg) {
    auto l = split_losses(spec, split);
    return taylor_objective(g, theta, l.f, l.g, cfg.alpha, cfg.beta);
}

ObjectiveTerms mldg_gc_objective(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                                 const MetaSplit& split, const MldgConfig& cfg) {
    auto l = split_losses(spec, split);
    return gc_objective(g, theta, l.f, l.g, cfg.alpha, cfg.beta);
}

ObjectiveTerms mldg_gn_objective(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                                 const MetaSplit& split, const MldgConfig& cfg) {
    auto l = split_losses(spec, split);
    return gn_objective(g, theta, l.f, l.g, cfg.alpha, cfg.beta);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

DomainBatch subsample(const DomainBatch& d, std::size_t batch, Rng& rng) {
    if (batch == 0 || batch >= d.size()) return d;
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(batch);
    std::sort(idx.begin(), idx.end());
    const auto dim = d.inputs.shape[1];
    DomainBatch out;
    out.domain_id = d.domain_id;
    out.inputs = Tensor::zeros({batch, dim});
    for (std::size_t r = 0; r < batch; ++r) {
        std::copy_n(d.inputs.data.begin() + static_cast<std::ptrdiff_t>(idx[r] * dim), dim,
                    out.inputs.data.begin() + static_cast<std::ptrdiff_t>(r * dim));
        out.labels.push_back(d.labels[idx[r]]);
    }
    return out;
}

}  // namespace

MetaStepResult mldg_step(const ParameterVector& params, const MlpSpec& spec,
                     std::span<const DomainBatch> domains, const MldgConfig& cfg, Rng& rng,
                     double gamma, AccessLog* log) {
    cfg.validate(domains.size());
    std::vector<DomainBatch> batches;
    const bool minibatch = cfg.batch_size > 0;
    if (minibatch) {
        batches.reserve(domains.size());
        for (const auto& d : domains) batches.push_back(subsample(d, cfg.batch_size, rng));
        domains = batches;
    }

    CompGraph g;
    const auto theta = bind_params(g, params);
    MetaStepResult r;
    NodeRef objective;
    if (cfg.variant == Variant::aggregate_baseline) {
        std::vector<const DomainBatch*> all;
        for (const auto& d : domains) all.push_back(&d);
        objective = pooled_loss(g, theta, spec, all, log);
        r.meta_train = g.item(objective);
    } else {
        const auto split = split_domains(domains, cfg.meta_test_count, rng);
        const auto l = split_losses(spec, split, log);
        const auto t = build_objective(g, theta, l.f, l.g, cfg);
        objective = t.objective;
        r.meta_train = g.item(t.meta_train);
        r.meta_test = g.item(t.meta_test);
    }
    r.objective = g.item(objective);
    const auto& dtheta = g.value(grad(g, objective, theta));
    std::vector<double> next = params.data();
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= gamma * dtheta[i];
    r.params = params.with_data(std::move(next));
    return r;
}

TrainResult train(std::span<const DomainBatch> domains, const MldgConfig& cfg, const MlpSpec& spec,
                  const ParameterVector& initial, AccessLog* log) {
    cfg.validate(domains.size());
    if (initial.size() != spec.param_count())
        throw Error("initial parameters do not match the MLP spec");
    Rng rng(cfg.seed);
    TrainResult out{initial, {}};
    out.history.reserve(cfg.iterations);
    double gamma = cfg.gamma;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        auto step = mldg_step(out.params, spec, domains, cfg, rng, gamma, log);
        const auto t1 = std::chrono::steady_clock::now();
        out.params = std::move(step.params);
        out.history.push_back(HistoryRow{it, step.meta_train, step.meta_test, step.objective,
                                         std::chrono::duration<double, std::milli>(t1 - t0).count()});
        gamma *= cfg.gamma_decay;
    }
    return out;
}

TrainResult train(std::span<const DomainBatch> domains, const MldgConfig& cfg, const MlpSpec& spec,
                  AccessLog* log) {
    return train(domains, cfg, spec, init_params(spec, cfg.seed), log);
}

void write_history_csv(std::ostream& os, std::span<const HistoryRow> rows) {
    os << "iteration,F,G,objective,wall_ms\n";
    for (const auto& r : rows)
        os << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.3f}\n", r.iteration, r.meta_train, r.meta_test,
                          r.objective, r.wall_ms);
}

double accuracy(const ParameterVector& params, const MlpSpec& spec, const DomainBatch& d) {
    d.validate();
    const auto dim = d.inputs.shape[1];
    std::vector<double> out(spec.output_dim());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        forward_row(spec, params.data(),
                    std::span<const double>(d.inputs.data.data() + i * dim, dim), out);
        const auto pred = static_cast<std::size_t>(std::max_element(out.begin(), out.end()) - out.begin());
        correct += pred == d.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

}  // namespace mldg
