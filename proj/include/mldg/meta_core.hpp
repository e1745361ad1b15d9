#pragma once

// MLDG objectives and the supervised meta-training loop.
//
// The objective builders are written against loss closures LossFn(g, theta)
// so the same code serves supervised domains and RL surrogates. Every
// second-order term is exact: the inner gradient is built with
// create_graph set and the outer gradient flows through it.

#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mldg/autodiff.hpp"
#include "mldg/nnet.hpp"

namespace mldg {

using Rng = std::mt19937_64;

struct DomainBatch {
    int domain_id = 0;
    Tensor inputs;                    // [N, d]
    std::vector<std::size_t> labels;  // N

    std::size_t size() const { return labels.size(); }
    void validate() const;
};

/// Counts training-time reads per domain id. Trainers touch it every time a
/// domain's data or environment is used.
struct AccessLog {
    std::map<int, std::size_t> counts;
    void touch(int domain_id) { ++counts[domain_id]; }
    std::size_t count(int domain_id) const {
        auto it = counts.find(domain_id);
        return it == counts.end() ? 0 : it->second;
    }
};

struct IndexSplit {
    std::vector<std::size_t> meta_train;
    std::vector<std::size_t> meta_test;
};

/// Uniform random partition of S indices into S-V meta-train and V
/// meta-test, each sorted ascending.
IndexSplit split_indices(std::size_t num_domains, std::size_t meta_test_count, Rng& rng);

struct MetaSplit {
    std::vector<const DomainBatch*> meta_train;
    std::vector<const DomainBatch*> meta_test;
};

MetaSplit split_domains(std::span<const DomainBatch> domains, std::size_t meta_test_count, Rng& rng);

enum class Variant { vanilla, gc, gn, taylor, alpha_zero, aggregate_baseline };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct MldgConfig {
    double alpha = 1e-2;
    double beta = 1.0;
    double gamma = 1e-2;
    std::size_t meta_test_count = 1;
    Variant variant = Variant::vanilla;
    std::size_t iterations = 0;
    std::uint64_t seed = 0;
    double gamma_decay = 1.0;  // per-iteration multiplier; 1 disables decay
    std::size_t batch_size = 0;  // per domain; 0 = full batch

    void validate(std::size_t num_domains) const;
};

using LossFn = std::function<NodeRef(CompGraph&, NodeRef theta)>;

struct ObjectiveTerms {
    NodeRef objective;
    NodeRef meta_train;  // F(theta)
    NodeRef meta_test;   // G at whichever point the variant evaluates it
    NodeRef adapted;     // theta' when the variant forms one
};

/// theta - alpha * dF/dtheta, still differentiable w.r.t. theta.
NodeRef inner_update(CompGraph& g, NodeRef theta, NodeRef meta_train_loss, double alpha);

/// F(theta) + beta * G(theta - alpha F'(theta))
ObjectiveTerms vanilla_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                                 double alpha, double beta);
/// F + beta G - beta alpha (G' . F'), all at theta.
ObjectiveTerms taylor_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                                double alpha, double beta);
/// F + beta G - beta alpha cos(F', G'). The cosine is taken as 0 when either
/// gradient norm is below kGradEps.
ObjectiveTerms gc_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                            double alpha, double beta);
/// F + beta ||G'(theta - alpha F'(theta))||^2
ObjectiveTerms gn_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                            double alpha, double beta);

/// Dispatch on cfg.variant. aggregate_baseline is not a split objective and
/// is rejected here.
ObjectiveTerms build_objective(CompGraph& g, NodeRef theta, const LossFn& f, const LossFn& gl,
                               const MldgConfig& cfg);

inline constexpr double kGradEps = 1e-12;

// Supervised losses -----------------------------------------------------------

NodeRef domain_loss(CompGraph& g, NodeRef theta, const MlpSpec& spec, const DomainBatch& d,
                    AccessLog* log = nullptr);

/// Mean over domains of the per-domain mean loss.
NodeRef multi_domain_loss(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                          std::span<const DomainBatch* const> domains, AccessLog* log = nullptr);

/// Loss over all samples of all domains pooled together.
NodeRef pooled_loss(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                    std::span<const DomainBatch* const> domains, AccessLog* log = nullptr);

NodeRef meta_train_loss(CompGraph& g, NodeRef theta, const MlpSpec& spec, const MetaSplit& split);

ObjectiveTerms mldg_objective(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                              const MetaSplit& split, const MldgConfig& cfg);
ObjectiveTerms taylor_objective(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                                const MetaSplit& split, const MldgConfig& cfg);
ObjectiveTerms mldg_gc_objective(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                                 const MetaSplit& split, const MldgConfig& cfg);
ObjectiveTerms mldg_gn_objective(CompGraph& g, NodeRef theta, const MlpSpec& spec,
                                 const MetaSplit& split, const MldgConfig& cfg);

struct MetaStepResult {
    ParameterVector params;
    double meta_train = 0.0;
    double meta_test = std::numeric_limits<double>::quiet_NaN();
    double objective = 0.0;
};

MetaStepResult mldg_step(const ParameterVector& params, const MlpSpec& spec,
                     std::span<const DomainBatch> domains, const MldgConfig& cfg, Rng& rng,
                     double gamma, AccessLog* log = nullptr);

struct HistoryRow {
    std::size_t iteration;
    double meta_train;
    double meta_test;
    double objective;
    double wall_ms;
};

struct TrainResult {
    ParameterVector params;
    std::vector<HistoryRow> history;
};

TrainResult train(std::span<const DomainBatch> domains, const MldgConfig& cfg, const MlpSpec& spec,
                  const ParameterVector& initial, AccessLog* log = nullptr);
TrainResult train(std::span<const DomainBatch> domains, const MldgConfig& cfg, const MlpSpec& spec,
                  AccessLog* log = nullptr);

void write_history_csv(std::ostream& os, std::span<const HistoryRow> rows);

/// Fraction of rows whose argmax logit equals the label.
double accuracy(const ParameterVector& params, const MlpSpec& spec, const DomainBatch& d);

}  // namespace mldg
