#pragma once

// MLDG for reinforcement learning.
//
// Policy-gradient domains (cart-pole) use a REINFORCE surrogate; mountain car
// uses DQN-style TD losses with per-domain replay and a synced target
// network. In both cases meta-test experience is gathered under the adapted
// parameters, and the meta-gradient treats the sampled experience as fixed:
// only the surrogate/TD loss is differentiated through theta'.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "mldg/autodiff.hpp"
#include "mldg/meta_core.hpp"
#include "mldg/nnet.hpp"
#include "mldg/rl_envs.hpp"

namespace mldg {

struct Trajectory {
    int domain_id = 0;
    std::vector<EnvState> states;
    std::vector<double> observations;  // states.size() x obs_dim, row-major
    std::vector<int> actions;
    std::vector<double> rewards;
    double total_return = 0.0;  // sum_t discount^t r_t
    double episode_reward = 0.0;  // undiscounted
    bool failed = false;  // hit the step cap without reaching the goal (mountain car)

    std::size_t length() const { return actions.size(); }
};

enum class RlAlgo { reinforce, qlearning };
enum class Optimizer { sgd, adam };

/// Applies theta <- theta - step(grad). Plain SGD uses gamma directly; Adam
/// uses gamma as its base rate with the usual (0.9, 0.999, 1e-8) moments.
class UpdateRule {
public:
    UpdateRule(Optimizer kind, double gamma, double clip) : kind_(kind), gamma_(gamma), clip_(clip) {}
    std::vector<double> apply(std::span<const double> params, std::span<const double> grad);

private:
    Optimizer kind_;
    double gamma_;
    double clip_;
    std::size_t t_ = 0;
    std::vector<double> m_, v_;
};
enum class ActionMode { sample, epsilon_greedy, greedy };

struct CollectOptions {
    ActionMode mode = ActionMode::sample;
    double epsilon = 0.0;
    double discount = 1.0;
};

std::vector<Trajectory> collect_trajectories(const EnvSpec& spec, std::span<const double> params,
                                             const MlpSpec& policy_spec, std::size_t n_episodes,
                                             Rng& rng, const CollectOptions& opt,
                                             AccessLog* log = nullptr);

/// Discounted return-to-go of each step.
std::vector<double> returns_to_go(std::span<const double> rewards, double discount);

/// -(1/|tau|) sum_tau sum_t log pi(a_t|x_t) (G_t - b), with b the mean of all
/// G_t in the batch when use_baseline is set and 0 otherwise.
NodeRef reinforce_loss(CompGraph& g, NodeRef theta, const MlpSpec& policy_spec,
                       std::span<const Trajectory> trajectories, double discount,
                       bool use_baseline = true);

struct Transition {
    std::array<double, 4> obs{};
    std::array<double, 4> next_obs{};
    int action = 0;
    double reward = 0.0;
    bool terminal = false;  // goal reached; truncation at a cap is not terminal
};

/// Mean squared TD error against targets r + discount * max_a' Q_target(x', a').
NodeRef td_loss(CompGraph& g, NodeRef theta, std::span<const Transition> batch,
                std::span<const double> target_params, const MlpSpec& q_spec, double discount);

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
    void push(const Transition& t);
    std::vector<Transition> sample(std::size_t n, Rng& rng) const;
    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> items_;
};

struct RlMldgConfig {
    double alpha = 1e-2;
    double beta = 1.0;
    double gamma = 1e-3;
    std::size_t meta_test_count = 2;
    Variant variant = Variant::vanilla;
    double discount = 0.99;
    std::size_t episodes_per_domain = 500;
    std::size_t batch_episodes = 1;  // per domain per iteration (policy gradient)
    RlAlgo algo = RlAlgo::reinforce;
    bool use_baseline = true;
    std::uint64_t seed = 0;

    // Q-learning
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    std::size_t epsilon_decay_steps = 20000;  // env steps per domain
    std::size_t replay_capacity = 10000;
    std::size_t replay_batch = 32;  // per domain
    std::size_t warmup = 500;  // transitions per domain before updates start
    std::size_t target_sync = 100;
    std::size_t train_step_cap = 2000;  // episode cap while training
    double grad_clip = 0.0;  // on the update's global norm; 0 disables
    Optimizer optimizer = Optimizer::sgd;

    void validate(std::size_t num_domains) const;
};

struct RlHistoryRow {
    std::size_t iteration;
    double meta_train;
    double meta_test;
    double objective;
    double mean_episode_reward;
    double wall_ms;
};

struct RlTrainResult {
    ParameterVector params;
    std::vector<RlHistoryRow> history;
    std::size_t episodes = 0;
};

struct RlStepResult {
    ParameterVector params;
    double meta_train = 0.0;
    double meta_test = 0.0;
    double objective = 0.0;
    double mean_episode_reward = 0.0;
    std::size_t episodes = 0;
};

/// One policy-gradient meta-iteration over the training domains. Without an
/// update rule the step is plain gradient descent with cfg.gamma.
RlStepResult mldg_rl_step(std::span<const EnvSpec> domains, const ParameterVector& params,
                          const MlpSpec& policy_spec, const RlMldgConfig& cfg, Rng& rng,
                          AccessLog* log = nullptr, UpdateRule* rule = nullptr);

/// Policy-gradient training for episodes_per_domain / batch_episodes iterations.
RlTrainResult train_policy_gradient(std::span<const EnvSpec> domains, const MlpSpec& policy_spec,
                                    const RlMldgConfig& cfg, const ParameterVector& initial,
                                    AccessLog* log = nullptr);

/// DQN training until episodes_per_domain x |domains| episodes have finished.
RlTrainResult train_q_learning(std::span<const EnvSpec> domains, const MlpSpec& q_spec,
                               const RlMldgConfig& cfg, const ParameterVector& initial,
                               AccessLog* log = nullptr);

struct PolicyEvaluation {
    std::optional<double> avg_return;  // unset when every game failed
    double return_sd = 0.0;
    double failure_rate = 0.0;
    std::size_t games = 0;
};

/// Greedy play without learning. Failed games are excluded from the average.
PolicyEvaluation evaluate_policy(const EnvSpec& spec, const ParameterVector& params,
                                 const MlpSpec& policy_spec, std::size_t games, std::uint64_t seed);

}  // namespace mldg
