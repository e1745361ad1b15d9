#include "mldg/rl_meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace mldg {

namespace {

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

int choose_action(std::span<const double> out, const CollectOptions& opt, Rng& rng) {
    switch (opt.mode) {
        case ActionMode::greedy: return static_cast<int>(argmax(out));
        case ActionMode::epsilon_greedy: {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            if (u(rng) < opt.epsilon) {
                std::uniform_int_distribution<int> a(0, static_cast<int>(out.size()) - 1);
                return a(rng);
            }
            return static_cast<int>(argmax(out));
        }
        case ActionMode::sample: {
            const auto p = softmax(out);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            double r = u(rng), acc = 0.0;
            for (std::size_t i = 0; i + 1 < p.size(); ++i) {
                acc += p[i];
                if (r < acc) return static_cast<int>(i);
            }
            return static_cast<int>(p.size() - 1);
        }
    }
    return 0;
}

void check_policy(const EnvSpec& spec, const MlpSpec& policy_spec) {
    if (policy_spec.output_dim() != spec.action_count())
        throw Error(fmt::format("policy has {} outputs, {} has {} actions", policy_spec.output_dim(),
                                spec.describe(), spec.action_count()));
    if (policy_spec.input_dim() != spec.state_dim())
        throw Error(fmt::format("policy has {} inputs, {} has {} state dimensions",
                                policy_spec.input_dim(), spec.describe(), spec.state_dim()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Trajectories and losses

std::vector<Trajectory> collect_trajectories(const EnvSpec& spec, std::span<const double> params,
                                             const MlpSpec& policy_spec, std::size_t n_episodes,
                                             Rng& rng, const CollectOptions& opt, AccessLog* log) {
    check_policy(spec, policy_spec);
    const auto dim = spec.state_dim();
    std::vector<double> obs(dim), out(policy_spec.output_dim());
    std::vector<Trajectory> result;
    result.reserve(n_episodes);
    for (std::size_t e = 0; e < n_episodes; ++e) {
        Trajectory t;
        t.domain_id = spec.domain_id;
        if (log) log->touch(spec.domain_id);
        EnvState s = env_reset(spec, rng);
        bool reached = false;
        while (!s.done) {
            observe(spec, s, obs);
            forward_row(policy_spec, params, obs, out);
            const int a = choose_action(out, opt, rng);
            const auto r = env_step(spec, s, a);
            t.states.push_back(s);
            t.observations.insert(t.observations.end(), obs.begin(), obs.end());
            t.actions.push_back(a);
            t.rewards.push_back(r.reward);
            reached = r.reached_goal;
            s = r.next_state;
        }
        if (log) log->touch(spec.domain_id);
        double disc = 1.0;
        for (double r : t.rewards) {
            t.total_return += disc * r;
            t.episode_reward += r;
            disc *= opt.discount;
        }
        t.failed = spec.kind == EnvKind::mountaincar && !reached;
        result.push_back(std::move(t));
    }
    return result;
}

std::vector<double> returns_to_go(std::span<const double> rewards, double discount) {
    std::vector<double> g(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc = rewards[i] + discount * acc;
        g[i] = acc;
    }
    return g;
}

NodeRef reinforce_loss(CompGraph& g, NodeRef theta, const MlpSpec& policy_spec,
                       std::span<const Trajectory> trajectories, double discount, bool use_baseline) {
    if (trajectories.empty()) throw Error("reinforce_loss: no trajectories");
    const auto dim = policy_spec.input_dim();
    std::vector<double> x, weight;
    std::vector<std::size_t> actions;
    for (const auto& t : trajectories) {
        if (t.observations.size() != t.length() * dim)
            throw Error("reinforce_loss: trajectory observations do not match the policy input");
        const auto rtg = returns_to_go(t.rewards, discount);
        x.insert(x.end(), t.observations.begin(), t.observations.end());
        weight.insert(weight.end(), rtg.begin(), rtg.end());
        for (int a : t.actions) actions.push_back(static_cast<std::size_t>(a));
    }
    if (actions.empty()) throw Error("reinforce_loss: trajectories are empty");
    if (use_baseline) {
        const double b = std::accumulate(weight.begin(), weight.end(), 0.0) /
                         static_cast<double>(weight.size());
        for (auto& w : weight) w -= b;
    }
    const auto n = actions.size();
    const auto logits = forward(g, theta, policy_spec, Tensor({n, dim}, std::move(x))).logits;
    const auto logp = g.gather(g.log_softmax(logits), std::move(actions));
    const auto weighted = g.dot(logp, g.constant(Tensor({n}, std::move(weight))));
    return g.affine(weighted, -1.0 / static_cast<double>(trajectories.size()));
}

NodeRef td_loss(CompGraph& g, NodeRef theta, std::span<const Transition> batch,
                std::span<const double> target_params, const MlpSpec& q_spec, double discount) {
    if (batch.empty()) throw Error("td_loss: empty transition batch");
    const auto dim = q_spec.input_dim();
    const auto n = batch.size();
    std::vector<double> x(n * dim), target(n);
    std::vector<std::size_t> actions(n);
    std::vector<double> q(q_spec.output_dim());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = batch[i];
        std::copy_n(t.obs.begin(), dim, x.begin() + static_cast<std::ptrdiff_t>(i * dim));
        actions[i] = static_cast<std::size_t>(t.action);
        double bootstrap = 0.0;
        if (!t.terminal) {
            forward_row(q_spec, target_params, std::span<const double>(t.next_obs.data(), dim), q);
            bootstrap = *std::max_element(q.begin(), q.end());
        }
        target[i] = t.reward + discount * bootstrap;
    }
    const auto qvals = forward(g, theta, q_spec, Tensor({n, dim}, std::move(x))).logits;
    const auto err = g.sub(g.gather(qvals, std::move(actions)), g.constant(Tensor({n}, std::move(target))));
    return g.mean(g.square(err));
}

void ReplayBuffer::push(const Transition& t) {
    if (capacity_ == 0) return;
    if (items_.size() < capacity_) {
        items_.push_back(t);
    } else {
        items_[next_] = t;
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw Error("sampling from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> u(0, items_.size() - 1);
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(items_[u(rng)]);
    return out;
}

std::vector<double> UpdateRule::apply(std::span<const double> params, std::span<const double> grad) {
    std::vector<double> g(grad.begin(), grad.end());
    if (clip_ > 0.0) {
        double n2 = 0.0;
        for (double v : g) n2 += v * v;
        const double norm = std::sqrt(n2);
        if (norm > clip_)
            for (auto& v : g) v *= clip_ / norm;
    }
    std::vector<double> next(params.begin(), params.end());
    if (kind_ == Optimizer::sgd) {
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= gamma_ * g[i];
        return next;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (m_.empty()) {
        m_.assign(g.size(), 0.0);
        v_.assign(g.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < next.size(); ++i) {
        m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
        v_[i] = b2 * v_[i] + (1.0 - b2) * g[i] * g[i];
        next[i] -= gamma_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
    return next;
}

void RlMldgConfig::validate(std::size_t num_domains) const {
    if (!(alpha >= 0.0)) throw Error("alpha must be >= 0");
    if (!(beta >= 0.0)) throw Error("beta must be >= 0");
    if (!(gamma > 0.0)) throw Error("gamma must be > 0");
    if (!(discount >= 0.0 && discount <= 1.0)) throw Error("discount must lie in [0, 1]");
    if (batch_episodes == 0) throw Error("batch_episodes must be >= 1");
    if (num_domains == 0) throw Error("no training domains");
    if (variant != Variant::aggregate_baseline &&
        (meta_test_count < 1 || meta_test_count >= num_domains))
        throw Error(fmt::format("meta_test_count must satisfy 1 <= V < S (V={}, S={})",
                                meta_test_count, num_domains));
    if (algo == RlAlgo::qlearning && (replay_batch == 0 || target_sync == 0 || train_step_cap == 0))
        throw Error("replay_batch, target_sync and train_step_cap must be >= 1");
}

namespace {

double mean_reward(std::span<const Trajectory> ts) {
    if (ts.empty()) return 0.0;
    double s = 0.0;
    for (const auto& t : ts) s += t.episode_reward;
    return s / static_cast<double>(ts.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Policy gradient

RlStepResult mldg_rl_step(std::span<const EnvSpec> domains, const ParameterVector& params,
                          const MlpSpec& policy_spec, const RlMldgConfig& cfg, Rng& rng,
                          AccessLog* log, UpdateRule* rule) {
    cfg.validate(domains.size());
    const CollectOptions opt{ActionMode::sample, 0.0, cfg.discount};
    CompGraph g;
    const auto theta = bind_params(g, params);
    RlStepResult r;
    std::vector<Trajectory> seen;
    NodeRef objective;

    auto collect = [&](std::span<const std::size_t> idx, std::span<const double> p) {
        std::vector<Trajectory> out;
        for (auto i : idx) {
            auto ts = collect_trajectories(domains[i], p, policy_spec, cfg.batch_episodes, rng, opt, log);
            for (auto& t : ts) out.push_back(std::move(t));
        }
        seen.insert(seen.end(), out.begin(), out.end());
        return out;
    };

    if (cfg.variant == Variant::aggregate_baseline) {
        std::vector<std::size_t> all(domains.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const auto ts = collect(all, params.data());
        objective = reinforce_loss(g, theta, policy_spec, ts, cfg.discount, cfg.use_baseline);
        r.meta_train = g.item(objective);
        r.meta_test = std::numeric_limits<double>::quiet_NaN();
    } else {
        const auto split = split_indices(domains.size(), cfg.meta_test_count, rng);
        const auto train_ts = collect(split.meta_train, params.data());
        const LossFn f = [&](CompGraph& gg, NodeRef th) {
            return reinforce_loss(gg, th, policy_spec, train_ts, cfg.discount, cfg.use_baseline);
        };
        // Meta-test experience is gathered under whatever parameters the
        // variant evaluates G at (theta' for vanilla and gn).
        const LossFn gl = [&](CompGraph& gg, NodeRef th) {
            const auto test_ts = collect(split.meta_test, gg.value(th));
            return reinforce_loss(gg, th, policy_spec, test_ts, cfg.discount, cfg.use_baseline);
        };
        MldgConfig mc;
        mc.alpha = cfg.alpha;
        mc.beta = cfg.beta;
        mc.variant = cfg.variant;
        const auto t = build_objective(g, theta, f, gl, mc);
        objective = t.objective;
        r.meta_train = g.item(t.meta_train);
        r.meta_test = g.item(t.meta_test);
    }
    r.objective = g.item(objective);
    const auto& d = g.value(grad(g, objective, theta));
    if (rule) {
        r.params = params.with_data(rule->apply(params.data(), d));
    } else {
        UpdateRule sgd(Optimizer::sgd, cfg.gamma, cfg.grad_clip);
        r.params = params.with_data(sgd.apply(params.data(), d));
    }
    r.mean_episode_reward = mean_reward(seen);
    r.episodes = seen.size();
    return r;
}

RlTrainResult train_policy_gradient(std::span<const EnvSpec> domains, const MlpSpec& policy_spec,
                                    const RlMldgConfig& cfg, const ParameterVector& initial,
                                    AccessLog* log) {
    cfg.validate(domains.size());
    for (const auto& d : domains) check_policy(d, policy_spec);
    Rng rng(cfg.seed);
    RlTrainResult out{initial, {}, 0};
    UpdateRule rule(cfg.optimizer, cfg.gamma, cfg.grad_clip);
    const auto iterations = cfg.episodes_per_domain / cfg.batch_episodes;
    for (std::size_t it = 0; it < iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        auto s = mldg_rl_step(domains, out.params, policy_spec, cfg, rng, log, &rule);
        const auto t1 = std::chrono::steady_clock::now();
        out.params = std::move(s.params);
        out.episodes += s.episodes;
        out.history.push_back({it, s.meta_train, s.meta_test, s.objective, s.mean_episode_reward,
                               std::chrono::duration<double, std::milli>(t1 - t0).count()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Q-learning

namespace {

struct DomainRunner {
    EnvSpec spec;
    EnvState state;
    ReplayBuffer replay;
    std::size_t steps = 0;
    std::size_t episodes = 0;
    double episode_reward = 0.0;
    std::vector<double> finished_rewards;
};

void act(DomainRunner& d, std::span<const double> params, const MlpSpec& q_spec,
         const RlMldgConfig& cfg, Rng& rng, AccessLog* log) {
    const auto dim = d.spec.state_dim();
    std::array<double, 4> obs{};
    std::vector<double> q(q_spec.output_dim());
    observe(d.spec, d.state, std::span<double>(obs.data(), dim));
    forward_row(q_spec, params, std::span<const double>(obs.data(), dim), q);
    const double frac = std::min(1.0, static_cast<double>(d.steps) /
                                          static_cast<double>(std::max<std::size_t>(1, cfg.epsilon_decay_steps)));
    const double eps = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
    const int a = choose_action(q, CollectOptions{ActionMode::epsilon_greedy, eps, cfg.discount}, rng);
    if (log) log->touch(d.spec.domain_id);
    const auto r = env_step(d.spec, d.state, a);
    Transition t;
    t.obs = obs;
    observe(d.spec, r.next_state, std::span<double>(t.next_obs.data(), dim));
    t.action = a;
    t.reward = r.reward;
    t.terminal = r.reached_goal;
    d.replay.push(t);
    ++d.steps;
    d.episode_reward += r.reward;
    if (r.done) {
        ++d.episodes;
        d.finished_rewards.push_back(d.episode_reward);
        d.episode_reward = 0.0;
        if (log) log->touch(d.spec.domain_id);
        d.state = env_reset(d.spec, rng);
    } else {
        d.state = r.next_state;
    }
}

NodeRef replay_loss(CompGraph& g, NodeRef theta, std::span<DomainRunner* const> ds,
                    std::span<const double> target, const MlpSpec& q_spec, const RlMldgConfig& cfg,
                    Rng& rng) {
    NodeRef total;
    for (auto* d : ds) {
        const auto batch = d->replay.sample(cfg.replay_batch, rng);
        const auto l = td_loss(g, theta, batch, target, q_spec, cfg.discount);
        total = total.valid() ? g.add(total, l) : l;
    }
    return g.affine(total, 1.0 / static_cast<double>(ds.size()));
}

}  // namespace

RlTrainResult train_q_learning(std::span<const EnvSpec> domains, const MlpSpec& q_spec,
                               const RlMldgConfig& cfg, const ParameterVector& initial,
                               AccessLog* log) {
    cfg.validate(domains.size());
    Rng rng(cfg.seed);
    std::vector<DomainRunner> runners;
    for (const auto& s : domains) {
        check_policy(s, q_spec);
        EnvSpec train_spec = s;
        train_spec.step_cap = std::min(s.step_cap, cfg.train_step_cap);
        if (log) log->touch(s.domain_id);
        EnvState st = env_reset(train_spec, rng);
        runners.push_back(DomainRunner{train_spec, st, ReplayBuffer(cfg.replay_capacity), 0, 0, 0.0, {}});
    }
    const auto budget = cfg.episodes_per_domain * domains.size();
    RlTrainResult out{initial, {}, 0};
    std::vector<double> target = initial.data();
    UpdateRule rule(cfg.optimizer, cfg.gamma, cfg.grad_clip);
    std::size_t updates = 0;
    auto total_episodes = [&] {
        std::size_t n = 0;
        for (const auto& r : runners) n += r.episodes;
        return n;
    };
    auto warm = [&] {
        for (const auto& r : runners)
            if (r.replay.size() < std::max(cfg.warmup, cfg.replay_batch)) return false;
        return true;
    };

    for (std::size_t it = 0; total_episodes() < budget; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto& theta_now = out.params.data();
        if (!warm()) {
            for (auto& r : runners) act(r, theta_now, q_spec, cfg, rng, log);
            continue;
        }
        CompGraph g;
        const auto theta = bind_params(g, out.params);
        NodeRef objective;
        double f_val = 0.0, g_val = std::numeric_limits<double>::quiet_NaN();
        if (cfg.variant == Variant::aggregate_baseline) {
            std::vector<DomainRunner*> all;
            for (auto& r : runners) {
                act(r, theta_now, q_spec, cfg, rng, log);
                all.push_back(&r);
            }
            objective = replay_loss(g, theta, all, target, q_spec, cfg, rng);
            f_val = g.item(objective);
        } else {
            const auto split = split_indices(runners.size(), cfg.meta_test_count, rng);
            std::vector<DomainRunner*> train_set, test_set;
            for (auto i : split.meta_train) {
                act(runners[i], theta_now, q_spec, cfg, rng, log);
                train_set.push_back(&runners[i]);
            }
            for (auto i : split.meta_test) test_set.push_back(&runners[i]);
            const LossFn f = [&](CompGraph& gg, NodeRef th) {
                return replay_loss(gg, th, train_set, target, q_spec, cfg, rng);
            };
            const LossFn gl = [&](CompGraph& gg, NodeRef th) {
                const auto& p = gg.value(th);
                for (auto* r : test_set) act(*r, p, q_spec, cfg, rng, log);
                return replay_loss(gg, th, test_set, target, q_spec, cfg, rng);
            };
            MldgConfig mc;
            mc.alpha = cfg.alpha;
            mc.beta = cfg.beta;
            mc.variant = cfg.variant;
            const auto t = build_objective(g, theta, f, gl, mc);
            objective = t.objective;
            f_val = g.item(t.meta_train);
            g_val = g.item(t.meta_test);
        }
        const auto& d = g.value(grad(g, objective, theta));
        out.params = out.params.with_data(rule.apply(out.params.data(), d));
        if (++updates % cfg.target_sync == 0) target = out.params.data();
        const auto t1 = std::chrono::steady_clock::now();
        double recent = 0.0;
        std::size_t cnt = 0;
        for (const auto& r : runners)
            if (!r.finished_rewards.empty()) {
                recent += r.finished_rewards.back();
                ++cnt;
            }
        out.history.push_back({it, f_val, g_val, g.item(objective), cnt ? recent / static_cast<double>(cnt) : 0.0,
                               std::chrono::duration<double, std::milli>(t1 - t0).count()});
    }
    out.episodes = total_episodes();
    return out;
}

// ---------------------------------------------------------------------------

PolicyEvaluation evaluate_policy(const EnvSpec& spec, const ParameterVector& params,
                                 const MlpSpec& policy_spec, std::size_t games, std::uint64_t seed) {
    if (games == 0) throw Error("evaluate_policy: games must be >= 1");
    Rng rng(seed);
    const CollectOptions opt{ActionMode::greedy, 0.0, 1.0};
    std::vector<double> ok;
    std::size_t failed = 0;
    for (std::size_t i = 0; i < games; ++i) {
        const auto t = collect_trajectories(spec, params.data(), policy_spec, 1, rng, opt)[0];
        if (t.failed)
            ++failed;
        else
            ok.push_back(t.episode_reward);
    }
    PolicyEvaluation e;
    e.games = games;
    e.failure_rate = static_cast<double>(failed) / static_cast<double>(games);
    if (!ok.empty()) {
        const double m = std::accumulate(ok.begin(), ok.end(), 0.0) / static_cast<double>(ok.size());
        double v = 0.0;
        for (double x : ok) v += (x - m) * (x - m);
        e.avg_return = m;
        e.return_sd = std::sqrt(v / static_cast<double>(ok.size()));
    }
    return e;
}

}  // namespace mldg
