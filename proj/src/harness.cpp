#include "mldg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace mldg {

namespace {

constexpr std::uint64_t kPartitionSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kSourceSalt = 0xc2b2ae3d27d4eb4fULL;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& v, const std::string& key, const std::string& where) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, out);
    if (v.empty() || r.ec != std::errc{} || r.ptr != end || !std::isfinite(out))
        throw ConfigError(where, fmt::format("{} expects a number, got '{}'", key, v));
    return out;
}

std::uint64_t to_uint(const std::string& v, const std::string& key, const std::string& where) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, out);
    if (v.empty() || r.ec != std::errc{} || r.ptr != end)
        throw ConfigError(where, fmt::format("{} expects a non-negative integer, got '{}'", key, v));
    return out;
}

bool to_bool(const std::string& v, const std::string& key, const std::string& where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(where, fmt::format("{} expects true or false, got '{}'", key, v));
}

std::vector<std::uint64_t> to_seeds(const std::string& v, const std::string& where) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_uint(trim(item), "seeds", where));
    if (out.empty()) throw ConfigError(where, "seeds must list at least one seed");
    return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto num = [&](const char* key, auto member) {
            t[key] = [key, member](ExperimentConfig& c, const std::string& v, const std::string& w) {
                member(c) = to_double(v, key, w);
            };
        };
        auto count = [&](const char* key, auto member) {
            t[key] = [key, member](ExperimentConfig& c, const std::string& v, const std::string& w) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(to_uint(v, key, w));
            };
        };
        auto flag = [&](const char* key, auto member) {
            t[key] = [key, member](ExperimentConfig& c, const std::string& v, const std::string& w) {
                member(c) = to_bool(v, key, w);
            };
        };
        t["experiment"] = [](ExperimentConfig&, const std::string&, const std::string&) {};
        t["method"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
            try {
                c.method = parse_method(v);
            } catch (const Error& e) {
                throw ConfigError(w, e.what());
            }
        };
        t["seeds"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
            c.seeds = to_seeds(v, w);
        };
        t["output_dir"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
            if (v.empty()) throw ConfigError(w, "output_dir must not be empty");
            c.output_dir = v;
        };
        t["optimizer"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
            if (v == "sgd")
                c.rl.optimizer = Optimizer::sgd;
            else if (v == "adam")
                c.rl.optimizer = Optimizer::adam;
            else
                throw ConfigError(w, fmt::format("optimizer must be sgd or adam, got '{}'", v));
        };
        count("repeats", [](ExperimentConfig& c) -> auto& { return c.repeats; });
        count("hidden_units", [](ExperimentConfig& c) -> auto& { return c.hidden_units; });
        count("threads", [](ExperimentConfig& c) -> auto& { return c.threads; });
        flag("write_history", [](ExperimentConfig& c) -> auto& { return c.write_history; });

        // Shared meta-learning rates go to whichever trainer the experiment uses.
        for (const char* key : {"alpha", "beta", "gamma"}) {
            t[key] = [key](ExperimentConfig& c, const std::string& v, const std::string& w) {
                const double x = to_double(v, key, w);
                const std::string k = key;
                double& sl = k == "alpha" ? c.mldg.alpha : k == "beta" ? c.mldg.beta : c.mldg.gamma;
                double& rl = k == "alpha" ? c.rl.alpha : k == "beta" ? c.rl.beta : c.rl.gamma;
                sl = x;
                rl = x;
            };
        }
        t["meta_test_count"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
            c.mldg.meta_test_count = c.rl.meta_test_count = to_uint(v, "meta_test_count", w);
        };

        count("iterations", [](ExperimentConfig& c) -> auto& { return c.mldg.iterations; });
        num("gamma_decay", [](ExperimentConfig& c) -> auto& { return c.mldg.gamma_decay; });
        count("batch_size", [](ExperimentConfig& c) -> auto& { return c.mldg.batch_size; });
        count("synth_domains", [](ExperimentConfig& c) -> auto& { return c.synth_domains; });
        count("synth_points", [](ExperimentConfig& c) -> auto& { return c.synth_points; });
        count("grid_resolution", [](ExperimentConfig& c) -> auto& { return c.grid_resolution; });
        num("max_amplitude", [](ExperimentConfig& c) -> auto& { return c.max_amplitude; });

        num("discount", [](ExperimentConfig& c) -> auto& { return c.rl.discount; });
        count("episodes_per_domain", [](ExperimentConfig& c) -> auto& { return c.rl.episodes_per_domain; });
        count("batch_episodes", [](ExperimentConfig& c) -> auto& { return c.rl.batch_episodes; });
        flag("use_baseline", [](ExperimentConfig& c) -> auto& { return c.rl.use_baseline; });
        num("epsilon_start", [](ExperimentConfig& c) -> auto& { return c.rl.epsilon_start; });
        num("epsilon_end", [](ExperimentConfig& c) -> auto& { return c.rl.epsilon_end; });
        count("epsilon_decay_steps", [](ExperimentConfig& c) -> auto& { return c.rl.epsilon_decay_steps; });
        count("replay_capacity", [](ExperimentConfig& c) -> auto& { return c.rl.replay_capacity; });
        count("replay_batch", [](ExperimentConfig& c) -> auto& { return c.rl.replay_batch; });
        count("warmup", [](ExperimentConfig& c) -> auto& { return c.rl.warmup; });
        count("target_sync", [](ExperimentConfig& c) -> auto& { return c.rl.target_sync; });
        count("train_step_cap", [](ExperimentConfig& c) -> auto& { return c.rl.train_step_cap; });
        num("grad_clip", [](ExperimentConfig& c) -> auto& { return c.rl.grad_clip; });
        count("train_domains", [](ExperimentConfig& c) -> auto& { return c.train_domains; });
        count("heldout_domains", [](ExperimentConfig& c) -> auto& { return c.heldout_domains; });
        count("eval_games", [](ExperimentConfig& c) -> auto& { return c.eval_games; });
        count("eval_step_cap", [](ExperimentConfig& c) -> auto& { return c.eval_step_cap; });
        return t;
    }();
    return table;
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

std::vector<EnvSpec> rl_domain_pool(ExperimentKind e) {
    std::vector<EnvSpec> pool;
    switch (e) {
        case ExperimentKind::cartpole_length:
            for (int i = 1; i <= 9; ++i) pool.push_back(EnvSpec::cartpole(0.5 * i));
            break;
        case ExperimentKind::cartpole_length_mass:
            for (double len : {0.5, 2.5, 4.5})
                for (double mass : {1.0, 2.0, 3.0}) pool.push_back(EnvSpec::cartpole(len, mass));
            break;
        case ExperimentKind::mountaincar:
            for (int i = 0; i < 9; ++i) pool.push_back(EnvSpec::mountaincar(0.5 + 0.125 * i));
            break;
        case ExperimentKind::synth: break;
    }
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i].domain_id = static_cast<int>(i);
    return pool;
}

DomainInfo env_info(const EnvSpec& s) {
    DomainInfo d;
    d.domain_id = s.domain_id;
    if (s.kind == EnvKind::cartpole)
        d.factors = {{"pole_length", s.pole_length}, {"cart_mass", s.cart_mass}};
    else
        d.factors = {{"height_scale", s.height_scale}};
    return d;
}

DomainInfo synth_info(const SynthDomainSpec& s) {
    return {s.domain_index,
            {{"amplitude", s.deviation_amplitude}, {"frequency", s.deviation_frequency}, {"phase", s.phase}}};
}

std::vector<std::string> factor_columns(ExperimentKind e) {
    switch (e) {
        case ExperimentKind::synth: return {"amplitude", "frequency", "phase"};
        case ExperimentKind::mountaincar: return {"height_scale"};
        default: return {"pole_length", "cart_mass"};
    }
}

std::vector<std::string> metric_columns(ExperimentKind e) {
    if (e == ExperimentKind::synth) return {"accuracy", "boundary_deviation"};
    return {"avg_return", "return_sd", "failure_rate"};
}

SynthOptions synth_options(const ExperimentConfig& cfg) {
    SynthOptions o;
    o.max_amplitude = cfg.max_amplitude;
    o.min_amplitude = std::min(o.min_amplitude, cfg.max_amplitude);
    return o;
}

MlpSpec net_spec(const ExperimentConfig& cfg) {
    switch (cfg.experiment) {
        case ExperimentKind::synth:
            return MlpSpec{{2, cfg.hidden_units, 2}, Activation::relu, OutputKind::logits};
        case ExperimentKind::mountaincar:
            return MlpSpec{{2, cfg.hidden_units, 3}, Activation::relu, OutputKind::q_values};
        default: return MlpSpec{{4, cfg.hidden_units, 2}, Activation::relu, OutputKind::logits};
    }
}

struct RlPartition {
    std::vector<EnvSpec> train, heldout;
};

RlPartition rl_partition(const ExperimentConfig& cfg, std::uint64_t seed) {
    auto pool = rl_domain_pool(cfg.experiment);
    Rng rng(seed ^ kPartitionSalt);
    std::shuffle(pool.begin(), pool.end(), rng);
    RlPartition p;
    p.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.train_domains));
    p.heldout.assign(pool.begin() + static_cast<std::ptrdiff_t>(cfg.train_domains),
                     pool.begin() + static_cast<std::ptrdiff_t>(cfg.train_domains + cfg.heldout_domains));
    auto by_id = [](const EnvSpec& a, const EnvSpec& b) { return a.domain_id < b.domain_id; };
    std::sort(p.train.begin(), p.train.end(), by_id);
    std::sort(p.heldout.begin(), p.heldout.end(), by_id);
    return p;
}

std::string partition_hash(ExperimentKind e, const std::vector<DomainInfo>& train,
                           const std::vector<DomainInfo>& heldout) {
    std::string key = experiment_name(e);
    for (const auto& d : train) key += fmt::format("|t{}:{}", d.domain_id, d.describe());
    for (const auto& d : heldout) key += fmt::format("|h{}:{}", d.domain_id, d.describe());
    return fnv1a_hex(key);
}

void fill_means(RepeatResult& r) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& h : r.results)
        for (const auto& [k, v] : h.metrics) {
            acc[k].first += v;
            ++acc[k].second;
        }
    for (const auto& [k, p] : acc) r.means[k] = p.first / static_cast<double>(p.second);
}

void count_accesses(RepeatResult& r, const AccessLog& log) {
    r.training_accesses = log.counts;
    r.heldout_accesses = 0;
    for (const auto& d : r.heldout) r.heldout_accesses += log.count(d.domain_id);
}

RlMldgConfig rl_config_for(const ExperimentConfig& cfg, std::uint64_t seed, Variant v) {
    RlMldgConfig rc = cfg.rl;
    rc.seed = seed;
    rc.variant = v;
    return rc;
}

RlTrainResult rl_train(std::span<const EnvSpec> domains, const MlpSpec& spec, const RlMldgConfig& rc,
                       const ParameterVector& init, AccessLog* log) {
    if (rc.algo == RlAlgo::qlearning) return train_q_learning(domains, spec, rc, init, log);
    return train_policy_gradient(domains, spec, rc, init, log);
}

std::vector<HistoryRow> to_history(const std::vector<RlHistoryRow>& rows) {
    std::vector<HistoryRow> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back({r.iteration, r.meta_train, r.meta_test, r.objective, r.wall_ms});
    return out;
}

RepeatResult run_synth_repeat(const ExperimentConfig& cfg, std::uint64_t seed, std::vector<RawRow>* raw,
                              std::optional<BoundaryGrid>* grid, std::vector<HistoryRow>* history) {
    const auto opt = synth_options(cfg);
    const auto specs = sample_synth_specs(cfg.synth_domains, cfg.synth_points, seed, opt);
    std::vector<DomainBatch> train_set;
    for (std::size_t i = 0; i + 1 < specs.size(); ++i) train_set.push_back(make_domain(specs[i]));
    const DomainBatch test = make_domain(specs.back());

    RepeatResult r;
    r.seed = seed;
    for (std::size_t i = 0; i + 1 < specs.size(); ++i) r.train_domains.push_back(synth_info(specs[i]));
    r.heldout.push_back(synth_info(specs.back()));
    r.partition_hash = partition_hash(cfg.experiment, r.train_domains, r.heldout);

    const auto spec = net_spec(cfg);
    MldgConfig mc = cfg.mldg;
    mc.seed = seed;
    AccessLog log;
    ParameterVector init = init_params(spec, seed);
    std::vector<HistoryRow> hist;
    if (cfg.method == Method::mldg_gn) {
        MldgConfig base = mc;
        base.variant = Variant::aggregate_baseline;
        auto pre = train(train_set, base, spec, init, &log);
        init = pre.params;
        hist = pre.history;
    }
    if (cfg.method == Method::random_source_baseline) {
        Rng pick(seed ^ kSourceSalt);
        std::uniform_int_distribution<std::size_t> u(0, train_set.size() - 1);
        const auto k = u(pick);
        r.random_source = r.train_domains[k].describe();
        std::vector<DomainBatch> one{train_set[k]};
        MldgConfig base = mc;
        base.variant = Variant::aggregate_baseline;
        base.iterations = mc.iterations * train_set.size();
        auto res = train(one, base, spec, init, &log);
        init = res.params;
        hist.insert(hist.end(), res.history.begin(), res.history.end());
    } else {
        mc.variant = method_variant(cfg.method);
        auto res = train(train_set, mc, spec, init, &log);
        init = res.params;
        const std::size_t offset = hist.size();
        for (auto row : res.history) {
            row.iteration += offset;
            hist.push_back(row);
        }
    }
    count_accesses(r, log);

    const auto g = boundary_grid(init, spec, cfg.grid_resolution);
    HeldOutResult h{r.heldout.front(), {}};
    h.metrics["accuracy"] = accuracy(init, spec, test);
    h.metrics["boundary_deviation"] = boundary_deviation(g);
    r.results.push_back(h);
    fill_means(r);
    if (raw) raw->push_back({seed, h.domain, h.metrics});
    if (grid) *grid = g;
    if (history) *history = std::move(hist);
    return r;
}

RepeatResult run_rl_repeat(const ExperimentConfig& cfg, std::uint64_t seed, std::vector<RawRow>* raw,
                           std::vector<HistoryRow>* history) {
    const auto part = rl_partition(cfg, seed);
    RepeatResult r;
    r.seed = seed;
    for (const auto& s : part.train) r.train_domains.push_back(env_info(s));
    for (const auto& s : part.heldout) r.heldout.push_back(env_info(s));
    r.partition_hash = partition_hash(cfg.experiment, r.train_domains, r.heldout);

    const auto spec = net_spec(cfg);
    AccessLog log;
    ParameterVector params = init_params(spec, seed);
    std::vector<HistoryRow> hist;
    auto append = [&](const RlTrainResult& res) {
        const std::size_t offset = hist.size();
        for (auto row : to_history(res.history)) {
            row.iteration += offset;
            hist.push_back(row);
        }
    };
    if (cfg.method == Method::mldg_gn) {
        const auto pre = rl_train(part.train, spec, rl_config_for(cfg, seed, Variant::aggregate_baseline), params, &log);
        params = pre.params;
        append(pre);
    }
    if (cfg.method == Method::random_source_baseline) {
        Rng pick(seed ^ kSourceSalt);
        std::uniform_int_distribution<std::size_t> u(0, part.train.size() - 1);
        const auto k = u(pick);
        r.random_source = r.train_domains[k].describe();
        auto rc = rl_config_for(cfg, seed, Variant::aggregate_baseline);
        rc.episodes_per_domain = cfg.rl.episodes_per_domain * part.train.size();
        const std::vector<EnvSpec> one{part.train[k]};
        const auto res = rl_train(one, spec, rc, params, &log);
        params = res.params;
        append(res);
    } else {
        const auto res = rl_train(part.train, spec, rl_config_for(cfg, seed, method_variant(cfg.method)), params, &log);
        params = res.params;
        append(res);
    }
    count_accesses(r, log);

    for (std::size_t i = 0; i < part.heldout.size(); ++i) {
        EnvSpec s = part.heldout[i];
        s.step_cap = cfg.eval_step_cap;
        const auto e = evaluate_policy(s, params, spec, cfg.eval_games,
                                       seed * 1000003ULL + static_cast<std::uint64_t>(s.domain_id));
        HeldOutResult h{r.heldout[i], {}};
        if (e.avg_return) {
            h.metrics["avg_return"] = *e.avg_return;
            h.metrics["return_sd"] = e.return_sd;
        }
        h.metrics["failure_rate"] = e.failure_rate;
        r.results.push_back(h);
        if (raw) raw->push_back({seed, h.domain, h.metrics});
    }
    fill_means(r);
    if (history) *history = std::move(hist);
    return r;
}

nlohmann::ordered_json domain_json(const DomainInfo& d) {
    nlohmann::ordered_json j;
    j["domain_id"] = d.domain_id;
    nlohmann::ordered_json f = nlohmann::ordered_json::object();
    for (const auto& [k, v] : d.factors) f[k] = v;
    j["factors"] = f;
    return j;
}

nlohmann::ordered_json stats_json(const std::map<std::string, MetricStat>& m) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, s] : m) j[k] = {{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}};
    return j;
}

std::map<std::string, MetricStat> aggregate(const std::vector<RepeatResult>& reps) {
    std::map<std::string, std::vector<double>> vals;
    for (const auto& r : reps)
        for (const auto& [k, v] : r.means) vals[k].push_back(v);
    std::map<std::string, MetricStat> out;
    for (const auto& [k, xs] : vals) {
        MetricStat s;
        s.n = xs.size();
        s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(s.n);
        if (s.n > 1) {
            double v = 0.0;
            for (double x : xs) v += (x - s.mean) * (x - s.mean);
            s.sd = std::sqrt(v / static_cast<double>(s.n - 1));
        }
        out[k] = s;
    }
    return out;
}

}  // namespace

const char* experiment_name(ExperimentKind e) {
    switch (e) {
        case ExperimentKind::synth: return "synth";
        case ExperimentKind::cartpole_length: return "cartpole_length";
        case ExperimentKind::cartpole_length_mass: return "cartpole_length_mass";
        case ExperimentKind::mountaincar: return "mountaincar";
    }
    return "?";
}

const char* method_name(Method m) {
    switch (m) {
        case Method::mldg: return "mldg";
        case Method::mldg_gc: return "mldg_gc";
        case Method::mldg_gn: return "mldg_gn";
        case Method::mldg_alpha0: return "mldg_alpha0";
        case Method::all_baseline: return "all_baseline";
        case Method::random_source_baseline: return "random_source_baseline";
    }
    return "?";
}

ExperimentKind parse_experiment(const std::string& s) {
    for (auto e : {ExperimentKind::synth, ExperimentKind::cartpole_length, ExperimentKind::cartpole_length_mass,
                   ExperimentKind::mountaincar})
        if (s == experiment_name(e)) return e;
    throw Error(fmt::format("unknown experiment '{}'", s));
}

Method parse_method(const std::string& s) {
    for (auto m : {Method::mldg, Method::mldg_gc, Method::mldg_gn, Method::mldg_alpha0, Method::all_baseline,
                   Method::random_source_baseline})
        if (s == method_name(m)) return m;
    throw Error(fmt::format("unknown method '{}'", s));
}

Variant method_variant(Method m) {
    switch (m) {
        case Method::mldg: return Variant::vanilla;
        case Method::mldg_gc: return Variant::gc;
        case Method::mldg_gn: return Variant::gn;
        case Method::mldg_alpha0: return Variant::alpha_zero;
        case Method::all_baseline:
        case Method::random_source_baseline: return Variant::aggregate_baseline;
    }
    return Variant::vanilla;
}

std::string DomainInfo::describe() const {
    std::string s;
    for (const auto& [k, v] : factors) {
        if (!s.empty()) s += ' ';
        s += fmt::format("{}={:.6f}", k, v);
    }
    return s;
}

ExperimentConfig ExperimentConfig::defaults(ExperimentKind e) {
    ExperimentConfig c;
    c.experiment = e;
    switch (e) {
        case ExperimentKind::synth:
            c.mldg.alpha = 1e-2;
            c.mldg.beta = 1.0;
            c.mldg.gamma = 1e-2;
            c.mldg.meta_test_count = 1;
            c.mldg.iterations = 3000;
            break;
        case ExperimentKind::cartpole_length:
        case ExperimentKind::cartpole_length_mass:
            c.rl.algo = RlAlgo::reinforce;
            c.rl.alpha = 1e-3;
            c.rl.beta = 1.0;
            c.rl.gamma = 2e-3;
            c.rl.meta_test_count = 2;
            c.rl.episodes_per_domain = 500;
            c.rl.grad_clip = 10.0;
            c.rl.optimizer = Optimizer::sgd;
            c.eval_games = 500;
            c.eval_step_cap = 200;
            break;
        case ExperimentKind::mountaincar:
            c.rl.algo = RlAlgo::qlearning;
            c.rl.alpha = 1e-3;
            c.rl.beta = 1.0;
            c.rl.gamma = 1e-3;
            c.rl.meta_test_count = 2;
            c.rl.episodes_per_domain = 500;
            c.rl.grad_clip = 0.0;
            c.rl.optimizer = Optimizer::adam;
            c.rl.train_step_cap = 2000;
            c.eval_games = 100;
            c.eval_step_cap = 20000;
            break;
    }
    return c;
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw Error("seeds must list at least one seed");
    if (repeats != seeds.size())
        throw Error(fmt::format("repeats ({}) must equal the number of seeds ({})", repeats, seeds.size()));
    if (output_dir.empty()) throw Error("output_dir must not be empty");
    if (hidden_units == 0) throw Error("hidden_units must be >= 1");
    if (experiment == ExperimentKind::synth) {
        if (synth_domains < 3) throw Error("synth_domains must be >= 3");
        if (grid_resolution < 2) throw Error("grid_resolution must be >= 2");
        if (!(max_amplitude > 0.0) || max_amplitude > 0.25) throw Error("max_amplitude must be in (0, 0.25]");
        MldgConfig m = mldg;
        m.variant = method_variant(method);
        if (method != Method::random_source_baseline) m.validate(synth_domains - 1);
        if (m.iterations == 0) throw Error("iterations must be >= 1");
    } else {
        if (train_domains + heldout_domains > 9)
            throw Error(fmt::format("train_domains + heldout_domains = {} exceeds the 9 available domains",
                                    train_domains + heldout_domains));
        if (heldout_domains == 0) throw Error("heldout_domains must be >= 1");
        if (train_domains == 0) throw Error("train_domains must be >= 1");
        if (eval_games == 0) throw Error("eval_games must be >= 1");
        if (eval_step_cap == 0) throw Error("eval_step_cap must be >= 1");
        RlMldgConfig r = rl;
        r.variant = method_variant(method);
        r.validate(method == Method::random_source_baseline ? 1 : train_domains);
    }
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                   const std::string& where) {
    const auto& t = setters();
    const auto it = t.find(key);
    if (it == t.end()) throw ConfigError(where, fmt::format("unknown key '{}'", key));
    it->second(cfg, value, where);
}

ExperimentConfig parse_config(std::istream& is, const std::string& source_name,
                              const std::vector<std::string>& overrides) {
    struct Item {
        std::string key, value, where;
    };
    std::vector<Item> items;
    std::map<std::string, std::string> seen;
    std::string line;
    for (std::size_t n = 1; std::getline(is, line); ++n) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = fmt::format("{}:{}", source_name, n);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where, fmt::format("expected key=value, got '{}'", line));
        Item it{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where};
        if (it.key.empty()) throw ConfigError(where, "empty key");
        if (auto s = seen.find(it.key); s != seen.end())
            throw ConfigError(where, fmt::format("duplicate key '{}' (first set at {})", it.key, s->second));
        seen[it.key] = where;
        items.push_back(std::move(it));
    }
    for (const auto& o : overrides) {
        const std::string where = fmt::format("--set {}", o);
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError(where, "expected key=value");
        items.push_back({trim(o.substr(0, eq)), trim(o.substr(eq + 1)), where});
    }

    // The last experiment setting wins and fixes the defaults.
    const Item* exp = nullptr;
    for (const auto& it : items)
        if (it.key == "experiment") exp = &it;
    if (!exp) throw ConfigError(source_name, "missing required key 'experiment'");
    ExperimentKind kind;
    try {
        kind = parse_experiment(exp->value);
    } catch (const Error& e) {
        throw ConfigError(exp->where, e.what());
    }
    ExperimentConfig cfg = ExperimentConfig::defaults(kind);

    bool repeats_set = false, seeds_set = false;
    std::string last_where = source_name;
    for (const auto& it : items) {
        apply_setting(cfg, it.key, it.value, it.where);
        if (it.key == "repeats") repeats_set = true;
        if (it.key == "seeds") seeds_set = true;
        last_where = it.where;
    }
    if (seeds_set && !repeats_set) cfg.repeats = cfg.seeds.size();
    if (repeats_set && !seeds_set) {
        cfg.seeds.resize(cfg.repeats);
        std::iota(cfg.seeds.begin(), cfg.seeds.end(), std::uint64_t{1});
    }
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        // Point at the line that set the offending key when it can be found.
        std::string where = source_name;
        const std::string msg = e.what();
        for (const auto& it : items)
            if (msg.rfind(it.key + " ", 0) == 0 || msg.rfind(it.key + ",", 0) == 0) where = it.where;
        throw ConfigError(where, msg);
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open config file");
    return parse_config(in, path.string(), overrides);
}

std::string config_to_text(const ExperimentConfig& c) {
    std::string s;
    auto put = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
    auto num = [](double v) { return fmt::format("{}", v); };
    put("experiment", experiment_name(c.experiment));
    put("method", method_name(c.method));
    put("repeats", std::to_string(c.repeats));
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
    put("seeds", seeds);
    put("output_dir", c.output_dir);
    put("hidden_units", std::to_string(c.hidden_units));
    put("write_history", c.write_history ? "true" : "false");
    put("threads", std::to_string(c.threads));
    if (c.experiment == ExperimentKind::synth) {
        put("alpha", num(c.mldg.alpha));
        put("beta", num(c.mldg.beta));
        put("gamma", num(c.mldg.gamma));
        put("meta_test_count", std::to_string(c.mldg.meta_test_count));
        put("iterations", std::to_string(c.mldg.iterations));
        put("gamma_decay", num(c.mldg.gamma_decay));
        put("batch_size", std::to_string(c.mldg.batch_size));
        put("synth_domains", std::to_string(c.synth_domains));
        put("synth_points", std::to_string(c.synth_points));
        put("grid_resolution", std::to_string(c.grid_resolution));
        put("max_amplitude", num(c.max_amplitude));
        return s;
    }
    put("alpha", num(c.rl.alpha));
    put("beta", num(c.rl.beta));
    put("gamma", num(c.rl.gamma));
    put("meta_test_count", std::to_string(c.rl.meta_test_count));
    put("discount", num(c.rl.discount));
    put("episodes_per_domain", std::to_string(c.rl.episodes_per_domain));
    put("batch_episodes", std::to_string(c.rl.batch_episodes));
    put("use_baseline", c.rl.use_baseline ? "true" : "false");
    put("optimizer", c.rl.optimizer == Optimizer::adam ? "adam" : "sgd");
    put("grad_clip", num(c.rl.grad_clip));
    put("epsilon_start", num(c.rl.epsilon_start));
    put("epsilon_end", num(c.rl.epsilon_end));
    put("epsilon_decay_steps", std::to_string(c.rl.epsilon_decay_steps));
    put("replay_capacity", std::to_string(c.rl.replay_capacity));
    put("replay_batch", std::to_string(c.rl.replay_batch));
    put("warmup", std::to_string(c.rl.warmup));
    put("target_sync", std::to_string(c.rl.target_sync));
    put("train_step_cap", std::to_string(c.rl.train_step_cap));
    put("train_domains", std::to_string(c.train_domains));
    put("heldout_domains", std::to_string(c.heldout_domains));
    put("eval_games", std::to_string(c.eval_games));
    put("eval_step_cap", std::to_string(c.eval_step_cap));
    return s;
}

Partition make_partition(const ExperimentConfig& cfg, std::uint64_t seed) {
    Partition p;
    if (cfg.experiment == ExperimentKind::synth) {
        const auto specs = sample_synth_specs(cfg.synth_domains, cfg.synth_points, seed, synth_options(cfg));
        for (std::size_t i = 0; i + 1 < specs.size(); ++i) p.train.push_back(synth_info(specs[i]));
        p.heldout.push_back(synth_info(specs.back()));
    } else {
        const auto rp = rl_partition(cfg, seed);
        for (const auto& s : rp.train) p.train.push_back(env_info(s));
        for (const auto& s : rp.heldout) p.heldout.push_back(env_info(s));
    }
    p.hash = partition_hash(cfg.experiment, p.train, p.heldout);
    return p;
}

RepeatResult run_repeat(const ExperimentConfig& cfg, std::uint64_t seed, std::vector<RawRow>* raw,
                        std::optional<BoundaryGrid>* grid, std::vector<HistoryRow>* history) {
    if (cfg.experiment == ExperimentKind::synth) return run_synth_repeat(cfg, seed, raw, grid, history);
    return run_rl_repeat(cfg, seed, raw, history);
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto n = cfg.seeds.size();
    std::vector<RepeatResult> reps(n);
    std::vector<std::vector<RawRow>> raws(n);
    std::vector<std::optional<BoundaryGrid>> grids(n);
    std::vector<std::vector<HistoryRow>> hists(n);
    std::vector<std::exception_ptr> errors(n);

    // Each repeat owns its state; results land in seed order.
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                reps[i] = run_repeat(cfg, cfg.seeds[i], &raws[i], &grids[i], &hists[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::size_t workers = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    RunArtifacts a;
    a.summary.method = method_name(cfg.method);
    a.summary.experiment = experiment_name(cfg.experiment);
    for (std::size_t i = 0; i < n; ++i) {
        a.summary.heldout_accesses += reps[i].heldout_accesses;
        a.raw.insert(a.raw.end(), raws[i].begin(), raws[i].end());
    }
    a.summary.repeats = std::move(reps);
    a.summary.aggregate = aggregate(a.summary.repeats);
    if (!grids.empty()) a.grid = grids.front();
    a.histories = std::move(hists);
    return a;
}

std::string summary_json(const RunSummary& s) {
    nlohmann::ordered_json j;
    j["method"] = s.method;
    j["experiment"] = s.experiment;
    j["aggregate"] = stats_json(s.aggregate);
    j["heldout_training_accesses"] = s.heldout_accesses;
    nlohmann::ordered_json reps = nlohmann::ordered_json::array();
    for (const auto& r : s.repeats) {
        nlohmann::ordered_json jr;
        jr["seed"] = r.seed;
        jr["partition_hash"] = r.partition_hash;
        nlohmann::ordered_json tr = nlohmann::ordered_json::array();
        for (const auto& d : r.train_domains) tr.push_back(domain_json(d));
        jr["train_domains"] = tr;
        nlohmann::ordered_json ho = nlohmann::ordered_json::array();
        for (const auto& h : r.results) {
            auto jd = domain_json(h.domain);
            nlohmann::ordered_json m = nlohmann::ordered_json::object();
            for (const auto& [k, v] : h.metrics) m[k] = v;
            jd["metrics"] = m;
            ho.push_back(jd);
        }
        jr["heldout"] = ho;
        nlohmann::ordered_json means = nlohmann::ordered_json::object();
        for (const auto& [k, v] : r.means) means[k] = v;
        jr["means"] = means;
        if (!r.random_source.empty()) jr["random_source"] = r.random_source;
        nlohmann::ordered_json acc = nlohmann::ordered_json::object();
        for (const auto& [id, c] : r.training_accesses) acc[std::to_string(id)] = c;
        jr["training_accesses"] = acc;
        jr["heldout_training_accesses"] = r.heldout_accesses;
        reps.push_back(jr);
    }
    j["repeats"] = reps;
    return j.dump(2) + "\n";
}

void write_raw_csv(std::ostream& os, const ExperimentConfig& cfg, const std::vector<RawRow>& rows) {
    const auto factors = factor_columns(cfg.experiment);
    const auto metrics = metric_columns(cfg.experiment);
    os << "domain_id";
    for (const auto& f : factors) os << ',' << f;
    for (const auto& m : metrics) os << ',' << m;
    os << ",seed\n";
    for (const auto& r : rows) {
        os << r.domain.domain_id;
        for (const auto& f : factors) {
            auto it = std::find_if(r.domain.factors.begin(), r.domain.factors.end(),
                                   [&](const auto& p) { return p.first == f; });
            os << ',';
            if (it != r.domain.factors.end()) os << fmt::format("{:.6f}", it->second);
        }
        for (const auto& m : metrics) {
            os << ',';
            if (auto it = r.metrics.find(m); it != r.metrics.end()) os << fmt::format("{:.6f}", it->second);
        }
        os << ',' << r.seed << '\n';
    }
}

void write_artifacts(const ExperimentConfig& cfg, const RunArtifacts& a) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(fmt::format("cannot create output_dir '{}': {}", cfg.output_dir, ec.message()));
    auto open = [&](const std::string& name) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw Error(fmt::format("cannot write {}", (dir / name).string()));
        return f;
    };
    {
        auto f = open("summary.json");
        f << summary_json(a.summary);
    }
    {
        auto f = open("raw.csv");
        write_raw_csv(f, cfg, a.raw);
    }
    {
        auto f = open("config.txt");
        f << config_to_text(cfg);
    }
    if (a.grid) {
        auto f = open("grid.csv");
        write_grid_csv(f, *a.grid);
    }
    if (cfg.write_history)
        for (std::size_t i = 0; i < a.histories.size(); ++i) {
            auto f = open(fmt::format("history_seed{}.csv", cfg.seeds[i]));
            write_history_csv(f, a.histories[i]);
        }
}

Comparison compare_summaries(const std::vector<RunSummary>& summaries) {
    if (summaries.empty()) throw Error("compare: no runs given");
    Comparison c;
    c.experiment = summaries.front().experiment;
    for (const auto& r : summaries.front().repeats) c.seeds.push_back(r.seed);
    for (const auto& s : summaries) {
        if (s.experiment != c.experiment)
            throw Error(fmt::format("compare: mismatched experiments '{}' and '{}'", c.experiment, s.experiment));
        std::vector<std::uint64_t> seeds;
        for (const auto& r : s.repeats) seeds.push_back(r.seed);
        if (seeds != c.seeds) throw Error(fmt::format("compare: method '{}' uses different seeds", s.method));
        ComparisonRow row{s.method, s.aggregate, {}};
        for (const auto& r : s.repeats) row.partition_hashes.push_back(r.partition_hash);
        if (!c.rows.empty() && row.partition_hashes != c.rows.front().partition_hashes) c.paired = false;
        c.rows.push_back(std::move(row));
    }
    return c;
}

Comparison compare_methods(const std::vector<ExperimentConfig>& cfgs, std::vector<RunSummary>* summaries) {
    if (cfgs.empty()) throw Error("compare: no configs given");
    for (const auto& c : cfgs) {
        if (c.experiment != cfgs.front().experiment)
            throw Error(fmt::format("compare: mismatched experiments '{}' and '{}'",
                                    experiment_name(cfgs.front().experiment), experiment_name(c.experiment)));
        if (c.seeds != cfgs.front().seeds)
            throw Error(fmt::format("compare: method '{}' uses different seeds", method_name(c.method)));
    }
    std::vector<RunSummary> out;
    for (const auto& c : cfgs) out.push_back(run_experiment(c).summary);
    auto cmp = compare_summaries(out);
    if (summaries) *summaries = std::move(out);
    return cmp;
}

std::string format_comparison(const Comparison& c) {
    std::vector<std::string> metrics;
    for (const auto& r : c.rows)
        for (const auto& [k, _] : r.aggregate)
            if (std::find(metrics.begin(), metrics.end(), k) == metrics.end()) metrics.push_back(k);
    std::string s = fmt::format("experiment {}  seeds", c.experiment);
    for (auto sd : c.seeds) s += fmt::format(" {}", sd);
    s += fmt::format("  paired {}\n", c.paired ? "yes" : "NO");
    s += fmt::format("{:<24}", "method");
    for (const auto& m : metrics) s += fmt::format("{:>26}", m);
    s += '\n';
    for (const auto& r : c.rows) {
        s += fmt::format("{:<24}", r.method);
        for (const auto& m : metrics) {
            auto it = r.aggregate.find(m);
            s += it == r.aggregate.end() ? fmt::format("{:>26}", "-")
                                         : fmt::format("{:>26}", fmt::format("{:.4f} +- {:.4f}", it->second.mean,
                                                                             it->second.sd));
        }
        s += '\n';
    }
    s += "partition hashes\n";
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
        s += fmt::format("  seed {}:", c.seeds[i]);
        for (const auto& r : c.rows) s += fmt::format(" {}={}", r.method, r.partition_hashes[i]);
        s += '\n';
    }
    return s;
}

}  // namespace mldg
