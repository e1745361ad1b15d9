#pragma once

// Experiment orchestration: config parsing, seeded repeats, the domain
// holdout protocol, aggregation and artifact emission.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mldg/domains_synth.hpp"
#include "mldg/meta_core.hpp"
#include "mldg/rl_envs.hpp"
#include "mldg/rl_meta.hpp"

namespace mldg {

enum class ExperimentKind { synth, cartpole_length, cartpole_length_mass, mountaincar };
enum class Method { mldg, mldg_gc, mldg_gn, mldg_alpha0, all_baseline, random_source_baseline };

const char* experiment_name(ExperimentKind e);
const char* method_name(Method m);
ExperimentKind parse_experiment(const std::string& s);
Method parse_method(const std::string& s);
Variant method_variant(Method m);

/// A config validation failure. `where` is "file:line" or "--set k=v".
class ConfigError : public Error {
public:
    ConfigError(const std::string& where, const std::string& what)
        : Error(where + ": " + what), where_(where) {}
    const std::string& where() const { return where_; }

private:
    std::string where_;
};

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::synth;
    Method method = Method::mldg;
    std::size_t repeats = 5;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string output_dir = "out";

    MldgConfig mldg;    // synth
    RlMldgConfig rl;    // cart-pole and mountain car
    std::size_t hidden_units = 50;

    // synth
    std::size_t synth_domains = 9;
    std::size_t synth_points = 200;
    std::size_t grid_resolution = 101;
    double max_amplitude = 0.25;

    // RL
    std::size_t train_domains = 6;
    std::size_t heldout_domains = 3;
    std::size_t eval_games = 500;
    std::size_t eval_step_cap = 200;

    bool write_history = true;
    std::size_t threads = 0;  // repeat workers; 0 = hardware concurrency

    /// Defaults for one experiment. Called before any key is applied.
    static ExperimentConfig defaults(ExperimentKind e);
    void validate() const;
};

/// Applies one key=value pair; throws ConfigError tagged with `where`.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                   const std::string& where);

/// Parses a flat key=value file. '#' starts a comment; blank lines are
/// ignored. The experiment key, wherever it appears, selects the defaults
/// the remaining keys override. Overrides are "k=v" strings applied after
/// the file.
ExperimentConfig parse_config(std::istream& is, const std::string& source_name,
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

/// Canonical key=value dump; parse_config of the result gives back cfg.
std::string config_to_text(const ExperimentConfig& cfg);

struct DomainInfo {
    int domain_id = 0;
    std::vector<std::pair<std::string, double>> factors;  // e.g. {"pole_length", 1.5}

    /// "pole_length=1.500000 cart_mass=1.000000"
    std::string describe() const;
};

struct Partition {
    std::vector<DomainInfo> train;
    std::vector<DomainInfo> heldout;
    std::string hash;  // hex FNV-1a over the experiment, train and held-out ids and factors
};

/// Seed-derived train/held-out split. Depends only on the experiment and
/// the seed, so every method sees the same partition for a given seed.
Partition make_partition(const ExperimentConfig& cfg, std::uint64_t seed);

struct HeldOutResult {
    DomainInfo domain;
    std::map<std::string, double> metrics;  // metrics that are undefined for a domain are omitted
};

struct RepeatResult {
    std::uint64_t seed = 0;
    std::string partition_hash;
    std::vector<DomainInfo> train_domains;
    std::vector<DomainInfo> heldout;
    std::vector<HeldOutResult> results;
    std::map<std::string, double> means;  // over held-out domains
    std::map<int, std::size_t> training_accesses;
    std::size_t heldout_accesses = 0;  // training-time touches of held-out domains
    std::string random_source;  // factors of the single source for random_source_baseline
};

struct MetricStat {
    double mean = 0.0;
    double sd = 0.0;  // sample sd over repeats; 0 with one repeat
    std::size_t n = 0;
};

struct RunSummary {
    std::string method;
    std::string experiment;
    std::vector<RepeatResult> repeats;
    std::map<std::string, MetricStat> aggregate;
    std::size_t heldout_accesses = 0;
};

/// Rows written to raw.csv, one per held-out evaluation.
struct RawRow {
    std::uint64_t seed;
    DomainInfo domain;
    std::map<std::string, double> metrics;
};

struct RunArtifacts {
    RunSummary summary;
    std::vector<RawRow> raw;
    std::optional<BoundaryGrid> grid;  // synth only, first repeat
    std::vector<std::vector<HistoryRow>> histories;
};

/// Runs every repeat and aggregates. Nothing is written to disk.
RunArtifacts run_experiment(const ExperimentConfig& cfg);

/// One repeat in isolation.
RepeatResult run_repeat(const ExperimentConfig& cfg, std::uint64_t seed, std::vector<RawRow>* raw = nullptr,
                        std::optional<BoundaryGrid>* grid = nullptr,
                        std::vector<HistoryRow>* history = nullptr);

std::string summary_json(const RunSummary& s);
void write_raw_csv(std::ostream& os, const ExperimentConfig& cfg, const std::vector<RawRow>& rows);

/// Writes summary.json, raw.csv, grid.csv (synth) and history CSVs into
/// cfg.output_dir.
void write_artifacts(const ExperimentConfig& cfg, const RunArtifacts& a);

struct ComparisonRow {
    std::string method;
    std::map<std::string, MetricStat> aggregate;
    std::vector<std::string> partition_hashes;
};

struct Comparison {
    std::string experiment;
    std::vector<std::uint64_t> seeds;
    std::vector<ComparisonRow> rows;
    bool paired = true;  // every row saw the same partition hash per seed
};

/// Runs each config. All configs must share the experiment and seeds.
Comparison compare_methods(const std::vector<ExperimentConfig>& cfgs,
                           std::vector<RunSummary>* summaries = nullptr);
Comparison compare_summaries(const std::vector<RunSummary>& summaries);
std::string format_comparison(const Comparison& c);

}  // namespace mldg
