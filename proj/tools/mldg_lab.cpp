#include <algorithm>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mldg/harness.hpp"
#include "mldg/selfcheck.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void print_summary(const mldg::RunSummary& s) {
    fmt::print("{} / {}: {} repeats\n", s.experiment, s.method, s.repeats.size());
    for (const auto& [k, m] : s.aggregate) fmt::print("  {:<20} {:.4f} +- {:.4f} (n={})\n", k, m.mean, m.sd, m.n);
    fmt::print("  held-out training accesses: {}\n", s.heldout_accesses);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Meta-learning domain generalization lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    auto* run = app.add_subcommand("run", "Run one experiment config");
    run->add_option("--config", config_path, "key=value config file")->required();
    run->add_option("--set", sets, "Override k=v (repeatable)");

    std::string config_list;
    std::vector<std::string> compare_sets;
    auto* compare = app.add_subcommand("compare", "Run several configs on paired seeds");
    compare->add_option("--configs", config_list, "Comma-separated config files")->required();
    compare->add_option("--set", compare_sets, "Override k=v applied to every config (repeatable)");

    mldg::SelfcheckOptions sc;
    auto* self = app.add_subcommand("selfcheck", "Gradient, expansion and reduction property suites");
    self->add_option("--seed", sc.seed, "Seed for the random instances");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto cfg = mldg::load_config(config_path, sets);
            const auto a = mldg::run_experiment(cfg);
            mldg::write_artifacts(cfg, a);
            print_summary(a.summary);
            fmt::print("wrote {}\n", cfg.output_dir);
            if (a.summary.heldout_accesses != 0) {
                fmt::print(stderr, "error: held-out domains were touched during training\n");
                return 3;
            }
            return 0;
        }
        if (*compare) {
            const auto files = split_list(config_list);
            if (files.empty()) throw mldg::Error("compare: --configs lists no files");
            std::vector<mldg::ExperimentConfig> cfgs;
            for (const auto& f : files) cfgs.push_back(mldg::load_config(f, compare_sets));
            // Configs that share an output directory get one subdirectory per method.
            std::vector<std::string> dirs;
            for (const auto& c : cfgs) dirs.push_back(c.output_dir);
            for (auto& c : cfgs)
                if (std::count(dirs.begin(), dirs.end(), c.output_dir) > 1)
                    c.output_dir += std::string("/") + mldg::method_name(c.method);
            std::vector<mldg::RunSummary> summaries;
            for (const auto& c : cfgs) {
                const auto a = mldg::run_experiment(c);
                mldg::write_artifacts(c, a);
                summaries.push_back(a.summary);
            }
            const auto cmp = mldg::compare_summaries(summaries);
            fmt::print("{}", mldg::format_comparison(cmp));
            return cmp.paired ? 0 : 3;
        }
        if (*self) {
            bool ok = true;
            for (const auto& r : mldg::run_selfcheck(sc)) {
                fmt::print("[{}] {}: {} ({:.2f}s)\n", r.passed ? "PASS" : "FAIL", r.name, r.detail, r.seconds);
                ok = ok && r.passed;
            }
            return ok ? 0 : 1;
        }
    } catch (const mldg::ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
