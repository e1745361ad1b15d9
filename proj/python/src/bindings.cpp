#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>
#include <sstream>

#include "mldg/domains_synth.hpp"
#include "mldg/harness.hpp"
#include "mldg/rl_envs.hpp"
#include "mldg/selfcheck.hpp"

namespace py = pybind11;
using namespace mldg;

namespace {

MldgConfig meta_config(const std::string& variant, double alpha, double beta) {
    MldgConfig c;
    c.variant = parse_variant(variant);
    c.alpha = alpha;
    c.beta = beta;
    return c;
}

py::dict domain_dict(const DomainBatch& d) {
    py::list rows;
    for (std::size_t r = 0; r < d.size(); ++r) rows.append(py::make_tuple(d.inputs(r, 0), d.inputs(r, 1)));
    py::dict out;
    out["domain_id"] = d.domain_id;
    out["x"] = rows;
    out["y"] = d.labels;
    return out;
}

py::dict step_dict(const StepResult& r) {
    py::dict out;
    out["state"] = std::vector<double>(r.next_state.v.begin(), r.next_state.v.end());
    out["steps"] = r.next_state.steps;
    out["reward"] = r.reward;
    out["done"] = r.done;
    out["reached_goal"] = r.reached_goal;
    return out;
}

EnvSpec env_spec(const std::string& kind, double factor, double cart_mass) {
    if (kind == "cartpole") return EnvSpec::cartpole(factor, cart_mass);
    if (kind == "mountaincar") return EnvSpec::mountaincar(factor);
    throw Error("unknown environment: " + kind);
}

}  // namespace

PYBIND11_MODULE(_mldg, m) {
    // Translators are tried newest first, so the subclass goes last.
    py::register_exception<Error>(m, "MldgError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<CheckResult>(m, "CheckResult")
        .def_readonly("name", &CheckResult::name)
        .def_readonly("passed", &CheckResult::passed)
        .def_readonly("detail", &CheckResult::detail)
        .def_readonly("seconds", &CheckResult::seconds);

    m.def(
        "selfcheck",
        [](std::uint64_t seed, std::size_t gradient_cases, std::size_t instances) {
            SelfcheckOptions o;
            o.seed = seed;
            o.gradient_cases = gradient_cases;
            o.instances = instances;
            py::gil_scoped_release release;
            return run_selfcheck(o);
        },
        py::arg("seed") = 2024, py::arg("gradient_cases") = 4, py::arg("instances") = 100);

    py::class_<ToyProblem>(m, "ToyProblem")
        .def(py::init(&make_toy_problem), py::arg("seed"))
        .def_property_readonly("params", [](const ToyProblem& p) { return p.params.data(); })
        .def_property_readonly("layer_sizes", [](const ToyProblem& p) { return p.spec.layer_sizes; })
        .def_property_readonly("domains", [](const ToyProblem& p) {
            py::list out;
            for (const auto& d : p.domains) out.append(domain_dict(d));
            return out;
        })
        .def_property_readonly("meta_train", [](const ToyProblem& p) { return p.partition.meta_train; })
        .def_property_readonly("meta_test", [](const ToyProblem& p) { return p.partition.meta_test; })
        .def(
            "objective",
            [](const ToyProblem& p, const std::vector<double>& theta, const std::string& variant, double alpha,
               double beta) { return objective_value(p, theta, meta_config(variant, alpha, beta)); },
            py::arg("theta"), py::arg("variant") = "vanilla", py::arg("alpha") = 1e-2, py::arg("beta") = 1.0)
        .def(
            "gradient",
            [](const ToyProblem& p, const std::vector<double>& theta, const std::string& variant, double alpha,
               double beta) { return objective_gradient(p, theta, meta_config(variant, alpha, beta)); },
            py::arg("theta"), py::arg("variant") = "vanilla", py::arg("alpha") = 1e-2, py::arg("beta") = 1.0);

    m.def(
        "make_domains",
        [](std::size_t n_domains, std::size_t n_points, std::uint64_t seed, double max_amplitude) {
            SynthOptions o;
            o.max_amplitude = max_amplitude;
            o.min_amplitude = std::min(o.min_amplitude, max_amplitude);
            py::list out;
            for (const auto& d : make_domains(n_domains, n_points, seed, o)) out.append(domain_dict(d));
            return out;
        },
        py::arg("n_domains") = 9, py::arg("n_points") = 200, py::arg("seed") = 0, py::arg("max_amplitude") = 0.25);

    m.def(
        "env_reset",
        [](const std::string& kind, double factor, std::uint64_t seed, double cart_mass) {
            const auto spec = env_spec(kind, factor, cart_mass);
            std::mt19937_64 rng(seed);
            const auto s = env_reset(spec, rng);
            return std::vector<double>(s.v.begin(), s.v.begin() + static_cast<long>(spec.state_dim()));
        },
        py::arg("kind"), py::arg("factor"), py::arg("seed") = 0, py::arg("cart_mass") = 1.0);

    m.def(
        "env_step",
        [](const std::string& kind, double factor, std::vector<double> state, int action, std::size_t steps,
           double cart_mass) {
            const auto spec = env_spec(kind, factor, cart_mass);
            if (state.size() != spec.state_dim()) throw Error("state has the wrong dimension");
            EnvState s;
            std::copy(state.begin(), state.end(), s.v.begin());
            s.steps = steps;
            return step_dict(env_step(spec, s, action));
        },
        py::arg("kind"), py::arg("factor"), py::arg("state"), py::arg("action"), py::arg("steps") = 0,
        py::arg("cart_mass") = 1.0);

    m.def(
        "config_text",
        [](const std::filesystem::path& path, const std::vector<std::string>& overrides) {
            return config_to_text(load_config(path, overrides));
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{});

    m.def(
        "run",
        [](const std::filesystem::path& path, const std::vector<std::string>& overrides, bool write) {
            const auto cfg = load_config(path, overrides);
            py::gil_scoped_release release;
            const auto a = run_experiment(cfg);
            if (write) write_artifacts(cfg, a);
            return summary_json(a.summary);
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{}, py::arg("write") = false,
        "Runs an experiment config and returns the summary as JSON text.");

    m.def(
        "compare",
        [](const std::vector<std::filesystem::path>& paths, const std::vector<std::string>& overrides) {
            std::vector<ExperimentConfig> cfgs;
            for (const auto& p : paths) cfgs.push_back(load_config(p, overrides));
            py::gil_scoped_release release;
            const auto c = compare_methods(cfgs);
            return std::make_pair(format_comparison(c), c.paired);
        },
        py::arg("paths"), py::arg("overrides") = std::vector<std::string>{},
        "Returns the comparison table and whether every method saw the same partitions.");
}
