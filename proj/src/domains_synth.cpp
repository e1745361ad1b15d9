#include "mldg/domains_synth.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

namespace mldg {

void SynthDomainSpec::validate() const {
    if (n_points < 2) throw Error("synthetic domain needs at least 2 points");
    if (!std::isfinite(deviation_amplitude) || !std::isfinite(deviation_frequency) ||
        !std::isfinite(phase))
        throw Error("synthetic deviation parameters must be finite");
    if (!(noise_sd >= 0.0)) throw Error("noise_sd must be >= 0");
}

double SynthDomainSpec::boundary(double x1) const {
    return x1 + deviation_amplitude * std::sin(deviation_frequency * x1 + phase);
}

std::vector<SynthDomainSpec> sample_synth_specs(std::size_t n_domains, std::size_t n_points,
                                                std::uint64_t seed, const SynthOptions& opt) {
    if (n_domains < 2) throw Error("need at least 2 synthetic domains");
    if (opt.max_amplitude > 0.25) throw Error("deviation amplitude is bounded by 0.25");
    Rng rng(seed);
    std::uniform_real_distribution<double> amp(opt.min_amplitude, opt.max_amplitude);
    std::uniform_real_distribution<double> freq(opt.min_frequency, opt.max_frequency);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::vector<SynthDomainSpec> out;
    for (std::size_t i = 0; i < n_domains; ++i) {
        SynthDomainSpec s;
        s.domain_index = static_cast<int>(i);
        s.deviation_amplitude = amp(rng);
        s.deviation_frequency = freq(rng);
        s.phase = phase(rng);
        s.n_points = n_points;
        s.noise_sd = opt.noise_sd;
        s.seed = rng();
        out.push_back(s);
    }
    return out;
}

DomainBatch make_domain(const SynthDomainSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, spec.noise_sd > 0.0 ? spec.noise_sd : 1.0);
    DomainBatch d;
    d.domain_id = spec.domain_index;
    d.inputs = Tensor::zeros({spec.n_points, 2});
    d.labels.resize(spec.n_points);
    for (std::size_t i = 0; i < spec.n_points; ++i) {
        const double x1 = u(rng), x2 = u(rng);
        double margin = x2 - spec.boundary(x1);
        if (spec.noise_sd > 0.0) margin += noise(rng);
        d.inputs(i, 0) = x1;
        d.inputs(i, 1) = x2;
        d.labels[i] = margin > 0.0 ? 1 : 0;
    }
    return d;
}

std::vector<DomainBatch> make_domains(std::size_t n_domains, std::size_t n_points,
                                      std::uint64_t seed, const SynthOptions& opt) {
    std::vector<DomainBatch> out;
    for (const auto& s : sample_synth_specs(n_domains, n_points, seed, opt))
        out.push_back(make_domain(s));
    return out;
}

BoundaryGrid boundary_grid(const ParameterVector& params, const MlpSpec& spec, std::size_t resolution) {
    if (resolution < 2) throw Error("grid resolution must be >= 2");
    if (spec.input_dim() != 2) throw Error("boundary grid needs a 2-d input model");
    BoundaryGrid grid{resolution, std::vector<int>(resolution * resolution, 0)};
    std::vector<double> out(spec.output_dim());
    const double step = 1.0 / static_cast<double>(resolution - 1);
    for (std::size_t r = 0; r < resolution; ++r)
        for (std::size_t c = 0; c < resolution; ++c) {
            const double x[2] = {static_cast<double>(c) * step, static_cast<double>(r) * step};
            forward_row(spec, params.data(), x, out);
            grid.classes[r * resolution + c] =
                static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
        }
    return grid;
}

double boundary_deviation(const BoundaryGrid& grid) {
    const auto n = grid.resolution;
    const double step = 1.0 / static_cast<double>(n - 1);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t zeros = 0;
        for (std::size_t r = 0; r < n; ++r) zeros += grid.at(r, c) == 0;
        const double crossing = std::clamp((static_cast<double>(zeros) - 0.5) * step, 0.0, 1.0);
        total += std::abs(crossing - static_cast<double>(c) * step);
    }
    return total / static_cast<double>(n);
}

void write_dataset_csv(std::ostream& os, std::span<const DomainBatch> domains) {
    os << "x1,x2,label,domain_id\n";
    for (const auto& d : domains)
        for (std::size_t i = 0; i < d.size(); ++i)
            os << fmt::format("{:.6f},{:.6f},{},{}\n", d.inputs(i, 0), d.inputs(i, 1), d.labels[i],
                              d.domain_id);
}

void write_grid_csv(std::ostream& os, const BoundaryGrid& grid) {
    const double step = 1.0 / static_cast<double>(grid.resolution - 1);
    os << "x1,x2,class\n";
    for (std::size_t r = 0; r < grid.resolution; ++r)
        for (std::size_t c = 0; c < grid.resolution; ++c)
            os << fmt::format("{:.6f},{:.6f},{}\n", static_cast<double>(c) * step,
                              static_cast<double>(r) * step, grid.at(r, c));
}

BoundaryGrid read_grid_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "x1,x2,class") throw Error("grid csv: bad header");
    std::vector<int> classes;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto p = line.rfind(',');
        if (p == std::string::npos) throw Error(fmt::format("grid csv line {}: malformed", lineno));
        classes.push_back(std::stoi(line.substr(p + 1)));
    }
    const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(classes.size()))));
    if (n < 2 || n * n != classes.size()) throw Error("grid csv: cell count is not a square");
    return BoundaryGrid{n, std::move(classes)};
}

}  // namespace mldg
