#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mldg/meta_core.hpp"
#include "mldg/nnet.hpp"

namespace mldg {

/// One synthetic domain: labels are 1 above the curve
/// x2 = x1 + A sin(omega x1 + phi) and 0 below, on points uniform in [0,1]^2.
struct SynthDomainSpec {
    int domain_index = 0;
    double deviation_amplitude = 0.0;
    double deviation_frequency = 0.0;
    double phase = 0.0;
    std::size_t n_points = 200;
    double noise_sd = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    double boundary(double x1) const;
};

struct SynthOptions {
    double max_amplitude = 0.25;
    double min_amplitude = 0.1;
    double min_frequency = 3.0;
    double max_frequency = 9.0;
    double noise_sd = 0.0;
};

/// Draws per-domain deviation parameters from the seeded generator.
std::vector<SynthDomainSpec> sample_synth_specs(std::size_t n_domains, std::size_t n_points,
                                                std::uint64_t seed, const SynthOptions& opt = {});

DomainBatch make_domain(const SynthDomainSpec& spec);

std::vector<DomainBatch> make_domains(std::size_t n_domains, std::size_t n_points,
                                      std::uint64_t seed, const SynthOptions& opt = {});

/// resolution x resolution argmax classes; row r is x2 = r/(res-1), column c
/// is x1 = c/(res-1). Ties go to class 0.
struct BoundaryGrid {
    std::size_t resolution = 0;
    std::vector<int> classes;

    int at(std::size_t row, std::size_t col) const { return classes[row * resolution + col]; }
    friend bool operator==(const BoundaryGrid&, const BoundaryGrid&) = default;
};

BoundaryGrid boundary_grid(const ParameterVector& params, const MlpSpec& spec, std::size_t resolution);

/// Mean over columns of |x2* - x1|, where x2* is the per-column class-0/1
/// crossing estimated from the count of class-0 cells. 0 is a perfect diagonal.
double boundary_deviation(const BoundaryGrid& grid);

void write_dataset_csv(std::ostream& os, std::span<const DomainBatch> domains);
void write_grid_csv(std::ostream& os, const BoundaryGrid& grid);
BoundaryGrid read_grid_csv(std::istream& is);

}  // namespace mldg
