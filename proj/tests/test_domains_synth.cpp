#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "mldg/domains_synth.hpp"

using namespace mldg;

namespace {

// logit1 - logit0 = x2 - x1
ParameterVector diagonal_model(const MlpSpec& spec) {
    return init_params(spec, 0).with_data({0.0, -1.0, 0.0, 1.0, 0.0, 0.0});
}

}  // namespace

TEST_CASE("zero amplitude gives the diagonal boundary") {
    SynthDomainSpec s;
    s.n_points = 500;
    s.seed = 4;
    const auto d = make_domain(s);
    REQUIRE(d.size() == 500);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double x1 = d.inputs(i, 0), x2 = d.inputs(i, 1);
        CHECK(x1 >= 0.0);
        CHECK(x1 < 1.0);
        CHECK(x2 >= 0.0);
        CHECK(x2 < 1.0);
        CHECK(d.labels[i] == (x2 > x1 ? 1u : 0u));
    }
}

TEST_CASE("labels follow the deviated boundary") {
    SynthDomainSpec s;
    s.deviation_amplitude = 0.2;
    s.deviation_frequency = 6.0;
    s.phase = 1.0;
    s.n_points = 400;
    s.seed = 10;
    const auto d = make_domain(s);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double x1 = d.inputs(i, 0), x2 = d.inputs(i, 1);
        const double curve = x1 + 0.2 * std::sin(6.0 * x1 + 1.0);
        CHECK(d.labels[i] == (x2 > curve ? 1u : 0u));
    }
}

TEST_CASE("generation is deterministic per seed") {
    const auto a = make_domains(9, 200, 77);
    const auto b = make_domains(9, 200, 77);
    const auto c = make_domains(9, 200, 78);
    REQUIRE(a.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(a[i].domain_id == static_cast<int>(i));
        CHECK(a[i].inputs.data == b[i].inputs.data);
        CHECK(a[i].labels == b[i].labels);
    }
    CHECK(a[0].inputs.data != c[0].inputs.data);
    // Domains differ from each other.
    CHECK(a[0].inputs.data != a[1].inputs.data);
}

TEST_CASE("sampled deviation parameters respect their ranges") {
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        for (const auto& s : sample_synth_specs(9, 200, seed)) {
            CHECK(s.deviation_amplitude >= 0.1);
            CHECK(s.deviation_amplitude <= 0.25);
            CHECK(s.deviation_frequency >= 3.0);
            CHECK(s.deviation_frequency <= 9.0);
            CHECK(s.phase >= 0.0);
            CHECK(s.phase < 2.0 * 3.141592653589794);
        }
    SynthOptions too_big;
    too_big.max_amplitude = 0.3;
    CHECK_THROWS_AS(sample_synth_specs(9, 200, 0, too_big), Error);
    CHECK_THROWS_AS(sample_synth_specs(1, 200, 0), Error);
}

TEST_CASE("label balance per domain") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
        for (const auto& d : make_domains(9, 200, seed)) {
            std::size_t ones = 0;
            for (auto y : d.labels) ones += y;
            const double frac = static_cast<double>(ones) / static_cast<double>(d.size());
            CHECK(frac >= 0.35);
            CHECK(frac <= 0.65);
        }
}

TEST_CASE("domains agree away from the diagonal") {
    // |x2 - x1| > 0.25 is outside every deviation band.
    const auto ds = make_domains(9, 300, 3);
    std::size_t checked = 0;
    for (const auto& d : ds)
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double gap = d.inputs(i, 1) - d.inputs(i, 0);
            if (std::abs(gap) <= 0.25) continue;
            CHECK(d.labels[i] == (gap > 0 ? 1u : 0u));
            ++checked;
        }
    CHECK(checked > 500);
}

TEST_CASE("invalid domain specs") {
    SynthDomainSpec s;
    s.n_points = 1;
    CHECK_THROWS_AS(make_domain(s), Error);
    s.n_points = 10;
    s.deviation_amplitude = std::nan("");
    CHECK_THROWS_AS(make_domain(s), Error);
    s.deviation_amplitude = 0.1;
    s.noise_sd = -1.0;
    CHECK_THROWS_AS(make_domain(s), Error);
}

TEST_CASE("boundary grid of the diagonal model") {
    const MlpSpec spec{{2, 2}};
    const auto grid = boundary_grid(diagonal_model(spec), spec, 11);
    REQUIRE(grid.classes.size() == 121);
    for (std::size_t r = 0; r < 11; ++r)
        for (std::size_t c = 0; c < 11; ++c) CHECK(grid.at(r, c) == (r > c ? 1 : 0));  // ties -> 0
}

TEST_CASE("boundary deviation metric") {
    const std::size_t n = 101;
    const double step = 1.0 / 100.0;
    const MlpSpec spec{{2, 2}};
    // Column c has c+1 class-0 cells: crossing (c + 0.5) step, clamped at 1.
    double expect = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        const double crossing = std::min((static_cast<double>(c) + 0.5) * step, 1.0);
        expect += std::abs(crossing - static_cast<double>(c) * step);
    }
    expect /= static_cast<double>(n);
    CHECK(boundary_deviation(boundary_grid(diagonal_model(spec), spec, n)) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect < 0.006);

    // Constant grids: crossing at the top or the bottom of every column.
    BoundaryGrid zeros{n, std::vector<int>(n * n, 0)};
    BoundaryGrid ones{n, std::vector<int>(n * n, 1)};
    CHECK(boundary_deviation(zeros) == doctest::Approx(0.5));
    CHECK(boundary_deviation(ones) == doctest::Approx(0.5));

    // A horizontal boundary at x2 = 0.5 deviates by 0.25 on average.
    BoundaryGrid flat{n, std::vector<int>(n * n, 0)};
    for (std::size_t r = 51; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) flat.classes[r * n + c] = 1;
    CHECK(boundary_deviation(flat) == doctest::Approx(0.25).epsilon(0.02));
}

TEST_CASE("grid errors") {
    const MlpSpec spec{{2, 2}};
    CHECK_THROWS_AS(boundary_grid(diagonal_model(spec), spec, 1), Error);
    const MlpSpec wide{{3, 2}};
    CHECK_THROWS_AS(boundary_grid(init_params(wide, 0), wide, 5), Error);
}

TEST_CASE("grid csv round trip") {
    const MlpSpec spec{{2, 6, 2}};
    const auto grid = boundary_grid(init_params(spec, 5), spec, 21);
    std::stringstream ss;
    write_grid_csv(ss, grid);
    const auto text = ss.str();
    CHECK(text.rfind("x1,x2,class\n", 0) == 0);
    CHECK(read_grid_csv(ss) == grid);

    std::istringstream bad_header("a,b,c\n0,0,1\n");
    CHECK_THROWS_AS(read_grid_csv(bad_header), Error);
    std::istringstream ragged("x1,x2,class\n0,0,1\n0,1,0\n1,0,1\n");
    CHECK_THROWS_AS(read_grid_csv(ragged), Error);
}

TEST_CASE("dataset csv has six decimals") {
    const auto ds = make_domains(2, 3, 1);
    std::ostringstream os;
    write_dataset_csv(os, ds);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "x1,x2,label,domain_id");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
        const auto f1 = line.substr(0, c1), f2 = line.substr(c1 + 1, c2 - c1 - 1);
        CHECK(f1.size() - f1.find('.') - 1 == 6);
        CHECK(f2.size() - f2.find('.') - 1 == 6);
        const auto& d = ds[rows / 3];
        CHECK(std::stod(f1) == doctest::Approx(d.inputs(rows % 3, 0)).epsilon(1e-6));
        CHECK(line.substr(line.rfind(',') + 1) == std::to_string(d.domain_id));
        ++rows;
    }
    CHECK(rows == 6);
}
