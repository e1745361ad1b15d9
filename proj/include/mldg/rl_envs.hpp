#pragma once

// Classic-control simulators with exposed domain factors.
//
// Cart-pole follows the classic Euler-integrated formulation (gravity 9.8,
// force 10, dt 0.02, pole mass 0.1). `pole_length` is the half-length of the
// pole, matching the classic parameterisation whose default is 0.5.
// Mountain car follows the classic discrete dynamics with the slope term
// scaled by `height_scale`.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace mldg {

enum class EnvKind { cartpole, mountaincar };

struct EnvSpec {
    EnvKind kind = EnvKind::cartpole;
    double pole_length = 0.5;
    double cart_mass = 1.0;
    double height_scale = 1.0;
    std::size_t step_cap = 200;
    std::uint64_t seed = 0;
    int domain_id = 0;

    void validate() const;
    std::size_t action_count() const { return kind == EnvKind::cartpole ? 2 : 3; }
    std::size_t state_dim() const { return kind == EnvKind::cartpole ? 4 : 2; }
    std::string describe() const;

    static EnvSpec cartpole(double pole_length, double cart_mass = 1.0, std::size_t step_cap = 200);
    static EnvSpec mountaincar(double height_scale, std::size_t step_cap = 20000);
};

/// Cart-pole: x, x_dot, theta, theta_dot. Mountain car: position, velocity.
struct EnvState {
    std::array<double, 4> v{};
    std::size_t steps = 0;
    bool done = false;

    friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepResult {
    EnvState next_state;
    double reward = 0.0;
    bool done = false;
    bool reached_goal = false;  // mountain car reached the flag before the cap
    std::size_t steps_elapsed = 0;
};

namespace cartpole_const {
inline constexpr double gravity = 9.8;
inline constexpr double pole_mass = 0.1;
inline constexpr double force_mag = 10.0;
inline constexpr double tau = 0.02;
inline constexpr double theta_threshold = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
inline constexpr double x_threshold = 2.4;
}  // namespace cartpole_const

namespace mountaincar_const {
inline constexpr double min_position = -1.2;
inline constexpr double max_position = 0.6;
inline constexpr double max_speed = 0.07;
inline constexpr double goal_position = 0.5;
inline constexpr double force = 0.001;
inline constexpr double gravity = 0.0025;
}  // namespace mountaincar_const

EnvState env_reset(const EnvSpec& spec, std::mt19937_64& rng);

/// Throws on an invalid action or when `state.done` is set.
StepResult env_step(const EnvSpec& spec, const EnvState& state, int action);

/// Network input for a state; mountain car is rescaled to roughly [-1, 1].
void observe(const EnvSpec& spec, const EnvState& state, std::span<double> out);

/// Kinetic plus slope potential energy of a mountain-car state.
double mountaincar_energy(const EnvSpec& spec, const EnvState& state);

}  // namespace mldg
