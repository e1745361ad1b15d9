#include "mldg/rl_envs.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mldg/autodiff.hpp"

namespace mldg {

void EnvSpec::validate() const {
    if (!(pole_length > 0.0)) throw Error("pole_length must be > 0");
    if (!(cart_mass > 0.0)) throw Error("cart_mass must be > 0");
    if (!(height_scale > 0.0)) throw Error("height_scale must be > 0");
    if (step_cap == 0) throw Error("step_cap must be > 0");
}

std::string EnvSpec::describe() const {
    if (kind == EnvKind::cartpole)
        return fmt::format("cartpole(length={:.3f},mass={:.3f})", pole_length, cart_mass);
    return fmt::format("mountaincar(height={:.4f})", height_scale);
}

EnvSpec EnvSpec::cartpole(double pole_length, double cart_mass, std::size_t step_cap) {
    EnvSpec s;
    s.kind = EnvKind::cartpole;
    s.pole_length = pole_length;
    s.cart_mass = cart_mass;
    s.step_cap = step_cap;
    return s;
}

EnvSpec EnvSpec::mountaincar(double height_scale, std::size_t step_cap) {
    EnvSpec s;
    s.kind = EnvKind::mountaincar;
    s.height_scale = height_scale;
    s.step_cap = step_cap;
    return s;
}

EnvState env_reset(const EnvSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    EnvState s;
    if (spec.kind == EnvKind::cartpole) {
        std::uniform_real_distribution<double> u(-0.05, 0.05);
        for (auto& x : s.v) x = u(rng);
    } else {
        std::uniform_real_distribution<double> u(-0.6, -0.4);
        s.v[0] = u(rng);
        s.v[1] = 0.0;
    }
    return s;
}

namespace {

StepResult cartpole_step(const EnvSpec& spec, const EnvState& st, int action) {
    using namespace cartpole_const;
    const double x = st.v[0], x_dot = st.v[1], theta = st.v[2], theta_dot = st.v[3];
    const double force = action == 1 ? force_mag : -force_mag;
    const double total_mass = spec.cart_mass + pole_mass;
    const double polemass_length = pole_mass * spec.pole_length;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
    const double theta_acc = (gravity * sin_t - cos_t * temp) /
                             (spec.pole_length * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

    StepResult r;
    auto& n = r.next_state;
    n.v = {x + tau * x_dot, x_dot + tau * x_acc, theta + tau * theta_dot, theta_dot + tau * theta_acc};
    n.steps = st.steps + 1;
    const bool fell = n.v[0] < -x_threshold || n.v[0] > x_threshold || n.v[2] < -theta_threshold ||
                      n.v[2] > theta_threshold;
    r.reward = 1.0;
    r.done = fell || n.steps >= spec.step_cap;
    n.done = r.done;
    r.steps_elapsed = n.steps;
    return r;
}

StepResult mountaincar_step(const EnvSpec& spec, const EnvState& st, int action) {
    using namespace mountaincar_const;
    double position = st.v[0], velocity = st.v[1];
    velocity += (action - 1) * force + std::cos(3.0 * position) * (-gravity * spec.height_scale);
    velocity = std::clamp(velocity, -max_speed, max_speed);
    position += velocity;
    position = std::clamp(position, min_position, max_position);
    if (position == min_position && velocity < 0.0) velocity = 0.0;

    StepResult r;
    auto& n = r.next_state;
    n.v = {position, velocity, 0.0, 0.0};
    n.steps = st.steps + 1;
    r.reached_goal = position >= goal_position;
    r.reward = -1.0;
    r.done = r.reached_goal || n.steps >= spec.step_cap;
    n.done = r.done;
    r.steps_elapsed = n.steps;
    return r;
}

}  // namespace

StepResult env_step(const EnvSpec& spec, const EnvState& state, int action) {
    if (state.done) throw Error("env_step called on a finished episode; reset first");
    if (action < 0 || static_cast<std::size_t>(action) >= spec.action_count())
        throw Error(fmt::format("invalid action {} for {}", action, spec.describe()));
    return spec.kind == EnvKind::cartpole ? cartpole_step(spec, state, action)
                                          : mountaincar_step(spec, state, action);
}

void observe(const EnvSpec& spec, const EnvState& state, std::span<double> out) {
    if (spec.kind == EnvKind::cartpole) {
        std::copy_n(state.v.begin(), 4, out.begin());
    } else {
        out[0] = (state.v[0] + 0.3) / 0.9;
        out[1] = state.v[1] / mountaincar_const::max_speed;
    }
}

double mountaincar_energy(const EnvSpec& spec, const EnvState& state) {
    const double g = mountaincar_const::gravity * spec.height_scale;
    return 0.5 * state.v[1] * state.v[1] + g * std::sin(3.0 * state.v[0]) / 3.0;
}

}  // namespace mldg
