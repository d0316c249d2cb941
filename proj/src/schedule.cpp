#include "glyphforge/schedule.hpp"

#include <string>

#include "glyphforge/errors.hpp"

namespace gf {

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t < 0 || t > T) throw InvalidRange("timestep " + std::to_string(t) + " outside [0," + std::to_string(T) + "]");
    return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t) - 1];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw InvalidRange("schedule needs T >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw InvalidRange("schedule needs 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    s.posterior_variance.resize(static_cast<std::size_t>(T));

    double running = 1.0;
    for (int t = 1; t <= T; ++t) {
        const std::size_t i = static_cast<std::size_t>(t) - 1;
        s.beta[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / static_cast<double>(T - 1);
        s.alpha[i] = 1.0 - s.beta[i];
        running *= s.alpha[i]; // abar_t = abar_{t-1} * alpha_t holds exactly
        s.alpha_bar[i] = running;
        const double abar_prev = t == 1 ? 1.0 : s.alpha_bar[i - 1];
        s.posterior_variance[i] = (1.0 - abar_prev) / (1.0 - s.alpha_bar[i]) * s.beta[i];
    }
    return s;
}

} // namespace gf
