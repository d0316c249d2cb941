#pragma once

#include <vector>

namespace gf {

/// Discrete variance schedule with all derived quantities for T steps.
/// Arrays are 0-indexed by t-1 for timesteps t in [1, T].
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;              // 1 - beta_t
    std::vector<double> alpha_bar;          // prod_{s<=t} alpha_s
    std::vector<double> posterior_variance; // beta_tilde_t = (1-abar_{t-1})/(1-abar_t) * beta_t

    /// abar(t) for t in [0, T] with the abar(0) = 1 convention.
    double alpha_bar_at(int t) const;
};

/// Linear beta ramp from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

} // namespace gf
