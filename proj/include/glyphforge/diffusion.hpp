#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/errors.hpp"
#include "glyphforge/schedule.hpp"

namespace gf {

enum class VarianceMode { beta, beta_tilde };

namespace detail {

inline void check_shapes(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ShapeMismatch(std::string(what) + ": sizes " + std::to_string(a) + " vs " + std::to_string(b));
}

inline void check_step(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.T) throw InvalidRange("timestep " + std::to_string(t) + " outside [1," + std::to_string(s.T) + "]");
}

} // namespace detail

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps (closed-form forward marginal).
template <class T>
void q_sample(std::span<const T> x0, int t, std::span<const T> eps, const NoiseSchedule& s, std::span<T> out) {
    detail::check_step(s, t);
    detail::check_shapes(x0.size(), eps.size(), "q_sample x0/eps");
    detail::check_shapes(x0.size(), out.size(), "q_sample x0/out");
    const T a = static_cast<T>(std::sqrt(s.alpha_bar_at(t)));
    const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bar_at(t)));
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
}

/// Exact inversion of q_sample: x0 = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
template <class T>
void predict_x0_from_eps(std::span<const T> x_t, std::span<const T> eps_hat, int t, const NoiseSchedule& s,
                         std::span<T> out) {
    detail::check_step(s, t);
    detail::check_shapes(x_t.size(), eps_hat.size(), "predict_x0 x_t/eps");
    detail::check_shapes(x_t.size(), out.size(), "predict_x0 x_t/out");
    const double abar = s.alpha_bar_at(t);
    const T inv_a = static_cast<T>(1.0 / std::sqrt(abar));
    const T b = static_cast<T>(std::sqrt(1.0 - abar));
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = inv_a * (x_t[i] - b * eps_hat[i]);
}

/// Posterior mean mu~_t(x_t, x0) with the abar_0 = 1 convention; at t == 1 this
/// returns x0 exactly.
template <class T>
void posterior_mean(std::span<const T> x_t, std::span<const T> x0, int t, const NoiseSchedule& s, std::span<T> out) {
    detail::check_step(s, t);
    detail::check_shapes(x_t.size(), x0.size(), "posterior_mean x_t/x0");
    detail::check_shapes(x_t.size(), out.size(), "posterior_mean x_t/out");
    if (t == 1) { // abar_0 = 1: the x_t weight vanishes and the x0 weight is 1
        std::copy(x0.begin(), x0.end(), out.begin());
        return;
    }
    const std::size_t i = static_cast<std::size_t>(t) - 1;
    const double abar_t = s.alpha_bar[i];
    const double abar_prev = s.alpha_bar_at(t - 1);
    const T c0 = static_cast<T>(std::sqrt(abar_prev) * s.beta[i] / (1.0 - abar_t));
    const T ct = static_cast<T>(std::sqrt(s.alpha[i]) * (1.0 - abar_prev) / (1.0 - abar_t));
    for (std::size_t k = 0; k < x_t.size(); ++k) out[k] = c0 * x0[k] + ct * x_t[k];
}

/// One reverse transition from step t_hi to step t_lo < t_hi (t_lo = 0 means the
/// final, fully deterministic step). Coefficients are recomputed from the abar
/// ratio between the two planned steps, so subsampled plans stay consistent.
/// The x0 estimate is clamped to [-1,1] before the mean when clamp_x0 is set.
template <class T>
void p_step_between(std::span<const T> x_t, std::span<const T> eps_hat, int t_hi, int t_lo,
                    std::span<const T> noise, const NoiseSchedule& s, VarianceMode mode, bool clamp_x0,
                    std::span<T> out) {
    detail::check_step(s, t_hi);
    if (t_lo < 0 || t_lo >= t_hi) throw InvalidRange("p_step_between needs 0 <= t_lo < t_hi");
    detail::check_shapes(x_t.size(), eps_hat.size(), "p_step x_t/eps");
    detail::check_shapes(x_t.size(), out.size(), "p_step x_t/out");
    if (!noise.empty()) detail::check_shapes(x_t.size(), noise.size(), "p_step x_t/noise");

    const bool final_step = t_lo == 0;
    if (final_step) {
        for (const T v : noise)
            if (v != T(0)) throw NoiseAtFinalStep("the final reverse step is deterministic; noise must be zero");
    }

    const double abar_hi = s.alpha_bar_at(t_hi);
    const double abar_lo = s.alpha_bar_at(t_lo);
    double alpha_skip, beta_skip, var_tilde;
    if (t_lo == t_hi - 1) {
        // Adjacent transition: use the stored per-step quantities verbatim.
        const std::size_t i = static_cast<std::size_t>(t_hi) - 1;
        alpha_skip = s.alpha[i];
        beta_skip = s.beta[i];
        var_tilde = s.posterior_variance[i];
    } else {
        alpha_skip = abar_hi / abar_lo;
        beta_skip = 1.0 - alpha_skip;
        var_tilde = (1.0 - abar_lo) / (1.0 - abar_hi) * beta_skip;
    }
    const T c0 = static_cast<T>(std::sqrt(abar_lo) * beta_skip / (1.0 - abar_hi));
    const T ct = static_cast<T>(std::sqrt(alpha_skip) * (1.0 - abar_lo) / (1.0 - abar_hi));

    double var = mode == VarianceMode::beta ? beta_skip : var_tilde;
    if (final_step) var = 0.0;
    const T sigma = static_cast<T>(std::sqrt(std::max(var, 0.0)));

    const T inv_a = static_cast<T>(1.0 / std::sqrt(abar_hi));
    const T b = static_cast<T>(std::sqrt(1.0 - abar_hi));
    for (std::size_t k = 0; k < x_t.size(); ++k) {
        T x0 = inv_a * (x_t[k] - b * eps_hat[k]);
        if (clamp_x0) x0 = std::clamp(x0, T(-1), T(1));
        if (final_step) { // degenerate posterior: the mean is the x0 estimate
            out[k] = x0;
            continue;
        }
        T v = c0 * x0 + ct * x_t[k];
        if (!noise.empty()) v += sigma * noise[k];
        out[k] = v;
    }
}

/// Adjacent-step reverse update (t -> t-1). At t == 1 noise must be zero.
template <class T>
void p_step(std::span<const T> x_t, std::span<const T> eps_hat, int t, std::span<const T> noise,
            const NoiseSchedule& s, VarianceMode mode, std::span<T> out, bool clamp_x0 = true) {
    p_step_between<T>(x_t, eps_hat, t, t - 1, noise, s, mode, clamp_x0, out);
}

} // namespace gf
