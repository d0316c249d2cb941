#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "glyphforge/diffusion.hpp"
#include "glyphforge/errors.hpp"
#include "glyphforge/rng.hpp"
#include "glyphforge/schedule.hpp"

using namespace gf;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * scale;
    return v;
}

} // namespace

TEST_CASE("linear schedule endpoints and invariants") {
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    CHECK(s.beta.front() == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.beta.back() == doctest::Approx(0.02).epsilon(1e-12));
    for (int t = 1; t <= s.T; ++t) {
        const std::size_t i = static_cast<std::size_t>(t) - 1;
        CHECK(s.beta[i] > 0.0);
        CHECK(s.beta[i] < 1.0);
        if (t >= 2) {
            CHECK(s.beta[i] >= s.beta[i - 1]);              // non-decreasing ramp
            CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);     // strictly decreasing
            CHECK(s.posterior_variance[i] <= s.beta[i]);    // beta_tilde <= beta
        }
        // recurrence holds exactly, not approximately
        CHECK(s.alpha_bar[i] == s.alpha_bar_at(t - 1) * s.alpha[i]);
    }
    // SNR strictly decreasing
    for (int t = 2; t <= s.T; ++t) {
        const double snr_prev = s.alpha_bar_at(t - 1) / (1.0 - s.alpha_bar_at(t - 1));
        const double snr = s.alpha_bar_at(t) / (1.0 - s.alpha_bar_at(t));
        CHECK(snr < snr_prev);
    }
}

TEST_CASE("single-step schedule") {
    const NoiseSchedule s = make_schedule(1, 0.5, 0.5);
    CHECK(s.alpha_bar_at(1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.posterior_variance[0] == 0.0); // abar_0 = 1 convention
}

TEST_CASE("alpha_bar matches an extended-precision product oracle") {
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    long double prod = 1.0L;
    for (int t = 1; t <= 1000; ++t) {
        const long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L;
        prod *= (1.0L - beta);
        const double rel = std::abs(static_cast<double>((static_cast<long double>(s.alpha_bar_at(t)) - prod) / prod));
        CHECK(rel < 1e-12);
    }
}

TEST_CASE("make_schedule rejects invalid ranges") {
    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), InvalidRange);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), InvalidRange);
    CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), InvalidRange);
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), InvalidRange);
}

TEST_CASE("q_sample closed form") {
    const NoiseSchedule s = make_schedule(100, 1e-3, 0.05);
    Rng rng(7);
    const auto x0 = random_vec(rng, 64);
    std::vector<double> zeros(64, 0.0), out(64);

    q_sample<double>(x0, 10, zeros, s, out);
    const double a = std::sqrt(s.alpha_bar_at(10));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(a * x0[i]).epsilon(1e-15));

    const auto eps = random_vec(rng, 64);
    q_sample<double>(zeros, 10, eps, s, out);
    const double b = std::sqrt(1.0 - s.alpha_bar_at(10));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(b * eps[i]).epsilon(1e-15));

    std::vector<double> small(4);
    CHECK_THROWS_AS(q_sample<double>(x0, 10, small, s, out), ShapeMismatch);
    CHECK_THROWS_AS(q_sample<double>(x0, 0, eps, s, out), InvalidRange);
    CHECK_THROWS_AS(q_sample<double>(x0, 101, eps, s, out), InvalidRange);
}

TEST_CASE("q_sample Monte Carlo marginals within 3 sigma at 1e5 draws") {
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    const int t = 350;
    const int n = 100000;
    const std::vector<double> x0 = {0.7, -0.3};
    Rng rng(123);
    double mean[2] = {0, 0}, m2[2] = {0, 0};
    std::vector<double> eps(2), out(2);
    for (int i = 0; i < n; ++i) {
        eps[0] = rng.normal();
        eps[1] = rng.normal();
        q_sample<double>(x0, t, eps, s, out);
        for (int k = 0; k < 2; ++k) {
            mean[k] += out[k];
            m2[k] += out[k] * out[k];
        }
    }
    const double abar = s.alpha_bar_at(t);
    for (int k = 0; k < 2; ++k) {
        mean[k] /= n;
        const double var = m2[k] / n - mean[k] * mean[k];
        const double expect_mean = std::sqrt(abar) * x0[static_cast<std::size_t>(k)];
        const double expect_var = 1.0 - abar;
        const double se_mean = std::sqrt(expect_var / n);
        const double se_var = expect_var * std::sqrt(2.0 / n);
        CHECK(std::abs(mean[k] - expect_mean) < 3.0 * se_mean);
        CHECK(std::abs(var - expect_var) < 3.0 * se_var);
    }
}

TEST_CASE("predict_x0_from_eps inverts q_sample at machine precision") {
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(42);
    const auto x0 = random_vec(rng, 32);
    std::vector<double> x_t(32), rec(32);
    for (int t = 1; t <= 1000; ++t) {
        const auto eps = random_vec(rng, 32);
        q_sample<double>(x0, t, eps, s, x_t);
        predict_x0_from_eps<double>(x_t, eps, t, s, rec);
        for (std::size_t i = 0; i < rec.size(); ++i) CHECK(std::abs(rec[i] - x0[i]) < 1e-9);
    }
}

TEST_CASE("predict_x0 with zero eps divides by sqrt(abar)") {
    const NoiseSchedule s = make_schedule(50, 1e-3, 0.04);
    std::vector<double> x_t = {0.5, -0.25}, zeros(2, 0.0), out(2);
    predict_x0_from_eps<double>(x_t, zeros, 13, s, out);
    const double inv = 1.0 / std::sqrt(s.alpha_bar_at(13));
    CHECK(out[0] == doctest::Approx(0.5 * inv).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(-0.25 * inv).epsilon(1e-15));
}

TEST_CASE("predict_x0 stays finite at t = T with tiny abar") {
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(11);
    const auto x0 = random_vec(rng, 16);
    const auto eps = random_vec(rng, 16);
    std::vector<double> x_t(16), rec(16);
    q_sample<double>(x0, 1000, eps, s, x_t);
    predict_x0_from_eps<double>(x_t, eps, 1000, s, rec);
    // extended-precision reference
    const long double abar = static_cast<long double>(s.alpha_bar_at(1000));
    for (std::size_t i = 0; i < rec.size(); ++i) {
        CHECK(std::isfinite(rec[i]));
        const long double ref = (static_cast<long double>(x_t[i]) - sqrtl(1.0L - abar) * eps[i]) / sqrtl(abar);
        CHECK(std::abs(static_cast<double>(ref - rec[i])) < 1e-9);
    }
}

TEST_CASE("posterior_mean formula and degeneracies") {
    const NoiseSchedule s = make_schedule(200, 1e-4, 0.02);
    Rng rng(5);

    SUBCASE("constant arrays combine linearly") {
        const double c = 0.37;
        std::vector<double> xc(8, c), out(8);
        const int t = 17;
        posterior_mean<double>(xc, xc, t, s, out);
        const std::size_t i = t - 1;
        const double coeff = (std::sqrt(s.alpha_bar_at(t - 1)) * s.beta[i] +
                              std::sqrt(s.alpha[i]) * (1.0 - s.alpha_bar_at(t - 1))) /
                             (1.0 - s.alpha_bar[i]);
        for (double v : out) CHECK(v == doctest::Approx(c * coeff).epsilon(1e-14));
    }

    SUBCASE("t = 1 returns x0 exactly regardless of x_t") {
        const auto x0 = random_vec(rng, 16);
        const auto x_t = random_vec(rng, 16);
        std::vector<double> out(16);
        posterior_mean<double>(x_t, x0, 1, s, out);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(x0[i]).epsilon(1e-15));
    }

    SUBCASE("matches an independently coded evaluation to 1e-12") {
        const auto x0 = random_vec(rng, 32);
        const auto x_t = random_vec(rng, 32);
        std::vector<double> out(32);
        for (int t : {2, 50, 117, 200}) {
            posterior_mean<double>(x_t, x0, t, s, out);
            // independent implementation, recomputing everything from betas
            long double abar_t = 1.0L, abar_prev = 1.0L;
            for (int u = 1; u <= t; ++u) {
                const long double beta = 1e-4L + (0.02L - 1e-4L) * (u - 1) / 199.0L;
                if (u == t) abar_prev = abar_t;
                abar_t *= (1.0L - beta);
            }
            const long double beta_t = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 199.0L;
            const long double c0 = sqrtl(abar_prev) * beta_t / (1.0L - abar_t);
            const long double ct = sqrtl(1.0L - beta_t) * (1.0L - abar_prev) / (1.0L - abar_t);
            for (std::size_t i = 0; i < out.size(); ++i) {
                const long double ref = c0 * x0[i] + ct * x_t[i];
                CHECK(std::abs(static_cast<double>(ref) - out[i]) < 1e-12);
            }
        }
    }
}

TEST_CASE("p_step mean path, variance modes, and final-step rules") {
    const NoiseSchedule s = make_schedule(100, 1e-3, 0.05);
    Rng rng(9);
    const auto x0 = random_vec(rng, 16, 0.5);
    const auto eps = random_vec(rng, 16);
    std::vector<double> x_t(16), out_a(16), out_b(16), zeros(16, 0.0);

    SUBCASE("noise at t=1 is rejected") {
        q_sample<double>(x0, 1, eps, s, x_t);
        std::vector<double> noise(16, 0.1);
        CHECK_THROWS_AS(p_step<double>(x_t, eps, 1, noise, s, VarianceMode::beta, out_a), NoiseAtFinalStep);
    }

    SUBCASE("t=1 with zero noise returns clamped predict_x0") {
        q_sample<double>(x0, 1, eps, s, x_t);
        p_step<double>(x_t, eps, 1, zeros, s, VarianceMode::beta_tilde, out_a);
        std::vector<double> rec(16);
        predict_x0_from_eps<double>(x_t, eps, 1, s, rec);
        for (std::size_t i = 0; i < rec.size(); ++i) {
            const double expect = std::clamp(rec[i], -1.0, 1.0);
            CHECK(out_a[i] == doctest::Approx(expect).epsilon(1e-14));
        }
    }

    SUBCASE("variance modes share the mean path") {
        q_sample<double>(x0, 40, eps, s, x_t);
        auto noise = random_vec(rng, 16);
        p_step<double>(x_t, eps, 40, noise, s, VarianceMode::beta, out_a);
        p_step<double>(x_t, eps, 40, noise, s, VarianceMode::beta_tilde, out_b);
        const std::size_t i = 39;
        const double sig_a = std::sqrt(s.beta[i]);
        const double sig_b = std::sqrt(s.posterior_variance[i]);
        for (std::size_t k = 0; k < out_a.size(); ++k) {
            const double mean_a = out_a[k] - sig_a * noise[k];
            const double mean_b = out_b[k] - sig_b * noise[k];
            CHECK(mean_a == doctest::Approx(mean_b).epsilon(1e-12));
        }
    }

    SUBCASE("p_step equals posterior_mean of the clamped x0 estimate plus noise") {
        q_sample<double>(x0, 70, eps, s, x_t);
        p_step<double>(x_t, eps, 70, zeros, s, VarianceMode::beta_tilde, out_a);
        std::vector<double> x0_hat(16), mean(16);
        predict_x0_from_eps<double>(x_t, eps, 70, s, x0_hat);
        for (auto& v : x0_hat) v = std::clamp(v, -1.0, 1.0);
        posterior_mean<double>(x_t, x0_hat, 70, s, mean);
        for (std::size_t k = 0; k < mean.size(); ++k) CHECK(out_a[k] == doctest::Approx(mean[k]).epsilon(1e-12));
    }
}

TEST_CASE("oracle denoiser: iterated p_step from x_T recovers x0") {
    // eps-oracle: the sampler asks for noise at (x_t, t); with the closed-form
    // relation eps = (x_t - sqrt(abar) x0) / sqrt(1-abar) the chain must walk
    // back to x0.
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(77);
    std::vector<double> x0(64);
    for (auto& v : x0) v = rng.uniform() < 0.3 ? 1.0 : -1.0; // glyph-like bilevel image

    std::vector<double> x(64);
    for (auto& v : x) v = rng.normal(); // start from pure noise
    std::vector<double> eps_hat(64), next(64), zeros(64, 0.0);

    for (int t = 1000; t >= 1; --t) {
        const double a = std::sqrt(s.alpha_bar_at(t));
        const double b = std::sqrt(1.0 - s.alpha_bar_at(t));
        for (std::size_t i = 0; i < x.size(); ++i) eps_hat[i] = (x[i] - a * x0[i]) / b;
        p_step<double>(x, eps_hat, t, zeros, s, VarianceMode::beta_tilde, next);
        std::swap(x, next);
    }
    double max_err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) max_err = std::max(max_err, std::abs(x[i] - x0[i]));
    CHECK(max_err < 0.05);
}

TEST_CASE("p_step_between skip consistency sanity") {
    const NoiseSchedule s = make_schedule(100, 1e-3, 0.05);
    Rng rng(3);
    const auto x0 = random_vec(rng, 8, 0.4);
    const auto eps = random_vec(rng, 8);
    std::vector<double> x_t(8), out(8), zeros(8, 0.0);
    q_sample<double>(x0, 90, eps, s, x_t);
    // jumping 90 -> 0 with a perfect eps recovers x0 (clamped) exactly
    p_step_between<double>(x_t, eps, 90, 0, zeros, s, VarianceMode::beta_tilde, true, out);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out[i] == doctest::Approx(std::clamp(x0[i], -1.0, 1.0)).epsilon(1e-9));
    CHECK_THROWS_AS(
        p_step_between<double>(x_t, eps, 90, 90, zeros, s, VarianceMode::beta, true, out), InvalidRange);
}
