#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "glyphforge/denoiser.hpp"
#include "glyphforge/diffusion.hpp"
#include "glyphforge/image.hpp"
#include "glyphforge/schedule.hpp"

namespace gf {

struct SamplerConfig {
    int steps = 50;
    VarianceMode variance_mode = VarianceMode::beta_tilde;
    bool clamp_x0 = true;
    std::uint64_t seed = 0;
};

/// Strictly decreasing step indices ending at 1.
struct TimestepPlan {
    std::vector<int> steps;
};

/// Evenly spaced plan t_k = 1 + floor(k*T/steps) for k = 0..steps-1, descending.
/// Gaps never exceed ceil(T/steps); steps == T yields the full plan [T..1].
TimestepPlan plan_timesteps(int T, int steps);

/// Noise-prediction callback: fills eps_out given x_t (data space) and t.
/// Reference/style conditioning is bound inside the callable.
using EpsFn = std::function<void(std::span<const double> x_t, int t, std::span<double> eps_out)>;

/// Core ancestral sampler used by every entry point (and by tests with oracle
/// predictors). Per-transition noise comes from streams keyed by (seed, target
/// step), so different step budgets share a common noise landscape.
NormalizedImage sample_with(const EpsFn& predict, int side, const SamplerConfig& cfg, const NoiseSchedule& schedule);

/// Generates one glyph conditioned on `reference` and a style vector.
GlyphBitmap sample(const DenoiserNetF& net, const NormalizedImage& reference, std::span<const float> style,
                   const SamplerConfig& cfg, const NoiseSchedule& schedule, char32_t codepoint = 0);

GlyphBitmap sample_style_id(const DenoiserNetF& net, const NormalizedImage& reference, int style_id,
                            const SamplerConfig& cfg, const NoiseSchedule& schedule, char32_t codepoint = 0);

/// Convex mixture of style embeddings; endpoint weights reproduce pure styles
/// bitwise at a fixed seed.
GlyphBitmap sample_interpolated(const DenoiserNetF& net, const NormalizedImage& reference,
                                const std::vector<int>& style_ids, const std::vector<double>& weights,
                                const SamplerConfig& cfg, const NoiseSchedule& schedule, char32_t codepoint = 0);

/// Same contract as sample(); named entry point for out-of-domain references.
/// No training-set membership check is performed.
GlyphBitmap sample_zero_shot(const DenoiserNetF& net, const NormalizedImage& reference, int style_id,
                             const SamplerConfig& cfg, const NoiseSchedule& schedule, char32_t codepoint = 0);

} // namespace gf
