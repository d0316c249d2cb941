#include "glyphforge/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "glyphforge/errors.hpp"
#include "glyphforge/rng.hpp"

namespace gf {

TimestepPlan plan_timesteps(int T, int steps) {
    if (T < 1) throw InvalidSteps("schedule length must be >= 1");
    if (steps < 1 || steps > T) throw InvalidSteps("steps must lie in [1, T]");
    TimestepPlan plan;
    plan.steps.reserve(static_cast<std::size_t>(steps));
    int prev = -1;
    for (int k = 0; k < steps; ++k) {
        const int t = 1 + static_cast<int>((static_cast<std::int64_t>(k) * T) / steps);
        if (t != prev) plan.steps.push_back(t);
        prev = t;
    }
    std::reverse(plan.steps.begin(), plan.steps.end());
    return plan;
}

namespace {

constexpr std::uint64_t kInitStream = 0x696E6974;  // "init"
constexpr std::uint64_t kStepStream = 0x73746570;  // "step"

void fill_normal(Rng& rng, std::span<double> out) {
    for (double& v : out) v = rng.normal();
}

} // namespace

NormalizedImage sample_with(const EpsFn& predict, int side, const SamplerConfig& cfg, const NoiseSchedule& schedule) {
    if (cfg.steps < 1 || cfg.steps > schedule.T) throw InvalidSteps("sampler steps must lie in [1, T]");
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    const TimestepPlan plan = plan_timesteps(schedule.T, cfg.steps);

    std::vector<double> x(plane), eps_hat(plane), noise(plane), next(plane);
    {
        Rng rng = Rng::from_stream(cfg.seed, kInitStream, 0);
        fill_normal(rng, x);
    }

    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const int t_hi = plan.steps[i];
        const int t_lo = i + 1 < plan.steps.size() ? plan.steps[i + 1] : 0;
        predict(x, t_hi, eps_hat);
        std::span<const double> noise_span;
        if (t_lo > 0) {
            Rng rng = Rng::from_stream(cfg.seed, kStepStream, static_cast<std::uint64_t>(t_lo));
            fill_normal(rng, noise);
            noise_span = noise;
        }
        p_step_between<double>(x, eps_hat, t_hi, t_lo, noise_span, schedule, cfg.variance_mode, cfg.clamp_x0, next);
        std::swap(x, next);
    }

    NormalizedImage out;
    out.side = side;
    out.values.resize(plane);
    for (std::size_t i = 0; i < plane; ++i) out.values[i] = static_cast<float>(std::clamp(x[i], -1.0, 1.0));
    return out;
}

namespace {

EpsFn net_predictor(const DenoiserNetF& net, const NormalizedImage& reference, std::vector<float> style) {
    if (reference.side != net.config().input_side)
        throw ShapeMismatch("reference side " + std::to_string(reference.side) + " does not match network input " +
                            std::to_string(net.config().input_side));
    const std::size_t plane = reference.values.size();
    // One workspace and staging buffer per sampling run, shared across steps.
    auto ws = std::make_shared<DenoiserWorkspace<float>>();
    auto x_f = std::make_shared<std::vector<float>>(plane);
    auto eps_f = std::make_shared<std::vector<float>>(plane);
    auto ref = std::make_shared<NormalizedImage>(reference);
    auto style_v = std::make_shared<std::vector<float>>(std::move(style));
    return [&net, ws, x_f, eps_f, ref, style_v](std::span<const double> x_t, int t, std::span<double> eps_out) {
        for (std::size_t i = 0; i < x_t.size(); ++i) (*x_f)[i] = static_cast<float>(x_t[i]);
        net.forward(*ws, *x_f, ref->values, t, *style_v, *eps_f);
        for (std::size_t i = 0; i < eps_out.size(); ++i) eps_out[i] = static_cast<double>((*eps_f)[i]);
    };
}

} // namespace

GlyphBitmap sample(const DenoiserNetF& net, const NormalizedImage& reference, std::span<const float> style,
                   const SamplerConfig& cfg, const NoiseSchedule& schedule, char32_t codepoint) {
    const EpsFn predict = net_predictor(net, reference, std::vector<float>(style.begin(), style.end()));
    const NormalizedImage img = sample_with(predict, reference.side, cfg, schedule);
    return denormalize(img, codepoint);
}

GlyphBitmap sample_style_id(const DenoiserNetF& net, const NormalizedImage& reference, int style_id,
                            const SamplerConfig& cfg, const NoiseSchedule& schedule, char32_t codepoint) {
    const auto style = net.lookup_style(style_id);
    return sample(net, reference, style, cfg, schedule, codepoint);
}

GlyphBitmap sample_interpolated(const DenoiserNetF& net, const NormalizedImage& reference,
                                const std::vector<int>& style_ids, const std::vector<double>& weights,
                                const SamplerConfig& cfg, const NoiseSchedule& schedule, char32_t codepoint) {
    std::vector<std::vector<float>> embeddings;
    embeddings.reserve(style_ids.size());
    for (int id : style_ids) embeddings.push_back(net.lookup_style(id));
    const auto mixed = mix_styles(embeddings, weights);
    return sample(net, reference, mixed, cfg, schedule, codepoint);
}

GlyphBitmap sample_zero_shot(const DenoiserNetF& net, const NormalizedImage& reference, int style_id,
                             const SamplerConfig& cfg, const NoiseSchedule& schedule, char32_t codepoint) {
    return sample_style_id(net, reference, style_id, cfg, schedule, codepoint);
}

} // namespace gf
