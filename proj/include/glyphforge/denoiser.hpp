#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/errors.hpp"
#include "glyphforge/nn.hpp"
#include "glyphforge/rng.hpp"

namespace gf {

/// Architecture of the eps-predicting UNet. The channel ladder is mirror
/// symmetric with odd length 2k+1: k encoder stages, one bottleneck, k decoder
/// stages; the spatial side halves per encoder stage.
struct DenoiserConfig {
    int input_side = 32;
    std::vector<int> channel_ladder = {32, 64, 128, 64, 32};
    int embedding_dim = 128;
    std::vector<int> attention_sides = {8};
    int num_styles = 2;
    int groups_per_norm = 8;

    int depth() const { return (static_cast<int>(channel_ladder.size()) - 1) / 2; }
    bool attention_at(int side) const {
        for (int s : attention_sides)
            if (s == side) return true;
        return false;
    }
    static bool is_pow2_side(int v) { return v > 0 && (v & (v - 1)) == 0; }
    void validate() const;

    /// 32x32 ladder [32,64,128,64,32], 128-d embeddings, attention at side 8.
    static DenoiserConfig desk(int num_styles);
    /// 128x128 ladder 128..512..128 (13 stages), 512-d embeddings, attention at 16 and 8.
    static DenoiserConfig full(int num_styles);
};

/// Raw sinusoidal position encoding of step t: pairs (sin, cos) interleaved,
/// frequency 10000^(-2j/dim) for pair j. dim must be even.
template <class T>
std::vector<T> sinusoidal_encoding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw InvalidConfig("embedding dim must be even and >= 2");
    std::vector<T> enc(static_cast<std::size_t>(dim));
    const double log_base = std::log(10000.0);
    for (int j = 0; j < dim / 2; ++j) {
        const double omega = std::exp(-log_base * (2.0 * j / dim));
        enc[2 * j] = static_cast<T>(std::sin(t * omega));
        enc[2 * j + 1] = static_cast<T>(std::cos(t * omega));
    }
    return enc;
}

/// Convex mixture sum_i w_i e_i. Weights must sum to 1 within 1e-9.
template <class T>
std::vector<T> mix_styles(const std::vector<std::vector<T>>& embeddings, const std::vector<double>& weights) {
    if (embeddings.size() != weights.size()) throw ShapeMismatch("mix_styles: weights/embeddings length mismatch");
    if (embeddings.empty()) throw WeightSumError("mix_styles: empty mixture");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw WeightSumError("mixture weights must be non-negative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw WeightSumError("mixture weights must sum to 1");
    const std::size_t dim = embeddings[0].size();
    std::vector<T> out(dim, T(0));
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].size() != dim) throw ShapeMismatch("mix_styles: embedding dims differ");
        const T w = static_cast<T>(weights[i]);
        for (std::size_t d = 0; d < dim; ++d) out[d] += w * embeddings[i][d];
    }
    return out;
}

struct ParamEntry {
    std::string name;
    std::size_t offset = 0;
    std::size_t count = 0;
    std::array<int, 4> shape{}; // trailing zeros unused
};

struct StageTrace {
    std::string name;
    int channels = 0;
    int side = 0;
};

namespace detail {

enum class InitKind { zeros, ones, he, lecun, embedding };

struct PendingInit {
    InitKind kind = InitKind::zeros;
    int fan_in = 0;
};

struct ConvSpec {
    nn::ConvDims dims;
    std::size_t w = 0, b = 0;
    int s_in = -1, s_out = -1;
};

struct GnSpec {
    int channels = 0, groups = 0, hw = 0;
    std::size_t g = 0, b = 0;
    int s_in = -1, s_out = -1, s_stats = -1;
};

struct LinSpec {
    int in = 0, out = 0;
    std::size_t w = 0, b = 0;
};

struct ResSpec {
    int cin = 0, cout = 0, side = 0;
    GnSpec gn1, gn2;
    ConvSpec conv1, conv2;
    LinSpec emb;
    std::optional<ConvSpec> skip;
    int s_in = -1, s_h2 = -1, s_out = -1;
};

struct AttnSpec {
    int channels = 0, side = 0;
    GnSpec gn;
    LinSpec q, k, v, proj;
    int s_in = -1, s_q = -1, s_k = -1, s_v = -1, s_a = -1, s_ao = -1, s_out = -1;
};

struct EncStage {
    ResSpec res;
    std::optional<AttnSpec> attn;
    ConvSpec down;
    int skip_slot = -1; // activation consumed by the mirrored decoder stage
};

struct DecStage {
    ConvSpec upconv; // applied after nearest 2x
    int s_up_in = -1, s_upsampled = -1, s_concat = -1;
    int enc_index = 0;
    ResSpec res;
    std::optional<AttnSpec> attn;
};

} // namespace detail

/// Per-call scratch for forward/backward. One workspace per thread; forward is
/// read-only on parameters, so concurrent inference only needs distinct
/// workspaces.
template <class T>
struct DenoiserWorkspace {
    std::vector<std::vector<T>> slot;
    std::vector<T> scratch_a, scratch_b;           // im2col buffers
    std::vector<T> grad_a, grad_b;                 // ping-pong activation gradients
    std::vector<T> act_tmp, act_tmp2;              // recomputed activations
    std::vector<T> t1, t2, t3, t4, t5, tA;         // layer-local gradient temporaries
    std::vector<std::vector<T>> skip_grad;
    std::vector<T> d_conds;
    std::vector<T> style_grad; // dL/d(style vector), filled by backward
    std::vector<StageTrace> trace;
    int last_t = 0;
    bool forward_done = false;
};

/// The eps-predicting UNet. Input is x_t concatenated with the reference glyph
/// (2 channels); timestep and style information enter as a shared conditioning
/// vector added as a per-channel bias inside every residual block.
template <class T>
class DenoiserNet {
public:
    DenoiserNet(DenoiserConfig cfg, std::uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }
    std::size_t parameter_count() const { return params_.size(); }
    std::vector<T>& params() { return params_; }
    const std::vector<T>& params() const { return params_; }
    const std::vector<ParamEntry>& param_entries() const { return entries_; }

    /// Learned style embedding row; IndexOutOfRange on a bad id.
    std::vector<T> lookup_style(int style_id) const;

    /// x_t, r: side*side arrays; style: embedding_dim; eps_out: side*side.
    void forward(DenoiserWorkspace<T>& ws, std::span<const T> x_t, std::span<const T> r, int t,
                 std::span<const T> style, std::span<T> eps_out) const;

    /// Accumulates parameter gradients into `grads` (size parameter_count()) for
    /// the forward pass recorded in `ws`; ws.style_grad receives dL/d(style).
    void backward(DenoiserWorkspace<T>& ws, std::span<const T> d_eps, std::span<T> grads) const;

    /// Adds the style-vector gradient from `ws` into the table row for style_id.
    void accumulate_style_grad(const DenoiserWorkspace<T>& ws, int style_id, std::span<T> grads) const;

    /// Timestep embedding after the learned two-layer projection.
    std::vector<T> embed_timestep(int t) const;

private:
    std::size_t add_param(const std::string& name, std::array<int, 4> shape);
    int new_slot() { return slot_count_++; }
    detail::ConvSpec make_conv(const std::string& name, int cin, int cout, int k, int stride, int pad, int hin);
    detail::GnSpec make_gn(const std::string& name, int channels, int hw);
    detail::LinSpec make_lin(const std::string& name, int in, int out);
    detail::ResSpec make_res(const std::string& name, int cin, int cout, int side);
    detail::AttnSpec make_attn(const std::string& name, int channels, int side);
    void init_params(std::uint64_t seed);

    void res_forward(DenoiserWorkspace<T>& ws, const detail::ResSpec& r) const;
    void res_backward(DenoiserWorkspace<T>& ws, const detail::ResSpec& r, const T* dy, T* dx, T* grads) const;
    void attn_forward(DenoiserWorkspace<T>& ws, const detail::AttnSpec& a) const;
    void attn_backward(DenoiserWorkspace<T>& ws, const detail::AttnSpec& a, const T* dy, T* dx, T* grads) const;

    DenoiserConfig cfg_;
    std::vector<T> params_;
    std::vector<ParamEntry> entries_;
    std::vector<detail::PendingInit> inits_; // one per entry, in registration order
    std::size_t next_offset_ = 0;

    detail::LinSpec time_l1_, time_l2_, style_proj_;
    std::size_t style_table_ = 0;
    detail::ConvSpec stem_;
    std::vector<detail::EncStage> enc_;
    detail::ResSpec mid_res_;
    std::optional<detail::AttnSpec> mid_attn_;
    std::vector<detail::DecStage> dec_;
    detail::GnSpec head_gn_;
    detail::ConvSpec head_conv_;
    int s_input_ = -1, s_sin_ = -1, s_l1_ = -1, s_l1s_ = -1, s_tv_ = -1, s_style_ = -1, s_sv_ = -1,
        s_cond_ = -1, s_conds_ = -1, s_head_gn_out_ = -1, s_head_silu_ = -1, s_head_stats_ = -1;
    int mid_out_slot_ = -1;
    int slot_count_ = 0;
};

using DenoiserNetF = DenoiserNet<float>;

extern template class DenoiserNet<float>;
extern template class DenoiserNet<double>;

} // namespace gf
