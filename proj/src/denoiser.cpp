#include "glyphforge/denoiser.hpp"

#include <algorithm>
#include <cmath>

namespace gf {

using detail::AttnSpec;
using detail::ConvSpec;
using detail::DecStage;
using detail::EncStage;
using detail::GnSpec;
using detail::LinSpec;
using detail::ResSpec;

using detail::InitKind;

void DenoiserConfig::validate() const {
    if (input_side < 8 || !is_pow2_side(input_side)) throw InvalidConfig("input_side must be a power of two >= 8");
    const int n = static_cast<int>(channel_ladder.size());
    if (n < 3 || n % 2 == 0) throw InvalidConfig("channel_ladder must have odd length >= 3");
    const int k = depth();
    for (int i = 0; i < n; ++i) {
        if (channel_ladder[i] <= 0) throw InvalidConfig("channel_ladder entries must be positive");
        if (channel_ladder[i] != channel_ladder[n - 1 - i])
            throw InvalidConfig("channel_ladder must be mirror symmetric");
        if (channel_ladder[i] % groups_per_norm != 0)
            throw InvalidConfig("channel_ladder entries must be divisible by groups_per_norm");
    }
    if ((input_side >> k) < 2) throw InvalidConfig("ladder too deep: bottleneck side would fall below 2");
    if (embedding_dim < 2 || embedding_dim % 2 != 0) throw InvalidConfig("embedding_dim must be even and >= 2");
    if (num_styles < 1) throw InvalidConfig("num_styles must be >= 1");
    if (groups_per_norm < 1) throw InvalidConfig("groups_per_norm must be >= 1");
}

DenoiserConfig DenoiserConfig::desk(int num_styles) {
    DenoiserConfig c;
    c.input_side = 32;
    c.channel_ladder = {32, 64, 128, 64, 32};
    c.embedding_dim = 128;
    c.attention_sides = {8};
    c.num_styles = num_styles;
    c.groups_per_norm = 8;
    return c;
}

DenoiserConfig DenoiserConfig::full(int num_styles) {
    DenoiserConfig c;
    c.input_side = 128;
    c.channel_ladder = {128, 128, 256, 256, 512, 512, 512, 512, 512, 256, 256, 128, 128};
    c.embedding_dim = 512;
    c.attention_sides = {16, 8};
    c.num_styles = num_styles;
    c.groups_per_norm = 8;
    return c;
}

template <class T>
std::size_t DenoiserNet<T>::add_param(const std::string& name, std::array<int, 4> shape) {
    ParamEntry e;
    e.name = name;
    e.shape = shape;
    e.count = 1;
    for (int d : shape)
        if (d > 0) e.count *= static_cast<std::size_t>(d);
    e.offset = next_offset_;
    next_offset_ += e.count;
    entries_.push_back(e);
    return e.offset;
}

template <class T>
detail::ConvSpec DenoiserNet<T>::make_conv(const std::string& name, int cin, int cout, int k, int stride, int pad,
                                           int hin) {
    ConvSpec c;
    c.dims = nn::ConvDims{cin, hin, hin, cout, k, stride, pad};
    c.w = add_param(name + ".w", {cout, cin, k, k});
    inits_.push_back({InitKind::he, cin * k * k});
    c.b = add_param(name + ".b", {cout, 0, 0, 0});
    inits_.push_back({InitKind::zeros, 0});
    return c;
}

template <class T>
detail::GnSpec DenoiserNet<T>::make_gn(const std::string& name, int channels, int hw) {
    GnSpec g;
    g.channels = channels;
    g.groups = cfg_.groups_per_norm;
    g.hw = hw;
    g.g = add_param(name + ".g", {channels, 0, 0, 0});
    inits_.push_back({InitKind::ones, 0});
    g.b = add_param(name + ".b", {channels, 0, 0, 0});
    inits_.push_back({InitKind::zeros, 0});
    g.s_stats = new_slot();
    return g;
}

template <class T>
detail::LinSpec DenoiserNet<T>::make_lin(const std::string& name, int in, int out) {
    LinSpec l;
    l.in = in;
    l.out = out;
    l.w = add_param(name + ".w", {out, in, 0, 0});
    inits_.push_back({InitKind::lecun, in});
    l.b = add_param(name + ".b", {out, 0, 0, 0});
    inits_.push_back({InitKind::zeros, 0});
    return l;
}

template <class T>
detail::ResSpec DenoiserNet<T>::make_res(const std::string& name, int cin, int cout, int side) {
    ResSpec r;
    r.cin = cin;
    r.cout = cout;
    r.side = side;
    const int hw = side * side;
    r.gn1 = make_gn(name + ".gn1", cin, hw);
    r.conv1 = make_conv(name + ".conv1", cin, cout, 3, 1, 1, side);
    r.emb = make_lin(name + ".emb", cfg_.embedding_dim, cout);
    r.gn2 = make_gn(name + ".gn2", cout, hw);
    r.conv2 = make_conv(name + ".conv2", cout, cout, 3, 1, 1, side);
    inits_[inits_.size() - 2] = {InitKind::zeros, 0}; // second conv starts silent
    if (cin != cout) {
        r.skip = make_conv(name + ".skip", cin, cout, 1, 1, 0, side);
    }
    r.gn1.s_out = new_slot();
    r.s_h2 = new_slot();
    r.gn2.s_out = new_slot();
    r.s_out = new_slot();
    return r;
}

template <class T>
detail::AttnSpec DenoiserNet<T>::make_attn(const std::string& name, int channels, int side) {
    AttnSpec a;
    a.channels = channels;
    a.side = side;
    a.gn = make_gn(name + ".gn", channels, side * side);
    a.q = make_lin(name + ".q", channels, channels);
    a.k = make_lin(name + ".k", channels, channels);
    a.v = make_lin(name + ".v", channels, channels);
    a.proj = make_lin(name + ".proj", channels, channels);
    inits_[inits_.size() - 2] = {InitKind::zeros, 0}; // attention block starts as identity
    a.gn.s_out = new_slot();
    a.s_q = new_slot();
    a.s_k = new_slot();
    a.s_v = new_slot();
    a.s_a = new_slot();
    a.s_ao = new_slot();
    a.s_out = new_slot();
    return a;
}

template <class T>
DenoiserNet<T>::DenoiserNet(DenoiserConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int S = cfg_.input_side;
    const int D = cfg_.embedding_dim;
    const int k = cfg_.depth();
    const auto& ladder = cfg_.channel_ladder;

    time_l1_ = make_lin("time.l1", D, D);
    time_l2_ = make_lin("time.l2", D, D);
    style_table_ = add_param("style.table", {cfg_.num_styles, D, 0, 0});
    inits_.push_back({InitKind::embedding, 0});
    style_proj_ = make_lin("style.proj", D, D);

    s_input_ = new_slot();
    s_sin_ = new_slot();
    s_l1_ = new_slot();
    s_l1s_ = new_slot();
    s_tv_ = new_slot();
    s_style_ = new_slot();
    s_sv_ = new_slot();
    s_cond_ = new_slot();
    s_conds_ = new_slot();

    stem_ = make_conv("stem", 2, ladder[0], 3, 1, 1, S);
    stem_.s_in = s_input_;
    stem_.s_out = new_slot();

    int side = S;
    int ch = ladder[0];
    int cur_slot = stem_.s_out;
    for (int i = 0; i < k; ++i) {
        EncStage st;
        const std::string base = "enc" + std::to_string(i);
        st.res = make_res(base + ".res", ch, ladder[i], side);
        st.res.s_in = cur_slot;
        cur_slot = st.res.s_out;
        if (cfg_.attention_at(side)) {
            st.attn = make_attn(base + ".attn", ladder[i], side);
            st.attn->s_in = cur_slot;
            cur_slot = st.attn->s_out;
        }
        st.skip_slot = cur_slot;
        st.down = make_conv(base + ".down", ladder[i], ladder[i], 3, 2, 1, side);
        st.down.s_in = cur_slot;
        st.down.s_out = new_slot();
        cur_slot = st.down.s_out;
        ch = ladder[i];
        side /= 2;
        enc_.push_back(std::move(st));
    }

    mid_res_ = make_res("mid.res", ch, ladder[k], side);
    mid_res_.s_in = cur_slot;
    cur_slot = mid_res_.s_out;
    if (cfg_.attention_at(side)) {
        mid_attn_ = make_attn("mid.attn", ladder[k], side);
        mid_attn_->s_in = cur_slot;
        cur_slot = mid_attn_->s_out;
    }
    mid_out_slot_ = cur_slot;
    ch = ladder[k];

    for (int j = 0; j < k; ++j) {
        DecStage st;
        const std::string base = "dec" + std::to_string(j);
        st.enc_index = k - 1 - j;
        const int out_side = side * 2;
        st.s_up_in = cur_slot;
        st.s_upsampled = new_slot();
        st.upconv = make_conv(base + ".up", ch, ch, 3, 1, 1, out_side);
        st.upconv.s_in = st.s_upsampled;
        st.upconv.s_out = new_slot();
        st.s_concat = new_slot();
        const int skip_ch = ladder[st.enc_index];
        st.res = make_res(base + ".res", ch + skip_ch, ladder[k + 1 + j], out_side);
        st.res.s_in = st.s_concat;
        cur_slot = st.res.s_out;
        if (cfg_.attention_at(out_side)) {
            st.attn = make_attn(base + ".attn", ladder[k + 1 + j], out_side);
            st.attn->s_in = cur_slot;
            cur_slot = st.attn->s_out;
        }
        ch = ladder[k + 1 + j];
        side = out_side;
        dec_.push_back(std::move(st));
    }

    head_gn_ = make_gn("head.gn", ch, S * S);
    head_gn_.s_in = cur_slot;
    s_head_gn_out_ = new_slot();
    head_gn_.s_out = s_head_gn_out_;
    s_head_silu_ = new_slot();
    head_conv_ = make_conv("head", ch, 1, 3, 1, 1, S);
    inits_[inits_.size() - 2] = {InitKind::zeros, 0}; // untrained net predicts eps == 0
    head_conv_.s_in = s_head_silu_;

    init_params(seed);
}

template <class T>
void DenoiserNet<T>::init_params(std::uint64_t seed) {
    params_.assign(next_offset_, T(0));
    Rng rng(seed);
    for (std::size_t e = 0; e < entries_.size(); ++e) {
        const ParamEntry& entry = entries_[e];
        const detail::PendingInit& pi = inits_[e];
        T* p = params_.data() + entry.offset;
        switch (pi.kind) {
            case InitKind::zeros:
                break;
            case InitKind::ones:
                std::fill(p, p + entry.count, T(1));
                break;
            case InitKind::he: {
                const double std = std::sqrt(2.0 / pi.fan_in);
                for (std::size_t i = 0; i < entry.count; ++i) p[i] = static_cast<T>(rng.normal() * std);
                break;
            }
            case InitKind::lecun: {
                const double std = std::sqrt(1.0 / pi.fan_in);
                for (std::size_t i = 0; i < entry.count; ++i) p[i] = static_cast<T>(rng.normal() * std);
                break;
            }
            case InitKind::embedding:
                for (std::size_t i = 0; i < entry.count; ++i) p[i] = static_cast<T>(rng.normal() * 0.02);
                break;
        }
    }
}

template <class T>
std::vector<T> DenoiserNet<T>::lookup_style(int style_id) const {
    if (style_id < 0 || style_id >= cfg_.num_styles)
        throw IndexOutOfRange("style id " + std::to_string(style_id) + " out of range [0," +
                              std::to_string(cfg_.num_styles) + ")");
    const int D = cfg_.embedding_dim;
    const T* row = params_.data() + style_table_ + static_cast<std::size_t>(style_id) * D;
    return std::vector<T>(row, row + D);
}

template <class T>
std::vector<T> DenoiserNet<T>::embed_timestep(int t) const {
    const int D = cfg_.embedding_dim;
    const auto enc = sinusoidal_encoding<T>(t, D);
    std::vector<T> h1(static_cast<std::size_t>(D)), h1s(static_cast<std::size_t>(D)), out(static_cast<std::size_t>(D));
    nn::linear_forward(enc.data(), params_.data() + time_l1_.w, params_.data() + time_l1_.b, D, D, h1.data());
    nn::silu_forward(h1.data(), h1.size(), h1s.data());
    nn::linear_forward(h1s.data(), params_.data() + time_l2_.w, params_.data() + time_l2_.b, D, D, out.data());
    return out;
}

namespace {

template <class T>
std::vector<T>& use_slot(std::vector<std::vector<T>>& slots, int id, std::size_t n) {
    auto& s = slots[static_cast<std::size_t>(id)];
    s.resize(n);
    return s;
}

template <class T>
void ensure(std::vector<T>& v, std::size_t n) {
    if (v.size() < n) v.resize(n);
}

} // namespace

template <class T>
void DenoiserNet<T>::res_forward(DenoiserWorkspace<T>& ws, const ResSpec& r) const {
    const int hw = r.side * r.side;
    const T* p = params_.data();
    const T* x = ws.slot[static_cast<std::size_t>(r.s_in)].data();
    auto& gn1_out = use_slot(ws.slot, r.gn1.s_out, static_cast<std::size_t>(r.cin) * hw);
    auto& gn1_stats = use_slot(ws.slot, r.gn1.s_stats, 2 * static_cast<std::size_t>(r.gn1.groups));
    nn::groupnorm_forward(x, p + r.gn1.g, p + r.gn1.b, r.cin, hw, r.gn1.groups, gn1_out.data(), gn1_stats.data());

    ensure(ws.act_tmp, gn1_out.size());
    nn::silu_forward(gn1_out.data(), gn1_out.size(), ws.act_tmp.data());

    auto& h2 = use_slot(ws.slot, r.s_h2, static_cast<std::size_t>(r.cout) * hw);
    nn::conv2d_forward(ws.act_tmp.data(), p + r.conv1.w, p + r.conv1.b, r.conv1.dims, h2.data(), ws.scratch_a);

    // conditioning enters as a per-channel bias after the first convolution
    const std::vector<T>& conds = ws.slot[static_cast<std::size_t>(s_conds_)];
    std::vector<T> e(static_cast<std::size_t>(r.cout));
    nn::linear_forward(conds.data(), p + r.emb.w, p + r.emb.b, r.emb.in, r.emb.out, e.data());
    for (int c = 0; c < r.cout; ++c) {
        T* row = h2.data() + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) row[i] += e[static_cast<std::size_t>(c)];
    }

    auto& gn2_out = use_slot(ws.slot, r.gn2.s_out, h2.size());
    auto& gn2_stats = use_slot(ws.slot, r.gn2.s_stats, 2 * static_cast<std::size_t>(r.gn2.groups));
    nn::groupnorm_forward(h2.data(), p + r.gn2.g, p + r.gn2.b, r.cout, hw, r.gn2.groups, gn2_out.data(),
                          gn2_stats.data());
    ensure(ws.act_tmp, gn2_out.size());
    nn::silu_forward(gn2_out.data(), gn2_out.size(), ws.act_tmp.data());

    auto& out = use_slot(ws.slot, r.s_out, static_cast<std::size_t>(r.cout) * hw);
    nn::conv2d_forward(ws.act_tmp.data(), p + r.conv2.w, p + r.conv2.b, r.conv2.dims, out.data(), ws.scratch_a);

    if (r.skip) {
        ensure(ws.act_tmp2, out.size());
        nn::conv2d_forward(x, p + r.skip->w, p + r.skip->b, r.skip->dims, ws.act_tmp2.data(), ws.scratch_a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += ws.act_tmp2[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
    }
}

template <class T>
void DenoiserNet<T>::res_backward(DenoiserWorkspace<T>& ws, const ResSpec& r, const T* dy, T* dx, T* grads) const {
    const int hw = r.side * r.side;
    const T* p = params_.data();
    const T* x = ws.slot[static_cast<std::size_t>(r.s_in)].data();
    const std::size_t out_n = static_cast<std::size_t>(r.cout) * hw;
    const std::size_t in_n = static_cast<std::size_t>(r.cin) * hw;

    const auto& gn1_out = ws.slot[static_cast<std::size_t>(r.gn1.s_out)];
    const auto& gn1_stats = ws.slot[static_cast<std::size_t>(r.gn1.s_stats)];
    const auto& h2 = ws.slot[static_cast<std::size_t>(r.s_h2)];
    const auto& gn2_out = ws.slot[static_cast<std::size_t>(r.gn2.s_out)];
    const auto& gn2_stats = ws.slot[static_cast<std::size_t>(r.gn2.s_stats)];

    // conv2 path
    ensure(ws.act_tmp, gn2_out.size());
    nn::silu_forward(gn2_out.data(), gn2_out.size(), ws.act_tmp.data()); // recompute conv2 input
    ensure(ws.t1, out_n);
    nn::conv2d_backward(ws.act_tmp.data(), p + r.conv2.w, r.conv2.dims, dy, grads + r.conv2.w, grads + r.conv2.b,
                        ws.t1.data(), ws.scratch_a, ws.scratch_b);
    ensure(ws.t2, out_n);
    nn::silu_backward(gn2_out.data(), ws.t1.data(), gn2_out.size(), ws.t2.data());
    ensure(ws.t1, out_n);
    nn::groupnorm_backward(h2.data(), p + r.gn2.g, gn2_stats.data(), r.cout, hw, r.gn2.groups, ws.t2.data(),
                           grads + r.gn2.g, grads + r.gn2.b, ws.t1.data()); // t1 = dh2

    // conditioning bias
    std::vector<T> de(static_cast<std::size_t>(r.cout));
    for (int c = 0; c < r.cout; ++c) {
        const T* row = ws.t1.data() + static_cast<std::size_t>(c) * hw;
        T acc = T(0);
        for (int i = 0; i < hw; ++i) acc += row[i];
        de[static_cast<std::size_t>(c)] = acc;
    }
    const auto& conds = ws.slot[static_cast<std::size_t>(s_conds_)];
    nn::linear_backward(conds.data(), p + r.emb.w, r.emb.in, r.emb.out, de.data(), grads + r.emb.w, grads + r.emb.b,
                        ws.d_conds.data(), true);

    // conv1 path
    ensure(ws.act_tmp, gn1_out.size());
    nn::silu_forward(gn1_out.data(), gn1_out.size(), ws.act_tmp.data()); // recompute conv1 input
    ensure(ws.t2, in_n);
    nn::conv2d_backward(ws.act_tmp.data(), p + r.conv1.w, r.conv1.dims, ws.t1.data(), grads + r.conv1.w,
                        grads + r.conv1.b, ws.t2.data(), ws.scratch_a, ws.scratch_b);
    ensure(ws.t3, in_n);
    nn::silu_backward(gn1_out.data(), ws.t2.data(), gn1_out.size(), ws.t3.data());
    nn::groupnorm_backward(x, p + r.gn1.g, gn1_stats.data(), r.cin, hw, r.gn1.groups, ws.t3.data(), grads + r.gn1.g,
                           grads + r.gn1.b, dx);

    // skip path
    if (r.skip) {
        ensure(ws.t2, in_n);
        nn::conv2d_backward(x, p + r.skip->w, r.skip->dims, dy, grads + r.skip->w, grads + r.skip->b, ws.t2.data(),
                            ws.scratch_a, ws.scratch_b);
        for (std::size_t i = 0; i < in_n; ++i) dx[i] += ws.t2[i];
    } else {
        for (std::size_t i = 0; i < in_n; ++i) dx[i] += dy[i];
    }
}

template <class T>
void DenoiserNet<T>::attn_forward(DenoiserWorkspace<T>& ws, const AttnSpec& a) const {
    const int C = a.channels;
    const int P = a.side * a.side;
    const T* p = params_.data();
    const T* x = ws.slot[static_cast<std::size_t>(a.s_in)].data();
    const std::size_t n = static_cast<std::size_t>(C) * P;

    auto& g = use_slot(ws.slot, a.gn.s_out, n);
    auto& stats = use_slot(ws.slot, a.gn.s_stats, 2 * static_cast<std::size_t>(a.gn.groups));
    nn::groupnorm_forward(x, p + a.gn.g, p + a.gn.b, C, P, a.gn.groups, g.data(), stats.data());

    auto& q = use_slot(ws.slot, a.s_q, n);
    auto& k = use_slot(ws.slot, a.s_k, n);
    auto& v = use_slot(ws.slot, a.s_v, n);
    // 1x1 projections: Y[C x P] = W[C x C] G[C x P] + b
    nn::CMapRM<T> G(g.data(), C, P);
    for (auto [spec, out] : {std::pair{&a.q, &q}, std::pair{&a.k, &k}, std::pair{&a.v, &v}}) {
        nn::CMapRM<T> W(p + spec->w, C, C);
        nn::MapRM<T> Y(out->data(), C, P);
        Y.noalias() = W * G;
        const T* bias = p + spec->b;
        for (int c = 0; c < C; ++c) Y.row(c).array() += bias[c];
    }

    auto& A = use_slot(ws.slot, a.s_a, static_cast<std::size_t>(P) * P);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(C)));
    nn::CMapRM<T> Q(q.data(), C, P), K(k.data(), C, P), V(v.data(), C, P);
    nn::MapRM<T> Am(A.data(), P, P);
    Am.noalias() = (Q.transpose() * K) * scale;
    nn::softmax_rows(A.data(), P);

    auto& ao = use_slot(ws.slot, a.s_ao, n);
    nn::MapRM<T> Ao(ao.data(), C, P);
    Ao.noalias() = V * Am.transpose();

    auto& out = use_slot(ws.slot, a.s_out, n);
    nn::CMapRM<T> Wp(p + a.proj.w, C, C);
    nn::MapRM<T> O(out.data(), C, P);
    O.noalias() = Wp * Ao;
    const T* bp = p + a.proj.b;
    for (int c = 0; c < C; ++c) O.row(c).array() += bp[c];
    for (std::size_t i = 0; i < n; ++i) out[i] += x[i];
}

template <class T>
void DenoiserNet<T>::attn_backward(DenoiserWorkspace<T>& ws, const AttnSpec& a, const T* dy, T* dx, T* grads) const {
    const int C = a.channels;
    const int P = a.side * a.side;
    const T* p = params_.data();
    const T* x = ws.slot[static_cast<std::size_t>(a.s_in)].data();
    const std::size_t n = static_cast<std::size_t>(C) * P;

    const auto& g = ws.slot[static_cast<std::size_t>(a.gn.s_out)];
    const auto& stats = ws.slot[static_cast<std::size_t>(a.gn.s_stats)];
    const auto& q = ws.slot[static_cast<std::size_t>(a.s_q)];
    const auto& k = ws.slot[static_cast<std::size_t>(a.s_k)];
    const auto& v = ws.slot[static_cast<std::size_t>(a.s_v)];
    const auto& A = ws.slot[static_cast<std::size_t>(a.s_a)];
    const auto& ao = ws.slot[static_cast<std::size_t>(a.s_ao)];

    nn::CMapRM<T> dY(dy, C, P), G(g.data(), C, P), Q(q.data(), C, P), K(k.data(), C, P), V(v.data(), C, P),
        Am(A.data(), P, P), Ao(ao.data(), C, P);

    // proj
    {
        nn::MapRM<T> dWp(grads + a.proj.w, C, C);
        dWp.noalias() += dY * Ao.transpose();
        T* dbp = grads + a.proj.b;
        for (int c = 0; c < C; ++c) dbp[c] += dY.row(c).sum();
    }
    ensure(ws.t1, n); // dao
    {
        nn::CMapRM<T> Wp(p + a.proj.w, C, C);
        nn::MapRM<T> dAo(ws.t1.data(), C, P);
        dAo.noalias() = Wp.transpose() * dY;
    }
    nn::CMapRM<T> dAo(ws.t1.data(), C, P);

    ensure(ws.t2, n); // dv
    nn::MapRM<T> dV(ws.t2.data(), C, P);
    dV.noalias() = dAo * Am;

    ensure(ws.tA, static_cast<std::size_t>(P) * P);
    nn::MapRM<T> dA(ws.tA.data(), P, P);
    dA.noalias() = dAo.transpose() * V;

    // softmax rows backward, in place on dA
    for (int j = 0; j < P; ++j) {
        const T* arow = A.data() + static_cast<std::size_t>(j) * P;
        T* drow = ws.tA.data() + static_cast<std::size_t>(j) * P;
        T dot = T(0);
        for (int i = 0; i < P; ++i) dot += drow[i] * arow[i];
        for (int i = 0; i < P; ++i) drow[i] = arow[i] * (drow[i] - dot);
    }

    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(C)));
    ensure(ws.t3, n); // dq
    nn::MapRM<T> dQ(ws.t3.data(), C, P);
    dQ.noalias() = (K * dA.transpose()) * scale;
    ensure(ws.t4, n); // dk
    nn::MapRM<T> dK(ws.t4.data(), C, P);
    dK.noalias() = (Q * dA) * scale;

    // q/k/v projections; accumulate dg
    ensure(ws.t5, n);
    nn::MapRM<T> dG(ws.t5.data(), C, P);
    dG.setZero();
    struct Piece {
        const LinSpec* spec;
        const T* grad_out;
    };
    const Piece pieces[3] = {{&a.q, ws.t3.data()}, {&a.k, ws.t4.data()}, {&a.v, ws.t2.data()}};
    for (const auto& piece : pieces) {
        nn::CMapRM<T> dOut(piece.grad_out, C, P);
        nn::MapRM<T> dW(grads + piece.spec->w, C, C);
        dW.noalias() += dOut * G.transpose();
        T* db = grads + piece.spec->b;
        for (int c = 0; c < C; ++c) db[c] += dOut.row(c).sum();
        nn::CMapRM<T> W(p + piece.spec->w, C, C);
        dG.noalias() += W.transpose() * dOut;
    }

    nn::groupnorm_backward(x, p + a.gn.g, stats.data(), C, P, a.gn.groups, ws.t5.data(), grads + a.gn.g,
                           grads + a.gn.b, dx);
    for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i];
}

template <class T>
void DenoiserNet<T>::forward(DenoiserWorkspace<T>& ws, std::span<const T> x_t, std::span<const T> r_img, int t,
                             std::span<const T> style, std::span<T> eps_out) const {
    const int S = cfg_.input_side;
    const int D = cfg_.embedding_dim;
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    if (x_t.size() != plane || r_img.size() != plane)
        throw ShapeMismatch("denoiser forward: image size " + std::to_string(x_t.size()) + " expected " +
                            std::to_string(plane));
    if (style.size() != static_cast<std::size_t>(D)) throw ShapeMismatch("denoiser forward: style dimension mismatch");
    if (eps_out.size() != plane) throw ShapeMismatch("denoiser forward: output size mismatch");
    if (t < 1) throw InvalidRange("denoiser forward: t must be >= 1");

    ws.slot.resize(static_cast<std::size_t>(slot_count_));
    ws.trace.clear();
    ws.last_t = t;
    const T* p = params_.data();

    // conditioning vector
    {
        auto& sin_enc = use_slot(ws.slot, s_sin_, static_cast<std::size_t>(D));
        const auto enc = sinusoidal_encoding<T>(t, D);
        std::copy(enc.begin(), enc.end(), sin_enc.begin());
        auto& l1 = use_slot(ws.slot, s_l1_, static_cast<std::size_t>(D));
        nn::linear_forward(sin_enc.data(), p + time_l1_.w, p + time_l1_.b, D, D, l1.data());
        auto& l1s = use_slot(ws.slot, s_l1s_, static_cast<std::size_t>(D));
        nn::silu_forward(l1.data(), l1.size(), l1s.data());
        auto& tv = use_slot(ws.slot, s_tv_, static_cast<std::size_t>(D));
        nn::linear_forward(l1s.data(), p + time_l2_.w, p + time_l2_.b, D, D, tv.data());

        auto& sv_in = use_slot(ws.slot, s_style_, static_cast<std::size_t>(D));
        std::copy(style.begin(), style.end(), sv_in.begin());
        auto& sv = use_slot(ws.slot, s_sv_, static_cast<std::size_t>(D));
        nn::linear_forward(sv_in.data(), p + style_proj_.w, p + style_proj_.b, D, D, sv.data());

        auto& cond = use_slot(ws.slot, s_cond_, static_cast<std::size_t>(D));
        for (int i = 0; i < D; ++i) cond[static_cast<std::size_t>(i)] = tv[static_cast<std::size_t>(i)] + sv[static_cast<std::size_t>(i)];
        auto& conds = use_slot(ws.slot, s_conds_, static_cast<std::size_t>(D));
        nn::silu_forward(cond.data(), cond.size(), conds.data());
    }

    // image path
    auto& input = use_slot(ws.slot, s_input_, 2 * plane);
    std::copy(x_t.begin(), x_t.end(), input.begin());
    std::copy(r_img.begin(), r_img.end(), input.begin() + static_cast<std::ptrdiff_t>(plane));
    ws.trace.push_back({"input", 2, S});

    auto& stem_out = use_slot(ws.slot, stem_.s_out, static_cast<std::size_t>(cfg_.channel_ladder[0]) * plane);
    nn::conv2d_forward(input.data(), p + stem_.w, p + stem_.b, stem_.dims, stem_out.data(), ws.scratch_a);
    ws.trace.push_back({"stem", cfg_.channel_ladder[0], S});

    for (std::size_t i = 0; i < enc_.size(); ++i) {
        const EncStage& st = enc_[i];
        res_forward(ws, st.res);
        ws.trace.push_back({"enc" + std::to_string(i) + ".res", st.res.cout, st.res.side});
        if (st.attn) {
            attn_forward(ws, *st.attn);
            ws.trace.push_back({"enc" + std::to_string(i) + ".attn", st.attn->channels, st.attn->side});
        }
        auto& down_out = use_slot(ws.slot, st.down.s_out, st.down.dims.out_size());
        nn::conv2d_forward(ws.slot[static_cast<std::size_t>(st.down.s_in)].data(), p + st.down.w, p + st.down.b,
                           st.down.dims, down_out.data(), ws.scratch_a);
        ws.trace.push_back({"enc" + std::to_string(i) + ".down", st.down.dims.cout, st.down.dims.hout()});
    }

    res_forward(ws, mid_res_);
    ws.trace.push_back({"mid.res", mid_res_.cout, mid_res_.side});
    if (mid_attn_) {
        attn_forward(ws, *mid_attn_);
        ws.trace.push_back({"mid.attn", mid_attn_->channels, mid_attn_->side});
    }

    for (std::size_t j = 0; j < dec_.size(); ++j) {
        const DecStage& st = dec_[j];
        const int c = st.upconv.dims.cin;
        const int side_lo = st.res.side / 2;
        auto& upsampled = use_slot(ws.slot, st.s_upsampled, static_cast<std::size_t>(c) * st.res.side * st.res.side);
        nn::upsample2x_forward(ws.slot[static_cast<std::size_t>(st.s_up_in)].data(), c, side_lo, side_lo,
                               upsampled.data());
        auto& up_out = use_slot(ws.slot, st.upconv.s_out, st.upconv.dims.out_size());
        nn::conv2d_forward(upsampled.data(), p + st.upconv.w, p + st.upconv.b, st.upconv.dims, up_out.data(),
                           ws.scratch_a);
        ws.trace.push_back({"dec" + std::to_string(j) + ".up", c, st.res.side});

        const auto& skip = ws.slot[static_cast<std::size_t>(enc_[static_cast<std::size_t>(st.enc_index)].skip_slot)];
        auto& concat = use_slot(ws.slot, st.s_concat, up_out.size() + skip.size());
        std::copy(up_out.begin(), up_out.end(), concat.begin());
        std::copy(skip.begin(), skip.end(), concat.begin() + static_cast<std::ptrdiff_t>(up_out.size()));
        ws.trace.push_back({"dec" + std::to_string(j) + ".concat(enc" + std::to_string(st.enc_index) + ")",
                            st.res.cin, st.res.side});

        res_forward(ws, st.res);
        ws.trace.push_back({"dec" + std::to_string(j) + ".res", st.res.cout, st.res.side});
        if (st.attn) {
            attn_forward(ws, *st.attn);
            ws.trace.push_back({"dec" + std::to_string(j) + ".attn", st.attn->channels, st.attn->side});
        }
    }

    const int head_ch = head_gn_.channels;
    auto& hgn = use_slot(ws.slot, s_head_gn_out_, static_cast<std::size_t>(head_ch) * plane);
    auto& hstats = use_slot(ws.slot, head_gn_.s_stats, 2 * static_cast<std::size_t>(head_gn_.groups));
    nn::groupnorm_forward(ws.slot[static_cast<std::size_t>(head_gn_.s_in)].data(), p + head_gn_.g, p + head_gn_.b,
                          head_ch, static_cast<int>(plane), head_gn_.groups, hgn.data(), hstats.data());
    auto& hs = use_slot(ws.slot, s_head_silu_, hgn.size());
    nn::silu_forward(hgn.data(), hgn.size(), hs.data());
    nn::conv2d_forward(hs.data(), p + head_conv_.w, p + head_conv_.b, head_conv_.dims, eps_out.data(), ws.scratch_a);
    ws.trace.push_back({"head", 1, S});
    ws.forward_done = true;
}

template <class T>
void DenoiserNet<T>::backward(DenoiserWorkspace<T>& ws, std::span<const T> d_eps, std::span<T> grads) const {
    if (!ws.forward_done) throw InvalidConfig("denoiser backward called without a recorded forward pass");
    const int S = cfg_.input_side;
    const int D = cfg_.embedding_dim;
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    if (d_eps.size() != plane) throw ShapeMismatch("denoiser backward: gradient size mismatch");
    if (grads.size() != params_.size()) throw ShapeMismatch("denoiser backward: grads buffer size mismatch");
    const T* p = params_.data();
    T* g = grads.data();

    ws.d_conds.assign(static_cast<std::size_t>(D), T(0));
    ws.skip_grad.resize(enc_.size());

    // head
    const int head_ch = head_gn_.channels;
    const auto& hs = ws.slot[static_cast<std::size_t>(s_head_silu_)];
    const auto& hgn = ws.slot[static_cast<std::size_t>(s_head_gn_out_)];
    const auto& hstats = ws.slot[static_cast<std::size_t>(head_gn_.s_stats)];
    ensure(ws.grad_a, static_cast<std::size_t>(head_ch) * plane);
    nn::conv2d_backward(hs.data(), p + head_conv_.w, head_conv_.dims, d_eps.data(), g + head_conv_.w,
                        g + head_conv_.b, ws.grad_a.data(), ws.scratch_a, ws.scratch_b);
    ensure(ws.grad_b, static_cast<std::size_t>(head_ch) * plane);
    nn::silu_backward(hgn.data(), ws.grad_a.data(), hgn.size(), ws.grad_b.data());
    ensure(ws.grad_a, static_cast<std::size_t>(head_ch) * plane);
    nn::groupnorm_backward(ws.slot[static_cast<std::size_t>(head_gn_.s_in)].data(), p + head_gn_.g, hstats.data(),
                           head_ch, static_cast<int>(plane), head_gn_.groups, ws.grad_b.data(), g + head_gn_.g,
                           g + head_gn_.b, ws.grad_a.data());
    // ws.grad_a now holds d(last decoder activation)

    for (std::size_t jr = dec_.size(); jr-- > 0;) {
        const DecStage& st = dec_[jr];
        const std::size_t out_n = static_cast<std::size_t>(st.res.cout) * st.res.side * st.res.side;
        if (st.attn) {
            ensure(ws.grad_b, out_n);
            attn_backward(ws, *st.attn, ws.grad_a.data(), ws.grad_b.data(), g);
            std::swap(ws.grad_a, ws.grad_b);
        }
        const std::size_t concat_n = static_cast<std::size_t>(st.res.cin) * st.res.side * st.res.side;
        ensure(ws.grad_b, concat_n);
        res_backward(ws, st.res, ws.grad_a.data(), ws.grad_b.data(), g);

        const std::size_t up_n = st.upconv.dims.out_size();
        auto& sg = ws.skip_grad[static_cast<std::size_t>(st.enc_index)];
        sg.assign(concat_n - up_n, T(0));
        std::copy(ws.grad_b.begin() + static_cast<std::ptrdiff_t>(up_n),
                  ws.grad_b.begin() + static_cast<std::ptrdiff_t>(concat_n), sg.begin());

        const auto& upsampled = ws.slot[static_cast<std::size_t>(st.s_upsampled)];
        ensure(ws.t1, upsampled.size());
        nn::conv2d_backward(upsampled.data(), p + st.upconv.w, st.upconv.dims, ws.grad_b.data(), g + st.upconv.w,
                            g + st.upconv.b, ws.t1.data(), ws.scratch_a, ws.scratch_b);
        const int c = st.upconv.dims.cin;
        const int side_lo = st.res.side / 2;
        ensure(ws.grad_a, static_cast<std::size_t>(c) * side_lo * side_lo);
        nn::upsample2x_backward(ws.t1.data(), c, side_lo, side_lo, ws.grad_a.data());
    }

    if (mid_attn_) {
        const std::size_t n = static_cast<std::size_t>(mid_attn_->channels) * mid_attn_->side * mid_attn_->side;
        ensure(ws.grad_b, n);
        attn_backward(ws, *mid_attn_, ws.grad_a.data(), ws.grad_b.data(), g);
        std::swap(ws.grad_a, ws.grad_b);
    }
    {
        const std::size_t in_n = static_cast<std::size_t>(mid_res_.cin) * mid_res_.side * mid_res_.side;
        ensure(ws.grad_b, in_n);
        res_backward(ws, mid_res_, ws.grad_a.data(), ws.grad_b.data(), g);
        std::swap(ws.grad_a, ws.grad_b);
    }

    for (std::size_t ir = enc_.size(); ir-- > 0;) {
        const EncStage& st = enc_[ir];
        const std::size_t stage_n = static_cast<std::size_t>(st.down.dims.cin) * st.res.side * st.res.side;
        ensure(ws.grad_b, stage_n);
        nn::conv2d_backward(ws.slot[static_cast<std::size_t>(st.down.s_in)].data(), p + st.down.w, st.down.dims,
                            ws.grad_a.data(), g + st.down.w, g + st.down.b, ws.grad_b.data(), ws.scratch_a,
                            ws.scratch_b);
        const auto& sg = ws.skip_grad[ir];
        for (std::size_t i = 0; i < stage_n; ++i) ws.grad_b[i] += sg[i];
        std::swap(ws.grad_a, ws.grad_b);
        if (st.attn) {
            ensure(ws.grad_b, stage_n);
            attn_backward(ws, *st.attn, ws.grad_a.data(), ws.grad_b.data(), g);
            std::swap(ws.grad_a, ws.grad_b);
        }
        const std::size_t in_n = static_cast<std::size_t>(st.res.cin) * st.res.side * st.res.side;
        ensure(ws.grad_b, in_n);
        res_backward(ws, st.res, ws.grad_a.data(), ws.grad_b.data(), g);
        std::swap(ws.grad_a, ws.grad_b);
    }

    // stem: parameter grads only
    nn::conv2d_backward(ws.slot[static_cast<std::size_t>(s_input_)].data(), p + stem_.w, stem_.dims, ws.grad_a.data(),
                        g + stem_.w, g + stem_.b, static_cast<T*>(nullptr), ws.scratch_a, ws.scratch_b);

    // conditioning tail
    const auto& cond = ws.slot[static_cast<std::size_t>(s_cond_)];
    ensure(ws.t1, static_cast<std::size_t>(D));
    nn::silu_backward(cond.data(), ws.d_conds.data(), cond.size(), ws.t1.data()); // t1 = d_cond

    const auto& l1s = ws.slot[static_cast<std::size_t>(s_l1s_)];
    const auto& l1 = ws.slot[static_cast<std::size_t>(s_l1_)];
    const auto& sin_enc = ws.slot[static_cast<std::size_t>(s_sin_)];
    ensure(ws.t2, static_cast<std::size_t>(D));
    nn::linear_backward(l1s.data(), p + time_l2_.w, D, D, ws.t1.data(), g + time_l2_.w, g + time_l2_.b, ws.t2.data(),
                        false);
    ensure(ws.t3, static_cast<std::size_t>(D));
    nn::silu_backward(l1.data(), ws.t2.data(), l1.size(), ws.t3.data());
    nn::linear_backward(sin_enc.data(), p + time_l1_.w, D, D, ws.t3.data(), g + time_l1_.w, g + time_l1_.b,
                        static_cast<T*>(nullptr), false);

    const auto& style_in = ws.slot[static_cast<std::size_t>(s_style_)];
    ws.style_grad.assign(static_cast<std::size_t>(D), T(0));
    nn::linear_backward(style_in.data(), p + style_proj_.w, D, D, ws.t1.data(), g + style_proj_.w, g + style_proj_.b,
                        ws.style_grad.data(), false);
    ws.forward_done = false;
}

template <class T>
void DenoiserNet<T>::accumulate_style_grad(const DenoiserWorkspace<T>& ws, int style_id, std::span<T> grads) const {
    if (style_id < 0 || style_id >= cfg_.num_styles) throw IndexOutOfRange("style id out of range");
    const int D = cfg_.embedding_dim;
    T* row = grads.data() + style_table_ + static_cast<std::size_t>(style_id) * D;
    for (int d = 0; d < D; ++d) row[d] += ws.style_grad[static_cast<std::size_t>(d)];
}

template class DenoiserNet<float>;
template class DenoiserNet<double>;

} // namespace gf
