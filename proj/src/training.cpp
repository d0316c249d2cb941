#include "glyphforge/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "glyphforge/errors.hpp"
#include "glyphforge/threads.hpp"

namespace gf {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

NoiseSchedule ScheduleParams::realize() const {
    if (form != "linear") throw InvalidConfig("unknown schedule form: " + form);
    return make_schedule(T, beta_start, beta_end);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (ema_decay && !(*ema_decay > 0.0 && *ema_decay < 1.0))
        throw InvalidConfig("ema_decay must lie in (0,1) when enabled");
    if (checkpoint_every < 1) throw InvalidConfig("checkpoint_every must be >= 1");
    schedule.realize(); // validates ranges
}

void AdamState::init(std::size_t n) {
    m.assign(n, 0.0f);
    v.assign(n, 0.0f);
    step_count = 0;
}

void AdamState::update(std::span<float> params, std::span<const float> grads) {
    if (m.size() != params.size() || v.size() != params.size() || grads.size() != params.size())
        throw ShapeMismatch("adam state size mismatch");
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
    const float one_b1 = static_cast<float>(1.0 - beta1), one_b2 = static_cast<float>(1.0 - beta2);
    const float lr_f = static_cast<float>(lr);
    const float inv_bc1 = static_cast<float>(1.0 / bc1), inv_bc2 = static_cast<float>(1.0 / bc2);
    const float e = static_cast<float>(eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const float g = grads[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        const float mhat = m[i] * inv_bc1;
        const float vhat = v[i] * inv_bc2;
        params[i] -= lr_f * mhat / (std::sqrt(vhat) + e);
    }
}

void ema_update(std::span<float> shadow, std::span<const float> live, double decay) {
    if (shadow.size() != live.size()) throw ShapeMismatch("ema_update size mismatch");
    if (!(decay >= 0.0 && decay <= 1.0)) throw InvalidRange("ema decay must lie in [0,1]");
    const float d = static_cast<float>(decay), od = static_cast<float>(1.0 - decay);
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = d * shadow[i] + od * live[i];
}

Trainer::Trainer(DenoiserNetF& net, NoiseSchedule schedule, AdamState adam, double grad_clip_norm,
                 std::optional<double> ema_decay)
    : net_(net), schedule_(std::move(schedule)), adam_(std::move(adam)), grad_clip_norm_(grad_clip_norm),
      ema_decay_(ema_decay) {
    if (adam_.m.empty()) adam_.init(net_.parameter_count());
    if (adam_.m.size() != net_.parameter_count()) throw ShapeMismatch("adam state does not match network");
    grads_.assign(net_.parameter_count(), 0.0f);
    if (ema_decay_) ema_ = net_.params();
}

double Trainer::step(std::span<const TrainingExample> batch, Rng& rng) {
    if (batch.empty()) throw InvalidConfig("train_step needs a non-empty batch");
    const int n = static_cast<int>(batch.size());
    const int side = net_.config().input_side;
    const std::size_t plane = static_cast<std::size_t>(side) * side;

    // All stochastic draws happen here, in batch order, so threading does not
    // affect the stream.
    std::vector<int> ts(static_cast<std::size_t>(n));
    std::vector<std::vector<float>> eps(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ts[static_cast<std::size_t>(i)] = rng.uniform_step(schedule_.T);
        auto& e = eps[static_cast<std::size_t>(i)];
        e.resize(plane);
        for (auto& v : e) v = static_cast<float>(rng.normal());
    }

    if (static_cast<int>(item_grads_.size()) < n) {
        item_grads_.resize(static_cast<std::size_t>(n));
        item_ws_.resize(static_cast<std::size_t>(n));
    }

    std::vector<double> item_loss(static_cast<std::size_t>(n), 0.0);
    std::vector<double> item_max_eps(static_cast<std::size_t>(n), 0.0);

    parallel_for(0, n, [&](int i) {
        const TrainingExample& ex = batch[static_cast<std::size_t>(i)];
        if (ex.x0->values.size() != plane || ex.reference->values.size() != plane)
            throw ShapeMismatch("training example size does not match network input side");
        const int t = ts[static_cast<std::size_t>(i)];
        const auto& e = eps[static_cast<std::size_t>(i)];

        const float a = static_cast<float>(std::sqrt(schedule_.alpha_bar_at(t)));
        const float b = static_cast<float>(std::sqrt(1.0 - schedule_.alpha_bar_at(t)));
        std::vector<float> x_t(plane), eps_hat(plane), d_eps(plane);
        for (std::size_t k = 0; k < plane; ++k) x_t[k] = a * ex.x0->values[k] + b * e[k];

        auto& g = item_grads_[static_cast<std::size_t>(i)];
        g.assign(net_.parameter_count(), 0.0f);
        auto& ws = item_ws_[static_cast<std::size_t>(i)];

        const auto style = net_.lookup_style(ex.style_id);
        net_.forward(ws, x_t, ex.reference->values, t, style, eps_hat);

        double loss = 0.0, max_abs = 0.0;
        const float scale = 2.0f / (static_cast<float>(plane) * static_cast<float>(n));
        for (std::size_t k = 0; k < plane; ++k) {
            const float diff = eps_hat[k] - e[k];
            loss += static_cast<double>(diff) * diff;
            max_abs = std::max(max_abs, std::abs(static_cast<double>(eps_hat[k])));
            d_eps[k] = scale * diff;
        }
        item_loss[static_cast<std::size_t>(i)] = loss / static_cast<double>(plane);
        item_max_eps[static_cast<std::size_t>(i)] = max_abs;

        net_.backward(ws, d_eps, g);
        net_.accumulate_style_grad(ws, ex.style_id, g);
    });

    double loss = 0.0;
    for (int i = 0; i < n; ++i) loss += item_loss[static_cast<std::size_t>(i)];
    loss /= static_cast<double>(n);

    if (!std::isfinite(loss)) {
        std::string diag = "non-finite loss; t values:";
        for (int t : ts) diag += " " + std::to_string(t);
        diag += "; max |eps_hat| per item:";
        for (double v : item_max_eps) diag += " " + std::to_string(v);
        throw NonFiniteLoss(diag);
    }

    // Fixed-order reduction: item 0, 1, ... regardless of thread count.
    std::fill(grads_.begin(), grads_.end(), 0.0f);
    for (int i = 0; i < n; ++i) {
        const auto& g = item_grads_[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < grads_.size(); ++k) grads_[k] += g[k];
    }

    if (grad_clip_norm_ > 0.0) {
        double norm2 = 0.0;
        for (float g : grads_) norm2 += static_cast<double>(g) * g;
        const double norm = std::sqrt(norm2);
        if (norm > grad_clip_norm_) {
            const float s = static_cast<float>(grad_clip_norm_ / norm);
            for (float& g : grads_) g *= s;
        }
    }

    adam_.update(net_.params(), grads_);
    if (ema_decay_) ema_update(ema_, net_.params(), *ema_decay_);
    return loss;
}

double train_step(DenoiserNetF& net, std::span<const TrainingExample> batch, const NoiseSchedule& schedule,
                  Rng& rng, AdamState& adam, double grad_clip_norm) {
    Trainer trainer(net, schedule, adam, grad_clip_norm);
    const double loss = trainer.step(batch, rng);
    adam = trainer.adam();
    return loss;
}

namespace {

json net_config_json(const DenoiserConfig& c) {
    return json{{"input_side", c.input_side},       {"channel_ladder", c.channel_ladder},
                {"embedding_dim", c.embedding_dim}, {"attention_sides", c.attention_sides},
                {"num_styles", c.num_styles},       {"groups_per_norm", c.groups_per_norm}};
}

DenoiserConfig net_config_from_json(const json& j) {
    DenoiserConfig c;
    c.input_side = j.at("input_side").get<int>();
    c.channel_ladder = j.at("channel_ladder").get<std::vector<int>>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.attention_sides = j.at("attention_sides").get<std::vector<int>>();
    c.num_styles = j.at("num_styles").get<int>();
    c.groups_per_norm = j.at("groups_per_norm").get<int>();
    return c;
}

constexpr char kMagic[8] = {'G', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

struct NamedArray {
    std::string name;
    const float* data;
    std::size_t count;
};

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    // Rebuild entry names from the config so array names track the documented
    // parameter naming scheme.
    DenoiserNetF probe(ckpt.net_config, 0);
    const auto& entries = probe.param_entries();
    const std::size_t total = probe.parameter_count();
    if (ckpt.params.size() != total || ckpt.adam.m.size() != total || ckpt.adam.v.size() != total)
        throw ShapeMismatch("checkpoint arrays do not match the network configuration");
    if (ckpt.ema && ckpt.ema->size() != total) throw ShapeMismatch("checkpoint EMA array size mismatch");

    std::vector<NamedArray> arrays;
    for (const auto& e : entries) arrays.push_back({"param." + e.name, ckpt.params.data() + e.offset, e.count});
    for (const auto& e : entries) arrays.push_back({"adam.m." + e.name, ckpt.adam.m.data() + e.offset, e.count});
    for (const auto& e : entries) arrays.push_back({"adam.v." + e.name, ckpt.adam.v.data() + e.offset, e.count});
    if (ckpt.ema)
        for (const auto& e : entries) arrays.push_back({"ema." + e.name, ckpt.ema->data() + e.offset, e.count});

    json meta;
    meta["format"] = "glyphforge-checkpoint";
    meta["version"] = 1;
    meta["net"] = net_config_json(ckpt.net_config);
    meta["schedule"] = {{"T", ckpt.schedule.T},
                        {"beta_start", ckpt.schedule.beta_start},
                        {"beta_end", ckpt.schedule.beta_end},
                        {"form", ckpt.schedule.form}};
    meta["epoch"] = ckpt.epoch;
    meta["global_step"] = ckpt.global_step;
    meta["seed"] = ckpt.seed;
    meta["manifest_fingerprint"] = ckpt.manifest_fingerprint;
    meta["grad_clip_norm"] = ckpt.grad_clip_norm;
    if (ckpt.ema_decay)
        meta["ema_decay"] = *ckpt.ema_decay;
    else
        meta["ema_decay"] = nullptr;
    meta["optimizer"] = {{"type", "adam"}, {"lr", ckpt.adam.lr},   {"beta1", ckpt.adam.beta1},
                         {"beta2", ckpt.adam.beta2}, {"eps", ckpt.adam.eps}, {"step_count", ckpt.adam.step_count}};
    json arr = json::array();
    for (const auto& a : arrays) arr.push_back({{"name", a.name}, {"count", a.count}});
    meta["arrays"] = std::move(arr);

    const std::string blob = meta.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_u32(out, 1);
    write_u32(out, 0);
    write_u64(out, blob.size());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    for (const auto& a : arrays)
        out.write(reinterpret_cast<const char*>(a.data), static_cast<std::streamsize>(a.count * sizeof(float)));
    if (!out) throw IoError("checkpoint write failed (disk full?): " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a glyphforge checkpoint: " + path.string());
    std::uint32_t version = 0, reserved = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&reserved), 4);
    if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
    std::uint64_t json_len = 0;
    in.read(reinterpret_cast<char*>(&json_len), 8);
    std::string blob(json_len, '\0');
    in.read(blob.data(), static_cast<std::streamsize>(json_len));
    if (!in) throw IoError("truncated checkpoint header: " + path.string());

    json meta;
    try {
        meta = json::parse(blob);
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint metadata: " + std::string(e.what()));
    }

    Checkpoint ckpt;
    ckpt.net_config = net_config_from_json(meta.at("net"));
    ckpt.schedule.T = meta.at("schedule").at("T").get<int>();
    ckpt.schedule.beta_start = meta.at("schedule").at("beta_start").get<double>();
    ckpt.schedule.beta_end = meta.at("schedule").at("beta_end").get<double>();
    ckpt.schedule.form = meta.at("schedule").at("form").get<std::string>();
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.global_step = meta.at("global_step").get<std::int64_t>();
    ckpt.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.manifest_fingerprint = meta.at("manifest_fingerprint").get<std::string>();
    ckpt.grad_clip_norm = meta.at("grad_clip_norm").get<double>();
    if (!meta.at("ema_decay").is_null()) ckpt.ema_decay = meta.at("ema_decay").get<double>();
    ckpt.adam.lr = meta.at("optimizer").at("lr").get<double>();
    ckpt.adam.beta1 = meta.at("optimizer").at("beta1").get<double>();
    ckpt.adam.beta2 = meta.at("optimizer").at("beta2").get<double>();
    ckpt.adam.eps = meta.at("optimizer").at("eps").get<double>();
    ckpt.adam.step_count = meta.at("optimizer").at("step_count").get<std::int64_t>();

    DenoiserNetF probe(ckpt.net_config, 0);
    const auto& entries = probe.param_entries();
    const std::size_t total = probe.parameter_count();
    ckpt.params.assign(total, 0.0f);
    ckpt.adam.m.assign(total, 0.0f);
    ckpt.adam.v.assign(total, 0.0f);
    std::map<std::string, std::pair<std::size_t, std::size_t>> layout; // name -> (offset, count)
    for (const auto& e : entries) layout[e.name] = {e.offset, e.count};

    for (const auto& a : meta.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        const std::size_t count = a.at("count").get<std::size_t>();
        float* dst = nullptr;
        std::string base;
        if (name.rfind("param.", 0) == 0) {
            base = name.substr(6);
            dst = ckpt.params.data();
        } else if (name.rfind("adam.m.", 0) == 0) {
            base = name.substr(7);
            dst = ckpt.adam.m.data();
        } else if (name.rfind("adam.v.", 0) == 0) {
            base = name.substr(7);
            dst = ckpt.adam.v.data();
        } else if (name.rfind("ema.", 0) == 0) {
            base = name.substr(4);
            if (!ckpt.ema) ckpt.ema = std::vector<float>(total, 0.0f);
            dst = ckpt.ema->data();
        } else {
            throw IoError("unknown checkpoint array: " + name);
        }
        auto it = layout.find(base);
        if (it == layout.end()) throw IoError("checkpoint array does not match network: " + name);
        if (it->second.second != count) throw IoError("checkpoint array size mismatch: " + name);
        in.read(reinterpret_cast<char*>(dst + it->second.first), static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) throw IoError("truncated checkpoint arrays: " + path.string());
    }
    return ckpt;
}

DenoiserNetF restore_network(const Checkpoint& ckpt, bool use_ema) {
    DenoiserNetF net(ckpt.net_config, ckpt.seed);
    if (use_ema && ckpt.ema)
        net.params() = *ckpt.ema;
    else
        net.params() = ckpt.params;
    return net;
}

TrainResult train_loop(const std::filesystem::path& manifest_path, const DenoiserConfig& net_config,
                       const TrainConfig& cfg, const std::optional<std::filesystem::path>& resume) {
    cfg.validate();
    net_config.validate();
    const PairManifest manifest = load_manifest(manifest_path);
    const std::string fingerprint = fingerprint_hex(fingerprint_file(manifest_path));

    if (static_cast<int>(manifest.styles.size()) != net_config.num_styles)
        throw InvalidConfig("network num_styles (" + std::to_string(net_config.num_styles) +
                            ") does not match manifest styles (" + std::to_string(manifest.styles.size()) + ")");

    const std::filesystem::path out_dir = cfg.out_dir.empty() ? manifest_path.parent_path() / "train" : cfg.out_dir;
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path loss_path = cfg.loss_log_path.empty() ? out_dir / "loss.csv" : cfg.loss_log_path;

    int start_epoch = 0;
    std::optional<Checkpoint> restored;
    if (resume) {
        restored = load_checkpoint(*resume);
        if (restored->manifest_fingerprint != fingerprint)
            throw ManifestMismatch("checkpoint was trained on a different manifest (fingerprint " +
                                   restored->manifest_fingerprint + " vs " + fingerprint + "); refusing to resume");
        start_epoch = restored->epoch;
    }

    DenoiserNetF net = restored ? restore_network(*restored) : DenoiserNetF(net_config, cfg.seed);
    AdamState adam;
    if (restored) {
        adam = restored->adam;
    } else {
        adam.lr = cfg.learning_rate;
        adam.init(net.parameter_count());
    }
    adam.lr = cfg.learning_rate;

    Trainer trainer(net, cfg.schedule.realize(), std::move(adam), cfg.grad_clip_norm, cfg.ema_decay);
    if (restored && restored->ema && cfg.ema_decay) trainer.ema_shadow() = *restored->ema;

    BatchLoader loader(manifest, cfg.batch_size, cfg.seed);

    std::ofstream loss_log;
    if (start_epoch == 0) {
        loss_log.open(loss_path, std::ios::trunc);
        loss_log << "epoch,step,loss\n";
    } else {
        loss_log.open(loss_path, std::ios::app);
    }
    if (!loss_log) throw IoError("cannot open loss log: " + loss_path.string());

    auto snapshot = [&](int epochs_done, std::int64_t global_step) {
        Checkpoint c;
        c.net_config = net.config();
        c.schedule = cfg.schedule;
        c.epoch = epochs_done;
        c.global_step = global_step;
        c.seed = cfg.seed;
        c.manifest_fingerprint = fingerprint;
        c.grad_clip_norm = cfg.grad_clip_norm;
        c.ema_decay = cfg.ema_decay;
        c.params = net.params();
        c.adam = trainer.adam();
        if (cfg.ema_decay) c.ema = trainer.ema_shadow();
        return c;
    };

    std::int64_t global_step = restored ? restored->global_step : 0;
    TrainResult result;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng rng = Rng::from_stream(cfg.seed, 0x7E0C, static_cast<std::uint64_t>(epoch));
        double epoch_loss = 0.0;
        int steps = 0;
        for (const auto& batch : loader.epoch(epoch)) {
            const double loss = trainer.step(batch, rng);
            loss_log << epoch << "," << global_step << "," << loss << "\n";
            epoch_loss += loss;
            ++steps;
            ++global_step;
        }
        loss_log.flush();
        result.epoch_mean_loss.push_back(steps > 0 ? epoch_loss / steps : 0.0);

        if ((epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
            char name[32];
            std::snprintf(name, sizeof name, "ckpt_epoch%04d.gfck", epoch + 1);
            save_checkpoint(snapshot(epoch + 1, global_step), out_dir / name);
        }
    }

    result.checkpoint = snapshot(cfg.epochs, global_step);
    result.checkpoint_path = out_dir / "ckpt_final.gfck";
    save_checkpoint(result.checkpoint, result.checkpoint_path);
    return result;
}

} // namespace gf
