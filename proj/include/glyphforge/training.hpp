#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/dataset.hpp"
#include "glyphforge/denoiser.hpp"
#include "glyphforge/diffusion.hpp"
#include "glyphforge/rng.hpp"
#include "glyphforge/schedule.hpp"

namespace gf {

/// Schedule parameters as persisted in checkpoints; derived arrays are always
/// recomputed, never stored.
struct ScheduleParams {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string form = "linear";

    NoiseSchedule realize() const;
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 16;
    double learning_rate = 1e-4;
    std::optional<double> ema_decay; // off unless set
    std::uint64_t seed = 0;
    ScheduleParams schedule;
    std::filesystem::path loss_log_path; // defaults to out_dir/loss.csv
    std::filesystem::path out_dir;
    int checkpoint_every = 10;
    double grad_clip_norm = 1.0; // <= 0 disables clipping

    void validate() const;
};

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step_count = 0;
    std::vector<float> m, v;

    void init(std::size_t n);
    void update(std::span<float> params, std::span<const float> grads);
};

/// shadow <- decay*shadow + (1-decay)*live, elementwise.
void ema_update(std::span<float> shadow, std::span<const float> live, double decay);

/// Single-file checkpoint: versioned header, JSON metadata block, then named
/// little-endian float32 arrays. Loading then saving is byte-identical.
struct Checkpoint {
    DenoiserConfig net_config;
    ScheduleParams schedule;
    int epoch = 0; // completed epochs
    std::int64_t global_step = 0;
    std::uint64_t seed = 0;
    std::string manifest_fingerprint;
    double grad_clip_norm = 1.0;
    std::optional<double> ema_decay;
    std::vector<float> params;
    AdamState adam;
    std::optional<std::vector<float>> ema;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the network from the stored config and installs checkpoint weights
/// (the EMA shadow when use_ema is set and present).
DenoiserNetF restore_network(const Checkpoint& ckpt, bool use_ema = false);

/// One optimizer step over a batch. Per item: draw t ~ U[1,T] and eps ~ N(0,I)
/// from rng, corrupt x0, predict, and average the eps-MSE. Returns the
/// pre-update loss. Throws NonFiniteLoss with diagnostics on divergence.
class Trainer {
public:
    Trainer(DenoiserNetF& net, NoiseSchedule schedule, AdamState adam, double grad_clip_norm,
            std::optional<double> ema_decay = std::nullopt);

    double step(std::span<const TrainingExample> batch, Rng& rng);

    const AdamState& adam() const { return adam_; }
    AdamState& adam() { return adam_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const std::vector<float>* ema() const { return ema_decay_ ? &ema_ : nullptr; }
    std::vector<float>& ema_shadow() { return ema_; }
    std::int64_t steps_taken() const { return adam_.step_count; }

private:
    DenoiserNetF& net_;
    NoiseSchedule schedule_;
    AdamState adam_;
    double grad_clip_norm_;
    std::optional<double> ema_decay_;
    std::vector<float> ema_;
    std::vector<float> grads_;
    std::vector<std::vector<float>> item_grads_;
    std::vector<DenoiserWorkspace<float>> item_ws_;
};

/// Convenience wrapper matching the one-shot operation contract.
double train_step(DenoiserNetF& net, std::span<const TrainingExample> batch, const NoiseSchedule& schedule,
                  Rng& rng, AdamState& adam, double grad_clip_norm = 1.0);

struct TrainResult {
    Checkpoint checkpoint;
    std::filesystem::path checkpoint_path;
    std::vector<double> epoch_mean_loss;
};

/// Full training loop with periodic checkpoints, a step-level CSV loss log
/// (epoch,step,loss), and deterministic resume: continuing from a checkpoint
/// reproduces the uninterrupted run bit for bit under the same seed.
TrainResult train_loop(const std::filesystem::path& manifest_path, const DenoiserConfig& net_config,
                       const TrainConfig& cfg, const std::optional<std::filesystem::path>& resume = std::nullopt);

} // namespace gf
