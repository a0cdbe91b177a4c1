#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "stemsep/model.hpp"
#include "stemsep/synth.hpp"

namespace stemsep {

struct TrainConfig {
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    float weight_decay = 0.0f;  // decoupled; zero during pre-training
    float grad_clip_l2 = 0.0f;  // 0 disables
    int batch_size = 32;
    int epochs = 1200;
    int batches_per_epoch = 800;
    std::vector<float> ema_decays = {0.999f};
    bool remix = true;
    bool rescale = true;  // uniform per-stem gain in [0.25, 1.25]
    double excerpt_seconds = 1.0;
    int target_source = -1;  // >= 0 restricts the loss to that source slice
    std::uint64_t seed = 0;

    void validate() const;
};

struct FinetuneConfig {
    std::string target_source;
    float lr = 1e-4f;
    int epochs = 50;
    float grad_clip_l2 = 5.0f;
    float weight_decay = 0.05f;
    int batch_size = 32;
    int batches_per_epoch = 800;
    double excerpt_seconds = 1.0;
    std::uint64_t seed = 0;
};

// Mean absolute error over all elements.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

struct AdamState {
    std::vector<std::vector<float>> m, v;
    long step = 0;

    static AdamState init(const ParamRegistry& reg);
};

// Bias-corrected Adam. Global L2 clipping (if enabled) rescales gradients
// before the moment updates; weight decay is decoupled. Returns the pre-clip
// gradient norm.
float adam_step(ParamRegistry& reg, AdamState& state, const TrainConfig& cfg);

void save_optimizer_state(const AdamState& state, const std::string& path);
AdamState load_optimizer_state(const std::string& path);

struct EmaState {
    float decay = 0.999f;
    std::vector<std::vector<float>> shadow;

    static EmaState init(const ParamRegistry& reg, float decay);
};

// shadow <- decay * shadow + (1 - decay) * params, per scalar.
void ema_update(EmaState& ema, const ParamRegistry& reg);

std::vector<std::vector<float>> snapshot_params(const ParamRegistry& reg);
void load_param_values(ParamRegistry& reg, const std::vector<std::vector<float>>& values);

// stems [batch, sources, channels, frames]. Each source draws an independent
// random permutation of the batch; mixtures are the exact sum of the picked
// stems. A batch of one passes through with a warning.
struct RemixResult {
    Tensor mixtures;  // [batch, channels, frames]
    Tensor targets;   // [batch, sources, channels, frames]
};
RemixResult remix_batch(const Tensor& stems, std::uint64_t seed);

struct EpochStats {
    int epoch = 0;
    long step = 0;
    float train_l1 = 0.0f;
    float valid_l1 = 0.0f;
    float lr = 0.0f;
    float grad_norm = 0.0f;
};

struct TrainResult {
    std::vector<EpochStats> history;
    float baseline_valid_l1 = 0.0f;  // EMA == initial parameters
    float best_valid_l1 = 0.0f;
};

// Runs the optimization loop; the model ends at the best-valid EMA snapshot.
// `metrics` (optional) receives one JSON line per epoch. Deterministic under
// cfg.seed. A non-finite loss aborts with a NumericError diagnostic.
TrainResult train(Model& model, const std::vector<SongStems>& train_songs,
                  const std::vector<SongStems>& valid_songs, const TrainConfig& cfg,
                  std::ostream* metrics = nullptr);

TrainResult finetune(Model& model, const std::vector<SongStems>& train_songs,
                     const std::vector<SongStems>& valid_songs, const FinetuneConfig& cfg,
                     std::ostream* metrics = nullptr);

// Loads <dir>/<song>/<source>.wav trees.
std::vector<SongStems> load_stem_dataset(const std::string& dir,
                                         const std::vector<std::string>& sources);

}  // namespace stemsep
