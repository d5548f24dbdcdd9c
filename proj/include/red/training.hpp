#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "red/data.hpp"
#include "red/model.hpp"
#include "red/numerics.hpp"
#include "red/random.hpp"
#include "red/rl.hpp"

namespace red {

// Bad or missing configuration (file keys, flag combinations).
struct ConfigError : Error {
    using Error::Error;
};

/// One training sample: history window plus anticipation targets.
struct TrainingWindow {
    std::vector<Vector> input;        // chunks [t - t_enc, t)
    std::vector<Vector> target_feats; // chunks [t, t + t_dec)
    std::vector<int> target_labels;   // empty in stage 1
    std::string video_id;
    std::size_t anchor = 0;
};

// ---------------------------------------------------------------------------
// Losses

/// Mean over the batch of the summed squared Euclidean distance per step.
double regression_loss(std::span<const std::vector<Vector>> pred,
                       std::span<const std::vector<Vector>> gt);

/// Mean over the batch of the summed negative log-likelihoods. Probabilities
/// are clamped at 1e-12 before the log.
double classification_loss(std::span<const std::vector<Vector>> step_probs,
                           std::span<const std::vector<int>> labels);

/// Overall loss: regression + classification + reinforcement surrogate (the
/// surrogate already carries the sign that turns reward ascent into descent).
double total_loss(double l_reg, double l_cls, double surrogate);
double total_loss(double l_reg, double l_cls, double surrogate, double w_reg, double w_cls,
                  double w_rl);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
    Vector m;
    Vector v;
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update in place. Rejects non-finite gradients.
void adam_step(Vector& params, const Vector& grads, AdamState& state, double lr);

// ---------------------------------------------------------------------------
// Window sampling

/// Anchor uniform over [t_enc, len - t_dec]; no labels attached.
TrainingWindow sample_stage1(const FeatureSequence& video, const Hyper& hp, RandomSource& rng);

/// Uniform over intervals that admit an anchor, then anchor uniform over
/// (t_s - t_enc, t_e) clamped to valid window positions; labels attached.
TrainingWindow sample_stage2(const FeatureSequence& video, const LabelTrack& track,
                             const Hyper& hp, RandomSource& rng);

// ---------------------------------------------------------------------------
// Batch gradients (exposed for gradient checking and diagnostics)

struct BatchFlags {
    bool classification = false;
    bool reinforce = false;
    bool force_zero_advantage = false; // diagnostic: keeps sampling, zeroes advantages
    bool reward_action_only = false;
    double w_reg = 1.0;
    double w_cls = 1.0;
    double w_rl = 1.0;
    double alpha = 1.0;
};

struct BatchStats {
    double l_reg = 0.0;
    double l_cls = 0.0;
    double surrogate = 0.0;
    double mean_reward = 0.0;
    double baseline_loss = 0.0;
};

/// Forward + backward over one batch of windows. Gradients are accumulated
/// into `grads` (caller provides a zeroed parameter set). `policy_rng` is
/// only consumed when reinforcement is enabled.
BatchStats red_batch_gradients(const RedParams& p, const Hyper& hp,
                               std::span<const TrainingWindow> windows, const BatchFlags& flags,
                               RandomSource* policy_rng, RedParams& grads);

/// Deterministic loss value for the non-reinforcement terms of the same
/// batch; used by directional-derivative diagnostics.
double red_batch_loss(const RedParams& p, const Hyper& hp,
                      std::span<const TrainingWindow> windows, const BatchFlags& flags);

// ---------------------------------------------------------------------------
// Training drivers

struct TrainOptions {
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    bool use_reinforce = false;
    bool reward_action_only = false;
    bool force_zero_advantage = false;
    double clip_norm = 5.0;
    double w_reg = 1.0;
    double w_cls = 1.0;
    double w_rl = 1.0;
};

struct EpochStats {
    double l_reg = 0.0;
    double l_cls = 0.0;
    double surrogate = 0.0;
    double mean_reward = 0.0;
    double baseline_loss = 0.0;
};

struct TrainResult {
    RedParams params;
    std::vector<EpochStats> curve;
};

/// Stage 1: regression only, windows from anywhere; classifier and baseline
/// network are untouched.
TrainResult train_stage1(const Dataset& dataset, const Hyper& hp, const TrainOptions& opt);

/// Stage 2: overall loss on windows anchored around positive intervals.
/// With use_reinforce off this trains the plain encoder-decoder variant.
TrainResult train_stage2(const RedParams& init, const Dataset& dataset, const Hyper& hp,
                         const TrainOptions& opt);

struct FcTrainResult {
    FcParams params;
    std::vector<EpochStats> curve;
};

struct EfcTrainResult {
    EfcParams params;
    std::vector<EpochStats> curve;
};

FcTrainResult train_fc_stage1(const Dataset& dataset, const Hyper& hp, const TrainOptions& opt);
FcTrainResult train_fc_stage2(const FcParams& init, const Dataset& dataset, const Hyper& hp,
                              const TrainOptions& opt);
EfcTrainResult train_efc_stage1(const Dataset& dataset, const Hyper& hp, const TrainOptions& opt);
EfcTrainResult train_efc_stage2(const EfcParams& init, const Dataset& dataset, const Hyper& hp,
                                const TrainOptions& opt);

/// Both stages back to back (the fixed-horizon baselines' usual entry point).
FcTrainResult train_fc(const Dataset& dataset, const Hyper& hp, const TrainOptions& s1,
                       const TrainOptions& s2);
EfcTrainResult train_efc(const Dataset& dataset, const Hyper& hp, const TrainOptions& s1,
                         const TrainOptions& s2);

// ---------------------------------------------------------------------------
// Config file (flat key=value)

struct TrainConfig {
    Hyper hyper;
    std::size_t epochs_stage1 = 50;
    std::size_t epochs_stage2 = 50;
    std::uint64_t seed = 0;
    bool use_reinforce = true;
    bool reward_action_only = false;
    double clip_norm = 5.0;
    double w_reg = 1.0;
    double w_cls = 1.0;
    double w_rl = 1.0;

    TrainOptions stage1_options() const;
    TrainOptions stage2_options() const;
};

/// Parses the flat key=value config. Every key must be present; unknown keys
/// are rejected. Both failure modes name the offending key.
TrainConfig parse_train_config(const std::filesystem::path& path);
void write_train_config(const std::filesystem::path& path, const TrainConfig& config);

/// CSV with one row per epoch: epoch,l_reg,l_cls,surrogate,mean_reward,baseline_loss.
void write_training_log(const std::filesystem::path& path, std::span<const EpochStats> curve);

} // namespace red
