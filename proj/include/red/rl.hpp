#pragma once

#include <optional>
#include <span>
#include <vector>

#include "red/numerics.hpp"
#include "red/random.hpp"

namespace red {

/// First step where the label switches from background to an action class.
/// A window that starts inside an action reports 0; all-background windows
/// report nothing.
std::optional<std::size_t> transfer_time(std::span<const int> labels);

/// Per-step early-anticipation reward: alpha / (t + 1 - t_f) when t >= t_f
/// and pred[t] == gt[t], else 0. With `action_only` set, correct background
/// predictions after the transfer earn nothing.
Vector step_rewards(std::span<const int> pred, std::span<const int> gt, double alpha,
                    bool action_only = false);

/// Return-to-go R_t = sum of rewards from step t onward. Each entry is the
/// plain forward sum over the suffix.
Vector returns(const Vector& rewards);

struct SampledSequence {
    std::vector<int> labels;
    Vector logp; // log-probability of each sampled label
};

/// One categorical draw per step. Rows must sum to 1 within 1e-9.
SampledSequence sample_sequence(std::span<const Vector> step_probs, RandomSource& rng);

/// Surrogate loss -sum_t logp[t] * (R[t] - b[t]). The advantage is treated as
/// a constant; minimizing this ascends the expected sequence reward.
double reinforce_surrogate(const Vector& logp, const Vector& returns_to_go, const Vector& baseline);

/// Mean squared error between predicted baselines and realized returns.
double baseline_loss(const Vector& baseline, const Vector& returns_to_go);

/// Everything the reinforcement module derives from one sampled sequence.
struct RewardTrace {
    std::optional<std::size_t> t_f;
    Vector rewards;
    Vector returns_to_go;
    std::vector<int> sampled;
    Vector logp;

    double total_reward() const { return returns_to_go.empty() ? 0.0 : returns_to_go.front(); }
};

RewardTrace make_reward_trace(std::span<const Vector> step_probs, std::span<const int> gt,
                              double alpha, bool action_only, RandomSource& rng);

} // namespace red
