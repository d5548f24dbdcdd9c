#include "red/rl.hpp"

#include <cmath>

namespace red {

std::optional<std::size_t> transfer_time(std::span<const int> labels) {
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] != 0 && (t == 0 || labels[t - 1] == 0)) {
            return t;
        }
    }
    return std::nullopt;
}

Vector step_rewards(std::span<const int> pred, std::span<const int> gt, double alpha,
                    bool action_only) {
    if (pred.size() != gt.size()) {
        throw DimensionError("step_rewards: pred and gt length mismatch");
    }
    Vector r(pred.size(), 0.0);
    const auto t_f = transfer_time(gt);
    if (!t_f.has_value()) {
        return r;
    }
    for (std::size_t t = *t_f; t < pred.size(); ++t) {
        if (pred[t] != gt[t]) {
            continue;
        }
        if (action_only && gt[t] == 0) {
            continue;
        }
        r[t] = alpha / static_cast<double>(t + 1 - *t_f);
    }
    return r;
}

Vector returns(const Vector& rewards) {
    // Forward suffix sums, one per step.
    Vector out(rewards.size(), 0.0);
    for (std::size_t t = 0; t < rewards.size(); ++t) {
        double acc = 0.0;
        for (std::size_t u = t; u < rewards.size(); ++u) {
            acc += rewards[u];
        }
        out[t] = acc;
    }
    return out;
}

SampledSequence sample_sequence(std::span<const Vector> step_probs, RandomSource& rng) {
    SampledSequence seq;
    seq.labels.reserve(step_probs.size());
    seq.logp.reserve(step_probs.size());
    for (const Vector& probs : step_probs) {
        if (probs.empty()) {
            throw DimensionError("sample_sequence: empty distribution");
        }
        double sum = 0.0;
        for (double p : probs) {
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-9) {
            throw NumericError("sample_sequence: distribution does not sum to 1");
        }
        const double u = rng.uniform01();
        double cdf = 0.0;
        std::size_t pick = probs.size() - 1;
        for (std::size_t k = 0; k < probs.size(); ++k) {
            cdf += probs[k];
            if (u < cdf) {
                pick = k;
                break;
            }
        }
        seq.labels.push_back(static_cast<int>(pick));
        seq.logp.push_back(std::log(std::max(probs[pick], 1e-12)));
    }
    return seq;
}

double reinforce_surrogate(const Vector& logp, const Vector& returns_to_go,
                           const Vector& baseline) {
    if (logp.size() != returns_to_go.size() || logp.size() != baseline.size()) {
        throw DimensionError("reinforce_surrogate: length mismatch");
    }
    double loss = 0.0;
    for (std::size_t t = 0; t < logp.size(); ++t) {
        loss -= logp[t] * (returns_to_go[t] - baseline[t]);
    }
    ensure_finite(loss, "reinforce_surrogate");
    return loss;
}

double baseline_loss(const Vector& baseline, const Vector& returns_to_go) {
    if (baseline.size() != returns_to_go.size()) {
        throw DimensionError("baseline_loss: length mismatch");
    }
    if (baseline.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t t = 0; t < baseline.size(); ++t) {
        const double diff = baseline[t] - returns_to_go[t];
        acc += diff * diff;
    }
    return acc / static_cast<double>(baseline.size());
}

RewardTrace make_reward_trace(std::span<const Vector> step_probs, std::span<const int> gt,
                              double alpha, bool action_only, RandomSource& rng) {
    RewardTrace trace;
    SampledSequence seq = sample_sequence(step_probs, rng);
    trace.sampled = std::move(seq.labels);
    trace.logp = std::move(seq.logp);
    trace.t_f = transfer_time(gt);
    trace.rewards = step_rewards(trace.sampled, gt, alpha, action_only);
    trace.returns_to_go = returns(trace.rewards);
    return trace;
}

} // namespace red
