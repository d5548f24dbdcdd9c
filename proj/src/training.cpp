#include "red/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string_view>

namespace red {

namespace {

// Sub-stream tags so enabling one consumer never shifts another's draws.
constexpr std::uint64_t kStreamInit = 0x01;
constexpr std::uint64_t kStreamWindowsStage1 = 0x10;
constexpr std::uint64_t kStreamWindowsStage2 = 0x11;
constexpr std::uint64_t kStreamPolicy = 0x20;

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// Losses

double regression_loss(std::span<const std::vector<Vector>> pred,
                       std::span<const std::vector<Vector>> gt) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw DimensionError("regression_loss: batch size mismatch or empty batch");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        if (pred[k].size() != gt[k].size()) {
            throw DimensionError("regression_loss: sequence length mismatch");
        }
        for (std::size_t j = 0; j < pred[k].size(); ++j) {
            if (pred[k][j].size() != gt[k][j].size()) {
                throw DimensionError("regression_loss: vector dimension mismatch");
            }
            for (std::size_t i = 0; i < pred[k][j].size(); ++i) {
                const double diff = pred[k][j][i] - gt[k][j][i];
                acc += diff * diff;
            }
        }
    }
    const double loss = acc / static_cast<double>(pred.size());
    ensure_finite(loss, "regression_loss");
    return loss;
}

double classification_loss(std::span<const std::vector<Vector>> step_probs,
                           std::span<const std::vector<int>> labels) {
    if (step_probs.size() != labels.size() || step_probs.empty()) {
        throw DimensionError("classification_loss: batch size mismatch or empty batch");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < step_probs.size(); ++k) {
        if (step_probs[k].size() != labels[k].size()) {
            throw DimensionError("classification_loss: sequence length mismatch");
        }
        for (std::size_t t = 0; t < labels[k].size(); ++t) {
            const int y = labels[k][t];
            if (y < 0 || static_cast<std::size_t>(y) >= step_probs[k][t].size()) {
                throw DimensionError("classification_loss: label index out of range");
            }
            acc -= std::log(std::max(step_probs[k][t][static_cast<std::size_t>(y)], 1e-12));
        }
    }
    const double loss = acc / static_cast<double>(step_probs.size());
    ensure_finite(loss, "classification_loss");
    return loss;
}

double total_loss(double l_reg, double l_cls, double surrogate) {
    return l_reg + l_cls + surrogate;
}

double total_loss(double l_reg, double l_cls, double surrogate, double w_reg, double w_cls,
                  double w_rl) {
    return w_reg * l_reg + w_cls * l_cls + w_rl * surrogate;
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(Vector& params, const Vector& grads, AdamState& state, double lr) {
    if (params.size() != grads.size()) {
        throw DimensionError("adam_step: parameter/gradient size mismatch");
    }
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) {
        throw DimensionError("adam_step: state size mismatch");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            throw NumericError("adam_step: non-finite gradient");
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

// ---------------------------------------------------------------------------
// Window sampling

namespace {

TrainingWindow window_at(const FeatureSequence& video, const LabelTrack* track, const Hyper& hp,
                         std::size_t anchor) {
    TrainingWindow w;
    w.video_id = video.id;
    w.anchor = anchor;
    w.input.assign(video.chunks.begin() + static_cast<std::ptrdiff_t>(anchor - hp.t_enc),
                   video.chunks.begin() + static_cast<std::ptrdiff_t>(anchor));
    w.target_feats.assign(video.chunks.begin() + static_cast<std::ptrdiff_t>(anchor),
                          video.chunks.begin() + static_cast<std::ptrdiff_t>(anchor + hp.t_dec));
    if (track != nullptr) {
        w.target_labels.assign(
            track->labels.begin() + static_cast<std::ptrdiff_t>(anchor),
            track->labels.begin() + static_cast<std::ptrdiff_t>(anchor + hp.t_dec));
    }
    return w;
}

struct AnchorRange {
    std::size_t lo = 0;
    std::size_t hi = 0; // inclusive
};

// Anchor positions for one interval: (t_s - t_enc, t_e) intersected with
// window-validity bounds. Empty ranges are reported as nullopt.
std::optional<AnchorRange> stage2_anchor_range(const ActionInterval& iv, std::size_t video_len,
                                               const Hyper& hp) {
    if (video_len < hp.t_enc + hp.t_dec || iv.t_end == 0) {
        return std::nullopt;
    }
    const std::size_t lo_interval = iv.t_start + 1 > hp.t_enc ? iv.t_start + 1 - hp.t_enc : 0;
    const std::size_t lo = std::max(lo_interval, hp.t_enc);
    const std::size_t hi = std::min(iv.t_end - 1, video_len - hp.t_dec);
    if (lo > hi) {
        return std::nullopt;
    }
    return AnchorRange{lo, hi};
}

} // namespace

TrainingWindow sample_stage1(const FeatureSequence& video, const Hyper& hp, RandomSource& rng) {
    if (video.length() < hp.t_enc + hp.t_dec) {
        throw Error("sample_stage1: video '" + video.id + "' shorter than t_enc + t_dec");
    }
    const std::size_t span = video.length() - hp.t_dec - hp.t_enc + 1;
    const std::size_t anchor = hp.t_enc + rng.uniform_index(span);
    return window_at(video, nullptr, hp, anchor);
}

TrainingWindow sample_stage2(const FeatureSequence& video, const LabelTrack& track,
                             const Hyper& hp, RandomSource& rng) {
    if (track.length() != video.length()) {
        throw DimensionError("sample_stage2: label track length mismatch");
    }
    std::vector<AnchorRange> ranges;
    ranges.reserve(track.intervals.size());
    for (const ActionInterval& iv : track.intervals) {
        if (auto range = stage2_anchor_range(iv, video.length(), hp)) {
            ranges.push_back(*range);
        }
    }
    if (ranges.empty()) {
        throw Error("sample_stage2: video '" + video.id + "' has no interval with a valid anchor");
    }
    const AnchorRange range = ranges[rng.uniform_index(ranges.size())];
    const std::size_t anchor = range.lo + rng.uniform_index(range.hi - range.lo + 1);
    return window_at(video, &track, hp, anchor);
}

// ---------------------------------------------------------------------------
// Batch gradients

namespace {

void check_window_shapes(const TrainingWindow& w, const Hyper& hp, bool need_labels) {
    if (w.input.size() != hp.t_enc || w.target_feats.size() != hp.t_dec) {
        throw DimensionError("batch: window shape does not match hyperparameters");
    }
    if (need_labels && w.target_labels.size() != hp.t_dec) {
        throw Error("batch: window from '" + w.video_id + "' is missing labels");
    }
}

} // namespace

BatchStats red_batch_gradients(const RedParams& p, const Hyper& hp,
                               std::span<const TrainingWindow> windows, const BatchFlags& flags,
                               RandomSource* policy_rng, RedParams& grads) {
    if (windows.empty()) {
        throw DimensionError("red_batch_gradients: empty batch");
    }
    if (flags.reinforce && !flags.classification) {
        throw ConfigError("red_batch_gradients: reinforcement requires classification");
    }
    if (flags.reinforce && policy_rng == nullptr) {
        throw ConfigError("red_batch_gradients: reinforcement requires a policy generator");
    }

    const double n = static_cast<double>(windows.size());
    const std::size_t labels_n = hp.num_labels();
    BatchStats stats;

    for (const TrainingWindow& w : windows) {
        check_window_shapes(w, hp, flags.classification);

        EncodeCache enc = encode_cached(w.input, p.encoder);
        DecodeCache dec = decode_cached(enc.final_h(), enc.final_c(), p, hp.t_dec);

        // Regression term and its direct output gradients.
        std::vector<Vector> d_outputs(hp.t_dec);
        for (std::size_t j = 0; j < hp.t_dec; ++j) {
            const Vector& out = dec.outputs[j];
            const Vector& target = w.target_feats[j];
            if (out.size() != target.size()) {
                throw DimensionError("red_batch_gradients: target dimension mismatch");
            }
            d_outputs[j].assign(out.size(), 0.0);
            for (std::size_t i = 0; i < out.size(); ++i) {
                const double diff = out[i] - target[i];
                stats.l_reg += diff * diff / n;
                d_outputs[j][i] = flags.w_reg * 2.0 * diff / n;
            }
        }

        if (!flags.classification) {
            Vector dh0, dc0;
            decode_backward(p, dec, d_outputs, grads, dh0, dc0);
            encode_backward(p.encoder, enc, std::move(dh0), std::move(dc0), grads.encoder);
            continue;
        }

        std::vector<ClassifyCache> cls(hp.t_dec);
        std::vector<Vector> dlogits(hp.t_dec);
        for (std::size_t j = 0; j < hp.t_dec; ++j) {
            cls[j] = classify_cached(dec.outputs[j], p);
            const int y = w.target_labels[j];
            if (y < 0 || static_cast<std::size_t>(y) >= labels_n) {
                throw Error("red_batch_gradients: label out of range in '" + w.video_id + "'");
            }
            stats.l_cls -= std::log(std::max(cls[j].probs[static_cast<std::size_t>(y)], 1e-12)) / n;
            dlogits[j] = cls[j].probs;
            dlogits[j][static_cast<std::size_t>(y)] -= 1.0;
            for (double& g : dlogits[j]) {
                g *= flags.w_cls / n;
            }
        }

        if (flags.reinforce) {
            std::vector<Vector> step_probs(hp.t_dec);
            for (std::size_t j = 0; j < hp.t_dec; ++j) {
                step_probs[j] = cls[j].probs;
            }
            RewardTrace trace = make_reward_trace(step_probs, w.target_labels, flags.alpha,
                                                  flags.reward_action_only, *policy_rng);
            Mlp2Cache base = baseline_forward_cached(enc.final_h(), p);

            stats.mean_reward += trace.total_reward() / n;
            stats.baseline_loss += baseline_loss(base.out, trace.returns_to_go) / n;

            Vector advantage(hp.t_dec, 0.0);
            if (!flags.force_zero_advantage) {
                for (std::size_t j = 0; j < hp.t_dec; ++j) {
                    advantage[j] = trace.returns_to_go[j] - base.out[j];
                }
            }
            for (std::size_t j = 0; j < hp.t_dec; ++j) {
                stats.surrogate -= trace.logp[j] * advantage[j] / n;
                if (advantage[j] == 0.0) {
                    continue;
                }
                const std::size_t a = static_cast<std::size_t>(trace.sampled[j]);
                const double scale = flags.w_rl * advantage[j] / n;
                for (std::size_t i = 0; i < labels_n; ++i) {
                    dlogits[j][i] += scale * cls[j].probs[i];
                }
                dlogits[j][a] -= scale;
            }

            // Baseline regression gradient; the encoder state is a constant here.
            Vector dbase(hp.t_dec);
            for (std::size_t j = 0; j < hp.t_dec; ++j) {
                dbase[j] = 2.0 * (base.out[j] - trace.returns_to_go[j]) /
                           (static_cast<double>(hp.t_dec) * n);
            }
            baseline_backward(p, base, dbase, grads);
        }

        Vector dv;
        for (std::size_t j = 0; j < hp.t_dec; ++j) {
            classify_backward(p, cls[j], dlogits[j], grads, dv);
            add_scaled(d_outputs[j], dv, 1.0);
        }
        Vector dh0, dc0;
        decode_backward(p, dec, d_outputs, grads, dh0, dc0);
        encode_backward(p.encoder, enc, std::move(dh0), std::move(dc0), grads.encoder);
    }
    return stats;
}

double red_batch_loss(const RedParams& p, const Hyper& hp,
                      std::span<const TrainingWindow> windows, const BatchFlags& flags) {
    if (windows.empty()) {
        throw DimensionError("red_batch_loss: empty batch");
    }
    if (flags.reinforce) {
        throw ConfigError("red_batch_loss: only the deterministic terms are supported");
    }
    const double n = static_cast<double>(windows.size());
    double loss = 0.0;
    for (const TrainingWindow& w : windows) {
        check_window_shapes(w, hp, flags.classification);
        auto [h, c] = encode(w.input, p);
        std::vector<Vector> outputs = decode(h, c, p, hp.t_dec);
        for (std::size_t j = 0; j < hp.t_dec; ++j) {
            for (std::size_t i = 0; i < outputs[j].size(); ++i) {
                const double diff = outputs[j][i] - w.target_feats[j][i];
                loss += flags.w_reg * diff * diff / n;
            }
            if (flags.classification) {
                const Vector probs = classify(outputs[j], p);
                const int y = w.target_labels[j];
                if (y < 0 || static_cast<std::size_t>(y) >= probs.size()) {
                    throw Error("red_batch_loss: label out of range in '" + w.video_id + "'");
                }
                loss -= flags.w_cls *
                        std::log(std::max(probs[static_cast<std::size_t>(y)], 1e-12)) / n;
            }
        }
    }
    ensure_finite(loss, "red_batch_loss");
    return loss;
}

// ---------------------------------------------------------------------------
// Shared driver plumbing

namespace {

template <typename ParamsT> ParamsT zeros_like(const ParamsT& p) {
    ParamsT z = p;
    visit_tensors(z, [](const char*, auto& t) {
        auto s = detail::tensor_span(t);
        std::fill(s.begin(), s.end(), 0.0);
    });
    return z;
}

// Global-norm clipping in two independent groups: the baseline network and
// everything else. Keeping the groups separate means the reinforcement
// machinery cannot perturb the main objective's step through the clip factor.
template <typename ParamsT> void clip_gradients(ParamsT& grads, double clip_norm) {
    if (clip_norm <= 0.0) {
        return;
    }
    double shared_sq = 0.0;
    double baseline_sq = 0.0;
    visit_tensors(grads, [&](const char* name, const auto& t) {
        double s = 0.0;
        for (double x : detail::tensor_span(t)) {
            s += x * x;
        }
        if (std::string_view(name).starts_with("baseline")) {
            baseline_sq += s;
        } else {
            shared_sq += s;
        }
    });
    const auto scale_group = [&](bool baseline_group, double norm_sq) {
        const double norm = std::sqrt(norm_sq);
        if (norm <= clip_norm) {
            return;
        }
        const double factor = clip_norm / norm;
        visit_tensors(grads, [&](const char* name, auto& t) {
            if (std::string_view(name).starts_with("baseline") != baseline_group) {
                return;
            }
            for (double& x : detail::tensor_span(t)) {
                x *= factor;
            }
        });
    };
    scale_group(false, shared_sq);
    scale_group(true, baseline_sq);
}

EpochStats accumulate(EpochStats acc, const BatchStats& b, double inv_batches) {
    acc.l_reg += b.l_reg * inv_batches;
    acc.l_cls += b.l_cls * inv_batches;
    acc.surrogate += b.surrogate * inv_batches;
    acc.mean_reward += b.mean_reward * inv_batches;
    acc.baseline_loss += b.baseline_loss * inv_batches;
    return acc;
}

// One epoch = roughly one visit per chunk of eligible footage.
std::size_t batches_per_epoch(std::size_t total_chunks, std::size_t batch) {
    return std::max<std::size_t>(1, total_chunks / batch);
}

template <typename ParamsT, typename BatchFn, typename DrawFn>
std::vector<EpochStats> run_epochs(ParamsT& params, const Hyper& hp, const TrainOptions& opt,
                                   std::uint64_t window_stream, std::size_t batches,
                                   DrawFn&& draw_window, BatchFn&& batch_fn) {
    std::vector<EpochStats> curve;
    curve.reserve(opt.epochs);
    AdamState adam;
    Vector flat = flatten_params(params);
    std::vector<TrainingWindow> windows(hp.batch);

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        EpochStats epoch_stats;
        const double inv_batches = 1.0 / static_cast<double>(batches);
        for (std::size_t b = 0; b < batches; ++b) {
            RandomSource rng_w = RandomSource::derive(opt.seed, window_stream, epoch, b);
            RandomSource rng_p = RandomSource::derive(opt.seed, kStreamPolicy, epoch, b);
            for (std::size_t k = 0; k < hp.batch; ++k) {
                windows[k] = draw_window(rng_w);
            }
            ParamsT grads = zeros_like(params);
            const BatchStats stats = batch_fn(params, std::span<const TrainingWindow>(windows),
                                              &rng_p, grads);
            clip_gradients(grads, opt.clip_norm);
            const Vector grads_flat = flatten_params(grads);
            adam_step(flat, grads_flat, adam, hp.lr);
            unflatten_params(flat, params);
            epoch_stats = accumulate(epoch_stats, stats, inv_batches);
        }
        curve.push_back(epoch_stats);
    }
    return curve;
}

struct EligibleVideos {
    std::vector<std::size_t> indices;
    std::size_t total_chunks = 0;
};

EligibleVideos stage1_eligible(const Dataset& dataset, const Hyper& hp) {
    if (dataset.empty()) {
        throw Error("train: empty dataset");
    }
    EligibleVideos out;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].features.length() >= hp.t_enc + hp.t_dec) {
            out.indices.push_back(i);
            out.total_chunks += dataset[i].features.length();
        }
    }
    if (out.indices.empty()) {
        throw Error("train: no video is at least t_enc + t_dec chunks long");
    }
    return out;
}

EligibleVideos stage2_eligible(const Dataset& dataset, const Hyper& hp) {
    if (dataset.empty()) {
        throw Error("train: empty dataset");
    }
    EligibleVideos out;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const LabeledVideo& v = dataset[i];
        if (!v.labels.has_value()) {
            throw Error("train stage 2: video '" + v.features.id + "' has no labels");
        }
        bool any_anchor = false;
        for (const ActionInterval& iv : v.labels->intervals) {
            if (stage2_anchor_range(iv, v.features.length(), hp).has_value()) {
                any_anchor = true;
                break;
            }
        }
        if (any_anchor) {
            out.indices.push_back(i);
            out.total_chunks += v.features.length();
        }
    }
    if (out.indices.empty()) {
        throw Error("train stage 2: no video has an action interval with a valid anchor");
    }
    return out;
}

void check_red_shapes(const RedParams& p, const Hyper& hp) {
    if (p.encoder.input_dim() != hp.d || p.encoder.hidden() != hp.h ||
        p.decoder.input_dim() != hp.d || p.out_proj.w.rows() != hp.d ||
        p.cls2.w.rows() != hp.num_labels() || p.base2.w.rows() != hp.t_dec) {
        throw DimensionError("train: parameter shapes do not match hyperparameters");
    }
}

} // namespace

TrainResult train_stage1(const Dataset& dataset, const Hyper& hp, const TrainOptions& opt) {
    hp.validate();
    const EligibleVideos eligible = stage1_eligible(dataset, hp);
    RandomSource init_rng = RandomSource::derive(opt.seed, kStreamInit);
    TrainResult result{init_red_params(hp, init_rng), {}};

    BatchFlags flags;
    flags.classification = false;
    flags.w_reg = opt.w_reg;

    const auto draw = [&](RandomSource& rng) {
        const LabeledVideo& v = dataset[eligible.indices[rng.uniform_index(eligible.indices.size())]];
        return sample_stage1(v.features, hp, rng);
    };
    const auto batch_fn = [&](const RedParams& p, std::span<const TrainingWindow> w,
                              RandomSource*, RedParams& grads) {
        return red_batch_gradients(p, hp, w, flags, nullptr, grads);
    };
    result.curve = run_epochs(result.params, hp, opt, kStreamWindowsStage1,
                              batches_per_epoch(eligible.total_chunks, hp.batch), draw, batch_fn);
    return result;
}

TrainResult train_stage2(const RedParams& init, const Dataset& dataset, const Hyper& hp,
                         const TrainOptions& opt) {
    hp.validate();
    check_red_shapes(init, hp);
    const EligibleVideos eligible = stage2_eligible(dataset, hp);
    TrainResult result{init, {}};

    BatchFlags flags;
    flags.classification = true;
    flags.reinforce = opt.use_reinforce;
    flags.force_zero_advantage = opt.force_zero_advantage;
    flags.reward_action_only = opt.reward_action_only;
    flags.w_reg = opt.w_reg;
    flags.w_cls = opt.w_cls;
    flags.w_rl = opt.w_rl;
    flags.alpha = hp.alpha;

    const auto draw = [&](RandomSource& rng) {
        const LabeledVideo& v = dataset[eligible.indices[rng.uniform_index(eligible.indices.size())]];
        return sample_stage2(v.features, *v.labels, hp, rng);
    };
    const auto batch_fn = [&](const RedParams& p, std::span<const TrainingWindow> w,
                              RandomSource* rng_p, RedParams& grads) {
        return red_batch_gradients(p, hp, w, flags, flags.reinforce ? rng_p : nullptr, grads);
    };
    result.curve = run_epochs(result.params, hp, opt, kStreamWindowsStage2,
                              batches_per_epoch(eligible.total_chunks, hp.batch), draw, batch_fn);
    return result;
}

// ---------------------------------------------------------------------------
// Fixed-horizon variants. The window layout is reused with a single input
// chunk (fc) or a t_enc history (efc) and a single target chunk at t + t_ant - 1.

namespace {

std::size_t fc_history(const Hyper& hp, bool efc) {
    return efc ? hp.t_enc : 1;
}

std::optional<AnchorRange> fixed_stage1_range(std::size_t len, const Hyper& hp, bool efc) {
    const std::size_t hist = fc_history(hp, efc);
    if (len < hist + hp.t_ant) {
        return std::nullopt;
    }
    return AnchorRange{hist, len - hp.t_ant};
}

std::optional<AnchorRange> fixed_stage2_range(const ActionInterval& iv, std::size_t len,
                                              const Hyper& hp, bool efc) {
    const auto bounds = fixed_stage1_range(len, hp, efc);
    if (!bounds.has_value() || iv.t_end == 0) {
        return std::nullopt;
    }
    const std::size_t hist = fc_history(hp, efc);
    const std::size_t lo_iv = iv.t_start + 1 > hist ? iv.t_start + 1 - hist : 0;
    const std::size_t lo = std::max(lo_iv, bounds->lo);
    const std::size_t hi = std::min(iv.t_end - 1, bounds->hi);
    if (lo > hi) {
        return std::nullopt;
    }
    return AnchorRange{lo, hi};
}

TrainingWindow fixed_window_at(const FeatureSequence& video, const LabelTrack* track,
                               const Hyper& hp, bool efc, std::size_t anchor) {
    const std::size_t hist = fc_history(hp, efc);
    TrainingWindow w;
    w.video_id = video.id;
    w.anchor = anchor;
    w.input.assign(video.chunks.begin() + static_cast<std::ptrdiff_t>(anchor - hist),
                   video.chunks.begin() + static_cast<std::ptrdiff_t>(anchor));
    const std::size_t target = anchor + hp.t_ant - 1;
    w.target_feats = {video.chunks[target]};
    if (track != nullptr) {
        w.target_labels = {track->labels[target]};
    }
    return w;
}

struct FixedDraw {
    const Dataset* dataset;
    const Hyper* hp;
    bool efc;
    bool stage2;
    std::vector<std::size_t> eligible;
    std::size_t total_chunks = 0;

    TrainingWindow operator()(RandomSource& rng) const {
        const LabeledVideo& v = (*dataset)[eligible[rng.uniform_index(eligible.size())]];
        const std::size_t len = v.features.length();
        if (!stage2) {
            const AnchorRange range = *fixed_stage1_range(len, *hp, efc);
            const std::size_t anchor = range.lo + rng.uniform_index(range.hi - range.lo + 1);
            return fixed_window_at(v.features, nullptr, *hp, efc, anchor);
        }
        std::vector<AnchorRange> ranges;
        for (const ActionInterval& iv : v.labels->intervals) {
            if (auto r = fixed_stage2_range(iv, len, *hp, efc)) {
                ranges.push_back(*r);
            }
        }
        const AnchorRange range = ranges[rng.uniform_index(ranges.size())];
        const std::size_t anchor = range.lo + rng.uniform_index(range.hi - range.lo + 1);
        return fixed_window_at(v.features, &*v.labels, *hp, efc, anchor);
    }
};

FixedDraw fixed_eligible(const Dataset& dataset, const Hyper& hp, bool efc, bool stage2) {
    if (dataset.empty()) {
        throw Error("train: empty dataset");
    }
    FixedDraw draw{&dataset, &hp, efc, stage2, {}, 0};
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const LabeledVideo& v = dataset[i];
        const std::size_t len = v.features.length();
        if (!stage2) {
            if (fixed_stage1_range(len, hp, efc).has_value()) {
                draw.eligible.push_back(i);
                draw.total_chunks += len;
            }
            continue;
        }
        if (!v.labels.has_value()) {
            throw Error("train stage 2: video '" + v.features.id + "' has no labels");
        }
        for (const ActionInterval& iv : v.labels->intervals) {
            if (fixed_stage2_range(iv, len, hp, efc).has_value()) {
                draw.eligible.push_back(i);
                draw.total_chunks += len;
                break;
            }
        }
    }
    if (draw.eligible.empty()) {
        throw Error(stage2 ? "train stage 2: no video has a valid anchor"
                           : "train: no video is long enough for the anticipation horizon");
    }
    return draw;
}

// fc forward/backward over one batch.
BatchStats fc_batch_gradients(const FcParams& p, const Hyper& hp,
                              std::span<const TrainingWindow> windows, bool classification,
                              double w_reg, double w_cls, FcParams& grads) {
    const double n = static_cast<double>(windows.size());
    BatchStats stats;
    for (const TrainingWindow& w : windows) {
        if (w.input.empty() || w.input.back().size() != hp.d) {
            throw DimensionError("fc batch: window shape mismatch");
        }
        Mlp2Cache fwd = mlp2_cached(p.l1, p.l2, w.input.back());
        const Vector& target = w.target_feats.front();
        Vector dout(fwd.out.size(), 0.0);
        for (std::size_t i = 0; i < fwd.out.size(); ++i) {
            const double diff = fwd.out[i] - target[i];
            stats.l_reg += diff * diff / n;
            dout[i] = w_reg * 2.0 * diff / n;
        }
        if (classification) {
            ClassifyCache cls = classify_with_cached(p.cls1, p.cls2, fwd.out);
            const int y = w.target_labels.front();
            if (y < 0 || static_cast<std::size_t>(y) >= cls.probs.size()) {
                throw Error("fc batch: label out of range in '" + w.video_id + "'");
            }
            stats.l_cls -= std::log(std::max(cls.probs[static_cast<std::size_t>(y)], 1e-12)) / n;
            Vector dlogits = cls.probs;
            dlogits[static_cast<std::size_t>(y)] -= 1.0;
            for (double& g : dlogits) {
                g *= w_cls / n;
            }
            Vector dv;
            classify_with_backward(p.cls1, p.cls2, cls, dlogits, grads.cls1, grads.cls2, dv);
            add_scaled(dout, dv, 1.0);
        }
        mlp2_backward(p.l1, p.l2, fwd, dout, grads.l1, grads.l2, nullptr);
    }
    return stats;
}

BatchStats efc_batch_gradients(const EfcParams& p, const Hyper& hp,
                               std::span<const TrainingWindow> windows, bool classification,
                               double w_reg, double w_cls, EfcParams& grads) {
    const double n = static_cast<double>(windows.size());
    BatchStats stats;
    for (const TrainingWindow& w : windows) {
        if (w.input.size() != hp.t_enc) {
            throw DimensionError("efc batch: history length mismatch");
        }
        EfcCache fwd = efc_anticipate_cached(w.input, p);
        const Vector& target = w.target_feats.front();
        Vector dout(fwd.out.size(), 0.0);
        for (std::size_t i = 0; i < fwd.out.size(); ++i) {
            const double diff = fwd.out[i] - target[i];
            stats.l_reg += diff * diff / n;
            dout[i] = w_reg * 2.0 * diff / n;
        }
        if (classification) {
            ClassifyCache cls = classify_with_cached(p.cls1, p.cls2, fwd.out);
            const int y = w.target_labels.front();
            if (y < 0 || static_cast<std::size_t>(y) >= cls.probs.size()) {
                throw Error("efc batch: label out of range in '" + w.video_id + "'");
            }
            stats.l_cls -= std::log(std::max(cls.probs[static_cast<std::size_t>(y)], 1e-12)) / n;
            Vector dlogits = cls.probs;
            dlogits[static_cast<std::size_t>(y)] -= 1.0;
            for (double& g : dlogits) {
                g *= w_cls / n;
            }
            Vector dv;
            classify_with_backward(p.cls1, p.cls2, cls, dlogits, grads.cls1, grads.cls2, dv);
            add_scaled(dout, dv, 1.0);
        }
        efc_backward(p, fwd, dout, grads);
    }
    return stats;
}

} // namespace

FcTrainResult train_fc_stage1(const Dataset& dataset, const Hyper& hp, const TrainOptions& opt) {
    hp.validate();
    FixedDraw draw = fixed_eligible(dataset, hp, false, false);
    RandomSource init_rng = RandomSource::derive(opt.seed, kStreamInit);
    FcTrainResult result{init_fc_params(hp, init_rng), {}};
    const auto batch_fn = [&](const FcParams& p, std::span<const TrainingWindow> w, RandomSource*,
                              FcParams& grads) {
        return fc_batch_gradients(p, hp, w, false, opt.w_reg, opt.w_cls, grads);
    };
    result.curve = run_epochs(result.params, hp, opt, kStreamWindowsStage1,
                              batches_per_epoch(draw.total_chunks, hp.batch), draw, batch_fn);
    return result;
}

FcTrainResult train_fc_stage2(const FcParams& init, const Dataset& dataset, const Hyper& hp,
                              const TrainOptions& opt) {
    hp.validate();
    FixedDraw draw = fixed_eligible(dataset, hp, false, true);
    FcTrainResult result{init, {}};
    const auto batch_fn = [&](const FcParams& p, std::span<const TrainingWindow> w, RandomSource*,
                              FcParams& grads) {
        return fc_batch_gradients(p, hp, w, true, opt.w_reg, opt.w_cls, grads);
    };
    result.curve = run_epochs(result.params, hp, opt, kStreamWindowsStage2,
                              batches_per_epoch(draw.total_chunks, hp.batch), draw, batch_fn);
    return result;
}

EfcTrainResult train_efc_stage1(const Dataset& dataset, const Hyper& hp,
                                const TrainOptions& opt) {
    hp.validate();
    FixedDraw draw = fixed_eligible(dataset, hp, true, false);
    RandomSource init_rng = RandomSource::derive(opt.seed, kStreamInit);
    EfcTrainResult result{init_efc_params(hp, init_rng), {}};
    const auto batch_fn = [&](const EfcParams& p, std::span<const TrainingWindow> w,
                              RandomSource*, EfcParams& grads) {
        return efc_batch_gradients(p, hp, w, false, opt.w_reg, opt.w_cls, grads);
    };
    result.curve = run_epochs(result.params, hp, opt, kStreamWindowsStage1,
                              batches_per_epoch(draw.total_chunks, hp.batch), draw, batch_fn);
    return result;
}

EfcTrainResult train_efc_stage2(const EfcParams& init, const Dataset& dataset, const Hyper& hp,
                                const TrainOptions& opt) {
    hp.validate();
    FixedDraw draw = fixed_eligible(dataset, hp, true, true);
    EfcTrainResult result{init, {}};
    const auto batch_fn = [&](const EfcParams& p, std::span<const TrainingWindow> w,
                              RandomSource*, EfcParams& grads) {
        return efc_batch_gradients(p, hp, w, true, opt.w_reg, opt.w_cls, grads);
    };
    result.curve = run_epochs(result.params, hp, opt, kStreamWindowsStage2,
                              batches_per_epoch(draw.total_chunks, hp.batch), draw, batch_fn);
    return result;
}

FcTrainResult train_fc(const Dataset& dataset, const Hyper& hp, const TrainOptions& s1,
                       const TrainOptions& s2) {
    FcTrainResult stage1 = train_fc_stage1(dataset, hp, s1);
    FcTrainResult stage2 = train_fc_stage2(stage1.params, dataset, hp, s2);
    stage2.curve.insert(stage2.curve.begin(), stage1.curve.begin(), stage1.curve.end());
    return stage2;
}

EfcTrainResult train_efc(const Dataset& dataset, const Hyper& hp, const TrainOptions& s1,
                         const TrainOptions& s2) {
    EfcTrainResult stage1 = train_efc_stage1(dataset, hp, s1);
    EfcTrainResult stage2 = train_efc_stage2(stage1.params, dataset, hp, s2);
    stage2.curve.insert(stage2.curve.begin(), stage1.curve.begin(), stage1.curve.end());
    return stage2;
}

// ---------------------------------------------------------------------------
// Config file

TrainOptions TrainConfig::stage1_options() const {
    TrainOptions opt;
    opt.epochs = epochs_stage1;
    opt.seed = seed;
    opt.use_reinforce = false;
    opt.clip_norm = clip_norm;
    opt.w_reg = w_reg;
    opt.w_cls = w_cls;
    opt.w_rl = w_rl;
    return opt;
}

TrainOptions TrainConfig::stage2_options() const {
    TrainOptions opt = stage1_options();
    opt.epochs = epochs_stage2;
    opt.use_reinforce = use_reinforce;
    opt.reward_action_only = reward_action_only;
    return opt;
}

namespace {

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "t_enc", "t_dec", "d", "h", "c", "alpha", "lr", "batch", "epochs_stage1",
        "epochs_stage2", "seed", "use_reinforce", "reward_action_only", "clip_norm",
        "w_reg", "w_cls", "w_rl"};
    return keys;
}

std::size_t to_size(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
    if (value.empty() || end != value.c_str() + value.size()) {
        throw ConfigError("config: key '" + key + "' has invalid integer value '" + value + "'");
    }
    return static_cast<std::size_t>(v);
}

double to_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v)) {
        throw ConfigError("config: key '" + key + "' has invalid numeric value '" + value + "'");
    }
    return v;
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    throw ConfigError("config: key '" + key + "' must be true/false, got '" + value + "'");
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

} // namespace

TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') {
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": expected key=value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end()) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": unknown key '" + key + "'");
        }
        if (kv.count(key) != 0) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": duplicate key '" + key + "'");
        }
        kv[key] = value;
    }
    for (const std::string& key : config_keys()) {
        if (kv.count(key) == 0) {
            throw ConfigError("config " + path.string() + ": missing key '" + key + "'");
        }
    }

    TrainConfig cfg;
    cfg.hyper.t_enc = to_size("t_enc", kv["t_enc"]);
    cfg.hyper.t_dec = to_size("t_dec", kv["t_dec"]);
    cfg.hyper.d = to_size("d", kv["d"]);
    cfg.hyper.h = to_size("h", kv["h"]);
    cfg.hyper.c = to_size("c", kv["c"]);
    cfg.hyper.alpha = to_double("alpha", kv["alpha"]);
    cfg.hyper.lr = to_double("lr", kv["lr"]);
    cfg.hyper.batch = to_size("batch", kv["batch"]);
    cfg.epochs_stage1 = to_size("epochs_stage1", kv["epochs_stage1"]);
    cfg.epochs_stage2 = to_size("epochs_stage2", kv["epochs_stage2"]);
    cfg.seed = to_size("seed", kv["seed"]);
    cfg.use_reinforce = to_bool("use_reinforce", kv["use_reinforce"]);
    cfg.reward_action_only = to_bool("reward_action_only", kv["reward_action_only"]);
    cfg.clip_norm = to_double("clip_norm", kv["clip_norm"]);
    cfg.w_reg = to_double("w_reg", kv["w_reg"]);
    cfg.w_cls = to_double("w_cls", kv["w_cls"]);
    cfg.w_rl = to_double("w_rl", kv["w_rl"]);
    if (cfg.clip_norm < 0.0) {
        throw ConfigError("config: key 'clip_norm' must be nonnegative");
    }
    cfg.hyper.validate();
    return cfg;
}

void write_train_config(const std::filesystem::path& path, const TrainConfig& cfg) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write config file " + path.string());
    }
    out << "t_enc=" << cfg.hyper.t_enc << "\n";
    out << "t_dec=" << cfg.hyper.t_dec << "\n";
    out << "d=" << cfg.hyper.d << "\n";
    out << "h=" << cfg.hyper.h << "\n";
    out << "c=" << cfg.hyper.c << "\n";
    out << "alpha=" << format_double(cfg.hyper.alpha) << "\n";
    out << "lr=" << format_double(cfg.hyper.lr) << "\n";
    out << "batch=" << cfg.hyper.batch << "\n";
    out << "epochs_stage1=" << cfg.epochs_stage1 << "\n";
    out << "epochs_stage2=" << cfg.epochs_stage2 << "\n";
    out << "seed=" << cfg.seed << "\n";
    out << "use_reinforce=" << (cfg.use_reinforce ? "true" : "false") << "\n";
    out << "reward_action_only=" << (cfg.reward_action_only ? "true" : "false") << "\n";
    out << "clip_norm=" << format_double(cfg.clip_norm) << "\n";
    out << "w_reg=" << format_double(cfg.w_reg) << "\n";
    out << "w_cls=" << format_double(cfg.w_cls) << "\n";
    out << "w_rl=" << format_double(cfg.w_rl) << "\n";
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochStats> curve) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write training log " + path.string());
    }
    out << "epoch,l_reg,l_cls,surrogate,mean_reward,baseline_loss\n";
    for (std::size_t e = 0; e < curve.size(); ++e) {
        out << (e + 1) << ',' << format_double(curve[e].l_reg) << ','
            << format_double(curve[e].l_cls) << ',' << format_double(curve[e].surrogate) << ','
            << format_double(curve[e].mean_reward) << ','
            << format_double(curve[e].baseline_loss) << "\n";
    }
}

} // namespace red
