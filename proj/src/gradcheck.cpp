#include "red/gradcheck.hpp"

#include <cmath>

#include "red/rl.hpp"
#include "red/training.hpp"

namespace red {

namespace {

// Frozen per-window reinforcement context: the sampled sequence and its
// advantages are constants of the loss, exactly as in Adam's view of one
// update step.
struct FrozenTrace {
    std::vector<int> sampled;
    Vector advantage;
    Vector returns_to_go;
    Vector h_enc; // frozen input of the baseline network
};

std::vector<TrainingWindow> make_windows(const Hyper& hp, std::size_t count, RandomSource& rng) {
    std::vector<TrainingWindow> windows(count);
    for (std::size_t k = 0; k < count; ++k) {
        TrainingWindow& w = windows[k];
        w.video_id = "gradcheck_" + std::to_string(k);
        w.anchor = hp.t_enc;
        w.input.resize(hp.t_enc);
        for (Vector& v : w.input) {
            v.resize(hp.d);
            for (double& x : v) {
                x = rng.normal();
            }
        }
        w.target_feats.resize(hp.t_dec);
        for (Vector& v : w.target_feats) {
            v.resize(hp.d);
            for (double& x : v) {
                x = rng.normal();
            }
        }
        // A transfer inside every window keeps the reward terms active.
        const std::size_t t_f = rng.uniform_index(hp.t_dec);
        const int cls = static_cast<int>(rng.uniform_index(hp.c)) + 1;
        w.target_labels.assign(hp.t_dec, 0);
        for (std::size_t t = t_f; t < hp.t_dec; ++t) {
            w.target_labels[t] = cls;
        }
    }
    return windows;
}

double surrogate_value(const RedParams& p, const Hyper& hp,
                       std::span<const TrainingWindow> windows,
                       std::span<const FrozenTrace> traces, RedParams* grads) {
    const double n = static_cast<double>(windows.size());
    double loss = 0.0;
    for (std::size_t k = 0; k < windows.size(); ++k) {
        const TrainingWindow& w = windows[k];
        const FrozenTrace& trace = traces[k];
        EncodeCache enc = encode_cached(w.input, p.encoder);
        DecodeCache dec = decode_cached(enc.final_h(), enc.final_c(), p, hp.t_dec);
        std::vector<ClassifyCache> cls(hp.t_dec);
        std::vector<Vector> d_outputs(hp.t_dec, Vector(hp.d, 0.0));
        for (std::size_t j = 0; j < hp.t_dec; ++j) {
            cls[j] = classify_cached(dec.outputs[j], p);
            const std::size_t a = static_cast<std::size_t>(trace.sampled[j]);
            loss -= std::log(std::max(cls[j].probs[a], 1e-12)) * trace.advantage[j] / n;
            if (grads == nullptr || trace.advantage[j] == 0.0) {
                continue;
            }
            Vector dlogits = cls[j].probs;
            dlogits[a] -= 1.0;
            for (double& g : dlogits) {
                g *= trace.advantage[j] / n;
            }
            Vector dv;
            classify_backward(p, cls[j], dlogits, *grads, dv);
            add_scaled(d_outputs[j], dv, 1.0);
        }
        if (grads != nullptr) {
            Vector dh0, dc0;
            decode_backward(p, dec, d_outputs, *grads, dh0, dc0);
            encode_backward(p.encoder, enc, std::move(dh0), std::move(dc0), grads->encoder);
        }
    }
    return loss;
}

double baseline_value(const RedParams& p, const Hyper& hp,
                      std::span<const FrozenTrace> traces, RedParams* grads) {
    const double n = static_cast<double>(traces.size());
    double loss = 0.0;
    for (const FrozenTrace& trace : traces) {
        Mlp2Cache cache = baseline_forward_cached(trace.h_enc, p);
        loss += baseline_loss(cache.out, trace.returns_to_go) / n;
        if (grads == nullptr) {
            continue;
        }
        Vector dout(hp.t_dec);
        for (std::size_t j = 0; j < hp.t_dec; ++j) {
            dout[j] = 2.0 * (cache.out[j] - trace.returns_to_go[j]) /
                      (static_cast<double>(hp.t_dec) * n);
        }
        baseline_backward(p, cache, dout, *grads);
    }
    return loss;
}

RedParams zeroed(const RedParams& like) {
    RedParams z = like;
    visit_tensors(z, [](const char*, auto& t) {
        auto s = detail::tensor_span(t);
        std::fill(s.begin(), s.end(), 0.0);
    });
    return z;
}

LossCheck finish_check(const char* name, const RedParams& params, Vector analytic,
                       const Vector& numeric, const GradCheckOptions& options) {
    if (options.corrupt && !analytic.empty()) {
        analytic[0] += 1e-2;
    }
    LossCheck check;
    check.loss = name;
    check.report = grad_check_report(analytic, numeric);
    check.worst_parameter = describe_parameter(params, check.report.worst_parameter_index);
    check.passed = check.report.max_relative_error < options.tolerance;
    return check;
}

} // namespace

std::string describe_parameter(const RedParams& params, std::size_t flat_index) {
    std::string result = "<none>";
    std::size_t offset = 0;
    visit_tensors(params, [&](const char* name, const auto& t) {
        const std::size_t size = detail::tensor_span(t).size();
        if (flat_index >= offset && flat_index < offset + size) {
            result = std::string(name) + "[" + std::to_string(flat_index - offset) + "]";
        }
        offset += size;
    });
    return result;
}

std::vector<LossCheck> run_grad_checks(const GradCheckOptions& options) {
    Hyper hp = options.hyper;
    hp.validate();
    RandomSource init_rng = RandomSource::derive(options.seed, 0x6763u);
    const RedParams params = init_red_params(hp, init_rng);
    RandomSource data_rng = RandomSource::derive(options.seed, 0x6764u);
    const std::vector<TrainingWindow> windows = make_windows(hp, options.windows, data_rng);
    const Vector theta = flatten_params(params);

    std::vector<LossCheck> checks;

    // Regression loss through decode(encode(.)).
    {
        BatchFlags flags;
        flags.classification = false;
        RedParams grads = zeroed(params);
        red_batch_gradients(params, hp, windows, flags, nullptr, grads);
        const auto loss_fn = [&](const Vector& flat) {
            RedParams probe = params;
            unflatten_params(flat, probe);
            return red_batch_loss(probe, hp, windows, flags);
        };
        const Vector numeric = finite_diff_grad(loss_fn, theta, options.epsilon);
        checks.push_back(finish_check("l_reg", params, flatten_params(grads), numeric, options));
    }

    // Classification loss through classify(decode(encode(.))).
    {
        BatchFlags flags;
        flags.classification = true;
        flags.w_reg = 0.0;
        RedParams grads = zeroed(params);
        red_batch_gradients(params, hp, windows, flags, nullptr, grads);
        const auto loss_fn = [&](const Vector& flat) {
            RedParams probe = params;
            unflatten_params(flat, probe);
            return red_batch_loss(probe, hp, windows, flags);
        };
        const Vector numeric = finite_diff_grad(loss_fn, theta, options.epsilon);
        checks.push_back(finish_check("l_cls", params, flatten_params(grads), numeric, options));
    }

    // Freeze one sampled sequence per window for the reinforcement terms.
    std::vector<FrozenTrace> traces(windows.size());
    {
        RandomSource policy_rng = RandomSource::derive(options.seed, 0x6765u);
        for (std::size_t k = 0; k < windows.size(); ++k) {
            const TrainingWindow& w = windows[k];
            auto [h, c] = encode(w.input, params);
            const std::vector<Vector> outputs = decode(h, c, params, hp.t_dec);
            std::vector<Vector> probs(hp.t_dec);
            for (std::size_t j = 0; j < hp.t_dec; ++j) {
                probs[j] = classify(outputs[j], params);
            }
            RewardTrace trace =
                make_reward_trace(probs, w.target_labels, hp.alpha, false, policy_rng);
            const Vector baseline = baseline_forward(h, params);
            traces[k].sampled = trace.sampled;
            traces[k].returns_to_go = trace.returns_to_go;
            traces[k].advantage.resize(hp.t_dec);
            for (std::size_t j = 0; j < hp.t_dec; ++j) {
                traces[k].advantage[j] = trace.returns_to_go[j] - baseline[j];
            }
            traces[k].h_enc = h;
        }
    }

    // REINFORCE surrogate with the sample and advantages held fixed.
    {
        RedParams grads = zeroed(params);
        surrogate_value(params, hp, windows, traces, &grads);
        const auto loss_fn = [&](const Vector& flat) {
            RedParams probe = params;
            unflatten_params(flat, probe);
            return surrogate_value(probe, hp, windows, traces, nullptr);
        };
        const Vector numeric = finite_diff_grad(loss_fn, theta, options.epsilon);
        checks.push_back(
            finish_check("surrogate", params, flatten_params(grads), numeric, options));
    }

    // Baseline regression against frozen returns, frozen encoder state.
    {
        RedParams grads = zeroed(params);
        baseline_value(params, hp, traces, &grads);
        const auto loss_fn = [&](const Vector& flat) {
            RedParams probe = params;
            unflatten_params(flat, probe);
            return baseline_value(probe, hp, traces, nullptr);
        };
        const Vector numeric = finite_diff_grad(loss_fn, theta, options.epsilon);
        checks.push_back(
            finish_check("baseline_loss", params, flatten_params(grads), numeric, options));
    }

    return checks;
}

bool all_passed(const std::vector<LossCheck>& checks) {
    for (const LossCheck& check : checks) {
        if (!check.passed) {
            return false;
        }
    }
    return true;
}

} // namespace red
