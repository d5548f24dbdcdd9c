#pragma once

#include <cstdint>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "red/numerics.hpp"
#include "red/random.hpp"

namespace red {

/// Model and training hyperparameters. Defaults are the desk-scale
/// configuration; full-scale values remain reachable by assignment.
struct Hyper {
    std::size_t t_enc = 16; // encoder input steps
    std::size_t t_dec = 8;  // anticipation steps
    std::size_t d = 32;     // feature dimension
    std::size_t h = 64;     // LSTM hidden dimension
    std::size_t h_c = 0;    // classifier/baseline hidden width; 0 means "use h"
    std::size_t c = 3;      // action classes; label 0 is background
    double alpha = 1.0;     // reward scale
    double lr = 0.001;
    std::size_t batch = 64;
    std::size_t chunk_frames = 6;
    std::size_t fps = 24;
    std::size_t t_ant = 4; // fixed anticipation horizon for the fc/efc variants

    std::size_t hidden_c() const { return h_c == 0 ? h : h_c; }
    std::size_t num_labels() const { return c + 1; }
    double chunk_seconds() const { return static_cast<double>(chunk_frames) / static_cast<double>(fps); }

    void validate() const;
};

/// One LSTM cell. Gate order in the stacked weights is fixed:
/// [input, forget, output, candidate].
struct LstmParams {
    Matrix w_x; // 4H x d_in
    Matrix w_h; // 4H x H
    Vector b;   // 4H

    std::size_t hidden() const { return w_h.cols(); }
    std::size_t input_dim() const { return w_x.cols(); }
};

struct AffineParams {
    Matrix w;
    Vector b;
};

/// Full parameter set: encoder/decoder LSTMs, output projection,
/// classification network, and the baseline-reward network.
struct RedParams {
    LstmParams encoder;    // d -> h
    LstmParams decoder;    // d -> h
    AffineParams out_proj; // h -> d
    AffineParams cls1;     // d -> h_c
    AffineParams cls2;     // h_c -> c+1
    AffineParams base1;    // h -> h_c
    AffineParams base2;    // h_c -> t_dec
};

/// Single-step fully connected anticipation (two layers, tanh between)
/// plus the shared classification head.
struct FcParams {
    AffineParams l1; // d -> h
    AffineParams l2; // h -> d
    AffineParams cls1;
    AffineParams cls2;
};

/// LSTM encoder with a single projection to one future representation,
/// plus the shared classification head.
struct EfcParams {
    LstmParams encoder;  // d -> h
    AffineParams proj;   // h -> d
    AffineParams cls1;
    AffineParams cls2;
};

RedParams make_red_params(const Hyper& hp);
FcParams make_fc_params(const Hyper& hp);
EfcParams make_efc_params(const Hyper& hp);

// Seeded init: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases
// zero except the LSTM forget-gate slice which starts at 1.
RedParams init_red_params(const Hyper& hp, RandomSource& rng);
FcParams init_fc_params(const Hyper& hp, RandomSource& rng);
EfcParams init_efc_params(const Hyper& hp, RandomSource& rng);

// ---------------------------------------------------------------------------
// Parameter traversal. Order is fixed; checkpointing, flattening, and the
// optimizer all rely on it.

template <typename P, typename Fn>
    requires std::same_as<std::remove_const_t<P>, RedParams>
void visit_tensors(P& p, Fn&& fn) {
    fn("encoder.w_x", p.encoder.w_x);
    fn("encoder.w_h", p.encoder.w_h);
    fn("encoder.b", p.encoder.b);
    fn("decoder.w_x", p.decoder.w_x);
    fn("decoder.w_h", p.decoder.w_h);
    fn("decoder.b", p.decoder.b);
    fn("out_proj.w", p.out_proj.w);
    fn("out_proj.b", p.out_proj.b);
    fn("cls1.w", p.cls1.w);
    fn("cls1.b", p.cls1.b);
    fn("cls2.w", p.cls2.w);
    fn("cls2.b", p.cls2.b);
    fn("baseline1.w", p.base1.w);
    fn("baseline1.b", p.base1.b);
    fn("baseline2.w", p.base2.w);
    fn("baseline2.b", p.base2.b);
}

template <typename P, typename Fn>
    requires std::same_as<std::remove_const_t<P>, FcParams>
void visit_tensors(P& p, Fn&& fn) {
    fn("l1.w", p.l1.w);
    fn("l1.b", p.l1.b);
    fn("l2.w", p.l2.w);
    fn("l2.b", p.l2.b);
    fn("cls1.w", p.cls1.w);
    fn("cls1.b", p.cls1.b);
    fn("cls2.w", p.cls2.w);
    fn("cls2.b", p.cls2.b);
}

template <typename P, typename Fn>
    requires std::same_as<std::remove_const_t<P>, EfcParams>
void visit_tensors(P& p, Fn&& fn) {
    fn("encoder.w_x", p.encoder.w_x);
    fn("encoder.w_h", p.encoder.w_h);
    fn("encoder.b", p.encoder.b);
    fn("proj.w", p.proj.w);
    fn("proj.b", p.proj.b);
    fn("cls1.w", p.cls1.w);
    fn("cls1.b", p.cls1.b);
    fn("cls2.w", p.cls2.w);
    fn("cls2.b", p.cls2.b);
}

namespace detail {
inline std::span<double> tensor_span(Matrix& m) { return m.span(); }
inline std::span<const double> tensor_span(const Matrix& m) { return m.span(); }
inline std::span<double> tensor_span(Vector& v) { return {v.data(), v.size()}; }
inline std::span<const double> tensor_span(const Vector& v) { return {v.data(), v.size()}; }
} // namespace detail

template <typename P> std::size_t param_count(const P& p) {
    std::size_t n = 0;
    visit_tensors(p, [&](const char*, const auto& t) { n += detail::tensor_span(t).size(); });
    return n;
}

template <typename P> Vector flatten_params(const P& p) {
    Vector flat;
    flat.reserve(param_count(p));
    visit_tensors(p, [&](const char*, const auto& t) {
        auto s = detail::tensor_span(t);
        flat.insert(flat.end(), s.begin(), s.end());
    });
    return flat;
}

template <typename P> void unflatten_params(const Vector& flat, P& p) {
    std::size_t offset = 0;
    visit_tensors(p, [&](const char*, auto& t) {
        auto s = detail::tensor_span(t);
        if (offset + s.size() > flat.size()) {
            throw DimensionError("unflatten_params: flat vector too short");
        }
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = flat[offset + i];
        }
        offset += s.size();
    });
    if (offset != flat.size()) {
        throw DimensionError("unflatten_params: flat vector size mismatch");
    }
}

// ---------------------------------------------------------------------------
// LSTM cell

/// Per-step forward activations kept for the backward pass.
struct LstmStep {
    Vector x, h_prev, c_prev;
    Vector gate_i, gate_f, gate_o, gate_g;
    Vector c, tanh_c, h;
};

std::pair<Vector, Vector> lstm_step(const Vector& x, const Vector& h, const Vector& c,
                                    const LstmParams& p);
LstmStep lstm_step_cached(const Vector& x, const Vector& h, const Vector& c, const LstmParams& p);

// Accumulates parameter gradients; writes input-side gradients for chaining.
void lstm_step_backward(const LstmParams& p, const LstmStep& step, const Vector& dh,
                        const Vector& dc, LstmParams& grads, Vector& dx, Vector& dh_prev,
                        Vector& dc_prev);

// ---------------------------------------------------------------------------
// Encoder / decoder

struct EncodeCache {
    std::vector<LstmStep> steps;
    const Vector& final_h() const { return steps.back().h; }
    const Vector& final_c() const { return steps.back().c; }
};

/// Folds the LSTM over `seq` from a zero initial state; returns final (h, c).
std::pair<Vector, Vector> encode(std::span<const Vector> seq, const RedParams& p);
EncodeCache encode_cached(std::span<const Vector> seq, const LstmParams& enc);
void encode_backward(const LstmParams& enc, const EncodeCache& cache, Vector dh, Vector dc,
                     LstmParams& grads);

struct DecodeCache {
    std::vector<LstmStep> steps;
    std::vector<Vector> outputs; // anticipated representations, one per step
};

/// Runs the decoder from the encoder's final state. Step 1 consumes the zero
/// vector; step j > 1 consumes the previous anticipated representation.
std::vector<Vector> decode(const Vector& h, const Vector& c, const RedParams& p,
                           std::size_t t_dec);
DecodeCache decode_cached(const Vector& h, const Vector& c, const RedParams& p,
                          std::size_t t_dec);

// d_outputs[j] is dL/d(output j). Writes gradients w.r.t. the initial state so
// the caller can continue into the encoder.
void decode_backward(const RedParams& p, const DecodeCache& cache,
                     std::span<const Vector> d_outputs, RedParams& grads, Vector& dh0,
                     Vector& dc0);

// ---------------------------------------------------------------------------
// Two-layer heads (classification, baseline, fc anticipation)

struct Mlp2Cache {
    Vector input;
    Vector hidden; // tanh activations
    Vector out;
};

Vector mlp2(const AffineParams& l1, const AffineParams& l2, const Vector& v);
Mlp2Cache mlp2_cached(const AffineParams& l1, const AffineParams& l2, const Vector& v);
// dinput may be null when the input is to be treated as a constant.
void mlp2_backward(const AffineParams& l1, const AffineParams& l2, const Mlp2Cache& cache,
                   const Vector& dout, AffineParams& g1, AffineParams& g2, Vector* dinput);

struct ClassifyCache {
    Mlp2Cache mlp;
    Vector probs;
};

// All architecture variants share this classification head: two affine
// layers with tanh between, softmax on top.
Vector classify_with(const AffineParams& l1, const AffineParams& l2, const Vector& v);
ClassifyCache classify_with_cached(const AffineParams& l1, const AffineParams& l2,
                                   const Vector& v);
void classify_with_backward(const AffineParams& l1, const AffineParams& l2,
                            const ClassifyCache& cache, const Vector& dlogits, AffineParams& g1,
                            AffineParams& g2, Vector& dinput);

/// Distribution over the c+1 categories (background first) for one
/// anticipated representation.
Vector classify(const Vector& v_hat, const RedParams& p);
ClassifyCache classify_cached(const Vector& v_hat, const RedParams& p);
// dlogits is the gradient w.r.t. pre-softmax logits.
void classify_backward(const RedParams& p, const ClassifyCache& cache, const Vector& dlogits,
                       RedParams& grads, Vector& dinput);

/// One scalar baseline reward per decoder step, from the encoder's final
/// hidden state. The input is treated as constant in the backward pass.
Vector baseline_forward(const Vector& h_enc, const RedParams& p);
Mlp2Cache baseline_forward_cached(const Vector& h_enc, const RedParams& p);
void baseline_backward(const RedParams& p, const Mlp2Cache& cache, const Vector& dout,
                       RedParams& grads);

// ---------------------------------------------------------------------------
// Fixed-horizon variants

Vector fc_anticipate(const Vector& v, const FcParams& p);
Vector efc_anticipate(std::span<const Vector> seq, const EfcParams& p);

struct EfcCache {
    EncodeCache enc;
    Vector out;
};
EfcCache efc_anticipate_cached(std::span<const Vector> seq, const EfcParams& p);
void efc_backward(const EfcParams& p, const EfcCache& cache, const Vector& dout,
                  EfcParams& grads);

} // namespace red
