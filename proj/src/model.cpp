#include "red/model.hpp"

#include <cmath>

namespace red {

void Hyper::validate() const {
    if (t_enc < 1 || t_dec < 1) {
        throw DimensionError("Hyper: t_enc and t_dec must be at least 1");
    }
    if (d < 1 || h < 1 || c < 1) {
        throw DimensionError("Hyper: d, h, and c must be at least 1");
    }
    if (hidden_c() < 1) {
        throw DimensionError("Hyper: classifier hidden width must be at least 1");
    }
    if (batch < 1) {
        throw DimensionError("Hyper: batch must be at least 1");
    }
    if (chunk_frames < 1 || fps < 1) {
        throw DimensionError("Hyper: chunk_frames and fps must be at least 1");
    }
    if (t_ant < 1) {
        throw DimensionError("Hyper: t_ant must be at least 1");
    }
    if (alpha <= 0.0) {
        throw DimensionError("Hyper: alpha must be positive");
    }
}

namespace {

LstmParams make_lstm(std::size_t input_dim, std::size_t hidden) {
    LstmParams p;
    p.w_x = Matrix(4 * hidden, input_dim);
    p.w_h = Matrix(4 * hidden, hidden);
    p.b = Vector(4 * hidden, 0.0);
    return p;
}

AffineParams make_affine(std::size_t out_dim, std::size_t in_dim) {
    AffineParams p;
    p.w = Matrix(out_dim, in_dim);
    p.b = Vector(out_dim, 0.0);
    return p;
}

void init_matrix(Matrix& m, RandomSource& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    for (double& x : m.span()) {
        x = (2.0 * rng.uniform01() - 1.0) * bound;
    }
}

void init_lstm(LstmParams& p, RandomSource& rng) {
    init_matrix(p.w_x, rng);
    init_matrix(p.w_h, rng);
    // Forget-gate bias starts at 1 so cells keep state early in training.
    const std::size_t hidden = p.hidden();
    for (std::size_t i = hidden; i < 2 * hidden; ++i) {
        p.b[i] = 1.0;
    }
}

} // namespace

RedParams make_red_params(const Hyper& hp) {
    hp.validate();
    RedParams p;
    p.encoder = make_lstm(hp.d, hp.h);
    p.decoder = make_lstm(hp.d, hp.h);
    p.out_proj = make_affine(hp.d, hp.h);
    p.cls1 = make_affine(hp.hidden_c(), hp.d);
    p.cls2 = make_affine(hp.num_labels(), hp.hidden_c());
    p.base1 = make_affine(hp.hidden_c(), hp.h);
    p.base2 = make_affine(hp.t_dec, hp.hidden_c());
    return p;
}

FcParams make_fc_params(const Hyper& hp) {
    hp.validate();
    FcParams p;
    p.l1 = make_affine(hp.h, hp.d);
    p.l2 = make_affine(hp.d, hp.h);
    p.cls1 = make_affine(hp.hidden_c(), hp.d);
    p.cls2 = make_affine(hp.num_labels(), hp.hidden_c());
    return p;
}

EfcParams make_efc_params(const Hyper& hp) {
    hp.validate();
    EfcParams p;
    p.encoder = make_lstm(hp.d, hp.h);
    p.proj = make_affine(hp.d, hp.h);
    p.cls1 = make_affine(hp.hidden_c(), hp.d);
    p.cls2 = make_affine(hp.num_labels(), hp.hidden_c());
    return p;
}

RedParams init_red_params(const Hyper& hp, RandomSource& rng) {
    RedParams p = make_red_params(hp);
    init_lstm(p.encoder, rng);
    init_lstm(p.decoder, rng);
    init_matrix(p.out_proj.w, rng);
    init_matrix(p.cls1.w, rng);
    init_matrix(p.cls2.w, rng);
    init_matrix(p.base1.w, rng);
    init_matrix(p.base2.w, rng);
    return p;
}

FcParams init_fc_params(const Hyper& hp, RandomSource& rng) {
    FcParams p = make_fc_params(hp);
    init_matrix(p.l1.w, rng);
    init_matrix(p.l2.w, rng);
    init_matrix(p.cls1.w, rng);
    init_matrix(p.cls2.w, rng);
    return p;
}

EfcParams init_efc_params(const Hyper& hp, RandomSource& rng) {
    EfcParams p = make_efc_params(hp);
    init_lstm(p.encoder, rng);
    init_matrix(p.proj.w, rng);
    init_matrix(p.cls1.w, rng);
    init_matrix(p.cls2.w, rng);
    return p;
}

// ---------------------------------------------------------------------------
// LSTM cell

namespace {

void check_lstm_shapes(const Vector& x, const Vector& h, const Vector& c, const LstmParams& p) {
    if (x.size() != p.input_dim()) {
        throw DimensionError("lstm_step: input dimension mismatch");
    }
    if (h.size() != p.hidden() || c.size() != p.hidden()) {
        throw DimensionError("lstm_step: state dimension mismatch");
    }
    if (p.w_x.rows() != 4 * p.hidden() || p.b.size() != 4 * p.hidden()) {
        throw DimensionError("lstm_step: stacked gate shapes inconsistent");
    }
}

inline double sigmoid_scalar(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

} // namespace

LstmStep lstm_step_cached(const Vector& x, const Vector& h, const Vector& c,
                          const LstmParams& p) {
    check_lstm_shapes(x, h, c, p);
    const std::size_t hidden = p.hidden();

    Vector z = p.b;
    {
        // z = w_x x + w_h h + b, stacked gate order [i, f, o, g]
        Vector tmp(4 * hidden);
        matvec_into(tmp, p.w_x, x);
        add_scaled(z, tmp, 1.0);
        matvec_into(tmp, p.w_h, h);
        add_scaled(z, tmp, 1.0);
    }

    LstmStep step;
    step.x = x;
    step.h_prev = h;
    step.c_prev = c;
    step.gate_i.resize(hidden);
    step.gate_f.resize(hidden);
    step.gate_o.resize(hidden);
    step.gate_g.resize(hidden);
    step.c.resize(hidden);
    step.tanh_c.resize(hidden);
    step.h.resize(hidden);

    for (std::size_t k = 0; k < hidden; ++k) {
        const double gi = sigmoid_scalar(z[k]);
        const double gf = sigmoid_scalar(z[hidden + k]);
        const double go = sigmoid_scalar(z[2 * hidden + k]);
        const double gg = std::tanh(z[3 * hidden + k]);
        const double cn = gf * c[k] + gi * gg;
        const double tc = std::tanh(cn);
        step.gate_i[k] = gi;
        step.gate_f[k] = gf;
        step.gate_o[k] = go;
        step.gate_g[k] = gg;
        step.c[k] = cn;
        step.tanh_c[k] = tc;
        step.h[k] = go * tc;
    }
    ensure_finite(step.c, "lstm_step");
    ensure_finite(step.h, "lstm_step");
    return step;
}

std::pair<Vector, Vector> lstm_step(const Vector& x, const Vector& h, const Vector& c,
                                    const LstmParams& p) {
    LstmStep step = lstm_step_cached(x, h, c, p);
    return {std::move(step.h), std::move(step.c)};
}

void lstm_step_backward(const LstmParams& p, const LstmStep& step, const Vector& dh,
                        const Vector& dc, LstmParams& grads, Vector& dx, Vector& dh_prev,
                        Vector& dc_prev) {
    const std::size_t hidden = p.hidden();
    Vector dz(4 * hidden);
    dc_prev.assign(hidden, 0.0);

    for (std::size_t k = 0; k < hidden; ++k) {
        const double gi = step.gate_i[k];
        const double gf = step.gate_f[k];
        const double go = step.gate_o[k];
        const double gg = step.gate_g[k];
        const double tc = step.tanh_c[k];

        const double d_go = dh[k] * tc;
        const double d_c = dc[k] + dh[k] * go * (1.0 - tc * tc);

        const double d_gi = d_c * gg;
        const double d_gf = d_c * step.c_prev[k];
        const double d_gg = d_c * gi;
        dc_prev[k] = d_c * gf;

        dz[k] = d_gi * gi * (1.0 - gi);
        dz[hidden + k] = d_gf * gf * (1.0 - gf);
        dz[2 * hidden + k] = d_go * go * (1.0 - go);
        dz[3 * hidden + k] = d_gg * (1.0 - gg * gg);
    }

    add_outer(grads.w_x, dz, step.x);
    add_outer(grads.w_h, dz, step.h_prev);
    add_scaled(grads.b, dz, 1.0);

    dx.resize(p.input_dim());
    matvec_transposed_into(dx, p.w_x, dz);
    dh_prev.resize(hidden);
    matvec_transposed_into(dh_prev, p.w_h, dz);
}

// ---------------------------------------------------------------------------
// Encoder / decoder

EncodeCache encode_cached(std::span<const Vector> seq, const LstmParams& enc) {
    if (seq.empty()) {
        throw DimensionError("encode: empty input sequence");
    }
    EncodeCache cache;
    cache.steps.reserve(seq.size());
    Vector h(enc.hidden(), 0.0);
    Vector c(enc.hidden(), 0.0);
    for (const Vector& x : seq) {
        cache.steps.push_back(lstm_step_cached(x, h, c, enc));
        h = cache.steps.back().h;
        c = cache.steps.back().c;
    }
    return cache;
}

std::pair<Vector, Vector> encode(std::span<const Vector> seq, const RedParams& p) {
    EncodeCache cache = encode_cached(seq, p.encoder);
    return {cache.final_h(), cache.final_c()};
}

void encode_backward(const LstmParams& enc, const EncodeCache& cache, Vector dh, Vector dc,
                     LstmParams& grads) {
    Vector dx, dh_prev, dc_prev;
    for (std::size_t i = cache.steps.size(); i-- > 0;) {
        lstm_step_backward(enc, cache.steps[i], dh, dc, grads, dx, dh_prev, dc_prev);
        dh = dh_prev;
        dc = dc_prev;
    }
}

DecodeCache decode_cached(const Vector& h, const Vector& c, const RedParams& p,
                          std::size_t t_dec) {
    if (t_dec < 1) {
        throw DimensionError("decode: t_dec must be at least 1");
    }
    DecodeCache cache;
    cache.steps.reserve(t_dec);
    cache.outputs.reserve(t_dec);
    const std::size_t d = p.out_proj.w.rows();
    Vector x(d, 0.0); // first decoder input is the zero vector
    Vector hh = h;
    Vector cc = c;
    for (std::size_t j = 0; j < t_dec; ++j) {
        cache.steps.push_back(lstm_step_cached(x, hh, cc, p.decoder));
        hh = cache.steps.back().h;
        cc = cache.steps.back().c;
        Vector out = p.out_proj.b;
        Vector tmp(d);
        matvec_into(tmp, p.out_proj.w, hh);
        add_scaled(out, tmp, 1.0);
        ensure_finite(out, "decode");
        cache.outputs.push_back(out);
        x = cache.outputs.back(); // self-feeding: next input is this prediction
    }
    return cache;
}

std::vector<Vector> decode(const Vector& h, const Vector& c, const RedParams& p,
                           std::size_t t_dec) {
    return decode_cached(h, c, p, t_dec).outputs;
}

void decode_backward(const RedParams& p, const DecodeCache& cache,
                     std::span<const Vector> d_outputs, RedParams& grads, Vector& dh0,
                     Vector& dc0) {
    const std::size_t t_dec = cache.steps.size();
    if (d_outputs.size() != t_dec) {
        throw DimensionError("decode_backward: gradient count mismatch");
    }
    const std::size_t hidden = p.decoder.hidden();
    Vector dh(hidden, 0.0);
    Vector dc(hidden, 0.0);
    Vector dx_next; // gradient flowing into output j through input j+1
    Vector dx, dh_prev, dc_prev, dh_out(hidden);

    for (std::size_t j = t_dec; j-- > 0;) {
        Vector dout = d_outputs[j];
        if (!dx_next.empty()) {
            add_scaled(dout, dx_next, 1.0);
        }
        // output projection backward
        add_outer(grads.out_proj.w, dout, cache.steps[j].h);
        add_scaled(grads.out_proj.b, dout, 1.0);
        matvec_transposed_into(dh_out, p.out_proj.w, dout);
        add_scaled(dh, dh_out, 1.0);

        lstm_step_backward(p.decoder, cache.steps[j], dh, dc, grads.decoder, dx, dh_prev,
                           dc_prev);
        dh = dh_prev;
        dc = dc_prev;
        dx_next = dx; // feeds the previous step's output (discarded at j == 0)
    }
    dh0 = dh;
    dc0 = dc;
}

// ---------------------------------------------------------------------------
// Two-layer heads

Mlp2Cache mlp2_cached(const AffineParams& l1, const AffineParams& l2, const Vector& v) {
    Mlp2Cache cache;
    cache.input = v;
    Vector a = l1.b;
    Vector tmp(l1.w.rows());
    matvec_into(tmp, l1.w, v);
    add_scaled(a, tmp, 1.0);
    cache.hidden = tanh(a);
    cache.out = l2.b;
    Vector tmp2(l2.w.rows());
    matvec_into(tmp2, l2.w, cache.hidden);
    add_scaled(cache.out, tmp2, 1.0);
    ensure_finite(cache.out, "mlp2");
    return cache;
}

Vector mlp2(const AffineParams& l1, const AffineParams& l2, const Vector& v) {
    return mlp2_cached(l1, l2, v).out;
}

void mlp2_backward(const AffineParams& l1, const AffineParams& l2, const Mlp2Cache& cache,
                   const Vector& dout, AffineParams& g1, AffineParams& g2, Vector* dinput) {
    add_outer(g2.w, dout, cache.hidden);
    add_scaled(g2.b, dout, 1.0);

    Vector dhidden(l2.w.cols());
    matvec_transposed_into(dhidden, l2.w, dout);
    for (std::size_t i = 0; i < dhidden.size(); ++i) {
        dhidden[i] *= 1.0 - cache.hidden[i] * cache.hidden[i];
    }

    add_outer(g1.w, dhidden, cache.input);
    add_scaled(g1.b, dhidden, 1.0);

    if (dinput != nullptr) {
        dinput->resize(l1.w.cols());
        matvec_transposed_into(*dinput, l1.w, dhidden);
    }
}

ClassifyCache classify_with_cached(const AffineParams& l1, const AffineParams& l2,
                                   const Vector& v) {
    ClassifyCache cache;
    cache.mlp = mlp2_cached(l1, l2, v);
    cache.probs = softmax(cache.mlp.out);
    return cache;
}

Vector classify_with(const AffineParams& l1, const AffineParams& l2, const Vector& v) {
    return classify_with_cached(l1, l2, v).probs;
}

void classify_with_backward(const AffineParams& l1, const AffineParams& l2,
                            const ClassifyCache& cache, const Vector& dlogits, AffineParams& g1,
                            AffineParams& g2, Vector& dinput) {
    mlp2_backward(l1, l2, cache.mlp, dlogits, g1, g2, &dinput);
}

ClassifyCache classify_cached(const Vector& v_hat, const RedParams& p) {
    return classify_with_cached(p.cls1, p.cls2, v_hat);
}

Vector classify(const Vector& v_hat, const RedParams& p) {
    return classify_cached(v_hat, p).probs;
}

void classify_backward(const RedParams& p, const ClassifyCache& cache, const Vector& dlogits,
                       RedParams& grads, Vector& dinput) {
    classify_with_backward(p.cls1, p.cls2, cache, dlogits, grads.cls1, grads.cls2, dinput);
}

Mlp2Cache baseline_forward_cached(const Vector& h_enc, const RedParams& p) {
    return mlp2_cached(p.base1, p.base2, h_enc);
}

Vector baseline_forward(const Vector& h_enc, const RedParams& p) {
    return mlp2(p.base1, p.base2, h_enc);
}

void baseline_backward(const RedParams& p, const Mlp2Cache& cache, const Vector& dout,
                       RedParams& grads) {
    // The encoder state is a constant input here; its gradient is dropped.
    mlp2_backward(p.base1, p.base2, cache, dout, grads.base1, grads.base2, nullptr);
}

// ---------------------------------------------------------------------------
// Fixed-horizon variants

Vector fc_anticipate(const Vector& v, const FcParams& p) {
    return mlp2(p.l1, p.l2, v);
}

EfcCache efc_anticipate_cached(std::span<const Vector> seq, const EfcParams& p) {
    EfcCache cache;
    cache.enc = encode_cached(seq, p.encoder);
    cache.out = p.proj.b;
    Vector tmp(p.proj.w.rows());
    matvec_into(tmp, p.proj.w, cache.enc.final_h());
    add_scaled(cache.out, tmp, 1.0);
    ensure_finite(cache.out, "efc_anticipate");
    return cache;
}

Vector efc_anticipate(std::span<const Vector> seq, const EfcParams& p) {
    return efc_anticipate_cached(seq, p).out;
}

void efc_backward(const EfcParams& p, const EfcCache& cache, const Vector& dout,
                  EfcParams& grads) {
    add_outer(grads.proj.w, dout, cache.enc.final_h());
    add_scaled(grads.proj.b, dout, 1.0);
    Vector dh(p.encoder.hidden());
    matvec_transposed_into(dh, p.proj.w, dout);
    Vector dc(p.encoder.hidden(), 0.0);
    encode_backward(p.encoder, cache.enc, std::move(dh), std::move(dc), grads.encoder);
}

} // namespace red
