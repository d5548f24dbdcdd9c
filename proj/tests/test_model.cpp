#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "red/model.hpp"
#include "red/training.hpp"

using namespace red;

namespace {

Hyper tiny_hyper() {
    Hyper hp;
    hp.t_enc = 4;
    hp.t_dec = 3;
    hp.d = 8;
    hp.h = 12;
    hp.c = 3;
    return hp;
}

template <typename P, typename LossFn>
GradCheckReport check_against_fd(const P& params, const P& analytic_grads, LossFn&& loss) {
    const Vector theta = flatten_params(params);
    const auto f = [&](const Vector& flat) {
        P probe = params;
        unflatten_params(flat, probe);
        return loss(probe);
    };
    const Vector numeric = finite_diff_grad(f, theta, 1e-5);
    return grad_check_report(flatten_params(analytic_grads), numeric);
}

template <typename P> P zeroed(const P& like) {
    P z = like;
    visit_tensors(z, [](const char*, auto& t) {
        auto s = detail::tensor_span(t);
        std::fill(s.begin(), s.end(), 0.0);
    });
    return z;
}

std::vector<Vector> random_sequence(std::size_t steps, std::size_t dim, RandomSource& rng) {
    std::vector<Vector> seq(steps, Vector(dim));
    for (Vector& v : seq) {
        for (double& x : v) {
            x = rng.normal();
        }
    }
    return seq;
}

} // namespace

TEST_CASE("hyperparameter validation") {
    Hyper hp = tiny_hyper();
    CHECK_NOTHROW(hp.validate());
    hp.t_dec = 0;
    CHECK_THROWS_AS(hp.validate(), DimensionError);
    hp = tiny_hyper();
    hp.h = 0;
    CHECK_THROWS_AS(hp.validate(), DimensionError);
    CHECK(tiny_hyper().chunk_seconds() == doctest::Approx(0.25));
}

TEST_CASE("lstm step with zero parameters") {
    Hyper hp;
    hp.d = 1;
    hp.h = 1;
    RedParams p = make_red_params(hp);

    SUBCASE("zero cell stays zero") {
        auto [h, c] = lstm_step({0.7}, {0.0}, {0.0}, p.encoder);
        CHECK(h == Vector{0.0});
        CHECK(c == Vector{0.0});
    }
    SUBCASE("unit cell decays through the gates") {
        auto [h, c] = lstm_step({0.0}, {0.0}, {1.0}, p.encoder);
        CHECK(c[0] == 0.5);                       // f*c + i*g = 0.5*1 + 0.5*0
        CHECK(h[0] == 0.5 * std::tanh(0.5));      // o * tanh(c')
        CHECK(h[0] == doctest::Approx(0.23105857863000487).epsilon(1e-15));
    }
    SUBCASE("shape mismatches are rejected") {
        CHECK_THROWS_AS(lstm_step({0.1, 0.2}, {0.0}, {0.0}, p.encoder), DimensionError);
        CHECK_THROWS_AS(lstm_step({0.1}, {0.0, 0.0}, {0.0}, p.encoder), DimensionError);
    }
}

TEST_CASE("lstm step gradient matches finite differences") {
    Hyper hp;
    hp.d = 3;
    hp.h = 4;
    RandomSource rng(5);
    RedParams p = init_red_params(hp, rng);
    const Vector x{0.3, -0.8, 0.5};
    const Vector h0{0.1, -0.2, 0.4, 0.0};
    const Vector c0{-0.3, 0.2, 0.0, 0.7};

    RedParams grads = zeroed(p);
    LstmStep step = lstm_step_cached(x, h0, c0, p.encoder);
    Vector dh(step.h.size());
    for (std::size_t i = 0; i < dh.size(); ++i) {
        dh[i] = 2.0 * step.h[i];
    }
    Vector dx, dh_prev, dc_prev;
    lstm_step_backward(p.encoder, step, dh, Vector(hp.h, 0.0), grads.encoder, dx, dh_prev,
                       dc_prev);

    const auto report = check_against_fd(p, grads, [&](const RedParams& probe) {
        auto [h, c] = lstm_step(x, h0, c0, probe.encoder);
        return squared_norm(h);
    });
    CHECK(report.max_relative_error < 1e-5);
}

TEST_CASE("encode folds the cell over the input") {
    Hyper hp = tiny_hyper();
    RandomSource rng(6);
    RedParams p = init_red_params(hp, rng);

    SUBCASE("length one equals a single step from the zero state") {
        const std::vector<Vector> seq = random_sequence(1, hp.d, rng);
        auto [h1, c1] = encode(seq, p);
        auto [h2, c2] = lstm_step(seq[0], Vector(hp.h, 0.0), Vector(hp.h, 0.0), p.encoder);
        CHECK(h1 == h2);
        CHECK(c1 == c2);
    }
    SUBCASE("zero parameters give a zero hidden state for any input") {
        RedParams zero = make_red_params(hp);
        const std::vector<Vector> seq = random_sequence(hp.t_enc, hp.d, rng);
        auto [h, c] = encode(seq, zero);
        CHECK(h == Vector(hp.h, 0.0));
    }
    SUBCASE("deterministic on repeated calls") {
        const std::vector<Vector> seq = random_sequence(hp.t_enc, hp.d, rng);
        auto [h1, c1] = encode(seq, p);
        auto [h2, c2] = encode(seq, p);
        CHECK(h1 == h2);
        CHECK(c1 == c2);
    }
    SUBCASE("empty sequences are rejected") {
        CHECK_THROWS_AS(encode(std::vector<Vector>{}, p), DimensionError);
    }
}

TEST_CASE("decode emits exactly t_dec self-fed outputs") {
    Hyper hp = tiny_hyper();
    RandomSource rng(7);
    RedParams p = init_red_params(hp, rng);
    const std::vector<Vector> seq = random_sequence(hp.t_enc, hp.d, rng);
    auto [h, c] = encode(seq, p);

    CHECK(decode(h, c, p, 1).size() == 1);
    CHECK(decode(h, c, p, 8).size() == 8);
    CHECK_THROWS_AS(decode(h, c, p, 0), DimensionError);

    // Zero LSTM weights freeze the hidden state at zero, so every output is
    // exactly the projection bias.
    RedParams frozen = make_red_params(hp);
    for (std::size_t i = 0; i < hp.d; ++i) {
        frozen.out_proj.b[i] = 0.25 * static_cast<double>(i + 1);
    }
    const std::vector<Vector> outputs = decode(Vector(hp.h, 0.0), Vector(hp.h, 0.0), frozen, 5);
    for (const Vector& out : outputs) {
        CHECK(out == frozen.out_proj.b);
    }
}

TEST_CASE("decode gradient flows back through the encoder seam") {
    Hyper hp = tiny_hyper();
    RandomSource rng(8);
    RedParams p = init_red_params(hp, rng);
    const std::vector<Vector> seq = random_sequence(hp.t_enc, hp.d, rng);

    RedParams grads = zeroed(p);
    EncodeCache enc = encode_cached(seq, p.encoder);
    DecodeCache dec = decode_cached(enc.final_h(), enc.final_c(), p, hp.t_dec);
    std::vector<Vector> d_outputs(hp.t_dec);
    for (std::size_t j = 0; j < hp.t_dec; ++j) {
        d_outputs[j] = dec.outputs[j];
        for (double& g : d_outputs[j]) {
            g *= 2.0;
        }
    }
    Vector dh0, dc0;
    decode_backward(p, dec, d_outputs, grads, dh0, dc0);
    encode_backward(p.encoder, enc, dh0, dc0, grads.encoder);

    const auto report = check_against_fd(p, grads, [&](const RedParams& probe) {
        auto [h, c] = encode(seq, probe);
        double loss = 0.0;
        for (const Vector& out : decode(h, c, probe, hp.t_dec)) {
            loss += squared_norm(out);
        }
        return loss;
    });
    CHECK(report.max_relative_error < 1e-5);
}

TEST_CASE("classification head produces calibrated distributions") {
    Hyper hp = tiny_hyper();
    RandomSource rng(9);
    RedParams p = init_red_params(hp, rng);

    SUBCASE("zero weights mean a uniform distribution") {
        RedParams zero = make_red_params(hp);
        const Vector probs = classify(Vector(hp.d, 0.4), zero);
        REQUIRE(probs.size() == hp.c + 1);
        for (double q : probs) {
            CHECK(q == doctest::Approx(1.0 / static_cast<double>(hp.c + 1)).epsilon(1e-15));
        }
    }
    SUBCASE("probabilities sum to one for random inputs") {
        for (int trial = 0; trial < 20; ++trial) {
            Vector v(hp.d);
            for (double& x : v) {
                x = rng.normal();
            }
            const Vector probs = classify(v, p);
            double sum = 0.0;
            for (double q : probs) {
                CHECK(q >= 0.0);
                sum += q;
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
    }
    SUBCASE("shifting every logit leaves the distribution unchanged") {
        Vector v(hp.d, 0.3);
        const Vector base = classify(v, p);
        RedParams shifted = p;
        for (double& b : shifted.cls2.b) {
            b += 3.7;
        }
        const Vector moved = classify(v, shifted);
        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("baseline head emits one value per anticipation step") {
    Hyper hp = tiny_hyper();
    RandomSource rng(10);
    RedParams p = init_red_params(hp, rng);
    const Vector h_enc = random_sequence(1, hp.h, rng)[0];

    CHECK(baseline_forward(h_enc, make_red_params(hp)) == Vector(hp.t_dec, 0.0));
    CHECK(baseline_forward(h_enc, p).size() == hp.t_dec);

    // Gradient of |b|^2 against finite differences; the encoder state is a
    // constant input by contract.
    RedParams grads = zeroed(p);
    Mlp2Cache cache = baseline_forward_cached(h_enc, p);
    Vector dout(hp.t_dec);
    for (std::size_t j = 0; j < hp.t_dec; ++j) {
        dout[j] = 2.0 * cache.out[j];
    }
    baseline_backward(p, cache, dout, grads);
    const auto report = check_against_fd(p, grads, [&](const RedParams& probe) {
        return squared_norm(baseline_forward(h_enc, probe));
    });
    CHECK(report.max_relative_error < 1e-5);
}

TEST_CASE("fc anticipation") {
    Hyper hp = tiny_hyper();
    RandomSource rng(11);
    FcParams p = init_fc_params(hp, rng);
    Vector v(hp.d, 0.5);

    SUBCASE("zero weights pass the output bias through") {
        FcParams zero = make_fc_params(hp);
        for (std::size_t i = 0; i < hp.d; ++i) {
            zero.l2.b[i] = -0.5 + static_cast<double>(i);
        }
        CHECK(fc_anticipate(v, zero) == zero.l2.b);
    }
    SUBCASE("deterministic") {
        CHECK(fc_anticipate(v, p) == fc_anticipate(v, p));
    }
    SUBCASE("gradient matches finite differences") {
        FcParams grads = zeroed(p);
        Mlp2Cache cache = mlp2_cached(p.l1, p.l2, v);
        Vector dout(hp.d);
        for (std::size_t i = 0; i < hp.d; ++i) {
            dout[i] = 2.0 * cache.out[i];
        }
        mlp2_backward(p.l1, p.l2, cache, dout, grads.l1, grads.l2, nullptr);
        const auto report = check_against_fd(p, grads, [&](const FcParams& probe) {
            return squared_norm(fc_anticipate(v, probe));
        });
        CHECK(report.max_relative_error < 1e-5);
    }
}

TEST_CASE("efc anticipation") {
    Hyper hp = tiny_hyper();
    RandomSource rng(12);
    EfcParams p = init_efc_params(hp, rng);
    const std::vector<Vector> seq = random_sequence(hp.t_enc, hp.d, rng);

    SUBCASE("zero weights pass the projection bias through") {
        EfcParams zero = make_efc_params(hp);
        zero.proj.b.assign(hp.d, 1.25);
        CHECK(efc_anticipate(seq, zero) == zero.proj.b);
    }
    SUBCASE("deterministic and rejects empty input") {
        CHECK(efc_anticipate(seq, p) == efc_anticipate(seq, p));
        CHECK_THROWS_AS(efc_anticipate(std::vector<Vector>{}, p), DimensionError);
    }
    SUBCASE("gradient matches finite differences") {
        EfcParams grads = zeroed(p);
        EfcCache cache = efc_anticipate_cached(seq, p);
        Vector dout(hp.d);
        for (std::size_t i = 0; i < hp.d; ++i) {
            dout[i] = 2.0 * cache.out[i];
        }
        efc_backward(p, cache, dout, grads);
        const auto report = check_against_fd(p, grads, [&](const EfcParams& probe) {
            return squared_norm(efc_anticipate(seq, probe));
        });
        CHECK(report.max_relative_error < 1e-5);
    }
}

TEST_CASE("end-to-end gradient of regression plus classification") {
    // d=8, H=12, T_enc=4, T_dec=3, C=3 is the reference shape for the
    // whole-pipeline gradient contract.
    Hyper hp = tiny_hyper();
    hp.batch = 2;
    RandomSource rng(13);
    RedParams p = init_red_params(hp, rng);

    std::vector<TrainingWindow> windows(2);
    for (TrainingWindow& w : windows) {
        w.input = random_sequence(hp.t_enc, hp.d, rng);
        w.target_feats = random_sequence(hp.t_dec, hp.d, rng);
        w.target_labels = {0, 2, 2};
        w.video_id = "t";
    }

    BatchFlags flags;
    flags.classification = true;
    RedParams grads = zeroed(p);
    red_batch_gradients(p, hp, windows, flags, nullptr, grads);

    const auto report = check_against_fd(p, grads, [&](const RedParams& probe) {
        return red_batch_loss(probe, hp, windows, flags);
    });
    CHECK(report.max_relative_error < 1e-5);
}

TEST_CASE("shared classification head is identical across variants") {
    Hyper hp = tiny_hyper();
    RandomSource rng(14);
    RedParams p = init_red_params(hp, rng);
    Vector v(hp.d, -0.2);
    CHECK(classify(v, p) == classify_with(p.cls1, p.cls2, v));
}

TEST_CASE("parameter flattening round-trips") {
    Hyper hp = tiny_hyper();
    RandomSource rng(15);
    RedParams p = init_red_params(hp, rng);
    const Vector flat = flatten_params(p);
    CHECK(flat.size() == param_count(p));
    RedParams q = make_red_params(hp);
    unflatten_params(flat, q);
    CHECK(flatten_params(q) == flat);
    Vector truncated(flat.begin(), flat.end() - 1);
    CHECK_THROWS_AS(unflatten_params(truncated, q), DimensionError);
}
