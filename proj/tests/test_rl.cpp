#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "red/rl.hpp"

using namespace red;

namespace {

std::vector<int> labels_of(const char* digits) {
    std::vector<int> out;
    for (const char* p = digits; *p != '\0'; ++p) {
        out.push_back(*p - '0');
    }
    return out;
}

double forward_sum(const Vector& r, std::size_t from) {
    double acc = 0.0;
    for (std::size_t t = from; t < r.size(); ++t) {
        acc += r[t];
    }
    return acc;
}

} // namespace

TEST_CASE("transfer time finds the background-to-action switch") {
    CHECK(transfer_time(labels_of("001111")) == 2);
    CHECK_FALSE(transfer_time(labels_of("000000")).has_value());
    CHECK(transfer_time(labels_of("111111")) == 0);
    CHECK(transfer_time(labels_of("110011")) == 0);  // starts mid-action
    CHECK(transfer_time(labels_of("002200")) == 2);
    CHECK(transfer_time(labels_of("010020")) == 1);  // first transfer wins
}

TEST_CASE("step rewards reproduce the worked sequences") {
    const std::vector<int> gt = labels_of("011111");

    const Vector early = step_rewards(labels_of("001110"), gt, 1.0);
    const Vector expected_early{0.0, 0.0, 1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0, 0.0};
    REQUIRE(early.size() == expected_early.size());
    for (std::size_t t = 0; t < early.size(); ++t) {
        CHECK(early[t] == expected_early[t]); // exact: same division, same operands
    }
    const double early_total = forward_sum(early, 0);
    CHECK(std::fabs(early_total - 13.0 / 12.0) < 1e-15);

    const Vector late = step_rewards(labels_of("000111"), gt, 1.0);
    const Vector expected_late{0.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 4.0, 1.0 / 5.0};
    for (std::size_t t = 0; t < late.size(); ++t) {
        CHECK(late[t] == expected_late[t]);
    }
    const double late_total = forward_sum(late, 0);
    CHECK(std::fabs(late_total - 47.0 / 60.0) < 1e-15);

    // Earlier correct anticipation earns strictly more at sequence level.
    CHECK(early_total > late_total);
}

TEST_CASE("reward edge cases") {
    // Perfect prediction from the transfer onward; the transfer step earns alpha.
    const std::vector<int> gt = labels_of("111111");
    const Vector r = step_rewards(gt, gt, 2.5);
    CHECK(r[0] == 2.5);

    CHECK_THROWS_AS(step_rewards(labels_of("01"), labels_of("011"), 1.0), DimensionError);

    // All-background ground truth earns nothing anywhere.
    const Vector zero = step_rewards(labels_of("011111"), labels_of("000000"), 1.0);
    for (double x : zero) {
        CHECK(x == 0.0);
    }
}

TEST_CASE("action-only mode drops correct background matches after the transfer") {
    const std::vector<int> gt = labels_of("011000");
    const std::vector<int> pred = labels_of("011000");
    const Vector literal = step_rewards(pred, gt, 1.0, false);
    CHECK(literal[3] == 1.0 / 3.0);
    CHECK(literal[5] == 1.0 / 5.0);
    const Vector action_only = step_rewards(pred, gt, 1.0, true);
    CHECK(action_only[1] == 1.0);
    CHECK(action_only[2] == 1.0 / 2.0);
    CHECK(action_only[3] == 0.0);
    CHECK(action_only[4] == 0.0);
    CHECK(action_only[5] == 0.0);
}

TEST_CASE("rewards are bounded and maximal at the transfer") {
    RandomSource rng(21);
    const double alpha = 1.5;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t len = 2 + rng.uniform_index(10);
        std::vector<int> gt(len), pred(len);
        for (std::size_t t = 0; t < len; ++t) {
            gt[t] = static_cast<int>(rng.uniform_index(4));
            pred[t] = static_cast<int>(rng.uniform_index(4));
        }
        const Vector r = step_rewards(pred, gt, alpha);
        const auto t_f = transfer_time(gt);
        for (std::size_t t = 0; t < len; ++t) {
            CHECK(r[t] >= 0.0);
            CHECK(r[t] <= alpha);
            if (t_f.has_value() && t < *t_f) {
                CHECK(r[t] == 0.0);
            }
        }
        if (t_f.has_value() && pred[*t_f] == gt[*t_f]) {
            CHECK(r[*t_f] == alpha);
        }
    }
}

TEST_CASE("making the first correct action prediction earlier never hurts") {
    RandomSource rng(22);
    int strict_cases = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t len = 3 + rng.uniform_index(8);
        std::vector<int> gt(len), pred(len);
        for (std::size_t t = 0; t < len; ++t) {
            gt[t] = static_cast<int>(rng.uniform_index(3));
            pred[t] = static_cast<int>(rng.uniform_index(3));
        }
        const auto t_f = transfer_time(gt);
        if (!t_f.has_value()) {
            continue;
        }
        std::size_t first_correct = len;
        for (std::size_t t = 0; t < len; ++t) {
            if (gt[t] != 0 && pred[t] == gt[t]) {
                first_correct = t;
                break;
            }
        }
        if (first_correct == len || first_correct == 0) {
            continue;
        }
        std::vector<int> shifted = pred;
        const bool changes = shifted[first_correct - 1] != gt[first_correct - 1];
        shifted[first_correct - 1] = gt[first_correct - 1];

        const double base = forward_sum(step_rewards(pred, gt, 1.0), 0);
        const double moved = forward_sum(step_rewards(shifted, gt, 1.0), 0);
        CHECK(moved >= base);
        if (changes && first_correct - 1 >= *t_f) {
            CHECK(moved > base);
            ++strict_cases;
        }
    }
    CHECK(strict_cases > 50); // the strict branch was actually exercised
}

TEST_CASE("returns are forward suffix sums") {
    const Vector r{0.0, 0.0, 1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0, 0.0};
    const Vector R = returns(r);
    REQUIRE(R.size() == r.size());
    for (std::size_t t = 0; t < r.size(); ++t) {
        CHECK(R[t] == forward_sum(r, t)); // exact: same summation order
    }
    CHECK(std::fabs(R[0] - 13.0 / 12.0) < 1e-15);
    CHECK(std::fabs(R[3] - 7.0 / 12.0) < 1e-15);
    CHECK(R[5] == 0.0);

    CHECK(returns(Vector{0.0, 0.0, 0.0}) == Vector{0.0, 0.0, 0.0});
    CHECK(returns(Vector{0.0, 0.0, 2.0, 0.0}) == Vector{2.0, 2.0, 2.0, 0.0});
}

TEST_CASE("returns of step rewards match a brute-force double loop exactly") {
    RandomSource rng(23);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t len = 1 + rng.uniform_index(12);
        std::vector<int> gt(len), pred(len);
        for (std::size_t t = 0; t < len; ++t) {
            gt[t] = static_cast<int>(rng.uniform_index(4));
            pred[t] = static_cast<int>(rng.uniform_index(4));
        }
        const double alpha = 0.5 + rng.uniform01();
        const Vector R = returns(step_rewards(pred, gt, alpha));

        // Brute force, straight from the definition.
        const auto t_f = transfer_time(gt);
        for (std::size_t t = 0; t < len; ++t) {
            double expected = 0.0;
            for (std::size_t u = t; u < len; ++u) {
                double r_u = 0.0;
                if (t_f.has_value() && u >= *t_f && pred[u] == gt[u]) {
                    r_u = alpha / static_cast<double>(u + 1 - *t_f);
                }
                expected += r_u;
            }
            CHECK(R[t] == expected);
        }
    }
}

TEST_CASE("sequence sampling honors one-hot rows and seeds") {
    const std::vector<Vector> onehots{{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}};
    RandomSource rng(3);
    const SampledSequence seq = sample_sequence(onehots, rng);
    CHECK(seq.labels == std::vector<int>{1, 2, 0});
    for (double lp : seq.logp) {
        CHECK(lp == 0.0);
    }

    const std::vector<Vector> probs{{0.25, 0.25, 0.5}, {0.1, 0.6, 0.3}};
    RandomSource a(42), b(42);
    CHECK(sample_sequence(probs, a).labels == sample_sequence(probs, b).labels);

    const std::vector<Vector> bad{{0.5, 0.6}};
    RandomSource c(1);
    CHECK_THROWS_AS(sample_sequence(bad, c), NumericError);
}

TEST_CASE("uniform sampling frequencies are within three sigmas") {
    const std::size_t n = 100000;
    const std::size_t classes = 4;
    const std::vector<Vector> uniform{Vector(classes, 1.0 / classes)};
    RandomSource rng(99);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        RandomSource fresh(rng.bits());
        counts[static_cast<std::size_t>(sample_sequence(uniform, fresh).labels[0])] += 1;
    }
    const double p = 1.0 / classes;
    const double mean = n * p;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    for (std::size_t k = 0; k < classes; ++k) {
        CHECK(std::fabs(static_cast<double>(counts[k]) - mean) <= 3.0 * sigma);
    }
}

TEST_CASE("reinforce surrogate values") {
    CHECK(reinforce_surrogate({-1.0, -2.0}, {1.0, 1.0}, {1.0, 1.0}) == 0.0);
    CHECK(reinforce_surrogate({-1.0, -2.0}, {2.0, 1.0}, {1.0, 1.0}) == 1.0);
    CHECK_THROWS_AS(reinforce_surrogate({-1.0}, {1.0, 2.0}, {0.0, 0.0}), DimensionError);
}

TEST_CASE("baseline loss is a mean squared error") {
    CHECK(baseline_loss({1.0, 2.0}, {1.0, 2.0}) == 0.0);
    CHECK(baseline_loss({0.0, 0.0}, {1.0, 1.0}) == 1.0);
    CHECK_THROWS_AS(baseline_loss({0.0}, {1.0, 1.0}), DimensionError);

    // Over constant predictions the optimum is the mean of the returns.
    const Vector R{0.0, 1.0, 5.0};
    double mean = (R[0] + R[1] + R[2]) / 3.0;
    const auto at = [&](double b) { return baseline_loss(Vector(3, b), R); };
    CHECK(at(mean) < at(mean + 0.1));
    CHECK(at(mean) < at(mean - 0.1));
}
