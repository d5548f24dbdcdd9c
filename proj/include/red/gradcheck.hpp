#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "red/model.hpp"
#include "red/numerics.hpp"

namespace red {

struct GradCheckOptions {
    Hyper hyper;
    std::uint64_t seed = 0;
    double epsilon = 1e-5;
    double tolerance = 1e-5;
    std::size_t windows = 2;
    bool corrupt = false; // test hook: breaks one analytic entry per loss

    GradCheckOptions() {
        hyper.d = 8;
        hyper.h = 12;
        hyper.t_enc = 4;
        hyper.t_dec = 3;
        hyper.c = 3;
        hyper.batch = windows;
    }
};

struct LossCheck {
    std::string loss;
    GradCheckReport report;
    std::string worst_parameter; // tensor name plus flat offset
    bool passed = false;
};

/// Compares the analytic gradient of each training loss (regression,
/// classification, reinforcement surrogate with frozen sample and advantages,
/// baseline regression) against central finite differences over the full
/// flattened parameter vector.
std::vector<LossCheck> run_grad_checks(const GradCheckOptions& options);

bool all_passed(const std::vector<LossCheck>& checks);

/// "tensor[i]" location of a flat parameter index.
std::string describe_parameter(const RedParams& params, std::size_t flat_index);

} // namespace red
