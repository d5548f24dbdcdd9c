#pragma once

#include <cstdint>
#include <random>

namespace red {

/// Seeded random source with portable draw algorithms. All distributions are
/// implemented by hand on top of mt19937_64 so that a given seed yields the
/// same stream on every platform.
class RandomSource {
  public:
    explicit RandomSource(std::uint64_t seed);

    // Independent sub-stream keyed by up to three integers. Used to keep
    // window sampling, parameter init, and policy sampling on separate
    // streams so enabling one does not shift another.
    static RandomSource derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0,
                               std::uint64_t b = 0);

    std::uint64_t bits();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01();

    /// Uniform integer in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n);

    /// Standard normal via Box-Muller (pairs are cached).
    double normal();

  private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

} // namespace red
