#include "red/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace red {

namespace {

// SplitMix64 finalizer; mixes seed material into well-separated streams.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

RandomSource::RandomSource(std::uint64_t seed) : engine_(seed) {}

RandomSource RandomSource::derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t a,
                                  std::uint64_t b) {
    std::uint64_t s = mix64(seed);
    s = mix64(s ^ mix64(stream));
    s = mix64(s ^ mix64(a));
    s = mix64(s ^ mix64(b));
    return RandomSource(s);
}

std::uint64_t RandomSource::bits() {
    return engine_();
}

double RandomSource::uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t RandomSource::uniform_index(std::size_t n) {
    if (n == 0) {
        throw std::invalid_argument("uniform_index: n must be positive");
    }
    // Rejection sampling keeps the draw unbiased for any n.
    const std::uint64_t span = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return static_cast<std::size_t>(x % span);
}

double RandomSource::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) {
        u1 = uniform01();
    }
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

} // namespace red
