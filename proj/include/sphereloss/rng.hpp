#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace sphereloss {

// Counter-based splittable PRNG built on the SplitMix64 finalizer
// (Steele/Lea/Flood constants). Output i of a stream with key k is
// mix64(k + (i+1)*GOLDEN), so values are random-access: datasets stay
// bit-identical no matter how generation is ordered or parallelized.
// std:: distributions are avoided on purpose; their output is
// implementation-defined and would break golden-file tests.

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t key) : key_(key) {}

    // Derives an independent stream; split(a) != split(b) for a != b.
    [[nodiscard]] Rng split(std::uint64_t stream) const {
        return Rng(mix64(key_ ^ mix64((stream + 1) * kGoldenGamma)));
    }

    std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGoldenGamma); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller; consumes exactly two draws.
    double next_gaussian() {
        // (0, 1] so the log is finite
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here;
    // what matters is that the result is identical on every platform.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// In-place Fisher-Yates driven by the given stream.
template <typename Container>
void shuffle(Container& c, Rng& rng) {
    for (std::size_t i = c.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(c[i - 1], c[j]);
    }
}

// Stream tags used across the library so derived streams never collide.
namespace stream_tag {
inline constexpr std::uint64_t kCenters = 1;
inline constexpr std::uint64_t kSamples = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kGlyph = 5;
inline constexpr std::uint64_t kPairs = 6;
inline constexpr std::uint64_t kDistractors = 7;
}  // namespace stream_tag

}  // namespace sphereloss
