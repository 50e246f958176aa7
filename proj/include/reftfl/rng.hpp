#pragma once

#include <array>
#include <cstdint>

namespace reftfl {

/**
 * Deterministic PRNG with a platform-independent stream.
 *
 * The stream is specified bit-exactly so that the same seed reproduces the
 * same experiment on any machine:
 *   - state seeding: four outputs of splitmix64 applied to the 64-bit seed;
 *   - generator: xoshiro256** (Blackman & Vigna 2018), 64-bit outputs;
 *   - uniform(): top 53 bits of next_u64(), scaled by 2^-53 into [0, 1);
 *   - uniform_below(b): rejection sampling on next_u64(), unbiased;
 *   - gaussian(): Marsaglia polar method, drawing uniform pairs until
 *     acceptance; the second normal of a pair is returned by the next call.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();
    double uniform();
    std::uint64_t uniform_below(std::uint64_t bound);
    double gaussian();

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_;
    double spare_gaussian_ = 0.0;
    bool has_spare_gaussian_ = false;
};

// Derives an independent stream seed (per client, per task, ...) from a base
// seed; defined as splitmix64(splitmix64(base) + stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace reftfl
