#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ufnet {

// splitmix64 finalizer; used to derive independent substreams from one seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Stream tags so that e.g. weight init and batch shuffling never share draws.
enum class RngStream : std::uint64_t {
    WeightInit = 1,
    Shuffle = 2,
    Dropout = 3,
    McRound = 4,
    Split = 5,
    Synth = 6,
    Oversample = 7,
    Search = 8,
    Conformal = 9,
};

// Deterministic RNG. mt19937_64's output sequence is fixed by the standard;
// the distributions below are implemented explicitly because the std
// distribution objects are implementation-defined and would break the
// bit-reproducibility contract across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    static Rng for_stream(std::uint64_t seed, RngStream stream, std::uint64_t index = 0) {
        return Rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(stream)), index));
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1. Rejection sampling, unbiased.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller; caches the spare deviate.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates; std::shuffle's draw pattern is unspecified.
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace ufnet
