#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace emgfed {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Seed-splitting rule: an independent stream seed is the hash of
// (root seed, purpose string, index, subindex). Streams for distinct
// purposes never overlap, so adding a pipeline stage does not perturb
// the draws of earlier stages.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::uint64_t index = 0, std::uint64_t subindex = 0) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the purpose label
    for (char c : purpose) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t state = h;
    state ^= splitmix64(state) ^ root;
    state ^= splitmix64(state) ^ index;
    state ^= splitmix64(state) ^ subindex;
    return splitmix64(state);
}

// xoshiro256++ with splitmix64 seeding. The <random> engines are portable but
// the standard distributions are implementation-defined, so uniform/gaussian
// draws are generated here to keep runs bit-identical across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // N(0, 1), Box-Muller with a cached spare (fixed two-draw consumption).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so log() stays finite
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Unbiased integer in [0, n); Lemire's multiply-shift with rejection.
    std::uint64_t uniform_int(std::uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            const std::uint64_t threshold = (0ull - n) % n;
            while (lo < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const std::size_t j = uniform_int(i);
            std::swap(values[i - 1], values[j]);
        }
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace emgfed
