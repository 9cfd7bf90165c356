// SPDX-License-Identifier: Apache-2.0
//
// Deterministic splitmix64 streams. Every random draw in the library comes
// from a stream keyed by (seed, names..., integers...), so results do not
// depend on construction order or platform.

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace xmodal {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Mix a key into a state; one splitmix scramble keeps short keys well spread.
inline std::uint64_t mix_key(std::uint64_t state, std::uint64_t key) {
    std::uint64_t s = state ^ (key + 0x9E3779B97F4A7C15ull);
    return splitmix64_next(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) { splitmix64_next(state_); }

    // Derived stream: same seed + same keys -> same stream, independent of
    // how many draws other streams made.
    Rng derive(std::string_view name) const { return Rng(mix_key(state_, fnv1a64(name)), tag{}); }
    Rng derive(std::uint64_t key) const { return Rng(mix_key(state_, key), tag{}); }

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Lemire reduction: unbiased enough for our
    // purposes and bit-stable across platforms.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Deterministic Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    struct tag {};
    Rng(std::uint64_t raw_state, tag) : state_(raw_state) {}
    std::uint64_t state_;
};

}  // namespace xmodal
