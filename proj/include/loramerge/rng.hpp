#pragma once

#include <cstdint>
#include <string_view>

namespace loramerge {

// Deterministic RNG plumbing shared by every randomized operation in the
// toolkit. The contract: a per-element uniform stream is obtained from a
// xoshiro256** generator whose state is expanded by splitmix64 from
//
//     master_seed XOR fnv1a64(tensor_name) XOR fnv1a64(adapter_id)
//
// and consumed in flat-index order. This keys randomness to content identity
// rather than list position or thread schedule, so merge outputs are
// bit-reproducible under permutation and parallel execution.

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

struct SplitMix64 {
    std::uint64_t state;

    std::uint64_t next() noexcept {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
};

class Xoshiro256ss {
public:
    explicit Xoshiro256ss(std::uint64_t seed) noexcept {
        SplitMix64 sm{seed};
        for (auto& word : s_) word = sm.next();
    }

    std::uint64_t next() noexcept {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) via the top 53 bits.
    double next_double() noexcept {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform index in [0, n). Scaled-double construction keeps a single
    // uniform primitive; the 2^-53 bias is irrelevant at our scales.
    std::uint64_t next_index(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(next_double() * static_cast<double>(n));
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
};

inline Xoshiro256ss keyed_stream(std::uint64_t master_seed,
                                 std::string_view tensor_name,
                                 std::string_view adapter_id) noexcept {
    return Xoshiro256ss(master_seed ^ fnv1a64(tensor_name) ^ fnv1a64(adapter_id));
}

// Mixes a continual-merge step index into a master seed so each step draws an
// independent but reproducible stream.
inline std::uint64_t derive_step_seed(std::uint64_t master_seed, std::uint64_t step) noexcept {
    SplitMix64 sm{master_seed ^ (step * 0x9e3779b97f4a7c15ull)};
    return sm.next();
}

} // namespace loramerge
