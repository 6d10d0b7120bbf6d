#pragma once

// Seeded random streams. Every Monte-Carlo quantity in the library draws from
// an Rng that the caller owns, so results are a pure function of the seed.

#include <cstdint>
#include <random>

namespace copdet {

// SplitMix64 finalizer; used to derive independent sub-stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

    // Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform() {
        for (;;) {
            const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
            if (u > 0.0) return u;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t next_u64() { return engine_(); }

    // Independent child stream keyed by `tag`; does not advance this stream.
    Rng substream(std::uint64_t tag) const {
        return Rng(mix_seed(seed_state() ^ mix_seed(tag)));
    }

private:
    std::uint64_t seed_state() const {
        std::mt19937_64 copy = engine_;
        return copy();
    }

    std::mt19937_64 engine_;
};

}  // namespace copdet
