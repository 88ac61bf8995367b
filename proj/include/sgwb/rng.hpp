#pragma once

// Deterministic, platform-independent randomness. std::mt19937 would be portable
// but the std distributions are not; everything here is pinned bit-for-bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace sgwb {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// xoshiro256++ seeded through splitmix64.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& si : s_) si = splitmix64(sm);
        have_spare_ = false;
    }

    // Derive an independent stream: hash the tag into the seed space.
    Rng fork(uint64_t tag) const {
        uint64_t sm = s_[0] ^ (s_[3] + 0x632be59bd9b4e019ull * (tag + 1));
        uint64_t seed = splitmix64(sm);
        return Rng(seed);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n) {
        // Lemire's method with rejection.
        uint64_t x = next_u64();
        __uint128_t m = __uint128_t(x) * n;
        uint64_t l = uint64_t(m);
        if (l < n) {
            uint64_t t = (0 - n) % n;
            while (l < t) {
                x = next_u64();
                m = __uint128_t(x) * n;
                l = uint64_t(m);
            }
        }
        return uint64_t(m >> 64);
    }

    // Standard normal via Box-Muller (cached spare).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Serializable state: 4 engine words + Box-Muller spare.
    std::array<uint64_t, 6> save() const {
        std::array<uint64_t, 6> out{s_[0], s_[1], s_[2], s_[3], 0, 0};
        if (have_spare_) {
            out[4] = 1;
            static_assert(sizeof(double) == sizeof(uint64_t));
            uint64_t bits;
            __builtin_memcpy(&bits, &spare_, 8);
            out[5] = bits;
        }
        return out;
    }

    void restore(const std::array<uint64_t, 6>& st) {
        for (int i = 0; i < 4; ++i) s_[i] = st[i];
        have_spare_ = st[4] != 0;
        if (have_spare_) __builtin_memcpy(&spare_, &st[5], 8);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> s_{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace sgwb
