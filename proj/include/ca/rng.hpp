#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ca {

// splitmix64; used both as a generator seeder and as a string hash mixer.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** — deterministic across platforms, unlike the distributions in <random>.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    uint64_t next() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return next() % n; }

    std::vector<double> uniform_vector(size_t count, double lo, double hi) {
        std::vector<double> out(count);
        for (auto& x : out) x = uniform(lo, hi);
        return out;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

// Derives independent named streams from one root seed, so e.g. dataset
// sampling and weight init can be reseeded without disturbing each other.
class SeedSplitter {
public:
    explicit SeedSplitter(uint64_t root) : root_(root) {}

    uint64_t seed_for(std::string_view name) const {
        uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the stream name
        for (char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ULL;
        }
        uint64_t mix = root_ ^ h;
        return splitmix64(mix);
    }

    Rng stream(std::string_view name) const { return Rng(seed_for(name)); }

private:
    uint64_t root_;
};

}  // namespace ca
