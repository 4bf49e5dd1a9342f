#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace memadapt {

/// mt19937_64 with explicit samplers so draws are bit-stable across
/// standard libraries (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    /// Standard normal via Box-Muller (two uniform draws per sample).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw std::runtime_error("rng: malformed serialized state");
    }

    /// Derives an independent stream seed (splitmix64 over seed and stream id).
    static uint64_t derive_seed(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace memadapt
