#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace vseg {

/// All randomness in a run funnels through one master seed. Module-local
/// generators are forked from it by name so that adding a consumer never
/// perturbs the draws seen by existing ones.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::mt19937_64& engine() { return engine_; }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal(double mu = 0.0, double sigma = 1.0) {
        return std::normal_distribution<double>(mu, sigma)(engine_);
    }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    bool coin() { return uniform_int(0, 1) == 1; }

    /// Deterministic child generator: same (seed, name) always yields the
    /// same stream regardless of what other forks were taken.
    static Rng fork(std::uint64_t seed, std::string_view name) {
        // FNV-1a over the name, mixed with the seed.
        std::uint64_t h = 1469598103934665603ull;
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        return Rng(h);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace vseg
