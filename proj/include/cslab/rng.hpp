#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cslab {

// Owned seeded generator; every stochastic component takes one of these
// (or a seed) so runs are reproducible end to end.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal(double mean, double stddev) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) { // inclusive
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), engine_);
    }

    std::uint64_t next_seed() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
};

} // namespace cslab
