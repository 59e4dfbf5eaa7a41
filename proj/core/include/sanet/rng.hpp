#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace sanet {

/// Seeded generator with platform-independent output.
///
/// The engine is std::mt19937_64, whose sequence the standard pins exactly.
/// Distributions are implemented here because the std:: ones are
/// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    bool bernoulli(double p) { return uniform() < p; }
    /// Standard normal via the Box-Muller transform.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Textual engine state (round-trips through set_state).
    std::string state() const;
    void set_state(const std::string& text);

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sanet
