#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <random>

namespace enkf {

/// Phase tags partition the random streams of one run.
enum class Phase : std::uint32_t {
    TruthInit = 1,
    TruthProcess,
    TruthObservation,
    FilterInit,
    Forecast,
    Analysis,
    Quadrature,
    Prior,
    DataPerturbation,
    Prediction,
    Diffusion,
    Verification,
    User = 1000,
};

/// xoshiro256** seeded through splitmix64. Cheap to construct, so a fresh
/// engine is built for every (phase, step, member) key.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) noexcept;

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept;

    double normal() { return normal_(*this); }
    double uniform() { return uniform_(*this); }

    /// Vector of n i.i.d. standard normals.
    Eigen::VectorXd normals(Eigen::Index n);

private:
    std::uint64_t s_[4];
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Master seed; engines are derived deterministically from stream keys.
class SeededStream {
public:
    explicit SeededStream(std::uint64_t seed = 0) noexcept : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    Rng engine(Phase phase, std::uint64_t step, std::uint64_t member) const noexcept;

    /// Child stream, e.g. for the k-th replicate of an experiment.
    SeededStream derive(std::uint64_t tag) const noexcept;

private:
    std::uint64_t seed_;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

}  // namespace enkf
