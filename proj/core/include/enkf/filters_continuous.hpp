#pragma once

#include "enkf/gaussian.hpp"
#include "enkf/models.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace enkf {

/// dv = f dt + sqrt(Sigma) dW,  dz = h(v) dt + sqrt(Gamma) dB.
struct ContinuousModel {
    VectorField f;
    Matrix diffusion;   ///< Sigma
    VectorMap h;
    Matrix obs_noise;   ///< Gamma
    std::optional<Matrix> F;  ///< linear drift, if any
    std::optional<Matrix> H;  ///< linear observation, if any

    Eigen::Index dim() const noexcept { return diffusion.rows(); }
    Eigen::Index dim_y() const noexcept { return obs_noise.rows(); }
};

ContinuousModel linear_continuous(const Matrix& F, const Matrix& H, const Matrix& sigma,
                                  const Matrix& gamma);

/// Uniform-step path; states[i] lives at time i * dt.
struct SdePath {
    double dt = 0.0;
    std::vector<Vector> states;

    std::size_t size() const noexcept { return states.size(); }
    double time(std::size_t i) const noexcept { return dt * static_cast<double>(i); }
    /// states[k + 1] - states[k]
    Vector increment(std::size_t k) const;
};

struct TruthAndData {
    SdePath truth;
    SdePath data;  ///< z, with z(0) = 0
};

/// Euler-Maruyama for truth and data. Keys: (TruthProcess | TruthObservation, k, 0).
TruthAndData synthesize_truth(const ContinuousModel& cm, const Vector& v0, double T, double dt,
                              const SeededStream& stream);

/// Keeps every factor-th sample (increments aggregate exactly).
SdePath subsample(const SdePath& path, std::size_t factor);

/// Piecewise-linear refinement of a coarse path onto step dt_fine.
SdePath interpolate_linear(const SdePath& coarse, double dt_fine);

/// Euler steps of dv = f dt + K (dz - h(v) dt) on the data grid.
SdePath continuous_3dvar(const ContinuousModel& cm, const Matrix& K, const Vector& v0,
                         const SdePath& data);

struct GaussianPath {
    double dt = 0.0;
    std::vector<Gaussian> states;
};

/// Euler integration of the Kalman-Bucy mean and Riccati equations.
GaussianPath kalman_bucy(const Matrix& F, const Matrix& H, const Matrix& sigma, const Matrix& gamma,
                         const Vector& m0, const Matrix& C0, const SdePath& data);

/// Discrete Kalman filter with M = I + dt F, H_d = dt H, Sigma_d = dt Sigma,
/// Gamma_d = dt Gamma and data increments as observations.
GaussianPath rescaled_kalman_filter(const Matrix& F, const Matrix& H, const Matrix& sigma,
                                    const Matrix& gamma, const Vector& m0, const Matrix& C0,
                                    const SdePath& data);

/// One Euler-Maruyama step of the stochastic-innovation ensemble Kalman-Bucy
/// filter. Keys: (Diffusion, step, j) and (DataPerturbation, step, j).
Ensemble enkbf_stochastic_step(const ContinuousModel& cm, const Ensemble& e, const Vector& dz,
                               double dt, const SeededStream& stream, std::uint64_t step,
                               Scaling scaling = Scaling::Sample);

/// Deterministic-innovation variant: dz - (h(v) + mean h) dt / 2.
Ensemble enkbf_deterministic_step(const ContinuousModel& cm, const Ensemble& e, const Vector& dz,
                                  double dt, const SeededStream& stream, std::uint64_t step,
                                  Scaling scaling = Scaling::Sample);

}  // namespace enkf
