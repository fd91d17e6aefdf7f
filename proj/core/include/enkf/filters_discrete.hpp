#pragma once

#include "enkf/gaussian.hpp"
#include "enkf/models.hpp"

#include <cstdint>

namespace enkf {

/// Innovation used in the analysis of a particle filter.
enum class Innovation {
    Control,        ///< y - h(v)
    Stochastic,     ///< y - h(v) - eta
    Deterministic,  ///< y - (h(v) + mean h)/2
};

struct FilterOptions {
    Scaling scaling = Scaling::Sample;
    bool strict = false;  ///< EAKF (state form): refuse rank-deficient forecasts
    ConditionOptions condition{};
};

/// Psi(v) + K (y - h(Psi(v))).
Vector threedvar_step(const DynamicsModel& dyn, const ObservationModel& obs, const Matrix& K,
                      const Vector& v, const Vector& y_obs);

/// 3DVAR driven by simulated noise: v^ = Psi(v) + xi, v = v^ + K (y - h(v^) - eta).
Vector noisy_threedvar_step(const DynamicsModel& dyn, const ObservationModel& obs, const Matrix& K,
                            const Vector& v, const Vector& y_obs, const SeededStream& stream,
                            std::uint64_t step);

Gaussian kalman_predict(const Matrix& M, const Matrix& sigma, const Gaussian& prior);
Gaussian kalman_update(const Matrix& H, const Matrix& gamma, const Gaussian& predicted,
                       const Vector& y_obs, const ConditionOptions& opt = {});
Gaussian kalman_step(const Matrix& M, const Matrix& H, const Matrix& sigma, const Matrix& gamma,
                     const Gaussian& prior, const Vector& y_obs, const ConditionOptions& opt = {});

enum class QuadratureRule { MonteCarlo, GaussHermite };

struct GpfOptions {
    QuadratureRule rule = QuadratureRule::MonteCarlo;
    int hermite_points = 40;  ///< per dimension; product rule limited to 3 dimensions
    ConditionOptions condition{};
};

/// Gaussian projected filter: moments of (v^, y^) under the pushed-forward
/// prior, then Gaussian conditioning on y_obs.
Gaussian gpf_step(const DynamicsModel& dyn, const ObservationModel& obs, const Gaussian& prior,
                  const Vector& y_obs, Eigen::Index quad_size, const SeededStream& stream,
                  std::uint64_t step, const GpfOptions& opt = {});

/// Gauss-Hermite nodes/weights for the standard normal (weights sum to 1).
struct HermiteRule {
    Vector nodes;
    Vector weights;
};
HermiteRule gauss_hermite(int n);

/// Member-wise Psi(v) + xi with keys (Forecast, step, j).
Ensemble forecast(const DynamicsModel& dyn, const Ensemble& e, const SeededStream& stream,
                  std::uint64_t step);

/// Columns h(v_j).
Matrix observe(const ObservationModel& obs, const Ensemble& e);

Ensemble enkf_analysis(const ObservationModel& obs, const Ensemble& fc, const Vector& y_obs,
                       const SeededStream& stream, std::uint64_t step,
                       Innovation innovation = Innovation::Stochastic, const FilterOptions& opt = {});
Ensemble enkf_step(const DynamicsModel& dyn, const ObservationModel& obs, const Ensemble& e,
                   const Vector& y_obs, const SeededStream& stream, std::uint64_t step,
                   Innovation innovation = Innovation::Stochastic, const FilterOptions& opt = {});

Ensemble eakf_state_analysis(const ObservationModel& obs, const Ensemble& fc, const Vector& y_obs,
                             const FilterOptions& opt = {});
Ensemble eakf_state_step(const DynamicsModel& dyn, const ObservationModel& obs, const Ensemble& e,
                         const Vector& y_obs, const SeededStream& stream, std::uint64_t step,
                         const FilterOptions& opt = {});

/// K~ = C^{vh} [S + Gamma^{1/2} S^{1/2}]^{-1}, S = C^{hh} + Gamma.
Matrix eakf_obs_gain(const Matrix& c_vh, const Matrix& c_hh, const Matrix& gamma);

Ensemble eakf_obs_analysis(const ObservationModel& obs, const Ensemble& fc, const Vector& y_obs,
                           const FilterOptions& opt = {});
Ensemble eakf_obs_step(const DynamicsModel& dyn, const ObservationModel& obs, const Ensemble& e,
                       const Vector& y_obs, const SeededStream& stream, std::uint64_t step,
                       const FilterOptions& opt = {});

/// J x J weights S = I + Q diag(shrink) Q^T + shift 1^T; analysis = forecast * S.
struct TransformWeights {
    Matrix Q;       ///< J x r, orthonormal columns
    Vector shrink;  ///< (1 + s^2)^{-1/2} - 1
    Vector shift;   ///< J

    Eigen::Index size() const noexcept { return shift.size(); }
    Matrix dense() const;
    /// The symmetric root Z = I + Q diag(shrink) Q^T.
    Matrix transform() const;
    Vector column_sums() const;
    Matrix apply(const Matrix& members) const;
};

struct EtkfResult {
    Ensemble ensemble;
    TransformWeights weights;
};

EtkfResult etkf_analysis(const ObservationModel& obs, const Ensemble& fc, const Vector& y_obs,
                         const FilterOptions& opt = {});
EtkfResult etkf_step(const DynamicsModel& dyn, const ObservationModel& obs, const Ensemble& e,
                     const Vector& y_obs, const SeededStream& stream, std::uint64_t step,
                     const FilterOptions& opt = {});

/// C^ - C^{vh}(C^{hh} + Gamma)^{-1} C^{vh}^T from a forecast ensemble.
Matrix square_root_target_covariance(const ObservationModel& obs, const Ensemble& fc,
                                     Scaling scaling = Scaling::Sample);

}  // namespace enkf
