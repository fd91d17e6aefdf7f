#pragma once

#include "enkf/gaussian.hpp"
#include "enkf/models.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace enkf {

/// w = G(u) + eta, eta ~ N(0, Gamma), u ~ prior.
struct InverseProblem {
    VectorMap G;
    Vector w;
    Matrix gamma;
    Gaussian prior;
    std::optional<Matrix> L;  ///< set when G(u) = L u

    Eigen::Index dim_u() const noexcept { return prior.dim(); }
    Eigen::Index dim_w() const noexcept { return w.size(); }
};

InverseProblem linear_problem(const Matrix& L, const Vector& w, const Matrix& gamma, const Gaussian& prior);

/// 0.5 |w - G(u)|^2_Gamma
double misfit(const InverseProblem& p, const Vector& u);

/// Extended problem G_R(u) = (G(u), u), w_R = (w, m0), Gamma_R = diag(Gamma, C0).
struct RegularizedProblem {
    VectorMap G_R;
    Vector w_R;
    Matrix gamma_R;
    std::optional<Matrix> L_R;
    Eigen::Index dim_u = 0;
    Eigen::Index dim_w = 0;  ///< of the original problem

    double misfit(const Vector& u) const;
    /// Same prior, extended forward map and data.
    InverseProblem as_problem(const Gaussian& prior) const;
};

RegularizedProblem regularize(const InverseProblem& p);

/// Posterior for linear G: precision L^T Gamma^{-1} L + C0^{-1}.
Gaussian linear_posterior(const Matrix& L, const InverseProblem& p);

struct GridSpec {
    Vector lo;
    Vector hi;
    std::vector<int> points;  ///< per dimension
};

/// Tensor-grid density proportional to exp(-t Phi(u)) rho0(u).
struct GridDensity {
    std::vector<Vector> axes;
    Vector log_density;  ///< unnormalised, log rho0 - t Phi
    Vector weights;      ///< normalised masses

    std::size_t size() const noexcept { return static_cast<std::size_t>(weights.size()); }
    Vector point(Eigen::Index flat) const;
    Gaussian moments() const;
};

GridDensity grid_posterior(const InverseProblem& p, double t, const GridSpec& grid);

/// u_j + dt C^{uG} (dt C^{GG} + Gamma)^{-1} (w + eta_j - G(u_j)), with the
/// data perturbations eta supplied column-wise.
Ensemble eki_transport_update(const InverseProblem& p, const Ensemble& e, double dt,
                              const Matrix& eta, Scaling scaling = Scaling::Sample);

/// eta_j ~ N(0, Gamma/dt) keyed (DataPerturbation, step, j).
Ensemble eki_transport_step(const InverseProblem& p, const Ensemble& e, double dt,
                            const SeededStream& stream, std::uint64_t step,
                            Scaling scaling = Scaling::Sample);

/// Transport step with dt = 1 (prior-to-posterior in one step, optimizer when iterated).
Ensemble eki_step(const InverseProblem& p, const Ensemble& e, const SeededStream& stream,
                  std::uint64_t step, Scaling scaling = Scaling::Sample);

struct IterInfParams {
    double alpha = 0.5;
    double sigma_p = 0.0;  ///< sigma'
    double gamma_p = 1.0;  ///< gamma'
    Vector r0;
    Matrix Sigma;
};

/// Prediction alpha u + (1 - alpha) r0 + xi, analysis against w + eta with
/// noise gamma' Gamma. Keys: (Prediction, step, j), (DataPerturbation, step, j).
Ensemble eki_iterinf_step(const InverseProblem& p, const IterInfParams& q, const Ensemble& e,
                          const SeededStream& stream, std::uint64_t step,
                          Scaling scaling = Scaling::Sample);

/// Gaussian moment map of the same iteration for linear G.
Gaussian iterinf_moment_step(const Matrix& L, const InverseProblem& p, const IterInfParams& q,
                             const Gaussian& g);

/// Fixed point of iterinf_moment_step (iterated until the update is below tol).
Gaussian iterinf_fixed_point(const Matrix& L, const InverseProblem& p, const IterInfParams& q,
                             double tol = 1e-14, int max_iter = 100000);

/// |(1 - alpha) C^_inf^{-1} (m - r0) - (1/gamma') L^T Gamma^{-1} (w - L m)|.
double tikhonov_stationarity_residual(const Matrix& L, const InverseProblem& p,
                                      const IterInfParams& q, const Gaussian& fixed);

enum class Inflation { Stochastic, Deterministic };

/// Iteration on the Tikhonov-extended problem with prediction covariance
/// alpha C_n (or sqrt(1 + alpha) deviation inflation) and analysis noise
/// (1 + 1/alpha) Gamma_R.
Ensemble eki_bayes_iterinf_step(const InverseProblem& p, double alpha, const Ensemble& e,
                                const SeededStream& stream, std::uint64_t step,
                                Inflation inflation = Inflation::Stochastic,
                                Scaling scaling = Scaling::Sample);

/// Prediction stage alone (exposed for inflation checks).
Ensemble bayes_iterinf_predict(double alpha, const Ensemble& e, const SeededStream& stream,
                               std::uint64_t step, Inflation inflation,
                               Scaling scaling = Scaling::Sample);

/// Gaussian moment map of the Bayesian iteration for linear G.
Gaussian bayes_iterinf_moment_step(const Matrix& L, const InverseProblem& p, double alpha,
                                   const Gaussian& g);

/// RK4 integration of dm/dt = C L_R^T Gamma_R^{-1}(w_R - L_R m), dC/dt = C - C B_R C.
Gaussian bayes_iterinf_ode(const Matrix& L, const InverseProblem& p, const Gaussian& g0,
                           double t, double dt);

/// Empirical drift -[C^{uG} Gamma^{-1}(G(u) - w) + C C0^{-1}(u - m0)], one column per member.
Matrix eks_drift(const InverseProblem& p, const Ensemble& e, Scaling scaling = Scaling::Sample);

/// u += drift dt + sqrt(2 dt) C^{1/2} xi, keys (Diffusion, step, j).
Ensemble eks_step(const InverseProblem& p, const Ensemble& e, double dt, const SeededStream& stream,
                  std::uint64_t step, Scaling scaling = Scaling::Sample);

enum class Sampler { MonteCarlo, MomentMatched };

/// Gaussian projected inversion step with quadrature by sampling.
Gaussian gpf_inversion_step(const InverseProblem& p, const Gaussian& g, double dt,
                            Eigen::Index quad_size, const SeededStream& stream, std::uint64_t step,
                            Sampler sampler = Sampler::MomentMatched);

struct RateReport {
    std::vector<double> t;
    /// sup over d(0) of t |B^{1/2} d(t)|^2 / |B^{1/2} d(0)|^2, d = u - m a particle deviation
    std::vector<double> rate_ratio;
    std::vector<double> bias_residual;  ///< |m(t) - u_true - closed form|
    bool rate_holds = false;
    double max_bias_residual = 0.0;
    /// smallest eigenvalue of B^{1/2} C0 B^{1/2}; the 1/t bound holds on [1, inf) once it is >= 1
    double min_gain_eigenvalue = 0.0;
};

/// Integrates dm/dt = -C B (m - u_true), dC/dt = -C B C and the deviation map
/// dD/dt = -C B D / 2 (D(0) = I) with RK4, then compares with the closed-form
/// bias; u_true = L^{-1} w.
RateReport analyze_linear_rates(const Matrix& L, const Matrix& gamma, const Gaussian& prior,
                                const Vector& w, const std::vector<double>& t_grid, double dt = 1e-4);

struct TimeAveragedMapConfig {
    L96Params model{};
    double T = 20.0;
    double tau = 0.01;
    double dt_inner = 1e-3;
    double v0_variance = 40.0;
};

/// (mean over l and n of v, mean over l of the temporal variance) for forcing u,
/// starting from v0 ~ N(0, v0_variance I) drawn from `rng`.
Vector time_averaged_forward_map(const TimeAveragedMapConfig& cfg, double u, Rng& rng);

/// Wraps the map as a pure function of u: the initial condition is seeded from
/// (seed, bits of u).
VectorMap make_time_averaged_forward(const TimeAveragedMapConfig& cfg, std::uint64_t seed);

/// Trace-collapse stopping rule: trace(C_n) < tol trace(C_0).
bool ensemble_collapsed(const Ensemble& e, const Matrix& c0, double tol);

}  // namespace enkf
