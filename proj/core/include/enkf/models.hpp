#pragma once

#include "enkf/gaussian.hpp"

#include <array>
#include <functional>
#include <optional>
#include <vector>

namespace enkf {

using VectorField = std::function<Vector(const Vector&)>;
using VectorMap = std::function<Vector(const Vector&)>;

/// Cubic closure m(x) = c0 + c1 x + c2 x^2 + c3 x^3 for the singlescale model.
struct CubicClosure {
    std::array<double, 4> coeffs{};

    double operator()(double x) const noexcept
    {
        return coeffs[0] + x * (coeffs[1] + x * (coeffs[2] + x * coeffs[3]));
    }
};

/// Coefficients fitted once with fit_default_closure at the default multiscale
/// parameters (grid [-10, 15], step 0.5, T_avg = 20, seed 7).
CubicClosure default_closure();

struct L96Params {
    int L = 9;
    double F = 10.0;
    double h_v = -0.8;
    std::function<double(double)> closure = default_closure();
};

struct L96MultiscaleParams {
    int L = 9;
    int J = 8;
    double eps = 0.0078125;  // 2^-7
    double h_v = -0.8;
    double h_w = 1.0;
    double F = 10.0;
};

struct DynamicsModel {
    VectorMap flow;         ///< Psi over one observation interval
    Matrix process_noise;   ///< Sigma
    std::optional<Matrix> linear;  ///< M when flow is linear

    Eigen::Index dim() const noexcept { return process_noise.rows(); }
};

struct ObservationModel {
    VectorMap h;
    Matrix noise;  ///< Gamma
    std::optional<Matrix> linear;  ///< H when h is linear

    Eigen::Index dim_y() const noexcept { return noise.rows(); }
};

DynamicsModel linear_dynamics(const Matrix& m, const Matrix& sigma);
ObservationModel linear_observation(const Matrix& h, const Matrix& gamma);

Vector l96_vector_field(const L96Params& p, const Vector& v);

struct MultiscaleDerivative {
    Vector slow;
    Matrix fast;  ///< L x J
};

/// w is L x J: row l holds the fast variables attached to slow variable l.
MultiscaleDerivative l96ms_vector_field(const L96MultiscaleParams& p, const Vector& v, const Matrix& w);

/// Packs (v, w) as [v; vec_rowwise(w)] so rk4_flow can integrate the pair.
VectorField l96ms_packed_field(const L96MultiscaleParams& p);

/// Classical RK4 with n = round(tau / dt_inner) equal substeps.
/// Throws NonFinite once |v|_inf exceeds 1e6.
Vector rk4_flow(const VectorField& field, Vector v0, double tau, double dt_inner);

/// dt_inner = min(tau, 1e-3).
DynamicsModel l96_dynamics(const L96Params& p, double tau, double sigma2);

/// Averages the fast subsystem with the slow variable frozen at each grid
/// value, then least-squares fits a cubic.
struct ClosureFit {
    CubicClosure closure;
    std::vector<double> grid;
    std::vector<double> averages;
};
ClosureFit fit_default_closure(const L96MultiscaleParams& p, const std::vector<double>& v_grid,
                               double t_avg, double t_spinup = 2.0, std::uint64_t seed = 7,
                               double fast_substeps = 20.0);
std::vector<double> default_closure_grid();

struct L96ObservationOperators {
    Matrix H;  ///< 6 x 9
    Matrix K;  ///< 9 x 6
};
/// Observes components 1,2,4,5,7,8 (1-based) of a 9-dimensional state.
L96ObservationOperators l96_observation();

}  // namespace enkf
