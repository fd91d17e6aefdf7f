#pragma once

#include "enkf/random.hpp"

#include <Eigen/Core>

namespace enkf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Gaussian {
    Vector mean;
    Matrix cov;

    Eigen::Index dim() const noexcept { return mean.size(); }
    /// Throws DimensionMismatch / NonSymmetric / NumericalError on broken invariants.
    void validate() const;
};

/// Joint law of (state v, data y) in block form.
struct JointGaussian {
    Vector mean_v;
    Vector mean_y;
    Matrix c_vv;
    Matrix c_vy;
    Matrix c_yy;

    Eigen::Index dim_v() const noexcept { return mean_v.size(); }
    Eigen::Index dim_y() const noexcept { return mean_y.size(); }
    Gaussian assembled() const;
    void validate() const;
};

/// d x J particle matrix, one member per column.
class Ensemble {
public:
    Ensemble() = default;
    explicit Ensemble(Matrix members);

    Eigen::Index dim() const noexcept { return x_.rows(); }
    Eigen::Index size() const noexcept { return x_.cols(); }

    const Matrix& members() const noexcept { return x_; }
    Matrix& members() noexcept { return x_; }
    auto member(Eigen::Index j) const { return x_.col(j); }
    auto member(Eigen::Index j) { return x_.col(j); }

    Vector mean() const;

private:
    Matrix x_;
};

enum class Scaling { Population, Sample };

/// 1/J or 1/(J-1).
double covariance_factor(Scaling s, Eigen::Index members);

struct PsdRoot {
    Matrix root;
    int clipped = 0;  ///< eigenvalues zeroed by the clipping rule
};

/// (M + M^T)/2.
Matrix symmetrize(const Matrix& m);

/// Symmetric root of a symmetric PSD matrix. Eigenvalues below
/// 1e-12 trace/d are zeroed. Throws NonSymmetric beyond `sym_tol` (relative).
PsdRoot psd_sqrt(const Matrix& m, double sym_tol = 1e-12);

/// Pseudo-inverse square root acting on the numerical range of m.
Matrix psd_inv_sqrt(const Matrix& m, double sym_tol = 1e-12);

/// Numerical rank under the same clipping rule as psd_sqrt.
Eigen::Index psd_rank(const Matrix& m);

struct ConditionOptions {
    bool pseudo_inverse = false;
    double pinv_rtol = 1e-12;      ///< relative eigenvalue cut for the pseudo-inverse
    double max_condition = 1e14;
};

/// A * S^{-1} for symmetric PD S (Cholesky, jittered on failure).
Matrix right_solve_spd(const Matrix& a, const Matrix& s, const ConditionOptions& opt = {});

/// c_vy * c_yy^{-1}.
Matrix kalman_gain(const Matrix& c_vy, const Matrix& c_yy, const ConditionOptions& opt = {});

/// Gaussian conditioning of v on y = y_obs.
Gaussian condition_joint(const JointGaussian& j, const Vector& y_obs, const ConditionOptions& opt = {});

/// Centred members, unscaled.
Matrix deviations(const Ensemble& e);

/// V with V V^T equal to the empirical covariance.
Matrix scaled_deviations(const Ensemble& e, Scaling s = Scaling::Sample);

Gaussian empirical_moments(const Ensemble& e, Scaling s = Scaling::Sample);
Matrix cross_covariance(const Ensemble& a, const Ensemble& b, Scaling s = Scaling::Sample);

/// Independent draws; member j uses the stream key (phase, step, j).
Ensemble sample(const Gaussian& g, Eigen::Index n, const SeededStream& stream,
                Phase phase = Phase::Prior, std::uint64_t step = 0);

/// Draws whose empirical mean and covariance (under `s`) equal g exactly.
/// Requires n > dim.
Ensemble sample_matched(const Gaussian& g, Eigen::Index n, const SeededStream& stream,
                        Phase phase = Phase::Prior, std::uint64_t step = 0,
                        Scaling s = Scaling::Sample);

/// Zero-mean noise columns with covariance `cov` (n columns, key per column).
Matrix noise_matrix(const Matrix& cov_root, Eigen::Index n, const SeededStream& stream,
                    Phase phase, std::uint64_t step);

/// Noise columns with zero empirical mean, zero empirical cross-covariance
/// with the rows of `against` and empirical covariance exactly `cov`.
Matrix decorrelated_noise(const Matrix& against, const Matrix& cov, const SeededStream& stream,
                          Phase phase, std::uint64_t step, Scaling s = Scaling::Sample);

/// Loewner check: x^T (b - a) x >= -tol |x|^2 via the smallest eigenvalue of b - a.
bool loewner_leq(const Matrix& a, const Matrix& b, double tol);

}  // namespace enkf
