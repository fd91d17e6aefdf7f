#pragma once

#include "enkf/gaussian.hpp"

#include <string>
#include <vector>

namespace enkf {

/// v = A v^ + B y^ + a
struct StochasticTransport {
    Matrix A;
    Matrix B;
    Vector a;

    Vector apply(const Vector& v_hat, const Vector& y_hat) const { return A * v_hat + B * y_hat + a; }
};

/// v = R v^ + S h^ + r
struct DeterministicTransport {
    Matrix R;
    Matrix S;
    Vector r;

    Vector apply(const Vector& v_hat, const Vector& h_hat) const { return R * v_hat + S * h_hat + r; }
};

/// Free matrix (B or S), orthogonal factor (V or Z) and eigen-branch signs.
/// Empty members mean zero / identity / all positive.
struct FamilySelector {
    Matrix free;
    Matrix orthogonal;
    Vector signs;
};

/// Member of the stochastic family selected by `sel`. Throws NotInFamily when
/// C - B C~ B^T is not positive definite.
StochasticTransport build_stochastic(const JointGaussian& j, const Vector& y_obs,
                                     const FamilySelector& sel = {});

/// `j` carries (C^, C^{vh}, C^{hh}) with mean_y the mean of h; the target
/// conditions on data with covariance C^{hh} + gamma.
DeterministicTransport build_deterministic(const JointGaussian& j, const Matrix& gamma,
                                           const Vector& y_obs, const FamilySelector& sel = {});

/// Orthogonal factor that makes build_stochastic return the requested A for
/// the given B (polar factor of C'^{-1/2} F C^^{-1/2}).
Matrix stochastic_orthogonal_for(const JointGaussian& j, const Matrix& B, const Matrix& A);
Matrix deterministic_orthogonal_for(const JointGaussian& j, const Matrix& gamma, const Matrix& S,
                                    const Matrix& R);

/// B = 0 and A = C^{1/2} (C^{1/2} C^ C^{1/2})^{-1/2} C^{1/2}. W is validated
/// but does not enter the formula.
StochasticTransport optimal_pair(const JointGaussian& j, const Vector& y_obs, const Matrix& W);

/// E |T(v^, y^) - v^|_W^2 under the Gaussian source, in closed form.
double transport_cost(const JointGaussian& j, const StochasticTransport& t, const Matrix& W);

/// Exact pushforward moments of the Gaussian source.
Gaussian pushforward(const JointGaussian& j, const StochasticTransport& t);
Gaussian pushforward(const JointGaussian& j, const DeterministicTransport& t);

struct BlueEstimate {
    Vector estimate;
    Matrix covariance;
};
BlueEstimate blue(const JointGaussian& j, const Vector& y_obs);

/// Conditioned target of the deterministic family: C^{hh} replaced by C^{hh} + gamma.
Gaussian deterministic_target(const JointGaussian& j, const Matrix& gamma, const Vector& y_obs);

Matrix random_orthogonal(Eigen::Index n, Rng& rng);
JointGaussian random_joint(Eigen::Index dv, Eigen::Index dy, Rng& rng);
FamilySelector random_stochastic_selector(const JointGaussian& j, Rng& rng);
FamilySelector random_deterministic_selector(const JointGaussian& j, const Matrix& gamma, Rng& rng);

struct SuiteCheck {
    std::string name;
    bool pass = false;
    double value = 0.0;      ///< worst observed discrepancy
    double tolerance = 0.0;
};

struct TransportSuiteConfig {
    int members = 50;
    Eigen::Index samples = 100000;
    int weights = 3;
    Eigen::Index dim_v = 3;
    Eigen::Index dim_y = 2;
};

/// Second-order checks for random family members, the optimal-pair cost
/// comparison and the BLUE identity.
std::vector<SuiteCheck> transport_family_suite(std::uint64_t seed, const TransportSuiteConfig& cfg = {});

}  // namespace enkf
