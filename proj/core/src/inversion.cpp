#include "enkf/inversion.hpp"

#include "enkf/errors.hpp"
#include "enkf/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <bit>
#include <cmath>
#include <numbers>

namespace enkf {

namespace {

Matrix forward_columns(const VectorMap& G, const Matrix& u, Eigen::Index rows)
{
    Matrix out(rows, u.cols());
    parallel_for(u.cols(), [&](std::ptrdiff_t j) {
        const Vector g = G(u.col(j));
        if (g.size() != rows) throw DimensionMismatch("forward map output has unexpected size");
        out.col(j) = g;
    });
    return out;
}

Matrix forward_columns(const InverseProblem& p, const Matrix& u)
{
    if (p.L) return *p.L * u;
    return forward_columns(p.G, u, p.dim_w());
}

// u_j + C^{uG} (C^{GG} + noise)^{-1} (w + eta_j - G(u_j))
Ensemble kalman_inversion_update(const InverseProblem& p, const Matrix& u, const Matrix& noise,
                                 const Matrix& eta, Scaling scaling)
{
    const Eigen::Index J = u.cols();
    if (J < 2) throw TooFewMembers("ensemble inversion needs at least two members");
    if (eta.rows() != p.dim_w() || eta.cols() != J)
        throw DimensionMismatch("ensemble inversion: perturbation shape mismatch");
    const Matrix g = forward_columns(p, u);
    const double c = covariance_factor(scaling, J);
    const Matrix du = u.colwise() - Vector(u.rowwise().mean());
    const Matrix dg = g.colwise() - Vector(g.rowwise().mean());
    const Matrix c_ug = c * du * dg.transpose();
    const Matrix c_gg = symmetrize(c * dg * dg.transpose());
    const Matrix K = right_solve_spd(c_ug, symmetrize(c_gg + noise));
    Matrix innov = (eta - g).colwise() + p.w;
    return Ensemble(u + K * innov);
}

Matrix perturbations(const Matrix& cov, Eigen::Index n, const SeededStream& stream, Phase phase,
                     std::uint64_t step)
{
    const Matrix root = psd_sqrt(cov, 1e-10).root;
    const Eigen::Index d = cov.rows();
    Matrix z(d, n);
    parallel_for(n, [&](std::ptrdiff_t j) {
        Rng rng = stream.engine(phase, step, static_cast<std::uint64_t>(j));
        z.col(j) = rng.normals(d);
    });
    return root * z;
}

Matrix spd_inverse(const Matrix& a)
{
    Eigen::LLT<Matrix> llt(symmetrize(a));
    if (llt.info() != Eigen::Success) throw NumericalError("matrix is not positive definite");
    return symmetrize(llt.solve(Matrix::Identity(a.rows(), a.cols())));
}

}  // namespace

InverseProblem linear_problem(const Matrix& L, const Vector& w, const Matrix& gamma, const Gaussian& prior)
{
    if (L.rows() != w.size() || L.cols() != prior.dim() || gamma.rows() != w.size())
        throw DimensionMismatch("linear_problem: shapes disagree");
    InverseProblem p;
    p.G = [L](const Vector& u) -> Vector { return L * u; };
    p.w = w;
    p.gamma = gamma;
    p.prior = prior;
    p.L = L;
    return p;
}

double misfit(const InverseProblem& p, const Vector& u)
{
    const Vector r = p.w - p.G(u);
    return 0.5 * r.dot(p.gamma.llt().solve(r));
}

double RegularizedProblem::misfit(const Vector& u) const
{
    const Vector r = w_R - G_R(u);
    return 0.5 * r.dot(gamma_R.llt().solve(r));
}

InverseProblem RegularizedProblem::as_problem(const Gaussian& prior) const
{
    InverseProblem p;
    p.G = G_R;
    p.w = w_R;
    p.gamma = gamma_R;
    p.prior = prior;
    p.L = L_R;
    return p;
}

RegularizedProblem regularize(const InverseProblem& p)
{
    const Eigen::Index du = p.dim_u(), dw = p.dim_w();
    RegularizedProblem r;
    r.dim_u = du;
    r.dim_w = dw;
    r.G_R = [G = p.G, dw, du](const Vector& u) -> Vector {
        Vector out(dw + du);
        out << G(u), u;
        return out;
    };
    r.w_R.resize(dw + du);
    r.w_R << p.w, p.prior.mean;
    r.gamma_R = Matrix::Zero(dw + du, dw + du);
    r.gamma_R.topLeftCorner(dw, dw) = p.gamma;
    r.gamma_R.bottomRightCorner(du, du) = p.prior.cov;
    if (p.L) {
        Matrix lr(dw + du, du);
        lr << *p.L, Matrix::Identity(du, du);
        r.L_R = lr;
    }
    return r;
}

Gaussian linear_posterior(const Matrix& L, const InverseProblem& p)
{
    if (L.rows() != p.dim_w() || L.cols() != p.dim_u())
        throw DimensionMismatch("linear_posterior: L shape mismatch");
    const Matrix c0inv = spd_inverse(p.prior.cov);
    const Matrix lg = right_solve_spd(L.transpose(), p.gamma);  // L^T Gamma^{-1}
    const Matrix precision = symmetrize(lg * L + c0inv);
    Eigen::LLT<Matrix> llt(precision);
    Gaussian post;
    post.mean = llt.solve(lg * p.w + c0inv * p.prior.mean);
    post.cov = symmetrize(llt.solve(Matrix::Identity(p.dim_u(), p.dim_u())));
    return post;
}

Vector GridDensity::point(Eigen::Index flat) const
{
    Vector u(static_cast<Eigen::Index>(axes.size()));
    for (std::size_t k = 0; k < axes.size(); ++k) {
        const Eigen::Index n = axes[k].size();
        u[static_cast<Eigen::Index>(k)] = axes[k][flat % n];
        flat /= n;
    }
    return u;
}

Gaussian GridDensity::moments() const
{
    const auto d = static_cast<Eigen::Index>(axes.size());
    Gaussian g{Vector::Zero(d), Matrix::Zero(d, d)};
    for (Eigen::Index i = 0; i < weights.size(); ++i) g.mean += weights[i] * point(i);
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        const Vector dv = point(i) - g.mean;
        g.cov += weights[i] * dv * dv.transpose();
    }
    g.cov = symmetrize(g.cov);
    return g;
}

GridDensity grid_posterior(const InverseProblem& p, double t, const GridSpec& grid)
{
    const Eigen::Index d = p.dim_u();
    if (d < 1 || d > 3) throw ConfigError("grid_posterior: oracle limited to 1-3 dimensions");
    if (grid.lo.size() != d || grid.hi.size() != d || static_cast<Eigen::Index>(grid.points.size()) != d)
        throw DimensionMismatch("grid_posterior: grid spec dimension mismatch");
    GridDensity out;
    Eigen::Index total = 1;
    for (Eigen::Index k = 0; k < d; ++k) {
        const int n = grid.points[static_cast<std::size_t>(k)];
        if (n < 2 || n > 201) throw ConfigError("grid_posterior: 2..201 points per dimension");
        out.axes.push_back(Vector::LinSpaced(n, grid.lo[k], grid.hi[k]));
        total *= n;
    }
    const Eigen::LLT<Matrix> c0(symmetrize(p.prior.cov));
    if (c0.info() != Eigen::Success) throw NumericalError("grid_posterior: prior covariance not PD");
    const Eigen::LLT<Matrix> gam(symmetrize(p.gamma));
    if (gam.info() != Eigen::Success) throw NumericalError("grid_posterior: Gamma not PD");
    double logdet = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) logdet += 2.0 * std::log(c0.matrixL()(k, k));
    const double log_norm = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + logdet);

    out.log_density.resize(total);
    parallel_for(total, [&](std::ptrdiff_t i) {
        const Vector u = out.point(i);
        const Vector du = u - p.prior.mean;
        const Vector r = p.w - p.G(u);
        const double phi = 0.5 * r.dot(gam.solve(r));
        out.log_density[i] = log_norm - 0.5 * du.dot(c0.solve(du)) - t * phi;
    });
    const double top = out.log_density.maxCoeff();
    if (!(top > std::log(1e-300))) throw GridUnderflow("grid_posterior: all weights below 1e-300");
    out.weights = (out.log_density.array() - top).exp().matrix();
    out.weights /= out.weights.sum();
    return out;
}

Ensemble eki_transport_update(const InverseProblem& p, const Ensemble& e, double dt,
                              const Matrix& eta, Scaling scaling)
{
    if (!(dt > 0.0)) throw ConfigError("eki_transport_update: dt must be positive");
    return kalman_inversion_update(p, e.members(), p.gamma / dt, eta, scaling);
}

Ensemble eki_transport_step(const InverseProblem& p, const Ensemble& e, double dt,
                            const SeededStream& stream, std::uint64_t step, Scaling scaling)
{
    if (!(dt > 0.0)) throw ConfigError("eki_transport_step: dt must be positive");
    const Matrix eta = perturbations(p.gamma / dt, e.size(), stream, Phase::DataPerturbation, step);
    return kalman_inversion_update(p, e.members(), p.gamma / dt, eta, scaling);
}

Ensemble eki_step(const InverseProblem& p, const Ensemble& e, const SeededStream& stream,
                  std::uint64_t step, Scaling scaling)
{
    return eki_transport_step(p, e, 1.0, stream, step, scaling);
}

Ensemble eki_iterinf_step(const InverseProblem& p, const IterInfParams& q, const Ensemble& e,
                          const SeededStream& stream, std::uint64_t step, Scaling scaling)
{
    if (!(q.alpha > 0.0 && q.alpha <= 1.0) || q.sigma_p < 0.0 || !(q.gamma_p > 0.0))
        throw ConfigError("eki_iterinf_step: need alpha in (0,1], sigma' >= 0, gamma' > 0");
    const Eigen::Index d = p.dim_u();
    Matrix u = q.alpha * e.members();
    if (q.alpha != 1.0) {
        if (q.r0.size() != d) throw DimensionMismatch("eki_iterinf_step: r0 dimension");
        u.colwise() += (1.0 - q.alpha) * q.r0;
    }
    if (q.sigma_p > 0.0) {
        if (q.Sigma.rows() != d) throw DimensionMismatch("eki_iterinf_step: Sigma dimension");
        u += perturbations(q.sigma_p * q.Sigma, e.size(), stream, Phase::Prediction, step);
    }
    const Matrix noise = q.gamma_p * p.gamma;
    const Matrix eta = perturbations(noise, e.size(), stream, Phase::DataPerturbation, step);
    return kalman_inversion_update(p, u, noise, eta, scaling);
}

Gaussian iterinf_moment_step(const Matrix& L, const InverseProblem& p, const IterInfParams& q,
                             const Gaussian& g)
{
    Vector m = q.alpha * g.mean;
    if (q.alpha != 1.0) m += (1.0 - q.alpha) * q.r0;
    Matrix c = q.alpha * q.alpha * g.cov;
    if (q.sigma_p > 0.0) c += q.sigma_p * q.Sigma;
    JointGaussian j{m, L * m, c, c * L.transpose(), symmetrize(L * c * L.transpose() + q.gamma_p * p.gamma)};
    return condition_joint(j, p.w);
}

Gaussian iterinf_fixed_point(const Matrix& L, const InverseProblem& p, const IterInfParams& q,
                             double tol, int max_iter)
{
    Gaussian g = p.prior;
    for (int k = 0; k < max_iter; ++k) {
        Gaussian next = iterinf_moment_step(L, p, q, g);
        const double change = (next.mean - g.mean).norm() + (next.cov - g.cov).norm();
        const double scale = 1.0 + next.mean.norm() + next.cov.norm();
        g = std::move(next);
        if (change <= tol * scale) return g;
    }
    throw NumericalError("iterinf_fixed_point: no convergence");
}

double tikhonov_stationarity_residual(const Matrix& L, const InverseProblem& p,
                                      const IterInfParams& q, const Gaussian& fixed)
{
    Matrix c_hat = q.alpha * q.alpha * fixed.cov;
    if (q.sigma_p > 0.0) c_hat += q.sigma_p * q.Sigma;
    const Vector lhs = (1.0 - q.alpha) * c_hat.llt().solve(fixed.mean - q.r0);
    const Vector rhs = (1.0 / q.gamma_p) * L.transpose() * p.gamma.llt().solve(p.w - L * fixed.mean);
    return (lhs - rhs).norm();
}

Ensemble bayes_iterinf_predict(double alpha, const Ensemble& e, const SeededStream& stream,
                               std::uint64_t step, Inflation inflation, Scaling scaling)
{
    if (!(alpha > 0.0)) throw ConfigError("bayes iteration: alpha must be positive");
    const Gaussian mom = empirical_moments(e, scaling);
    if (inflation == Inflation::Deterministic) {
        Matrix u = std::sqrt(1.0 + alpha) * (e.members().colwise() - mom.mean);
        u.colwise() += mom.mean;
        return Ensemble(std::move(u));
    }
    return Ensemble(e.members() + perturbations(alpha * mom.cov, e.size(), stream, Phase::Prediction, step));
}

Ensemble eki_bayes_iterinf_step(const InverseProblem& p, double alpha, const Ensemble& e,
                                const SeededStream& stream, std::uint64_t step, Inflation inflation,
                                Scaling scaling)
{
    const InverseProblem reg = regularize(p).as_problem(p.prior);
    const Ensemble pred = bayes_iterinf_predict(alpha, e, stream, step, inflation, scaling);
    const Matrix noise = (1.0 + 1.0 / alpha) * reg.gamma;
    const Matrix eta = perturbations(noise, e.size(), stream, Phase::DataPerturbation, step);
    // Analysis against w_R - (G_R(u) + eta); the sign of eta is immaterial in law.
    return kalman_inversion_update(reg, pred.members(), noise, -eta, scaling);
}

Gaussian bayes_iterinf_moment_step(const Matrix& L, const InverseProblem& p, double alpha,
                                   const Gaussian& g)
{
    const InverseProblem reg = regularize(linear_problem(L, p.w, p.gamma, p.prior)).as_problem(p.prior);
    const Matrix& lr = *reg.L;
    const Matrix c = (1.0 + alpha) * g.cov;
    JointGaussian j{g.mean, lr * g.mean, c, c * lr.transpose(),
                    symmetrize(lr * c * lr.transpose() + (1.0 + 1.0 / alpha) * reg.gamma)};
    return condition_joint(j, reg.w);
}

Gaussian bayes_iterinf_ode(const Matrix& L, const InverseProblem& p, const Gaussian& g0, double t,
                           double dt)
{
    const InverseProblem reg = regularize(linear_problem(L, p.w, p.gamma, p.prior)).as_problem(p.prior);
    const Matrix& lr = *reg.L;
    const Matrix lg = right_solve_spd(lr.transpose(), reg.gamma);
    const Matrix B = symmetrize(lg * lr);
    const Vector b = lg * reg.w;
    auto rhs = [&](const Vector& m, const Matrix& c, Vector& dm, Matrix& dc) {
        dm = c * (b - B * m);
        dc = c - c * B * c;
    };
    const long n = std::max(1L, std::lround(t / dt));
    const double h = t / static_cast<double>(n);
    Vector m = g0.mean;
    Matrix c = g0.cov;
    Vector k1m, k2m, k3m, k4m;
    Matrix k1c, k2c, k3c, k4c;
    for (long s = 0; s < n; ++s) {
        rhs(m, c, k1m, k1c);
        rhs(m + 0.5 * h * k1m, c + 0.5 * h * k1c, k2m, k2c);
        rhs(m + 0.5 * h * k2m, c + 0.5 * h * k2c, k3m, k3c);
        rhs(m + h * k3m, c + h * k3c, k4m, k4c);
        m += (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
        c = symmetrize(c + (h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c));
    }
    return Gaussian{m, c};
}

Matrix eks_drift(const InverseProblem& p, const Ensemble& e, Scaling scaling)
{
    if (e.size() < 3) throw TooFewMembers("eks: need at least three members");
    const Matrix& u = e.members();
    const Matrix g = forward_columns(p, u);
    const double c = covariance_factor(scaling, e.size());
    const Matrix du = u.colwise() - Vector(u.rowwise().mean());
    const Matrix dg = g.colwise() - Vector(g.rowwise().mean());
    const Matrix cov = symmetrize(c * du * du.transpose());
    const Matrix c_ug = c * du * dg.transpose();
    const Matrix data_term = right_solve_spd(c_ug, p.gamma) * (g.colwise() - p.w);
    const Matrix prior_term = right_solve_spd(cov, p.prior.cov) * (u.colwise() - p.prior.mean);
    return -(data_term + prior_term);
}

Ensemble eks_step(const InverseProblem& p, const Ensemble& e, double dt, const SeededStream& stream,
                  std::uint64_t step, Scaling scaling)
{
    if (!(dt > 0.0)) throw ConfigError("eks_step: dt must be positive");
    const Matrix drift = eks_drift(p, e, scaling);
    const Matrix cov = empirical_moments(e, scaling).cov;
    const Matrix noise = perturbations(2.0 * dt * cov, e.size(), stream, Phase::Diffusion, step);
    return Ensemble(e.members() + dt * drift + noise);
}

Gaussian gpf_inversion_step(const InverseProblem& p, const Gaussian& g, double dt,
                            Eigen::Index quad_size, const SeededStream& stream, std::uint64_t step,
                            Sampler sampler)
{
    if (!(dt > 0.0)) throw ConfigError("gpf_inversion_step: dt must be positive");
    const Ensemble u = sampler == Sampler::MomentMatched
                           ? sample_matched(g, quad_size, stream, Phase::Quadrature, step)
                           : sample(g, quad_size, stream, Phase::Quadrature, step);
    const Ensemble gu(forward_columns(p, u.members()));
    const Matrix c_ug = cross_covariance(u, gu);
    const Matrix c_gg = empirical_moments(gu).cov;
    const Matrix K = right_solve_spd(dt * c_ug, symmetrize(p.gamma + dt * c_gg));
    Gaussian out;
    out.mean = g.mean + K * (p.w - gu.mean());
    out.cov = symmetrize(g.cov - K * c_ug.transpose());
    return out;
}

RateReport analyze_linear_rates(const Matrix& L, const Matrix& gamma, const Gaussian& prior,
                                const Vector& w, const std::vector<double>& t_grid, double dt)
{
    if (L.rows() != L.cols() || L.cols() != prior.dim()) throw SingularForward("analyze_linear_rates: L must be square");
    const Eigen::FullPivLU<Matrix> lu(L);
    if (!lu.isInvertible()) throw SingularForward("analyze_linear_rates: L is not invertible");
    const Vector u_true = lu.solve(w);
    const Matrix lg = right_solve_spd(L.transpose(), gamma);
    const Matrix B = symmetrize(lg * L);
    const Matrix b_root = psd_sqrt(B, 1e-10).root;
    const Vector d0 = prior.mean - u_true;
    const Eigen::Index n_u = L.cols();
    const Matrix b_inv_root = psd_inv_sqrt(B, 1e-10);

    RateReport rep;
    rep.rate_holds = true;
    const Vector gains = Eigen::SelfAdjointEigenSolver<Matrix>(symmetrize(b_root * prior.cov * b_root)).eigenvalues();
    rep.min_gain_eigenvalue = gains(0);
    // C B has spectrum below that of B^{1/2} C0 B^{1/2}; keep RK4 well inside its stability region
    const double h_max = std::min(dt, 0.5 / std::max(gains(gains.size() - 1), 1e-300));
    Vector m = prior.mean;
    Matrix c = prior.cov;
    Matrix D = Matrix::Identity(n_u, n_u);
    double t = 0.0;
    struct Rates {
        Vector m;
        Matrix c, d;
    };
    auto rhs = [&](const Vector& mm, const Matrix& cc, const Matrix& dd) {
        const Matrix cb = cc * B;
        return Rates{-cb * (mm - u_true), -cb * cc, -0.5 * cb * dd};
    };
    for (double target : t_grid) {
        const long n = std::max(0L, static_cast<long>(std::ceil((target - t) / h_max - 1e-9)));
        const double h = n > 0 ? (target - t) / static_cast<double>(n) : 0.0;
        for (long s = 0; s < n; ++s) {
            const Rates k1 = rhs(m, c, D);
            const Rates k2 = rhs(m + 0.5 * h * k1.m, c + 0.5 * h * k1.c, D + 0.5 * h * k1.d);
            const Rates k3 = rhs(m + 0.5 * h * k2.m, c + 0.5 * h * k2.c, D + 0.5 * h * k2.d);
            const Rates k4 = rhs(m + h * k3.m, c + h * k3.c, D + h * k3.d);
            m += (h / 6.0) * (k1.m + 2.0 * k2.m + 2.0 * k3.m + k4.m);
            c = symmetrize(c + (h / 6.0) * (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c));
            D += (h / 6.0) * (k1.d + 2.0 * k2.d + 2.0 * k3.d + k4.d);
        }
        if (n > 0) t = target;
        // worst initial deviation: spectral norm of B^{1/2} D B^{-1/2}
        const double gain = Eigen::JacobiSVD<Matrix>(b_root * D * b_inv_root).singularValues()(0);
        const double ratio = t * gain * gain;
        const Matrix s = L * prior.cov * L.transpose() + gamma / t;
        const Vector closed = (1.0 / t) * lu.solve(gamma * s.llt().solve(L * d0));
        const double res = (m - u_true - closed).norm();
        rep.t.push_back(t);
        rep.rate_ratio.push_back(ratio);
        rep.bias_residual.push_back(res);
        if (ratio > 1.0 + 1e-9) rep.rate_holds = false;
        rep.max_bias_residual = std::max(rep.max_bias_residual, res);
    }
    return rep;
}

Vector time_averaged_forward_map(const TimeAveragedMapConfig& cfg, double u, Rng& rng)
{
    if (!(cfg.T > 0.0) || !(cfg.tau > 0.0) || cfg.tau > cfg.T)
        throw ConfigError("time_averaged_forward_map: need 0 < tau <= T");
    L96Params p = cfg.model;
    p.F = u;
    const auto steps = static_cast<Eigen::Index>(std::llround(cfg.T / cfg.tau));
    Vector v = std::sqrt(cfg.v0_variance) * rng.normals(p.L);
    const VectorField field = [&p](const Vector& x) { return l96_vector_field(p, x); };
    Matrix traj(p.L, steps);
    for (Eigen::Index n = 0; n < steps; ++n) {
        v = rk4_flow(field, v, cfg.tau, std::min(cfg.dt_inner, cfg.tau));
        traj.col(n) = v;
    }
    const Vector mean = traj.rowwise().mean();
    const Vector var = (traj.colwise() - mean).array().square().rowwise().mean();
    Vector out(2);
    out << mean.mean(), var.mean();
    return out;
}

VectorMap make_time_averaged_forward(const TimeAveragedMapConfig& cfg, std::uint64_t seed)
{
    return [cfg, seed](const Vector& u) -> Vector {
        if (u.size() != 1) throw DimensionMismatch("time-averaged forward map takes a scalar forcing");
        std::uint64_t s = seed ^ std::bit_cast<std::uint64_t>(u[0]);
        Rng rng(splitmix64(s));
        return time_averaged_forward_map(cfg, u[0], rng);
    };
}

bool ensemble_collapsed(const Ensemble& e, const Matrix& c0, double tol)
{
    return empirical_moments(e).cov.trace() < tol * c0.trace();
}

}  // namespace enkf
