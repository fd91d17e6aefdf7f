#include "enkf/transport_maps.hpp"

#include "enkf/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace enkf {

namespace {

struct FamilyData {
    Matrix c_hat;    // C^
    Matrix cross;    // C^{vy} or C^{vh}
    Vector m_hat;
    Vector y_mean;
    Matrix tilde;    // Schur complement of C^ in the source covariance
    Gaussian target;
};

Matrix spd_inverse(const Matrix& a)
{
    Eigen::LLT<Matrix> llt(symmetrize(a));
    if (llt.info() != Eigen::Success) throw NumericalError("transport: source covariance is not PD");
    return symmetrize(llt.solve(Matrix::Identity(a.rows(), a.cols())));
}

FamilyData family_data(const JointGaussian& j, const Matrix& c_yy_source, const Gaussian& target)
{
    FamilyData f;
    f.c_hat = symmetrize(j.c_vv);
    f.cross = j.c_vy;
    f.m_hat = j.mean_v;
    f.y_mean = j.mean_y;
    f.tilde = symmetrize(c_yy_source - j.c_vy.transpose() * spd_inverse(f.c_hat) * j.c_vy);
    f.target = target;
    return f;
}

Matrix signed_root(const Matrix& m, const Vector& signs, bool inverse)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
    Vector s = es.eigenvalues();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double sign = signs.size() ? (signs[i] < 0.0 ? -1.0 : 1.0) : 1.0;
        s[i] = sign * (inverse ? 1.0 / std::sqrt(s[i]) : std::sqrt(s[i]));
    }
    return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

Matrix constrained_target(const FamilyData& f, const Matrix& B)
{
    const Matrix cp = symmetrize(f.target.cov - B * f.tilde * B.transpose());
    const Eigen::Index d = cp.rows();
    const double tr = cp.trace();
    const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(cp).eigenvalues().minCoeff();
    if (!(tr > 0.0) || !(lo > 1e-10 * tr / static_cast<double>(d)))
        throw NotInFamily("free matrix violates C - B C~ B^T > 0");
    return cp;
}

struct Built {
    Matrix A;
    Matrix B;
    Vector a;
};

Built build_member(const FamilyData& f, const FamilySelector& sel)
{
    const Eigen::Index dv = f.c_hat.rows(), dy = f.cross.cols();
    const Matrix B = sel.free.size() ? sel.free : Matrix::Zero(dv, dy);
    if (B.rows() != dv || B.cols() != dy) throw DimensionMismatch("transport: free matrix shape");
    const Matrix V = sel.orthogonal.size() ? sel.orthogonal : Matrix::Identity(dv, dv);
    if (V.rows() != dv || V.cols() != dv) throw DimensionMismatch("transport: orthogonal factor shape");
    if ((V * V.transpose() - Matrix::Identity(dv, dv)).norm() > 1e-10)
        throw NotInFamily("transport: selector is not orthogonal");
    if (sel.signs.size() && sel.signs.size() != dv) throw DimensionMismatch("transport: sign vector size");

    const Matrix cp = constrained_target(f, B);
    const Matrix F = signed_root(cp, sel.signs, false) * V * psd_sqrt(f.c_hat, 1e-10).root;
    Built out;
    out.A = right_solve_spd(F - B * f.cross.transpose(), f.c_hat);
    out.B = B;
    out.a = f.target.mean - out.A * f.m_hat - B * f.y_mean;
    return out;
}

Matrix orthogonal_for(const FamilyData& f, const Matrix& B, const Matrix& A)
{
    const Matrix cp = constrained_target(f, B);
    const Matrix F = A * f.c_hat + B * f.cross.transpose();
    const Matrix m = signed_root(cp, Vector(), true) * F * psd_inv_sqrt(f.c_hat, 1e-10);
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

Gaussian push(const JointGaussian& j, const Matrix& A, const Matrix& B, const Vector& a)
{
    Matrix ab(A.rows(), A.cols() + B.cols());
    ab << A, B;
    const Gaussian src = j.assembled();
    return Gaussian{ab * src.mean + a, symmetrize(ab * src.cov * ab.transpose())};
}

Matrix random_spd(Eigen::Index n, Rng& rng)
{
    Matrix g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    return symmetrize(g * g.transpose() / static_cast<double>(n) + 0.5 * Matrix::Identity(n, n));
}

Matrix random_free(const Gaussian& target, const Matrix& tilde, Eigen::Index dy, Rng& rng)
{
    const Eigen::Index dv = target.dim();
    Matrix q(dv, dy);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
    const double norm = Eigen::JacobiSVD<Matrix>(q).singularValues()[0];
    const double rho = 0.95 * rng.uniform();
    return rho / norm * psd_sqrt(target.cov, 1e-10).root * q * psd_inv_sqrt(tilde, 1e-10);
}

Vector random_signs(Eigen::Index n, Rng& rng)
{
    Vector s(n);
    for (Eigen::Index i = 0; i < n; ++i) s[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return s;
}

double rel_err(const Vector& a, const Vector& b) { return (a - b).norm() / (1.0 + b.norm()); }
double rel_err(const Matrix& a, const Matrix& b) { return (a - b).norm() / (1.0 + b.norm()); }

}  // namespace

Gaussian deterministic_target(const JointGaussian& j, const Matrix& gamma, const Vector& y_obs)
{
    JointGaussian full = j;
    full.c_yy = symmetrize(j.c_yy + gamma);
    return condition_joint(full, y_obs);
}

StochasticTransport build_stochastic(const JointGaussian& j, const Vector& y_obs, const FamilySelector& sel)
{
    const FamilyData f = family_data(j, j.c_yy, condition_joint(j, y_obs));
    Built b = build_member(f, sel);
    return StochasticTransport{std::move(b.A), std::move(b.B), std::move(b.a)};
}

DeterministicTransport build_deterministic(const JointGaussian& j, const Matrix& gamma,
                                           const Vector& y_obs, const FamilySelector& sel)
{
    const FamilyData f = family_data(j, j.c_yy, deterministic_target(j, gamma, y_obs));
    Built b = build_member(f, sel);
    return DeterministicTransport{std::move(b.A), std::move(b.B), std::move(b.a)};
}

Matrix stochastic_orthogonal_for(const JointGaussian& j, const Matrix& B, const Matrix& A)
{
    const Vector y0 = j.mean_y;  // the target covariance does not depend on the data value
    return orthogonal_for(family_data(j, j.c_yy, condition_joint(j, y0)), B, A);
}

Matrix deterministic_orthogonal_for(const JointGaussian& j, const Matrix& gamma, const Matrix& S,
                                    const Matrix& R)
{
    return orthogonal_for(family_data(j, j.c_yy, deterministic_target(j, gamma, j.mean_y)), S, R);
}

StochasticTransport optimal_pair(const JointGaussian& j, const Vector& y_obs, const Matrix& W)
{
    if (W.rows() != j.dim_v() || W.cols() != j.dim_v()) throw DimensionMismatch("optimal_pair: W shape");
    if (Eigen::LLT<Matrix>(symmetrize(W)).info() != Eigen::Success)
        throw NumericalError("optimal_pair: W must be positive definite");
    const Gaussian target = condition_joint(j, y_obs);
    const Matrix c_half = psd_sqrt(target.cov, 1e-10).root;
    const Matrix mid = psd_inv_sqrt(symmetrize(c_half * j.c_vv * c_half), 1e-10);
    StochasticTransport t;
    t.A = symmetrize(c_half * mid * c_half);
    t.B = Matrix::Zero(j.dim_v(), j.dim_y());
    t.a = target.mean - t.A * j.mean_v;
    return t;
}

double transport_cost(const JointGaussian& j, const StochasticTransport& t, const Matrix& W)
{
    const Gaussian d = push(j, t.A - Matrix::Identity(j.dim_v(), j.dim_v()), t.B, t.a);
    return (W * d.cov).trace() + d.mean.dot(W * d.mean);
}

Gaussian pushforward(const JointGaussian& j, const StochasticTransport& t) { return push(j, t.A, t.B, t.a); }

Gaussian pushforward(const JointGaussian& j, const DeterministicTransport& t) { return push(j, t.R, t.S, t.r); }

BlueEstimate blue(const JointGaussian& j, const Vector& y_obs)
{
    const Gaussian g = condition_joint(j, y_obs);
    return BlueEstimate{g.mean, g.cov};
}

Matrix random_orthogonal(Eigen::Index n, Rng& rng)
{
    Matrix g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    const Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < n; ++i)
        if (r(i, i) < 0.0) q.col(i) = -q.col(i);
    return q;
}

JointGaussian random_joint(Eigen::Index dv, Eigen::Index dy, Rng& rng)
{
    const Matrix c = random_spd(dv + dy, rng);
    JointGaussian j;
    j.mean_v = rng.normals(dv);
    j.mean_y = rng.normals(dy);
    j.c_vv = c.topLeftCorner(dv, dv);
    j.c_vy = c.topRightCorner(dv, dy);
    j.c_yy = c.bottomRightCorner(dy, dy);
    return j;
}

FamilySelector random_stochastic_selector(const JointGaussian& j, Rng& rng)
{
    const FamilyData f = family_data(j, j.c_yy, condition_joint(j, j.mean_y));
    FamilySelector sel;
    sel.free = random_free(f.target, f.tilde, j.dim_y(), rng);
    sel.orthogonal = random_orthogonal(j.dim_v(), rng);
    sel.signs = random_signs(j.dim_v(), rng);
    return sel;
}

FamilySelector random_deterministic_selector(const JointGaussian& j, const Matrix& gamma, Rng& rng)
{
    const FamilyData f = family_data(j, j.c_yy, deterministic_target(j, gamma, j.mean_y));
    FamilySelector sel;
    sel.free = random_free(f.target, f.tilde, j.dim_y(), rng);
    sel.orthogonal = random_orthogonal(j.dim_v(), rng);
    sel.signs = random_signs(j.dim_v(), rng);
    return sel;
}

std::vector<SuiteCheck> transport_family_suite(std::uint64_t seed, const TransportSuiteConfig& cfg)
{
    const SeededStream stream(seed);
    const Eigen::Index dv = cfg.dim_v, dy = cfg.dim_y, n = cfg.samples;
    const double sn = std::sqrt(static_cast<double>(n));

    SuiteCheck sto_exact{"stochastic family: exact second-order pushforward", true, 0.0, 1e-9};
    SuiteCheck sto_mc{"stochastic family: Monte Carlo pushforward within sampling band", true, 0.0, 1.0};
    SuiteCheck det_exact{"deterministic family: exact second-order pushforward", true, 0.0, 1e-9};
    SuiteCheck det_mc{"deterministic family: Monte Carlo pushforward within sampling band", true, 0.0, 1.0};

    auto mc_ratio = [&](const Matrix& pushed, const Gaussian& target) {
        const Gaussian emp = empirical_moments(Ensemble(pushed));
        const double tr = target.cov.trace();
        const double mean_tol = 5.0 * std::sqrt(tr) / sn;
        const double cov_tol = 5.0 * std::sqrt(tr * tr + target.cov.squaredNorm()) / sn;
        return std::max((emp.mean - target.mean).norm() / mean_tol, (emp.cov - target.cov).norm() / cov_tol);
    };

    for (int k = 0; k < cfg.members; ++k) {
        Rng rng = stream.engine(Phase::Verification, 0, static_cast<std::uint64_t>(k));
        const JointGaussian j = random_joint(dv, dy, rng);
        const Vector y = j.mean_y + rng.normals(dy);
        const Gaussian target = condition_joint(j, y);
        const StochasticTransport t = build_stochastic(j, y, random_stochastic_selector(j, rng));
        const Gaussian pf = pushforward(j, t);
        sto_exact.value = std::max({sto_exact.value, rel_err(pf.mean, target.mean), rel_err(pf.cov, target.cov)});

        const Ensemble src = sample(j.assembled(), n, stream, Phase::Verification, 1000 + static_cast<std::uint64_t>(k));
        Matrix pushed = t.A * src.members().topRows(dv) + t.B * src.members().bottomRows(dy);
        pushed.colwise() += t.a;
        sto_mc.value = std::max(sto_mc.value, mc_ratio(pushed, target));

        const Matrix gamma = random_spd(dy, rng);
        const Gaussian dtarget = deterministic_target(j, gamma, y);
        const DeterministicTransport dt = build_deterministic(j, gamma, y, random_deterministic_selector(j, gamma, rng));
        const Gaussian dpf = pushforward(j, dt);
        det_exact.value = std::max({det_exact.value, rel_err(dpf.mean, dtarget.mean), rel_err(dpf.cov, dtarget.cov)});
        Matrix dpushed = dt.R * src.members().topRows(dv) + dt.S * src.members().bottomRows(dy);
        dpushed.colwise() += dt.r;
        det_mc.value = std::max(det_mc.value, mc_ratio(dpushed, dtarget));
    }
    sto_exact.pass = sto_exact.value <= sto_exact.tolerance;
    det_exact.pass = det_exact.value <= det_exact.tolerance;
    sto_mc.pass = sto_mc.value <= sto_mc.tolerance;
    det_mc.pass = det_mc.value <= det_mc.tolerance;

    SuiteCheck opt_exact{"optimal pair: closed-form cost below every sampled member", true, 0.0, 0.0};
    SuiteCheck opt_mc{"optimal pair: Monte Carlo cost below every sampled member", true, 0.0, 0.0};
    for (int w = 0; w < cfg.weights; ++w) {
        Rng rng = stream.engine(Phase::Verification, 1, static_cast<std::uint64_t>(w));
        const JointGaussian j = random_joint(dv, dy, rng);
        const Vector y = j.mean_y + rng.normals(dy);
        const Matrix W = random_spd(dv, rng);
        const StochasticTransport best = optimal_pair(j, y, W);
        const Ensemble src = sample(j.assembled(), n, stream, Phase::Verification, 5000 + static_cast<std::uint64_t>(w));
        auto mc_cost = [&](const StochasticTransport& t) {
            const Matrix& x = src.members();
            Matrix d = (t.A - Matrix::Identity(dv, dv)) * x.topRows(dv) + t.B * x.bottomRows(dy);
            d.colwise() += t.a;
            return (d.transpose() * W).cwiseProduct(d.transpose()).sum() / static_cast<double>(n);
        };
        const double best_exact = transport_cost(j, best, W);
        const double best_mc = mc_cost(best);
        for (int k = 0; k < cfg.members; ++k) {
            const StochasticTransport other = build_stochastic(j, y, random_stochastic_selector(j, rng));
            const double gap_exact = best_exact - transport_cost(j, other, W);
            const double gap_mc = best_mc - mc_cost(other);
            if (k == 0 && w == 0) {
                opt_exact.value = gap_exact;
                opt_mc.value = gap_mc;
            }
            opt_exact.value = std::max(opt_exact.value, gap_exact);
            opt_mc.value = std::max(opt_mc.value, gap_mc);
        }
    }
    opt_exact.pass = opt_exact.value <= 0.0;
    opt_mc.pass = opt_mc.value <= 0.0;

    SuiteCheck blue_check{"BLUE equals Gaussian conditioning", true, 0.0, 1e-12};
    for (int k = 0; k < 10; ++k) {
        Rng rng = stream.engine(Phase::Verification, 2, static_cast<std::uint64_t>(k));
        const JointGaussian j = random_joint(dv, dy, rng);
        const Vector y = rng.normals(dy);
        const BlueEstimate b = blue(j, y);
        const Gaussian g = condition_joint(j, y);
        blue_check.value = std::max({blue_check.value, rel_err(b.estimate, g.mean), rel_err(b.covariance, g.cov)});
    }
    blue_check.pass = blue_check.value <= blue_check.tolerance;

    return {sto_exact, sto_mc, det_exact, det_mc, opt_exact, opt_mc, blue_check};
}

}  // namespace enkf
