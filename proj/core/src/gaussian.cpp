#include "enkf/gaussian.hpp"

#include "enkf/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <string>

namespace enkf {

namespace {

double clip_threshold(const Matrix& m)
{
    const double d = static_cast<double>(m.rows());
    return d > 0 ? 1e-12 * std::abs(m.trace()) / d : 0.0;
}

void require_square(const Matrix& m, const char* what)
{
    if (m.rows() != m.cols())
        throw DimensionMismatch(std::string(what) + ": matrix is not square");
}

void require_symmetric(const Matrix& m, double tol, const char* what)
{
    require_square(m, what);
    const double scale = std::max(1.0, m.norm());
    if ((m - m.transpose()).norm() > tol * scale)
        throw NonSymmetric(std::string(what) + ": asymmetry exceeds tolerance");
}

Eigen::SelfAdjointEigenSolver<Matrix> eigen_of(const Matrix& m)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    return es;
}

}  // namespace

void Gaussian::validate() const
{
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
        throw DimensionMismatch("Gaussian: covariance shape does not match mean");
    if (!mean.allFinite() || !cov.allFinite()) throw NonFinite("Gaussian: non-finite entries");
    require_symmetric(cov, 1e-12, "Gaussian");
    if (cov.rows() == 0) return;
    const double lo = eigen_of(cov).eigenvalues().minCoeff();
    if (lo < -1e-10 * std::abs(cov.trace()) / static_cast<double>(cov.rows()))
        throw NumericalError("Gaussian: covariance is not PSD");
}

Gaussian JointGaussian::assembled() const
{
    const Eigen::Index dv = dim_v(), dy = dim_y();
    Gaussian g;
    g.mean.resize(dv + dy);
    g.mean << mean_v, mean_y;
    g.cov.resize(dv + dy, dv + dy);
    g.cov << c_vv, c_vy, c_vy.transpose(), c_yy;
    return g;
}

void JointGaussian::validate() const
{
    if (c_vv.rows() != dim_v() || c_vv.cols() != dim_v() || c_vy.rows() != dim_v()
        || c_vy.cols() != dim_y() || c_yy.rows() != dim_y() || c_yy.cols() != dim_y())
        throw DimensionMismatch("JointGaussian: block shapes are inconsistent");
    assembled().validate();
}

Ensemble::Ensemble(Matrix members) : x_(std::move(members))
{
    if (!x_.allFinite()) throw NonFinite("Ensemble: non-finite member entries");
}

Vector Ensemble::mean() const
{
    if (x_.cols() == 0) throw TooFewMembers("Ensemble: no members");
    return x_.rowwise().mean();
}

double covariance_factor(Scaling s, Eigen::Index members)
{
    if (members < 2) throw TooFewMembers("empirical covariance needs at least two members");
    const double j = static_cast<double>(members);
    return s == Scaling::Population ? 1.0 / j : 1.0 / (j - 1.0);
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

PsdRoot psd_sqrt(const Matrix& m, double sym_tol)
{
    require_symmetric(m, sym_tol, "psd_sqrt");
    PsdRoot out;
    if (m.rows() == 0) {
        out.root = m;
        return out;
    }
    const auto es = eigen_of(m);
    const double cut = clip_threshold(m);
    Vector lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam[i] < cut) {
            if (lam[i] != 0.0) ++out.clipped;
            lam[i] = 0.0;
        } else {
            lam[i] = std::sqrt(lam[i]);
        }
    }
    out.root = symmetrize(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
    return out;
}

Matrix psd_inv_sqrt(const Matrix& m, double sym_tol)
{
    require_symmetric(m, sym_tol, "psd_inv_sqrt");
    if (m.rows() == 0) return m;
    const auto es = eigen_of(m);
    const double cut = clip_threshold(m);
    Vector lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i)
        lam[i] = lam[i] > cut && lam[i] > 0.0 ? 1.0 / std::sqrt(lam[i]) : 0.0;
    return symmetrize(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

Eigen::Index psd_rank(const Matrix& m)
{
    if (m.rows() == 0) return 0;
    const auto es = eigen_of(m);
    const double cut = clip_threshold(m);
    return (es.eigenvalues().array() > std::max(cut, 0.0)).count();
}

Matrix right_solve_spd(const Matrix& a, const Matrix& s, const ConditionOptions& opt)
{
    require_square(s, "right_solve_spd");
    if (a.cols() != s.rows()) throw DimensionMismatch("right_solve_spd: inner dimensions differ");
    if (opt.pseudo_inverse) {
        const auto es = eigen_of(s);
        const double top = es.eigenvalues().cwiseAbs().maxCoeff();
        Vector inv = es.eigenvalues();
        for (Eigen::Index i = 0; i < inv.size(); ++i)
            inv[i] = inv[i] > opt.pinv_rtol * top ? 1.0 / inv[i] : 0.0;
        return a * (es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose());
    }
    const Matrix sym = symmetrize(s);
    Eigen::LLT<Matrix> llt(sym);
    if (llt.info() != Eigen::Success) {
        const double jitter = clip_threshold(sym);
        llt.compute(sym + jitter * Matrix::Identity(sym.rows(), sym.cols()));
        if (llt.info() != Eigen::Success)
            throw SingularDataCovariance("data covariance is not positive definite");
    }
    return llt.solve(a.transpose()).transpose();
}

Matrix kalman_gain(const Matrix& c_vy, const Matrix& c_yy, const ConditionOptions& opt)
{
    return right_solve_spd(c_vy, c_yy, opt);
}

Gaussian condition_joint(const JointGaussian& j, const Vector& y_obs, const ConditionOptions& opt)
{
    if (j.c_vv.rows() != j.dim_v() || j.c_vy.rows() != j.dim_v() || j.c_vy.cols() != j.dim_y()
        || j.c_yy.rows() != j.dim_y() || j.c_yy.cols() != j.dim_y() || y_obs.size() != j.dim_y())
        throw DimensionMismatch("condition_joint: inconsistent shapes");
    require_symmetric(j.c_yy, 1e-12, "condition_joint");
    if (!opt.pseudo_inverse && j.dim_y() > 0) {
        const Vector lam = eigen_of(j.c_yy).eigenvalues();
        const double hi = lam.maxCoeff();
        const double lo = lam.minCoeff();
        if (!(lo > 0.0) || hi / lo > opt.max_condition)
            throw SingularDataCovariance("condition_joint: data covariance is ill-conditioned");
    }
    const Matrix gain = kalman_gain(j.c_vy, j.c_yy, opt);
    Gaussian out;
    out.mean = j.mean_v + gain * (y_obs - j.mean_y);
    out.cov = symmetrize(j.c_vv - gain * j.c_vy.transpose());
    return out;
}

Matrix deviations(const Ensemble& e)
{
    return e.members().colwise() - e.mean();
}

Matrix scaled_deviations(const Ensemble& e, Scaling s)
{
    return std::sqrt(covariance_factor(s, e.size())) * deviations(e);
}

Gaussian empirical_moments(const Ensemble& e, Scaling s)
{
    const double c = covariance_factor(s, e.size());
    Gaussian g;
    g.mean = e.mean();
    const Matrix dev = e.members().colwise() - g.mean;
    g.cov = symmetrize(c * dev * dev.transpose());
    return g;
}

Matrix cross_covariance(const Ensemble& a, const Ensemble& b, Scaling s)
{
    if (a.size() != b.size()) throw MemberCountMismatch("cross_covariance: member counts differ");
    const double c = covariance_factor(s, a.size());
    return c * deviations(a) * deviations(b).transpose();
}

Matrix noise_matrix(const Matrix& cov_root, Eigen::Index n, const SeededStream& stream,
                    Phase phase, std::uint64_t step)
{
    const Eigen::Index d = cov_root.cols();
    Matrix z(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Rng rng = stream.engine(phase, step, static_cast<std::uint64_t>(j));
        z.col(j) = rng.normals(d);
    }
    return cov_root * z;
}

Ensemble sample(const Gaussian& g, Eigen::Index n, const SeededStream& stream, Phase phase,
                std::uint64_t step)
{
    if (g.cov.rows() != g.dim() || g.cov.cols() != g.dim())
        throw DimensionMismatch("sample: covariance shape does not match mean");
    const Matrix root = psd_sqrt(g.cov, 1e-10).root;
    Matrix x = noise_matrix(root, n, stream, phase, step);
    x.colwise() += g.mean;
    return Ensemble(std::move(x));
}

Ensemble sample_matched(const Gaussian& g, Eigen::Index n, const SeededStream& stream,
                        Phase phase, std::uint64_t step, Scaling s)
{
    const Eigen::Index d = g.dim();
    if (n <= d) throw TooFewMembers("sample_matched: need more members than dimensions");
    Matrix z = noise_matrix(Matrix::Identity(d, d), n, stream, phase, step);
    z.colwise() -= z.rowwise().mean();
    const Matrix zc = covariance_factor(s, n) * z * z.transpose();
    Eigen::LLT<Matrix> llt(symmetrize(zc));
    if (llt.info() != Eigen::Success) throw NumericalError("sample_matched: degenerate draw");
    const Matrix white = llt.matrixL().solve(z);
    Matrix x = psd_sqrt(g.cov, 1e-10).root * white;
    x.colwise() += g.mean;
    return Ensemble(std::move(x));
}

Matrix decorrelated_noise(const Matrix& against, const Matrix& cov, const SeededStream& stream,
                          Phase phase, std::uint64_t step, Scaling s)
{
    const Eigen::Index n = against.cols();
    const Eigen::Index d = cov.rows();
    Matrix basis(against.rows() + 1, n);
    basis.row(0).setOnes();
    basis.bottomRows(against.rows()) = against;
    if (n <= basis.rows() + d) throw TooFewMembers("decorrelated_noise: not enough columns");
    Matrix z = noise_matrix(Matrix::Identity(d, d), n, stream, phase, step);
    // Remove the component in the row space of `basis`.
    const Eigen::HouseholderQR<Matrix> qr(basis.transpose());
    const Matrix q = qr.householderQ() * Matrix::Identity(n, basis.rows());
    z -= (z * q) * q.transpose();
    const Matrix zc = covariance_factor(s, n) * z * z.transpose();
    Eigen::LLT<Matrix> llt(symmetrize(zc));
    if (llt.info() != Eigen::Success) throw NumericalError("decorrelated_noise: degenerate draw");
    return psd_sqrt(cov, 1e-10).root * llt.matrixL().solve(z);
}

bool loewner_leq(const Matrix& a, const Matrix& b, double tol)
{
    if (a.rows() == 0) return true;
    return eigen_of(b - a).eigenvalues().minCoeff() >= -tol;
}

}  // namespace enkf
