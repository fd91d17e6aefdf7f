#include "enkf/filters_continuous.hpp"
#include "enkf/filters_discrete.hpp"

#include "enkf/errors.hpp"
#include "enkf/parallel.hpp"

#include <cmath>
#include <string>

namespace enkf {

namespace {

void require_finite(const Vector& v, const char* what)
{
    if (!v.allFinite() || (v.size() && v.cwiseAbs().maxCoeff() > 1e6))
        throw NonFinite(std::string(what) + ": state left the finite range");
}

bool is_zero(const Matrix& m) { return m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0; }

Matrix apply_columns(const VectorMap& f, const Matrix& x, Eigen::Index rows)
{
    Matrix out(rows, x.cols());
    parallel_for(x.cols(), [&](std::ptrdiff_t j) {
        const Vector r = f(x.col(j));
        if (r.size() != rows) throw DimensionMismatch("map output has unexpected size");
        out.col(j) = r;
    });
    return out;
}

Matrix gaussian_columns(Eigen::Index d, Eigen::Index n, const SeededStream& stream, Phase phase,
                        std::uint64_t step)
{
    Matrix z(d, n);
    parallel_for(n, [&](std::ptrdiff_t j) {
        Rng rng = stream.engine(phase, step, static_cast<std::uint64_t>(j));
        z.col(j) = rng.normals(d);
    });
    return z;
}

enum class Kind { Stochastic, Deterministic };

Ensemble enkbf_step(Kind kind, const ContinuousModel& cm, const Ensemble& e, const Vector& dz,
                    double dt, const SeededStream& stream, std::uint64_t step, Scaling scaling)
{
    if (e.size() < 2) throw TooFewMembers("enkbf: need at least two members");
    if (dz.size() != cm.dim_y()) throw DimensionMismatch("enkbf: data increment dimension");
    const Matrix& x = e.members();
    const Eigen::Index J = e.size();

    const Matrix hx = cm.H ? Matrix(*cm.H * x) : apply_columns(cm.h, x, cm.dim_y());
    const Matrix fx = cm.F ? Matrix(*cm.F * x) : apply_columns(cm.f, x, e.dim());
    const double c = covariance_factor(scaling, J);
    const Vector m_h = hx.rowwise().mean();
    const Vector m_x = x.rowwise().mean();
    const Matrix c_vh = c * (x.colwise() - m_x) * (hx.colwise() - m_h).transpose();
    const Matrix gain = right_solve_spd(c_vh, cm.obs_noise);

    Matrix innov(cm.dim_y(), J);
    if (kind == Kind::Stochastic) {
        const Matrix root = psd_sqrt(cm.obs_noise, 1e-10).root;
        innov = ((-dt * hx).colwise() + dz)
                - std::sqrt(dt) * root * gaussian_columns(cm.dim_y(), J, stream, Phase::DataPerturbation, step);
    } else {
        innov = (-0.5 * dt * hx).colwise() + (dz - 0.5 * dt * m_h);
    }

    Matrix next = x + dt * fx + gain * innov;
    if (!is_zero(cm.diffusion))
        next += std::sqrt(dt) * psd_sqrt(cm.diffusion, 1e-10).root
                * gaussian_columns(e.dim(), J, stream, Phase::Diffusion, step);
    if (!next.allFinite()) throw NonFinite("enkbf: non-finite ensemble");
    return Ensemble(std::move(next));
}

}  // namespace

ContinuousModel linear_continuous(const Matrix& F, const Matrix& H, const Matrix& sigma,
                                  const Matrix& gamma)
{
    if (F.rows() != F.cols() || H.cols() != F.rows() || sigma.rows() != F.rows()
        || gamma.rows() != H.rows())
        throw DimensionMismatch("linear_continuous: shapes disagree");
    ContinuousModel cm;
    cm.f = [F](const Vector& v) -> Vector { return F * v; };
    cm.h = [H](const Vector& v) -> Vector { return H * v; };
    cm.diffusion = sigma;
    cm.obs_noise = gamma;
    cm.F = F;
    cm.H = H;
    return cm;
}

Vector SdePath::increment(std::size_t k) const
{
    if (k + 1 >= states.size()) throw AlignmentError("SdePath::increment: index out of range");
    return states[k + 1] - states[k];
}

TruthAndData synthesize_truth(const ContinuousModel& cm, const Vector& v0, double T, double dt,
                              const SeededStream& stream)
{
    if (!(dt > 0.0) || !(T > 0.0)) throw ConfigError("synthesize_truth: T and dt must be positive");
    const auto n = static_cast<std::size_t>(std::llround(T / dt));
    const Matrix sroot = psd_sqrt(cm.diffusion, 1e-10).root;
    const Matrix groot = psd_sqrt(cm.obs_noise, 1e-10).root;
    const double sq = std::sqrt(dt);

    TruthAndData out;
    out.truth.dt = out.data.dt = dt;
    out.truth.states.reserve(n + 1);
    out.data.states.reserve(n + 1);
    Vector v = v0;
    Vector z = Vector::Zero(cm.dim_y());
    out.truth.states.push_back(v);
    out.data.states.push_back(z);
    const bool noisy_state = !is_zero(cm.diffusion);
    const bool noisy_data = !is_zero(cm.obs_noise);
    for (std::size_t k = 0; k < n; ++k) {
        Vector dv = dt * cm.f(v);
        if (noisy_state) {
            Rng rng = stream.engine(Phase::TruthProcess, k, 0);
            dv += sq * sroot * rng.normals(v.size());
        }
        Vector dzk = dt * cm.h(v);
        if (noisy_data) {
            Rng rng = stream.engine(Phase::TruthObservation, k, 0);
            dzk += sq * groot * rng.normals(cm.dim_y());
        }
        v += dv;
        z += dzk;
        require_finite(v, "synthesize_truth");
        out.truth.states.push_back(v);
        out.data.states.push_back(z);
    }
    return out;
}

SdePath subsample(const SdePath& path, std::size_t factor)
{
    if (factor == 0) throw ConfigError("subsample: factor must be positive");
    if (path.size() == 0 || (path.size() - 1) % factor != 0)
        throw AlignmentError("subsample: path length is not a multiple of the factor");
    SdePath out;
    out.dt = path.dt * static_cast<double>(factor);
    for (std::size_t i = 0; i < path.size(); i += factor) out.states.push_back(path.states[i]);
    return out;
}

SdePath interpolate_linear(const SdePath& coarse, double dt_fine)
{
    if (coarse.size() < 2 || !(dt_fine > 0.0)) throw AlignmentError("interpolate_linear: bad input");
    const auto ratio = static_cast<std::size_t>(std::llround(coarse.dt / dt_fine));
    if (ratio == 0 || std::abs(static_cast<double>(ratio) * dt_fine - coarse.dt) > 1e-9 * coarse.dt)
        throw AlignmentError("interpolate_linear: coarse step is not a multiple of the fine step");
    SdePath out;
    out.dt = coarse.dt / static_cast<double>(ratio);
    for (std::size_t k = 0; k + 1 < coarse.size(); ++k)
        for (std::size_t r = 0; r < ratio; ++r) {
            const double s = static_cast<double>(r) / static_cast<double>(ratio);
            out.states.push_back((1.0 - s) * coarse.states[k] + s * coarse.states[k + 1]);
        }
    out.states.push_back(coarse.states.back());
    return out;
}

SdePath continuous_3dvar(const ContinuousModel& cm, const Matrix& K, const Vector& v0,
                         const SdePath& data)
{
    if (K.rows() != v0.size() || K.cols() != cm.dim_y())
        throw DimensionMismatch("continuous_3dvar: gain shape mismatch");
    SdePath out;
    out.dt = data.dt;
    out.states.reserve(data.size());
    Vector v = v0;
    out.states.push_back(v);
    for (std::size_t k = 0; k + 1 < data.size(); ++k) {
        v += data.dt * cm.f(v) + K * (data.increment(k) - data.dt * cm.h(v));
        require_finite(v, "continuous_3dvar");
        out.states.push_back(v);
    }
    return out;
}

GaussianPath kalman_bucy(const Matrix& F, const Matrix& H, const Matrix& sigma, const Matrix& gamma,
                         const Vector& m0, const Matrix& C0, const SdePath& data)
{
    if (F.rows() != m0.size() || H.cols() != m0.size() || gamma.rows() != H.rows())
        throw DimensionMismatch("kalman_bucy: shapes disagree");
    const double dt = data.dt;
    const Matrix hg = right_solve_spd(H.transpose(), gamma);  // H^T Gamma^{-1}
    const Matrix B = hg * H;
    GaussianPath out;
    out.dt = dt;
    out.states.reserve(data.size());
    Vector m = m0;
    Matrix C = C0;
    out.states.push_back({m, C});
    for (std::size_t k = 0; k + 1 < data.size(); ++k) {
        const Vector dz = data.increment(k);
        const Vector dm = dt * F * m + C * hg * (dz - dt * H * m);
        const Matrix dC = dt * (F * C + C * F.transpose() + sigma - C * B * C);
        m += dm;
        C = symmetrize(C + dC);
        require_finite(m, "kalman_bucy");
        out.states.push_back({m, C});
    }
    return out;
}

GaussianPath rescaled_kalman_filter(const Matrix& F, const Matrix& H, const Matrix& sigma,
                                    const Matrix& gamma, const Vector& m0, const Matrix& C0,
                                    const SdePath& data)
{
    const double dt = data.dt;
    const Eigen::Index d = m0.size();
    const Matrix M = Matrix::Identity(d, d) + dt * F;
    const Matrix Hd = dt * H;
    GaussianPath out;
    out.dt = dt;
    out.states.reserve(data.size());
    Gaussian g{m0, C0};
    out.states.push_back(g);
    for (std::size_t k = 0; k + 1 < data.size(); ++k) {
        const Gaussian pred = kalman_predict(M, dt * sigma, g);
        JointGaussian j{pred.mean, Hd * pred.mean, pred.cov, pred.cov * Hd.transpose(),
                        symmetrize(Hd * pred.cov * Hd.transpose() + dt * gamma)};
        const Matrix gain = kalman_gain(j.c_vy, j.c_yy);
        g.mean = j.mean_v + gain * (data.increment(k) - j.mean_y);
        g.cov = symmetrize(j.c_vv - gain * j.c_vy.transpose());
        out.states.push_back(g);
    }
    return out;
}

Ensemble enkbf_stochastic_step(const ContinuousModel& cm, const Ensemble& e, const Vector& dz,
                               double dt, const SeededStream& stream, std::uint64_t step,
                               Scaling scaling)
{
    return enkbf_step(Kind::Stochastic, cm, e, dz, dt, stream, step, scaling);
}

Ensemble enkbf_deterministic_step(const ContinuousModel& cm, const Ensemble& e, const Vector& dz,
                                  double dt, const SeededStream& stream, std::uint64_t step,
                                  Scaling scaling)
{
    return enkbf_step(Kind::Deterministic, cm, e, dz, dt, stream, step, scaling);
}

}  // namespace enkf
