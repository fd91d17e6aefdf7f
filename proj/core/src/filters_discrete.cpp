#include "enkf/filters_discrete.hpp"

#include "enkf/errors.hpp"
#include "enkf/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>

namespace enkf {

namespace {

void require_members(const Ensemble& e)
{
    if (e.size() < 2) throw TooFewMembers("ensemble filters need at least two members");
}

Matrix map_columns(const VectorMap& f, const Matrix& x, Eigen::Index out_rows)
{
    Matrix out(out_rows, x.cols());
    parallel_for(x.cols(), [&](std::ptrdiff_t j) {
        const Vector r = f(x.col(j));
        if (r.size() != out_rows) throw DimensionMismatch("map output has unexpected size");
        out.col(j) = r;
    });
    return out;
}

Matrix noise_columns(const Matrix& cov, Eigen::Index n, const SeededStream& stream, Phase phase,
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

bool is_zero(const Matrix& m) { return m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0; }

struct ForecastStats {
    Vector m_v;
    Vector m_h;
    Matrix V;   // scaled state deviations
    Matrix Hd;  // scaled observation deviations
    Matrix hx;  // h(v_j)
};

ForecastStats forecast_stats(const ObservationModel& obs, const Ensemble& fc, Scaling s)
{
    require_members(fc);
    ForecastStats st;
    st.hx = observe(obs, fc);
    const double c = std::sqrt(covariance_factor(s, fc.size()));
    st.m_v = fc.members().rowwise().mean();
    st.m_h = st.hx.rowwise().mean();
    st.V = c * (fc.members().colwise() - st.m_v);
    st.Hd = c * (st.hx.colwise() - st.m_h);
    return st;
}

}  // namespace

Vector threedvar_step(const DynamicsModel& dyn, const ObservationModel& obs, const Matrix& K,
                      const Vector& v, const Vector& y_obs)
{
    const Vector vh = dyn.flow(v);
    if (K.rows() != vh.size() || K.cols() != y_obs.size())
        throw DimensionMismatch("threedvar_step: gain shape mismatch");
    return vh + K * (y_obs - obs.h(vh));
}

Vector noisy_threedvar_step(const DynamicsModel& dyn, const ObservationModel& obs, const Matrix& K,
                            const Vector& v, const Vector& y_obs, const SeededStream& stream,
                            std::uint64_t step)
{
    Rng fr = stream.engine(Phase::Forecast, step, 0);
    Rng ar = stream.engine(Phase::Analysis, step, 0);
    const Vector vh = dyn.flow(v) + psd_sqrt(dyn.process_noise, 1e-10).root * fr.normals(v.size());
    const Vector eta = psd_sqrt(obs.noise, 1e-10).root * ar.normals(obs.dim_y());
    if (K.rows() != vh.size() || K.cols() != y_obs.size())
        throw DimensionMismatch("noisy_threedvar_step: gain shape mismatch");
    return vh + K * (y_obs - obs.h(vh) - eta);
}

Gaussian kalman_predict(const Matrix& M, const Matrix& sigma, const Gaussian& prior)
{
    if (M.cols() != prior.dim() || sigma.rows() != M.rows())
        throw DimensionMismatch("kalman_predict: shapes disagree");
    return Gaussian{M * prior.mean, symmetrize(M * prior.cov * M.transpose() + sigma)};
}

Gaussian kalman_update(const Matrix& H, const Matrix& gamma, const Gaussian& predicted,
                       const Vector& y_obs, const ConditionOptions& opt)
{
    if (H.cols() != predicted.dim() || gamma.rows() != H.rows() || y_obs.size() != H.rows())
        throw DimensionMismatch("kalman_update: shapes disagree");
    JointGaussian j;
    j.mean_v = predicted.mean;
    j.mean_y = H * predicted.mean;
    j.c_vv = predicted.cov;
    j.c_vy = predicted.cov * H.transpose();
    j.c_yy = symmetrize(H * predicted.cov * H.transpose() + gamma);
    return condition_joint(j, y_obs, opt);
}

Gaussian kalman_step(const Matrix& M, const Matrix& H, const Matrix& sigma, const Matrix& gamma,
                     const Gaussian& prior, const Vector& y_obs, const ConditionOptions& opt)
{
    return kalman_update(H, gamma, kalman_predict(M, sigma, prior), y_obs, opt);
}

HermiteRule gauss_hermite(int n)
{
    if (n < 1) throw ConfigError("gauss_hermite: need at least one node");
    Matrix jac = Matrix::Zero(n, n);
    for (int k = 1; k < n; ++k) jac(k, k - 1) = jac(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Matrix> es(jac);
    HermiteRule r;
    r.nodes = es.eigenvalues();
    r.weights = es.eigenvectors().row(0).transpose().array().square();
    r.weights /= r.weights.sum();
    return r;
}

Gaussian gpf_step(const DynamicsModel& dyn, const ObservationModel& obs, const Gaussian& prior,
                  const Vector& y_obs, Eigen::Index quad_size, const SeededStream& stream,
                  std::uint64_t step, const GpfOptions& opt)
{
    const Eigen::Index d = prior.dim();
    const Eigen::Index dy = obs.dim_y();
    JointGaussian j;

    if (opt.rule == QuadratureRule::MonteCarlo) {
        if (quad_size < 2) throw TooFewMembers("gpf_step: quadrature size must be at least 2");
        const Ensemble x = sample(prior, quad_size, stream, Phase::Quadrature, step);
        Matrix vh = map_columns(dyn.flow, x.members(), d);
        if (!is_zero(dyn.process_noise))
            vh += noise_columns(dyn.process_noise, quad_size, stream, Phase::Forecast, step);
        Matrix yh = map_columns(obs.h, vh, dy)
                    + noise_columns(obs.noise, quad_size, stream, Phase::Analysis, step);
        const Ensemble ev(vh), ey(yh);
        const Gaussian mv = empirical_moments(ev), my = empirical_moments(ey);
        j = JointGaussian{mv.mean, my.mean, mv.cov, cross_covariance(ev, ey), my.cov};
    } else {
        const bool noisy = !is_zero(dyn.process_noise);
        const Eigen::Index dim = noisy ? 2 * d : d;
        if (dim > 3) throw ConfigError("gpf_step: Gauss-Hermite product rule limited to 3 dimensions");
        const HermiteRule rule = gauss_hermite(opt.hermite_points);
        const Matrix root = psd_sqrt(prior.cov, 1e-10).root;
        const Matrix sroot = noisy ? psd_sqrt(dyn.process_noise, 1e-10).root : Matrix();
        const auto n = static_cast<Eigen::Index>(opt.hermite_points);
        Eigen::Index total = 1;
        for (Eigen::Index k = 0; k < dim; ++k) total *= n;
        Matrix vh(d, total), hh(dy, total);
        Vector w(total);
        for (Eigen::Index idx = 0; idx < total; ++idx) {
            Vector z(dim);
            double weight = 1.0;
            Eigen::Index rest = idx;
            for (Eigen::Index k = 0; k < dim; ++k) {
                z[k] = rule.nodes[rest % n];
                weight *= rule.weights[rest % n];
                rest /= n;
            }
            Vector v = dyn.flow(prior.mean + root * z.head(d));
            if (noisy) v += sroot * z.tail(d);
            vh.col(idx) = v;
            hh.col(idx) = obs.h(v);
            w[idx] = weight;
        }
        j.mean_v = vh * w;
        j.mean_y = hh * w;
        const Matrix dv = vh.colwise() - j.mean_v;
        const Matrix dh = hh.colwise() - j.mean_y;
        j.c_vv = symmetrize(dv * w.asDiagonal() * dv.transpose());
        j.c_vy = dv * w.asDiagonal() * dh.transpose();
        j.c_yy = symmetrize(dh * w.asDiagonal() * dh.transpose() + obs.noise);
    }
    return condition_joint(j, y_obs, opt.condition);
}

Ensemble forecast(const DynamicsModel& dyn, const Ensemble& e, const SeededStream& stream,
                  std::uint64_t step)
{
    Matrix x = dyn.linear ? Matrix(*dyn.linear * e.members()) : map_columns(dyn.flow, e.members(), e.dim());
    if (!is_zero(dyn.process_noise))
        x += noise_columns(dyn.process_noise, e.size(), stream, Phase::Forecast, step);
    return Ensemble(std::move(x));
}

Matrix observe(const ObservationModel& obs, const Ensemble& e)
{
    if (obs.linear) return *obs.linear * e.members();
    return map_columns(obs.h, e.members(), obs.dim_y());
}

Ensemble enkf_analysis(const ObservationModel& obs, const Ensemble& fc, const Vector& y_obs,
                       const SeededStream& stream, std::uint64_t step, Innovation innovation,
                       const FilterOptions& opt)
{
    if (y_obs.size() != obs.dim_y()) throw DimensionMismatch("enkf_analysis: data dimension");
    const ForecastStats st = forecast_stats(obs, fc, opt.scaling);
    const Matrix c_vh = st.V * st.Hd.transpose();
    const Matrix c_hh = symmetrize(st.Hd * st.Hd.transpose());
    const Matrix K = right_solve_spd(c_vh, symmetrize(c_hh + obs.noise), opt.condition);

    Matrix innov(obs.dim_y(), fc.size());
    switch (innovation) {
    case Innovation::Control:
        innov = (-st.hx).colwise() + y_obs;
        break;
    case Innovation::Stochastic:
        innov = ((-st.hx).colwise() + y_obs)
                - noise_columns(obs.noise, fc.size(), stream, Phase::Analysis, step);
        break;
    case Innovation::Deterministic:
        innov = ((-0.5 * st.hx).colwise() + (y_obs - 0.5 * st.m_h));
        break;
    }
    return Ensemble(fc.members() + K * innov);
}

Ensemble enkf_step(const DynamicsModel& dyn, const ObservationModel& obs, const Ensemble& e,
                   const Vector& y_obs, const SeededStream& stream, std::uint64_t step,
                   Innovation innovation, const FilterOptions& opt)
{
    return enkf_analysis(obs, forecast(dyn, e, stream, step), y_obs, stream, step, innovation, opt);
}

Matrix square_root_target_covariance(const ObservationModel& obs, const Ensemble& fc, Scaling scaling)
{
    const ForecastStats st = forecast_stats(obs, fc, scaling);
    const Matrix c = st.V * st.V.transpose();
    const Matrix c_vh = st.V * st.Hd.transpose();
    const Matrix s = symmetrize(st.Hd * st.Hd.transpose() + obs.noise);
    return symmetrize(c - right_solve_spd(c_vh, s) * c_vh.transpose());
}

Ensemble eakf_state_analysis(const ObservationModel& obs, const Ensemble& fc, const Vector& y_obs,
                             const FilterOptions& opt)
{
    if (y_obs.size() != obs.dim_y()) throw DimensionMismatch("eakf_state_analysis: data dimension");
    const ForecastStats st = forecast_stats(obs, fc, opt.scaling);
    const Matrix c_hat = symmetrize(st.V * st.V.transpose());
    if (opt.strict && psd_rank(c_hat) < fc.dim())
        throw RankDeficientState("eakf_state_analysis: forecast covariance is rank deficient");
    const Matrix c_vh = st.V * st.Hd.transpose();
    const Matrix s = symmetrize(st.Hd * st.Hd.transpose() + obs.noise);
    const Matrix K = right_solve_spd(c_vh, s, opt.condition);
    const Matrix c_post = symmetrize(c_hat - K * c_vh.transpose());
    // C^{1/2} C^^{-1/2}, the inverse root acting on the ensemble range only.
    const Matrix A = psd_sqrt(c_post, 1e-10).root * psd_inv_sqrt(c_hat, 1e-10);
    const Vector m = st.m_v + K * (y_obs - st.m_h);
    Matrix x = A * (fc.members().colwise() - st.m_v);
    x.colwise() += m;
    return Ensemble(std::move(x));
}

Ensemble eakf_state_step(const DynamicsModel& dyn, const ObservationModel& obs, const Ensemble& e,
                         const Vector& y_obs, const SeededStream& stream, std::uint64_t step,
                         const FilterOptions& opt)
{
    return eakf_state_analysis(obs, forecast(dyn, e, stream, step), y_obs, opt);
}

Matrix eakf_obs_gain(const Matrix& c_vh, const Matrix& c_hh, const Matrix& gamma)
{
    const Matrix s = symmetrize(c_hh + gamma);
    const Matrix n = s + psd_sqrt(gamma, 1e-10).root * psd_sqrt(s, 1e-10).root;
    // K~ = c_vh n^{-1}  <=>  n^T K~^T = c_vh^T
    return n.transpose().partialPivLu().solve(c_vh.transpose()).transpose();
}

Ensemble eakf_obs_analysis(const ObservationModel& obs, const Ensemble& fc, const Vector& y_obs,
                           const FilterOptions& opt)
{
    if (y_obs.size() != obs.dim_y()) throw DimensionMismatch("eakf_obs_analysis: data dimension");
    const ForecastStats st = forecast_stats(obs, fc, opt.scaling);
    const Matrix c_vh = st.V * st.Hd.transpose();
    const Matrix c_hh = symmetrize(st.Hd * st.Hd.transpose());
    const Matrix K = right_solve_spd(c_vh, symmetrize(c_hh + obs.noise), opt.condition);
    const Matrix Kt = eakf_obs_gain(c_vh, c_hh, obs.noise);
    const Vector m = st.m_v + K * (y_obs - st.m_h);
    Matrix x = (fc.members().colwise() - st.m_v) - Kt * (st.hx.colwise() - st.m_h);
    x.colwise() += m;
    return Ensemble(std::move(x));
}

Ensemble eakf_obs_step(const DynamicsModel& dyn, const ObservationModel& obs, const Ensemble& e,
                       const Vector& y_obs, const SeededStream& stream, std::uint64_t step,
                       const FilterOptions& opt)
{
    return eakf_obs_analysis(obs, forecast(dyn, e, stream, step), y_obs, opt);
}

Matrix TransformWeights::transform() const
{
    const Eigen::Index n = size();
    return Matrix::Identity(n, n) + Q * shrink.asDiagonal() * Q.transpose();
}

Matrix TransformWeights::dense() const
{
    Matrix s = transform();
    s.colwise() += shift;
    return s;
}

Vector TransformWeights::column_sums() const
{
    const Eigen::Index n = size();
    const Vector q1 = Q.transpose() * Vector::Ones(n);
    return Vector::Ones(n) + Q * shrink.asDiagonal() * q1 + Vector::Constant(n, shift.sum());
}

Matrix TransformWeights::apply(const Matrix& members) const
{
    if (members.cols() != size()) throw MemberCountMismatch("TransformWeights::apply: member count");
    Matrix out = members + (members * Q) * shrink.asDiagonal() * Q.transpose();
    out.colwise() += members * shift;
    return out;
}

EtkfResult etkf_analysis(const ObservationModel& obs, const Ensemble& fc, const Vector& y_obs,
                         const FilterOptions& opt)
{
    if (y_obs.size() != obs.dim_y()) throw DimensionMismatch("etkf_analysis: data dimension");
    const ForecastStats st = forecast_stats(obs, fc, opt.scaling);
    const Eigen::Index J = fc.size();
    const double c = std::sqrt(covariance_factor(opt.scaling, J));

    // W = L^{-1} H^ with Gamma = L L^T, so W^T W = H^^T Gamma^{-1} H^.
    Eigen::LLT<Matrix> llt(symmetrize(obs.noise));
    if (llt.info() != Eigen::Success) throw SingularDataCovariance("etkf: Gamma is not PD");
    const Matrix W = llt.matrixL().solve(st.Hd);
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(W * W.transpose()));
    const Vector s2 = es.eigenvalues().cwiseMax(0.0);
    const double cut = 1e-14 * std::max(1.0, s2.size() ? s2.maxCoeff() : 0.0);

    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s2.size(); ++i) r += s2[i] > cut ? 1 : 0;
    TransformWeights tw;
    tw.Q.resize(J, r);
    tw.shrink.resize(r);
    Vector sq(r);
    for (Eigen::Index i = 0, k = 0; i < s2.size(); ++i) {
        if (s2[i] <= cut) continue;
        const double s = std::sqrt(s2[i]);
        tw.Q.col(k) = W.transpose() * es.eigenvectors().col(i) / s;
        tw.shrink[k] = 1.0 / std::sqrt(1.0 + s2[i]) - 1.0;
        sq[k] = 1.0 / (1.0 + s2[i]) - 1.0;
        ++k;
    }

    // w = Z^2 H^^T Gamma^{-1} (y - mean h)
    const Vector g = W.transpose() * llt.matrixL().solve(y_obs - st.m_h);
    const Vector w = g + tw.Q * (sq.asDiagonal() * (tw.Q.transpose() * g));
    tw.shift = c * (w.array() - w.mean()).matrix();

    EtkfResult out{Ensemble(tw.apply(fc.members())), std::move(tw)};
    return out;
}

EtkfResult etkf_step(const DynamicsModel& dyn, const ObservationModel& obs, const Ensemble& e,
                     const Vector& y_obs, const SeededStream& stream, std::uint64_t step,
                     const FilterOptions& opt)
{
    return etkf_analysis(obs, forecast(dyn, e, stream, step), y_obs, opt);
}

}  // namespace enkf
