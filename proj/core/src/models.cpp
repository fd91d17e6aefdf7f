#include "enkf/models.hpp"

#include "enkf/errors.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <string>

namespace enkf {

namespace {

constexpr double kBlowUp = 1e6;

inline Eigen::Index wrap(Eigen::Index i, Eigen::Index n) { return ((i % n) + n) % n; }

void check_finite(const Vector& v)
{
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > kBlowUp)
        throw NonFinite("state left the finite range (|v|_inf > 1e6)");
}

// Fast tendency (unscaled by 1/eps) on the flattened ring of L*J variables.
void fast_tendency(const L96MultiscaleParams& p, const Vector& v, const Vector& w, Vector& out)
{
    const Eigen::Index n = w.size();
    out.resize(n);
    auto term = [&](Eigen::Index k, Eigen::Index kp1, Eigen::Index kp2, Eigen::Index km1) {
        out[k] = -w[kp1] * (w[kp2] - w[km1]) - w[k] + p.h_w * v[k / p.J];
    };
    term(0, 1, 2, n - 1);
    for (Eigen::Index k = 1; k + 2 < n; ++k) term(k, k + 1, k + 2, k - 1);
    term(n - 2, n - 1, 0, n - 3);
    term(n - 1, 0, 1, n - 2);
}

}  // namespace

CubicClosure default_closure()
{
    // Output of fit_default_closure(L96MultiscaleParams{}, default_closure_grid(), 20.0).
    return CubicClosure{{0.21814701310628123, 0.27940783389819546, 0.0027678761094904638,
                         -0.00063627324845093997}};
}

std::vector<double> default_closure_grid()
{
    std::vector<double> g;
    for (int i = 0; i <= 50; ++i) g.push_back(-10.0 + 0.5 * i);
    return g;
}

DynamicsModel linear_dynamics(const Matrix& m, const Matrix& sigma)
{
    if (m.rows() != m.cols() || sigma.rows() != m.rows() || sigma.cols() != m.cols())
        throw DimensionMismatch("linear_dynamics: shapes disagree");
    DynamicsModel d;
    d.flow = [m](const Vector& v) -> Vector { return m * v; };
    d.process_noise = sigma;
    d.linear = m;
    return d;
}

ObservationModel linear_observation(const Matrix& h, const Matrix& gamma)
{
    if (gamma.rows() != h.rows() || gamma.cols() != h.rows())
        throw DimensionMismatch("linear_observation: shapes disagree");
    ObservationModel o;
    o.h = [h](const Vector& v) -> Vector { return h * v; };
    o.noise = gamma;
    o.linear = h;
    return o;
}

Vector l96_vector_field(const L96Params& p, const Vector& v)
{
    const Eigen::Index n = v.size();
    if (n != p.L) throw DimensionMismatch("l96_vector_field: state dimension differs from L");
    Vector dv(n);
    for (Eigen::Index l = 0; l < n; ++l) {
        dv[l] = -v[wrap(l - 1, n)] * (v[wrap(l - 2, n)] - v[wrap(l + 1, n)]) - v[l] + p.F;
        if (p.h_v != 0.0 && p.closure) dv[l] += p.h_v * p.closure(v[l]);
    }
    return dv;
}

MultiscaleDerivative l96ms_vector_field(const L96MultiscaleParams& p, const Vector& v, const Matrix& w)
{
    if (v.size() != p.L || w.rows() != p.L || w.cols() != p.J)
        throw DimensionMismatch("l96ms_vector_field: expected v of size L and w of shape L x J");
    const Eigen::Index L = p.L;
    MultiscaleDerivative out;
    out.slow.resize(L);
    for (Eigen::Index l = 0; l < L; ++l) {
        out.slow[l] = -v[wrap(l - 1, L)] * (v[wrap(l - 2, L)] - v[wrap(l + 1, L)]) - v[l] + p.F
                      + p.h_v * w.row(l).mean();
    }
    // Row-major flattening realises w_{l,j+J} = w_{l+1,j}.
    Vector flat(L * p.J);
    for (Eigen::Index l = 0; l < L; ++l)
        for (Eigen::Index j = 0; j < p.J; ++j) flat[l * p.J + j] = w(l, j);
    Vector r;
    fast_tendency(p, v, flat, r);
    out.fast.resize(L, p.J);
    for (Eigen::Index l = 0; l < L; ++l)
        for (Eigen::Index j = 0; j < p.J; ++j) out.fast(l, j) = r[l * p.J + j] / p.eps;
    return out;
}

VectorField l96ms_packed_field(const L96MultiscaleParams& p)
{
    return [p](const Vector& x) -> Vector {
        const Eigen::Index L = p.L, nf = static_cast<Eigen::Index>(p.L) * p.J;
        if (x.size() != L + nf) throw DimensionMismatch("l96ms packed state has wrong size");
        const Vector v = x.head(L);
        const Vector w = x.tail(nf);
        Vector out(L + nf);
        for (Eigen::Index l = 0; l < L; ++l)
            out[l] = -v[wrap(l - 1, L)] * (v[wrap(l - 2, L)] - v[wrap(l + 1, L)]) - v[l] + p.F
                     + p.h_v * w.segment(l * p.J, p.J).mean();
        Vector r;
        fast_tendency(p, v, w, r);
        out.tail(nf) = r / p.eps;
        return out;
    };
}

Vector rk4_flow(const VectorField& field, Vector v0, double tau, double dt_inner)
{
    if (!(tau > 0.0) || !(dt_inner > 0.0)) throw ConfigError("rk4_flow: tau and dt_inner must be positive");
    const long steps = std::max(1L, std::lround(tau / dt_inner));
    const double h = tau / static_cast<double>(steps);
    Vector v = std::move(v0);
    for (long s = 0; s < steps; ++s) {
        const Vector k1 = field(v);
        const Vector k2 = field(v + 0.5 * h * k1);
        const Vector k3 = field(v + 0.5 * h * k2);
        const Vector k4 = field(v + h * k3);
        v += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        check_finite(v);
    }
    return v;
}

DynamicsModel l96_dynamics(const L96Params& p, double tau, double sigma2)
{
    if (!(tau > 0.0)) throw ConfigError("l96_dynamics: tau must be positive");
    const long steps = std::max(1L, std::lround(tau / std::min(tau, 1e-3)));
    const double h = tau / static_cast<double>(steps);
    DynamicsModel d;
    // Allocation-free RK4; same arithmetic as rk4_flow on l96_vector_field.
    d.flow = [p, steps, h](const Vector& v0) -> Vector {
        const Eigen::Index n = p.L;
        if (v0.size() != n) throw DimensionMismatch("l96 flow: state dimension differs from L");
        Vector v = v0, k1(n), k2(n), k3(n), k4(n), tmp(n);
        const CubicClosure* cubic = p.closure ? p.closure.target<CubicClosure>() : nullptr;
        const bool coupled = p.h_v != 0.0 && p.closure;
        auto field = [&](const Vector& x, Vector& out) {
            for (Eigen::Index l = 0; l < n; ++l) {
                const Eigen::Index lm1 = l == 0 ? n - 1 : l - 1;
                const Eigen::Index lm2 = l < 2 ? l + n - 2 : l - 2;
                const Eigen::Index lp1 = l == n - 1 ? 0 : l + 1;
                out[l] = -x[lm1] * (x[lm2] - x[lp1]) - x[l] + p.F;
            }
            if (!coupled) return;
            for (Eigen::Index l = 0; l < n; ++l) out[l] += p.h_v * (cubic ? (*cubic)(x[l]) : p.closure(x[l]));
        };
        for (long s = 0; s < steps; ++s) {
            field(v, k1);
            tmp.noalias() = v + 0.5 * h * k1;
            field(tmp, k2);
            tmp.noalias() = v + 0.5 * h * k2;
            field(tmp, k3);
            tmp.noalias() = v + h * k3;
            field(tmp, k4);
            v += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            check_finite(v);
        }
        return v;
    };
    d.process_noise = sigma2 * Matrix::Identity(p.L, p.L);
    return d;
}

ClosureFit fit_default_closure(const L96MultiscaleParams& p, const std::vector<double>& v_grid,
                               double t_avg, double t_spinup, std::uint64_t seed,
                               double fast_substeps)
{
    if (v_grid.size() < 4) throw ConfigError("fit_default_closure: need at least four grid values");
    if (!(t_avg > 0.0) || t_spinup < 0.0) throw ConfigError("fit_default_closure: bad averaging window");
    const Eigen::Index nf = static_cast<Eigen::Index>(p.L) * p.J;
    const double h = p.eps / fast_substeps;
    const long spin = std::lround(t_spinup / h);
    const long avg = std::max(1L, std::lround(t_avg / h));

    ClosureFit fit;
    fit.grid = v_grid;
    fit.averages.resize(v_grid.size());
    const SeededStream stream(seed);

    for (std::size_t g = 0; g < v_grid.size(); ++g) {
        const Vector v = Vector::Constant(p.L, v_grid[g]);
        Rng rng = stream.engine(Phase::User, 0, g);
        Vector w = Vector::Constant(nf, p.h_w * v_grid[g]) + rng.normals(nf);
        Vector k1, k2, k3, k4;
        auto rhs = [&](const Vector& x, Vector& out) {
            fast_tendency(p, v, x, out);
            out /= p.eps;
        };
        double acc = 0.0;
        for (long s = 0; s < spin + avg; ++s) {
            rhs(w, k1);
            rhs(w + 0.5 * h * k1, k2);
            rhs(w + 0.5 * h * k2, k3);
            rhs(w + h * k3, k4);
            w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!w.allFinite() || w.cwiseAbs().maxCoeff() > kBlowUp)
                throw NonFinite("fit_default_closure: fast subsystem blew up");
            if (s >= spin) acc += w.mean();
        }
        fit.averages[g] = acc / static_cast<double>(avg);
    }

    Matrix A(static_cast<Eigen::Index>(v_grid.size()), 4);
    Vector b(A.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        const double x = v_grid[static_cast<std::size_t>(i)];
        A(i, 0) = 1.0;
        A(i, 1) = x;
        A(i, 2) = x * x;
        A(i, 3) = x * x * x;
        b[i] = fit.averages[static_cast<std::size_t>(i)];
    }
    const Vector c = A.colPivHouseholderQr().solve(b);
    for (int k = 0; k < 4; ++k) fit.closure.coeffs[static_cast<std::size_t>(k)] = c[k];
    return fit;
}

L96ObservationOperators l96_observation()
{
    L96ObservationOperators ops;
    ops.H = Matrix::Zero(6, 9);
    ops.K = Matrix::Zero(9, 6);
    const int observed[6] = {0, 1, 3, 4, 6, 7};
    for (int i = 0; i < 6; ++i) {
        ops.H(i, observed[i]) = 1.0;
        ops.K(observed[i], i) = 1.0;
    }
    return ops;
}

}  // namespace enkf
