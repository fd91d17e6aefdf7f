// Acceptance run: one PASS/FAIL line per criterion.
// Exit status is 0 once every criterion has been evaluated; pass --strict to
// turn any FAIL into a non-zero exit. Numeric arguments restrict the run to
// those criteria (12 then replays only the selected ones).

#include "enkf/filters_continuous.hpp"
#include "enkf/filters_discrete.hpp"
#include "enkf/harness.hpp"
#include "enkf/inversion.hpp"
#include "enkf/parallel.hpp"
#include "enkf/transport_maps.hpp"

#include "../unit/support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace enkf;
using enkf::testing::random_matrix;
using enkf::testing::random_spd;
using enkf::testing::random_stable;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    std::vector<std::string> prints;  // one fingerprint per replicate, compared in the determinism check
};

std::string fp(const Matrix& m)
{
    std::string s;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        s += format_double(m.data()[i]);
        s += ',';
    }
    return s;
}

std::string fp(const Gaussian& g) { return fp(g.mean) + '|' + fp(g.cov); }

std::string fmt(const char* f, double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

Matrix eye(Eigen::Index n) { return Matrix::Identity(n, n); }
Matrix scalar(double x) { return Matrix::Constant(1, 1, x); }
double inv_sqrt(Eigen::Index J) { return 1.0 / std::sqrt(static_cast<double>(J)); }

// ---------------------------------------------------------------- 1

Outcome linear_gaussian_exactness()
{
    const Eigen::Index d = 5, k = 3, J = 10000;
    const int steps = 30, seeds = 20;
    Rng sys(2024);
    const Matrix M = random_stable(d, sys, 0.9);
    const Matrix H = random_matrix(k, d, sys);
    const Matrix Sigma = 0.1 * eye(d);
    const Matrix Gamma = 0.5 * eye(k);
    const DynamicsModel dyn = linear_dynamics(M, Sigma);
    const ObservationModel obs = linear_observation(H, Gamma);
    const Matrix sigma_root = psd_sqrt(Sigma).root, gamma_root = psd_sqrt(Gamma).root;

    using Step = std::function<Ensemble(const Ensemble&, const Vector&, const SeededStream&, std::uint64_t)>;
    const std::vector<std::pair<std::string, Step>> filters{
        {"EnKF", [&](const Ensemble& e, const Vector& y, const SeededStream& s, std::uint64_t n) {
             return enkf_step(dyn, obs, e, y, s, n);
         }},
        {"EAKF-state", [&](const Ensemble& e, const Vector& y, const SeededStream& s, std::uint64_t n) {
             return eakf_state_step(dyn, obs, e, y, s, n);
         }},
        {"EAKF-obs", [&](const Ensemble& e, const Vector& y, const SeededStream& s, std::uint64_t n) {
             return eakf_obs_step(dyn, obs, e, y, s, n);
         }},
        {"ETKF", [&](const Ensemble& e, const Vector& y, const SeededStream& s, std::uint64_t n) {
             return etkf_step(dyn, obs, e, y, s, n).ensemble;
         }},
    };

    std::vector<int> passed(filters.size(), 0);
    std::vector<double> worst(filters.size(), 0.0);
    Outcome out;
    for (int s = 1; s <= seeds; ++s) {
        const SeededStream st(static_cast<std::uint64_t>(s));
        Vector v = st.engine(Phase::TruthInit, 0, 0).normals(d);
        std::vector<Vector> ys;
        for (int n = 0; n < steps; ++n) {
            Rng pr = st.engine(Phase::TruthProcess, n, 0), ob = st.engine(Phase::TruthObservation, n, 0);
            v = M * v + sigma_root * pr.normals(d);
            ys.push_back(H * v + gamma_root * ob.normals(k));
        }
        std::vector<Gaussian> kf{Gaussian{Vector::Zero(d), eye(d)}};
        for (int n = 0; n < steps; ++n) kf.push_back(kalman_step(M, H, Sigma, Gamma, kf.back(), ys[n]));

        const Ensemble e0 = sample(kf.front(), J, st, Phase::FilterInit);
        std::string print;
        for (std::size_t f = 0; f < filters.size(); ++f) {
            Ensemble e = e0;
            bool ok = true;
            for (int n = 0; n < steps; ++n) {
                e = filters[f].second(e, ys[n], st, static_cast<std::uint64_t>(n));
                const Gaussian m = empirical_moments(e);
                const Gaussian& ref = kf[n + 1];
                const double em = (m.mean - ref.mean).norm() / (5.0 * inv_sqrt(J) * std::sqrt(ref.cov.trace()));
                const double ec = (m.cov - ref.cov).norm() / (10.0 * inv_sqrt(J) * ref.cov.norm());
                worst[f] = std::max({worst[f], em, ec});
                ok = ok && em <= 1.0 && ec <= 1.0;
            }
            passed[f] += ok;
            print += fp(empirical_moments(e));
        }
        out.prints.push_back(print);
    }
    out.pass = true;
    for (std::size_t f = 0; f < filters.size(); ++f) {
        out.pass = out.pass && passed[f] >= 18;
        out.detail += filters[f].first + " " + std::to_string(passed[f]) + "/20 (worst error/tol " +
                      fmt("%.2f", worst[f]) + ") ";
    }
    return out;
}

// ---------------------------------------------------------------- 2

Outcome square_root_identity()
{
    const L96Params p;
    const DynamicsModel dyn = l96_dynamics(p, 0.01, 0.01);
    const L96ObservationOperators ops = l96_observation();
    const ObservationModel obs = linear_observation(ops.H, 0.01 * eye(6));
    const SeededStream st(5);
    const Ensemble e0 = sample({Vector::Constant(9, 2.0), 4.0 * eye(9)}, 20, st, Phase::FilterInit);

    Vector v = Vector::Constant(9, 2.0);
    double worst = 0.0;
    Outcome out;
    Ensemble a = e0, b = e0, c = e0;
    for (int n = 0; n < 50; ++n) {
        const auto k = static_cast<std::uint64_t>(n);
        v = dyn.flow(v);
        const Vector y = ops.H * v + 0.1 * st.engine(Phase::TruthObservation, k, 0).normals(6);
        for (Ensemble* e : {&a, &b, &c}) {
            const Ensemble fc = forecast(dyn, *e, st, k);
            const Matrix target = square_root_target_covariance(obs, fc);
            if (e == &a) *e = etkf_analysis(obs, fc, y).ensemble;
            if (e == &b) *e = eakf_state_analysis(obs, fc, y);
            if (e == &c) *e = eakf_obs_analysis(obs, fc, y);
            worst = std::max(worst, (empirical_moments(*e).cov - target).norm());
        }
    }
    out.prints.push_back(fp(a.members()) + fp(b.members()) + fp(c.members()));
    out.pass = worst <= 1e-10;
    out.detail = "ETKF/EAKF-state/EAKF-obs, 50 steps, max Frobenius gap " + fmt("%.2e", worst);
    return out;
}

// ---------------------------------------------------------------- 3

Outcome kalman_bucy_consistency()
{
    const Matrix F{{-0.5, 1.0}, {-1.0, -0.5}};
    const Matrix H{{1.0, 0.5}};
    const Matrix S = 0.2 * eye(2);
    const Matrix G = scalar(0.3);
    const ContinuousModel cm = linear_continuous(F, H, S, G);
    const double fine = 1e-5;
    const TruthAndData td = synthesize_truth(cm, Vector::Ones(2), 1.0, fine, SeededStream(3));
    const GaussianPath ref = kalman_bucy(F, H, S, G, Vector::Zero(2), eye(2), td.data);

    std::vector<double> lx, ly;
    std::string detail = "errors";
    Outcome out;
    for (const std::size_t factor : {1000u, 100u, 10u}) {
        const GaussianPath kf = rescaled_kalman_filter(F, H, S, G, Vector::Zero(2), eye(2), subsample(td.data, factor));
        double err = 0.0;
        for (std::size_t k = 0; k < kf.states.size(); ++k) {
            const Gaussian& r = ref.states[k * factor];
            err = std::max(err, (kf.states[k].mean - r.mean).norm() + (kf.states[k].cov - r.cov).norm());
        }
        lx.push_back(std::log(fine * static_cast<double>(factor)));
        ly.push_back(std::log(err));
        detail += " " + fmt("%.3e", err);
        out.prints.push_back(fp(kf.states.back()));
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / 3.0;
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / 3.0;
    double sxy = 0.0, sxx = 0.0;
    for (int i = 0; i < 3; ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double order = sxy / sxx;
    out.pass = std::abs(order - 1.0) <= 0.2;
    out.detail = "observed order " + fmt("%.3f", order) + " over dt 1e-2,1e-3,1e-4 (" + detail + ")";
    return out;
}

// ---------------------------------------------------------------- 4

Outcome enkbf_law_equivalence()
{
    const Matrix F{{-0.5, 1.0}, {-1.0, -0.5}};
    const Matrix H{{1.0, 0.0}};
    const Matrix S = 0.2 * eye(2);
    const Matrix G = scalar(0.3);
    const ContinuousModel cm = linear_continuous(F, H, S, G);
    const double dt = 1e-3;
    const Eigen::Index J = 10000;
    const TruthAndData td = synthesize_truth(cm, Vector::Ones(2), 1.0, dt, SeededStream(4));
    const GaussianPath kb = kalman_bucy(F, H, S, G, Vector::Zero(2), eye(2), td.data);
    const SeededStream st(40);
    Ensemble a = sample({Vector::Zero(2), eye(2)}, J, st);
    Ensemble b = a;
    const double tol = 10.0 * dt + 5.0 * inv_sqrt(J);
    double worst_a = 0.0, worst_b = 0.0;
    for (std::size_t k = 0; k + 1 < td.data.size(); ++k) {
        a = enkbf_stochastic_step(cm, a, td.data.increment(k), dt, st, k);
        b = enkbf_deterministic_step(cm, b, td.data.increment(k), dt, st, k);
        if ((k + 1) % 50 != 0) continue;
        const Gaussian& ref = kb.states[k + 1];
        for (auto [e, w] : {std::pair{&a, &worst_a}, std::pair{&b, &worst_b}}) {
            const Gaussian m = empirical_moments(*e);
            *w = std::max({*w, (m.mean - ref.mean).norm() / (tol * std::sqrt(ref.cov.trace())),
                           (m.cov - ref.cov).norm() / (tol * ref.cov.norm())});
        }
    }
    Outcome out;
    out.prints.push_back(fp(a.members()) + fp(b.members()));
    out.pass = worst_a <= 1.0 && worst_b <= 1.0;
    out.detail = "J=1e4, dt=1e-3, T=1, tolerance (10 dt + 5/sqrt(J)) relative; worst error/tol stochastic " +
                 fmt("%.2f", worst_a) + ", deterministic " + fmt("%.2f", worst_b);
    return out;
}

// ---------------------------------------------------------------- 5

Outcome eki_transport_posterior()
{
    const Eigen::Index J = 10000;
    const int N = 20;
    const InverseProblem p = linear_problem(eye(1), Vector::Ones(1), eye(1), {Vector::Zero(1), eye(1)});
    const double band_m = 3.0 * std::sqrt(0.5 / J);
    const double band_c = 3.0 * 0.5 * std::sqrt(2.0 / (J - 1));
    int passed = 0;
    double worst = 0.0;
    Outcome out;
    for (int s = 1; s <= 20; ++s) {
        const SeededStream st(static_cast<std::uint64_t>(s));
        Ensemble e = sample(p.prior, J, st);
        for (int n = 0; n < N; ++n) e = eki_transport_step(p, e, 1.0 / N, st, static_cast<std::uint64_t>(n));
        const Gaussian m = empirical_moments(e);
        const double rm = std::abs(m.mean[0] - 0.5) / band_m, rc = std::abs(m.cov(0, 0) - 0.5) / band_c;
        worst = std::max({worst, rm, rc});
        passed += rm <= 1.0 && rc <= 1.0;
        out.prints.push_back(fp(m));
    }
    out.pass = passed >= 18;
    out.detail = std::to_string(passed) + "/20 seeds inside 3-sigma bands of N(0.5, 0.5) (worst deviation/band " +
                 fmt("%.2f", worst) + ")";
    return out;
}

// ---------------------------------------------------------------- 6

Outcome homotopy_oracle()
{
    InverseProblem p;
    p.G = [](const Vector& u) -> Vector { return u.array().cube() / 10.0 + u.array(); };
    p.w = Vector::Constant(1, 4.0);
    p.gamma = scalar(0.25);
    p.prior = {Vector::Zero(1), eye(1)};
    const GridDensity grid = grid_posterior(p, 1.0, {Vector::Constant(1, -2.0), Vector::Constant(1, 5.0), {201}});
    const Gaussian exact = grid.moments();

    const Eigen::Index J = 10000;
    const int N = 20;
    std::vector<double> gaps;
    Outcome out;
    for (int s = 1; s <= 10; ++s) {
        const SeededStream st(static_cast<std::uint64_t>(s));
        Ensemble e = sample(p.prior, J, st);
        for (int n = 0; n < N; ++n) e = eki_transport_step(p, e, 1.0 / N, st, static_cast<std::uint64_t>(n));
        const Gaussian m = empirical_moments(e);
        gaps.push_back(std::abs(m.mean[0] - exact.mean[0]) + std::abs(m.cov(0, 0) - exact.cov(0, 0)));
        out.prints.push_back(fp(m));
    }
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / 10.0;
    double var = 0.0;
    for (double g : gaps) var += (g - mean) * (g - mean);
    const double sd = std::sqrt(var / 9.0);
    out.pass = sd < 0.2 * mean;
    out.detail = "posterior mean " + fmt("%.4f", exact.mean[0]) + " var " + fmt("%.4f", exact.cov(0, 0)) +
                 "; EKI gap |dm|+|dC| mean " + fmt("%.4f", mean) + ", std " + fmt("%.4f", sd) + " over 10 seeds";
    return out;
}

// ---------------------------------------------------------------- 7

InverseProblem random_linear_problem(Eigen::Index du, Eigen::Index dw, std::uint64_t seed)
{
    Rng rng(seed);
    const Matrix L = random_matrix(dw, du, rng);
    const Matrix gamma = random_spd(dw, rng);
    const Gaussian prior{rng.normals(du), random_spd(du, rng)};
    return linear_problem(L, rng.normals(dw), gamma, prior);
}

Outcome iteration_steady_states()
{
    const InverseProblem p = random_linear_problem(3, 3, 7);
    IterInfParams q;
    q.alpha = 0.5;
    q.sigma_p = 0.2;
    q.gamma_p = 2.0;
    q.r0 = p.prior.mean;
    q.Sigma = p.prior.cov;
    const Gaussian fixed = iterinf_fixed_point(*p.L, p, q);
    const double residual = tikhonov_stationarity_residual(*p.L, p, q, fixed);

    const Eigen::Index J = 10000;
    const SeededStream st(70);
    Ensemble e = sample(p.prior, J, st);
    for (int n = 0; n < 200; ++n) e = eki_bayes_iterinf_step(p, 0.1, e, st, static_cast<std::uint64_t>(n));
    const Gaussian m = empirical_moments(e);
    const Gaussian post = linear_posterior(*p.L, p);
    const double tol = 5.0 * inv_sqrt(J);
    const double em = (m.mean - post.mean).norm() / (tol * std::sqrt(post.cov.trace()));
    const double ec = (m.cov - post.cov).norm() / (tol * post.cov.norm());

    Outcome out;
    out.prints.push_back(fp(fixed) + fp(m));
    out.pass = residual < 1e-8 && em <= 1.0 && ec <= 1.0;
    out.detail = "(a) stationarity residual " + fmt("%.2e", residual) + "; (b) alpha=0.1, J=1e4, 200 iterations: error/tol mean " +
                 fmt("%.2f", em) + ", cov " + fmt("%.2f", ec);
    return out;
}

// ---------------------------------------------------------------- 8

Outcome algebraic_rates()
{
    Rng rng(8);
    const Matrix L = 2.0 * eye(3) + 0.5 * random_matrix(3, 3, rng);
    const Matrix gamma = random_spd(3, rng);
    const Matrix c0 = random_spd(3, rng);
    const Vector m0 = rng.normals(3), w = rng.normals(3);
    std::vector<double> grid;
    for (int k = 0; k <= 40; ++k) grid.push_back(std::pow(100.0, k / 40.0));

    // The 1/t bound needs B^{1/2} C0 B^{1/2} >= I; rescale the prior covariance to sit on either side.
    const double lam = analyze_linear_rates(L, gamma, {m0, c0}, w, {1.0}, 1e-3).min_gain_eigenvalue;
    const RateReport r = analyze_linear_rates(L, gamma, {m0, (2.0 / lam) * c0}, w, grid, 1e-3);
    const RateReport weak = analyze_linear_rates(L, gamma, {m0, (0.1 / lam) * c0}, w, grid, 1e-3);
    const double peak = *std::max_element(r.rate_ratio.begin(), r.rate_ratio.end());
    const double weak_peak = *std::max_element(weak.rate_ratio.begin(), weak.rate_ratio.end());
    Outcome out;
    std::string print;
    for (double x : r.rate_ratio) print += format_double(x) + ',';
    out.prints.push_back(print);
    out.pass = r.rate_holds && r.max_bias_residual < 1e-8 && weak.max_bias_residual < 1e-8;
    out.detail = "t in [1,100], lambda_min(B^1/2 C0 B^1/2) = 2: max t|B^1/2 d(t)|^2/|B^1/2 d(0)|^2 = " +
                 fmt("%.3f", peak) + ", bias residual " + fmt("%.2e", std::max(r.max_bias_residual, weak.max_bias_residual)) +
                 " (diagnostic: lambda_min = 0.1 gives ratio " + fmt("%.2f", weak_peak) + ")";
    return out;
}

// ---------------------------------------------------------------- 9

Outcome family_suite()
{
    const std::vector<SuiteCheck> checks = transport_family_suite(9);
    Outcome out;
    out.pass = !checks.empty();
    std::string print;
    for (const SuiteCheck& c : checks) {
        out.pass = out.pass && c.pass;
        out.detail += c.name + (c.pass ? " ok" : " FAILED") + " (" + fmt("%.1e", c.value) + "/" + fmt("%.1e", c.tolerance) + ") ";
        print += format_double(c.value) + ',';
    }
    out.prints.push_back(print);
    return out;
}

// ---------------------------------------------------------------- 10

RunConfig twin(const std::string& filter, double T, Eigen::Index J, int seed)
{
    RunConfig c;
    c.model = "l96";
    c.filter = filter;
    c.sigma2 = 0.01;
    c.gamma2 = 0.01;
    c.filter_gamma2 = 0.1;
    c.tau = 1e-3;
    c.horizon = T;
    c.burn_in = 5.0;
    c.ensemble_size = J;
    c.seed = static_cast<std::uint64_t>(seed);
    return c;
}

Outcome reference_numbers(int seeds)
{
    struct Run {
        const char* label;
        std::string filter;
        double T;
        Eigen::Index J;
        double reference;
    };
    const std::vector<Run> runs{{"3DVAR(T=30)", "3dvar", 30.0, 2, 1.47},
                                {"noisy3DVAR", "noisy3dvar", 30.0, 2, 3.07},
                                {"EnKF(J=100)", "enkf", 20.0, 100, 0.82},
                                {"EnKF(J=1000)", "enkf", 20.0, 1000, 0.49},
                                {"3DVAR(T=20)", "3dvar", 20.0, 2, 1.45}};
    Outcome out;
    int good = 0;
    std::vector<double> lo(runs.size(), 1e300), hi(runs.size(), 0.0);
    for (int s = 1; s <= seeds; ++s) {
        std::vector<double> e;
        std::string print;
        for (const Run& r : runs) {
            const TwinResult t = run_twin_experiment(twin(r.filter, r.T, r.J, s));
            e.push_back(t.mse);
            print += format_double(t.mse) + ',';
        }
        bool ok = e[1] > e[0] && e[3] < e[2] && e[2] < e[4];
        for (std::size_t i = 0; i < runs.size(); ++i) {
            ok = ok && e[i] >= runs[i].reference / 2.0 && e[i] <= runs[i].reference * 2.0;
            lo[i] = std::min(lo[i], e[i]);
            hi[i] = std::max(hi[i], e[i]);
        }
        good += ok;
        out.prints.push_back(print);
    }
    out.pass = good == seeds;
    out.detail = std::to_string(good) + "/" + std::to_string(seeds) + " seeds with orderings and factor-2 bands;";
    for (std::size_t i = 0; i < runs.size(); ++i)
        out.detail += std::string(" ") + runs[i].label + " [" + fmt("%.2f", lo[i]) + "," + fmt("%.2f", hi[i]) + "]";
    return out;
}

// ---------------------------------------------------------------- 11

RunConfig forcing_inversion(int seed)
{
    RunConfig c;
    c.inverter = "eki";
    c.forward = "l96_average";
    c.ensemble_size = 30;
    c.iterations = 15;
    c.prior_mean = 0.0;
    c.prior_var = 10.0;
    c.u_true = 10.0;
    c.seed = static_cast<std::uint64_t>(seed);
    return c;
}

bool contracts_after(const InversionResult& r, std::size_t from)
{
    for (std::size_t n = from; n + 1 < r.history.size(); ++n)
        if (r.history[n + 1].stddev[0] > r.history[n].stddev[0]) return false;
    return true;
}

Outcome forcing_recovery(int seeds)
{
    Outcome out;
    bool primary = false;
    int mean_ok = 0, mono_ok = 0;
    std::string first;
    for (int s = 1; s <= seeds; ++s) {
        const InversionResult r = run_inversion(forcing_inversion(s));
        const double m = r.history.back().mean[0];
        const bool near = std::abs(m - 10.0) <= 1.0;
        const bool mono = contracts_after(r, 3);
        mean_ok += near;
        mono_ok += mono;
        std::string print;
        for (const IterationStats& it : r.history) print += format_double(it.mean[0]) + ',' + format_double(it.stddev[0]) + ';';
        out.prints.push_back(print);
        if (s == 1) {
            primary = near && mono;
            first = "seed 1: final mean " + fmt("%.3f", m) + ", spread " + fmt("%.3f", r.history[3].stddev[0]) + " -> " +
                    fmt("%.3f", r.history.back().stddev[0]) + (mono ? " monotone" : " NOT monotone") + " after step 3";
        }
    }
    out.pass = primary;
    out.detail = first + "; over " + std::to_string(seeds) + " seeds: mean within 1 in " + std::to_string(mean_ok) +
                 ", monotone spread in " + std::to_string(mono_ok);
    return out;
}

// ---------------------------------------------------------------- driver

struct Criterion {
    int id;
    double budget_s;  // <= 0: no runtime bound
    std::function<Outcome()> full;
    std::function<Outcome()> rerun;  // cheaper replay used by the determinism check
};

}  // namespace

int main(int argc, char** argv)
{
    bool strict = false;
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--strict") == 0)
            strict = true;
        else
            only.push_back(std::atoi(argv[i]));
    }
    std::vector<Criterion> criteria{
        {1, 30, linear_gaussian_exactness, linear_gaussian_exactness},
        {2, 5, square_root_identity, square_root_identity},
        {3, 30, kalman_bucy_consistency, kalman_bucy_consistency},
        {4, 60, enkbf_law_equivalence, enkbf_law_equivalence},
        {5, 10, eki_transport_posterior, eki_transport_posterior},
        {6, 0, homotopy_oracle, homotopy_oracle},
        {7, 60, iteration_steady_states, iteration_steady_states},
        {8, 10, algebraic_rates, algebraic_rates},
        {9, 60, family_suite, family_suite},
        {10, 300, [] { return reference_numbers(10); }, [] { return reference_numbers(1); }},
        {11, 300, [] { return forcing_recovery(10); }, [] { return forcing_recovery(1); }},
    };

    if (!only.empty())
        std::erase_if(criteria, [&](const Criterion& c) { return std::find(only.begin(), only.end(), c.id) == only.end(); });
    const bool determinism = only.empty() || std::find(only.begin(), only.end(), 12) != only.end();

    int failures = 0;
    auto report = [&](int id, bool pass, const std::string& detail) {
        std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
        std::fflush(stdout);
        failures += !pass;
    };

    set_thread_count(1);
    std::vector<Outcome> first;
    for (const Criterion& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o = c.full();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s <= 0 || secs < c.budget_s;
        std::string detail = o.detail + " [" + fmt("%.1f", secs) + " s";
        detail += c.budget_s > 0 ? ", budget " + fmt("%.0f", c.budget_s) + " s]" : "]";
        report(c.id, o.pass && in_time, detail);
        first.push_back(std::move(o));
    }

    if (!determinism) return strict && failures > 0 ? 1 : 0;

    // Replay at a different worker count and compare the 17-digit fingerprints.
    set_thread_count(3);
    int same = 0, compared = 0;
    std::string mismatched;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const Outcome again = criteria[i].rerun();
        bool equal = !again.prints.empty() && again.prints.size() <= first[i].prints.size();
        for (std::size_t k = 0; equal && k < again.prints.size(); ++k) equal = again.prints[k] == first[i].prints[k];
        ++compared;
        same += equal;
        if (!equal) mismatched += " " + std::to_string(criteria[i].id);
    }
    set_thread_count(1);
    report(12, same == compared,
           std::to_string(same) + "/" + std::to_string(compared) +
               " criteria byte-identical at 1 vs 3 threads (10 and 11 replayed on seed 1)" +
               (mismatched.empty() ? "" : "; mismatched:" + mismatched));

    return strict && failures > 0 ? 1 : 0;
}
