#include "enkf/harness.hpp"

#include "enkf/build_info.hpp"
#include "enkf/errors.hpp"
#include "enkf/filters_discrete.hpp"
#include "enkf/inversion.hpp"
#include "enkf/models.hpp"
#include "enkf/random.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace enkf {

namespace {

const std::array<std::string, 3> kModels{"l96", "l96ms", "linear"};
const std::array<std::string, 7> kFilters{"3dvar", "noisy3dvar", "enkf", "eakf_state", "eakf_obs", "etkf", "kf"};
const std::array<std::string, 4> kInverters{"eki", "eki_transport", "eks", "bayes_iterinf"};
const std::array<std::string, 3> kForwards{"l96_average", "linear_toy", "cubic"};

template <std::size_t N>
bool one_of(const std::array<std::string, N>& set, const std::string& s)
{
    return std::find(set.begin(), set.end(), s) != set.end();
}

double parse_double(const std::string& key, const std::string& v)
{
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(x))
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    return x;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& v)
{
    Int x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
    return x;
}

std::string unquote(std::string s)
{
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        s = s.substr(1, s.size() - 2);
    return s;
}

Vector row_std(const Ensemble& e)
{
    if (e.size() < 2) return Vector::Zero(e.dim());
    const Matrix dev = e.members().colwise() - e.mean();
    return (dev.array().square().rowwise().sum() / static_cast<double>(e.size() - 1)).sqrt();
}

void ensure_dir(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
}

std::ofstream open_out(const std::filesystem::path& p)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot open '" + p.string() + "' for writing");
    return out;
}

void check_written(const std::ofstream& out, const std::filesystem::path& p)
{
    if (!out) throw Error("write to '" + p.string() + "' failed");
}

}  // namespace

// ---------------------------------------------------------------- config

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const
{
    auto d = [](double x) { return format_double(x); };
    return {
        {"model", model},
        {"filter", filter},
        {"forcing", d(forcing)},
        {"sigma2", d(sigma2)},
        {"gamma2", d(gamma2)},
        {"filter_sigma2", d(filter_sigma2)},
        {"filter_gamma2", d(filter_gamma2)},
        {"tau", d(tau)},
        {"horizon", d(horizon)},
        {"burn_in", d(burn_in)},
        {"spinup", d(spinup)},
        {"init_offset", d(init_offset)},
        {"init_spread", d(init_spread)},
        {"ensemble_size", std::to_string(ensemble_size)},
        {"record_stride", std::to_string(record_stride)},
        {"inverter", inverter},
        {"forward", forward},
        {"iterations", std::to_string(iterations)},
        {"dt", d(dt)},
        {"alpha", d(alpha)},
        {"prior_mean", d(prior_mean)},
        {"prior_var", d(prior_var)},
        {"u_true", d(u_true)},
        {"data_horizon", d(data_horizon)},
        {"map_horizon", d(map_horizon)},
        {"map_tau", d(map_tau)},
        {"noise_samples", std::to_string(noise_samples)},
        {"seed", std::to_string(seed)},
        {"output_dir", output_dir},
    };
}

void RunConfig::set(const std::string& key, const std::string& raw)
{
    const std::string v = unquote(raw);
    using Setter = std::function<void(RunConfig&)>;
    const std::map<std::string, Setter> table{
        {"model", [&](RunConfig& c) { c.model = v; }},
        {"filter", [&](RunConfig& c) { c.filter = v; }},
        {"forcing", [&](RunConfig& c) { c.forcing = parse_double(key, v); }},
        {"sigma2", [&](RunConfig& c) { c.sigma2 = parse_double(key, v); }},
        {"gamma2", [&](RunConfig& c) { c.gamma2 = parse_double(key, v); }},
        {"filter_sigma2", [&](RunConfig& c) { c.filter_sigma2 = parse_double(key, v); }},
        {"filter_gamma2", [&](RunConfig& c) { c.filter_gamma2 = parse_double(key, v); }},
        {"tau", [&](RunConfig& c) { c.tau = parse_double(key, v); }},
        {"horizon", [&](RunConfig& c) { c.horizon = parse_double(key, v); }},
        {"burn_in", [&](RunConfig& c) { c.burn_in = parse_double(key, v); }},
        {"spinup", [&](RunConfig& c) { c.spinup = parse_double(key, v); }},
        {"init_offset", [&](RunConfig& c) { c.init_offset = parse_double(key, v); }},
        {"init_spread", [&](RunConfig& c) { c.init_spread = parse_double(key, v); }},
        {"ensemble_size", [&](RunConfig& c) { c.ensemble_size = parse_int<Eigen::Index>(key, v); }},
        {"record_stride", [&](RunConfig& c) { c.record_stride = parse_int<int>(key, v); }},
        {"inverter", [&](RunConfig& c) { c.inverter = v; }},
        {"forward", [&](RunConfig& c) { c.forward = v; }},
        {"iterations", [&](RunConfig& c) { c.iterations = parse_int<int>(key, v); }},
        {"dt", [&](RunConfig& c) { c.dt = parse_double(key, v); }},
        {"alpha", [&](RunConfig& c) { c.alpha = parse_double(key, v); }},
        {"prior_mean", [&](RunConfig& c) { c.prior_mean = parse_double(key, v); }},
        {"prior_var", [&](RunConfig& c) { c.prior_var = parse_double(key, v); }},
        {"u_true", [&](RunConfig& c) { c.u_true = parse_double(key, v); }},
        {"data_horizon", [&](RunConfig& c) { c.data_horizon = parse_double(key, v); }},
        {"map_horizon", [&](RunConfig& c) { c.map_horizon = parse_double(key, v); }},
        {"map_tau", [&](RunConfig& c) { c.map_tau = parse_double(key, v); }},
        {"noise_samples", [&](RunConfig& c) { c.noise_samples = parse_int<int>(key, v); }},
        {"seed", [&](RunConfig& c) { c.seed = parse_int<std::uint64_t>(key, v); }},
        {"output_dir", [&](RunConfig& c) { c.output_dir = v; }},
    };
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(*this);
}

void RunConfig::validate() const
{
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("config: " + msg);
    };
    need(one_of(kModels, model), "unknown model '" + model + "'");
    need(one_of(kFilters, filter), "unknown filter '" + filter + "'");
    need(filter != "kf" || model == "linear", "the Kalman filter needs model = linear");
    need(one_of(kInverters, inverter), "unknown inverter '" + inverter + "'");
    need(one_of(kForwards, forward), "unknown forward map '" + forward + "'");
    need(tau > 0.0, "tau must be positive");
    need(horizon > 0.0, "horizon must be positive");
    need(burn_in >= 0.0 && burn_in < horizon, "burn_in must lie in [0, horizon)");
    need(spinup >= 0.0, "spinup must be non-negative");
    need(sigma2 >= 0.0 && gamma2 >= 0.0, "noise levels must be non-negative");
    const double fg = filter_gamma2 < 0.0 ? gamma2 : filter_gamma2;
    need(fg > 0.0 || filter == "3dvar", "the filter's gamma2 must be positive for this filter");
    need(init_offset >= 0.0 && init_spread >= 0.0, "initial variances must be non-negative");
    need(ensemble_size >= 2, "ensemble_size must be at least 2");
    need(record_stride >= 1, "record_stride must be at least 1");
    need(iterations >= 0, "iterations must be non-negative");
    need(dt > 0.0, "dt must be positive");
    need(alpha > 0.0, "alpha must be positive");
    need(prior_var > 0.0, "prior_var must be positive");
    need(data_horizon > 0.0 && map_horizon > 0.0 && map_tau > 0.0, "forward-map horizons must be positive");
    need(noise_samples >= 3, "noise_samples must be at least 3");
}

RunConfig parse_config(std::istream& in)
{
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig cfg;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        if (item.inputs.size() != 1)
            throw ConfigError("config: '" + item.name + "' expects a single value");
        cfg.set(item.name, item.inputs.front());
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    return parse_config(in);
}

// ---------------------------------------------------------------- metrics

void MetricsRecord::validate() const
{
    const auto n = static_cast<Eigen::Index>(time.size());
    if (truth.cols() != n || estimate.cols() != n || spread.cols() != n ||
        static_cast<Eigen::Index>(sq_error.size()) != n)
        throw AlignmentError("MetricsRecord: column counts differ");
    if (estimate.rows() != truth.rows() || spread.rows() != truth.rows())
        throw AlignmentError("MetricsRecord: state dimensions differ");
}

double compute_mse(const Matrix& truth, const Matrix& estimate, double t, double T, double tau)
{
    if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
        throw AlignmentError("compute_mse: paths have different shapes");
    if (!(tau > 0.0) || t < 0.0 || !(T > t)) throw AlignmentError("compute_mse: need tau > 0 and 0 <= t < T");
    const double k0 = t / tau;
    const long n0 = std::lround(k0);
    if (std::abs(k0 - static_cast<double>(n0)) > 1e-9 * std::max(1.0, k0))
        throw AlignmentError("compute_mse: burn-in is not a multiple of tau");
    const long N = std::lround((T - t) / tau);
    if (N < 1 || std::abs(t + static_cast<double>(N) * tau - T) > 1e-9 * std::max(1.0, T))
        throw AlignmentError("compute_mse: t + N tau = T has no integer solution");
    if (n0 + N > truth.cols() - 1) throw AlignmentError("compute_mse: paths are shorter than T / tau");
    double sum = 0.0;
    for (long n = 1; n <= N; ++n) sum += (truth.col(n0 + n) - estimate.col(n0 + n)).squaredNorm();
    return sum / (static_cast<double>(N) * static_cast<double>(truth.rows()));
}

// ---------------------------------------------------------------- twin experiment

namespace {

/// Flow matrix of dv/dt = A v over tau with A = -I/2 + (S - S^T), S the cyclic
/// shift; damped and rotating, so the filtering problem is non-trivial.
Matrix linear_flow_matrix(Eigen::Index d, double tau)
{
    Matrix a = -0.5 * Matrix::Identity(d, d);
    for (Eigen::Index l = 0; l < d; ++l) {
        a(l, (l + 1) % d) += 1.0;
        a((l + 1) % d, l) -= 1.0;
    }
    const VectorField field = [a](const Vector& v) -> Vector { return a * v; };
    Matrix m(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        m.col(j) = rk4_flow(field, Matrix::Identity(d, d).col(j), tau, std::min(tau, 1e-3));
    return m;
}

struct TruthRun {
    Matrix states;  // L x (N + 1)
    Matrix data;    // 6 x (N + 1), column 0 unused
};

TruthRun synthesize_l96_truth(const RunConfig& cfg, const Matrix& H, const SeededStream& stream, long N)
{
    L96Params p;
    p.F = cfg.forcing;
    const Eigen::Index L = p.L;
    Rng init = stream.engine(Phase::TruthInit, 0, 0);

    std::function<Vector(const Vector&)> flow;
    Vector x;
    if (cfg.model == "linear") {
        const Matrix m = linear_flow_matrix(L, cfg.tau);
        flow = [m](const Vector& s) -> Vector { return m * s; };
        x = init.normals(L);
    } else if (cfg.model == "l96") {
        flow = l96_dynamics(p, cfg.tau, 0.0).flow;
        x = Vector::Constant(L, p.F) + init.normals(L);
        if (cfg.spinup > 0.0)
            x = rk4_flow([&p](const Vector& s) { return l96_vector_field(p, s); }, x, cfg.spinup, 1e-3);
    } else {
        L96MultiscaleParams ms;
        ms.F = cfg.forcing;
        const VectorField field = l96ms_packed_field(ms);
        const double h = ms.eps / 20.0;
        x.resize(L + static_cast<Eigen::Index>(ms.L) * ms.J);
        x.head(L) = Vector::Constant(L, ms.F) + init.normals(L);
        x.tail(x.size() - L) = init.normals(x.size() - L);
        if (cfg.spinup > 0.0) x = rk4_flow(field, x, cfg.spinup, h);
        const double tau = cfg.tau;
        flow = [field, tau, h](const Vector& s) { return rk4_flow(field, s, tau, std::min(h, tau)); };
    }

    TruthRun t;
    t.states.resize(L, N + 1);
    t.data = Matrix::Zero(H.rows(), N + 1);
    t.states.col(0) = x.head(L);
    const double sig = std::sqrt(cfg.sigma2), gam = std::sqrt(cfg.gamma2);
    for (long n = 0; n < N; ++n) {
        x = flow(x);
        if (sig > 0.0) {
            Rng r = stream.engine(Phase::TruthProcess, static_cast<std::uint64_t>(n), 0);
            x.head(L) += sig * r.normals(L);
        }
        t.states.col(n + 1) = x.head(L);
        Vector y = H * x.head(L);
        if (gam > 0.0) {
            Rng r = stream.engine(Phase::TruthObservation, static_cast<std::uint64_t>(n + 1), 0);
            y += gam * r.normals(H.rows());
        }
        t.data.col(n + 1) = y;
    }
    return t;
}

}  // namespace

TwinResult run_twin_experiment(const RunConfig& cfg)
{
    cfg.validate();
    const SeededStream stream(cfg.seed);
    const long N = std::lround(cfg.horizon / cfg.tau);
    if (N < 1) throw ConfigError("config: horizon shorter than one observation interval");
    const auto ops = l96_observation();
    const TruthRun truth = synthesize_l96_truth(cfg, ops.H, stream, N);

    L96Params p;
    p.F = cfg.forcing;
    const double fs = cfg.filter_sigma2 < 0.0 ? cfg.sigma2 : cfg.filter_sigma2;
    const double fg = cfg.filter_gamma2 < 0.0 ? cfg.gamma2 : cfg.filter_gamma2;
    const DynamicsModel dyn = cfg.model == "linear"
                                  ? linear_dynamics(linear_flow_matrix(p.L, cfg.tau), fs * Matrix::Identity(p.L, p.L))
                                  : l96_dynamics(p, cfg.tau, fs);
    const Matrix gamma = fg * Matrix::Identity(ops.H.rows(), ops.H.rows());
    const ObservationModel obs = linear_observation(ops.H, gamma);

    const Eigen::Index L = p.L;
    Rng off = stream.engine(Phase::FilterInit, 0, 0);
    const Vector v0 = truth.states.col(0) + std::sqrt(cfg.init_offset) * off.normals(L);

    const bool single = cfg.filter == "3dvar" || cfg.filter == "noisy3dvar";
    const bool moments = cfg.filter == "kf";
    Vector v = v0;
    Gaussian g{v0, cfg.init_spread * Matrix::Identity(L, L)};
    Ensemble ens;
    if (!single && !moments) {
        Matrix m(L, cfg.ensemble_size);
        for (Eigen::Index j = 0; j < cfg.ensemble_size; ++j) {
            Rng r = stream.engine(Phase::FilterInit, 1, static_cast<std::uint64_t>(j));
            m.col(j) = v0 + std::sqrt(cfg.init_spread) * r.normals(L);
        }
        ens = Ensemble(std::move(m));
    }

    TwinResult out;
    MetricsRecord& rec = out.record;
    rec.truth = truth.states;
    rec.estimate.resize(L, N + 1);
    rec.spread = Matrix::Zero(L, N + 1);
    rec.time.reserve(static_cast<std::size_t>(N + 1));
    rec.sq_error.reserve(static_cast<std::size_t>(N + 1));

    auto store = [&](long n) {
        if (single) {
            rec.estimate.col(n) = v;
        } else if (moments) {
            rec.estimate.col(n) = g.mean;
            rec.spread.col(n) = g.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
        } else {
            rec.estimate.col(n) = ens.mean();
            rec.spread.col(n) = row_std(ens);
        }
        rec.time.push_back(static_cast<double>(n) * cfg.tau);
        rec.sq_error.push_back((rec.truth.col(n) - rec.estimate.col(n)).squaredNorm());
    };
    store(0);

    long done = 0;
    try {
        for (long n = 0; n < N; ++n) {
            const Vector y = truth.data.col(n + 1);
            const auto step = static_cast<std::uint64_t>(n);
            if (cfg.filter == "3dvar") {
                v = threedvar_step(dyn, obs, ops.K, v, y);
            } else if (cfg.filter == "noisy3dvar") {
                v = noisy_threedvar_step(dyn, obs, ops.K, v, y, stream, step);
            } else if (moments) {
                g = kalman_step(*dyn.linear, ops.H, dyn.process_noise, gamma, g, y);
            } else if (cfg.filter == "enkf") {
                ens = enkf_step(dyn, obs, ens, y, stream, step);
            } else if (cfg.filter == "eakf_state") {
                ens = eakf_state_step(dyn, obs, ens, y, stream, step);
            } else if (cfg.filter == "eakf_obs") {
                ens = eakf_obs_step(dyn, obs, ens, y, stream, step);
            } else {
                ens = etkf_step(dyn, obs, ens, y, stream, step).ensemble;
            }
            if (single && !v.allFinite()) throw NonFinite("filter state became non-finite");
            store(n + 1);
            done = n + 1;
        }
    } catch (const NumericalError& e) {
        rec.aborted = true;
        rec.abort_reason = e.what();
        rec.truth.conservativeResize(Eigen::NoChange, done + 1);
        rec.estimate.conservativeResize(Eigen::NoChange, done + 1);
        rec.spread.conservativeResize(Eigen::NoChange, done + 1);
    }
    rec.validate();
    out.mse = rec.aborted ? std::nan("")
                          : compute_mse(rec.truth, rec.estimate, cfg.burn_in, cfg.horizon, cfg.tau);
    return out;
}

// ---------------------------------------------------------------- inversion

namespace {

struct Setup {
    InverseProblem problem;
    std::optional<Matrix> L;
};

Setup make_inverse_problem(const RunConfig& cfg, const SeededStream& stream)
{
    Setup s;
    if (cfg.forward == "l96_average") {
        TimeAveragedMapConfig data_cfg;
        data_cfg.T = cfg.data_horizon;
        data_cfg.tau = cfg.map_tau;
        // Gamma: spread of the data-generating map over random initial conditions.
        Matrix samples(2, cfg.noise_samples);
        for (int k = 0; k < cfg.noise_samples; ++k) {
            Rng r = stream.engine(Phase::TruthInit, 1, static_cast<std::uint64_t>(k));
            samples.col(k) = time_averaged_forward_map(data_cfg, cfg.u_true, r);
        }
        const Matrix gamma = empirical_moments(Ensemble(samples)).cov;
        Rng r0 = stream.engine(Phase::TruthInit, 2, 0);
        const Vector clean = time_averaged_forward_map(data_cfg, cfg.u_true, r0);
        Rng rn = stream.engine(Phase::TruthObservation, 0, 0);
        const Vector w = clean + psd_sqrt(gamma).root * rn.normals(2);

        TimeAveragedMapConfig map_cfg = data_cfg;
        map_cfg.T = cfg.map_horizon;
        std::uint64_t key = cfg.seed ^ 0x6a09e667f3bcc909ULL;
        s.problem.G = make_time_averaged_forward(map_cfg, splitmix64(key));
        s.problem.w = w;
        s.problem.gamma = gamma;
        s.problem.prior = Gaussian{Vector::Constant(1, cfg.prior_mean), Matrix::Constant(1, 1, cfg.prior_var)};
    } else if (cfg.forward == "linear_toy") {
        Matrix L(3, 2);
        L << 1.0, 0.5, -0.3, 1.0, 0.8, -0.6;
        Vector u(2);
        u << cfg.u_true, -0.5 * cfg.u_true;
        const Matrix gamma = 0.1 * Matrix::Identity(3, 3);
        Rng rn = stream.engine(Phase::TruthObservation, 0, 0);
        const Vector w = L * u + std::sqrt(0.1) * rn.normals(3);
        const Gaussian prior{Vector::Constant(2, cfg.prior_mean), cfg.prior_var * Matrix::Identity(2, 2)};
        s.problem = linear_problem(L, w, gamma, prior);
        s.L = L;
    } else {
        s.problem.G = [](const Vector& u) -> Vector { return u.array().cube() / 10.0 + u.array(); };
        Vector u(1);
        u << cfg.u_true;
        Rng rn = stream.engine(Phase::TruthObservation, 0, 0);
        s.problem.w = s.problem.G(u) + rn.normals(1);
        s.problem.gamma = Matrix::Identity(1, 1);
        s.problem.prior = Gaussian{Vector::Constant(1, cfg.prior_mean), Matrix::Constant(1, 1, cfg.prior_var)};
    }
    return s;
}

IterationStats stats_of(int it, const Ensemble& e) { return IterationStats{it, e.mean(), row_std(e)}; }

}  // namespace

InversionResult run_inversion(const RunConfig& cfg)
{
    cfg.validate();
    const SeededStream stream(cfg.seed);
    const Setup s = make_inverse_problem(cfg, stream);
    const InverseProblem& p = s.problem;

    Ensemble e = sample(p.prior, cfg.ensemble_size, stream, Phase::Prior, 0);
    InversionResult out;
    out.data = p.w;
    out.gamma = p.gamma;
    out.history.push_back(stats_of(0, e));
    for (int it = 0; it < cfg.iterations; ++it) {
        const auto step = static_cast<std::uint64_t>(it);
        if (cfg.inverter == "eki")
            e = eki_step(p, e, stream, step);
        else if (cfg.inverter == "eki_transport")
            e = eki_transport_step(p, e, cfg.dt, stream, step);
        else if (cfg.inverter == "eks")
            e = eks_step(p, e, cfg.dt, stream, step);
        else
            e = eki_bayes_iterinf_step(p, cfg.alpha, e, stream, step);
        out.history.push_back(stats_of(it + 1, e));
    }
    out.final_ensemble = e;

    if (s.L) {
        out.has_reference = true;
        out.reference = linear_posterior(*s.L, p);
        const Gaussian emp = empirical_moments(e);
        out.reference_error = std::max((emp.mean - out.reference.mean).norm(),
                                       (emp.cov - out.reference.cov).norm());
        const double scale = std::sqrt(out.reference.cov.trace()) + out.reference.cov.norm();
        out.reference_ok = out.reference_error <= 5.0 * scale / std::sqrt(static_cast<double>(e.size()));
    }
    return out;
}

// ---------------------------------------------------------------- output

std::string format_double(double x)
{
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::general, 17);
    if (ec != std::errc()) throw Error("format_double: conversion failed");
    return std::string(buf.data(), ptr);
}

void write_records_csv(std::ostream& out, const MetricsRecord& r, int stride)
{
    r.validate();
    if (stride < 1) throw ConfigError("record stride must be at least 1");
    const Eigen::Index d = r.truth.rows();
    out << "time";
    for (const char* prefix : {"truth_", "est_", "spread_"})
        for (Eigen::Index i = 0; i < d; ++i) out << ',' << prefix << i;
    out << '\n';
    for (std::size_t n = 0; n < r.size(); n += static_cast<std::size_t>(stride)) {
        const auto c = static_cast<Eigen::Index>(n);
        out << format_double(r.time[n]);
        for (const Matrix* m : {&r.truth, &r.estimate, &r.spread})
            for (Eigen::Index i = 0; i < d; ++i) out << ',' << format_double((*m)(i, c));
        out << '\n';
    }
}

MetricsRecord read_records_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) throw Error("read_records_csv: missing header");
    const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',')) + 1;
    if (cols < 1 || (cols - 1) % 3 != 0) throw Error("read_records_csv: malformed header");
    const Eigen::Index d = (cols - 1) / 3;

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) vals.push_back(parse_double("csv", cell));
        if (static_cast<Eigen::Index>(vals.size()) != cols) throw Error("read_records_csv: ragged row");
        rows.push_back(std::move(vals));
    }
    MetricsRecord r;
    const auto n = static_cast<Eigen::Index>(rows.size());
    r.truth.resize(d, n);
    r.estimate.resize(d, n);
    r.spread.resize(d, n);
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto& row = rows[static_cast<std::size_t>(c)];
        r.time.push_back(row[0]);
        for (Eigen::Index i = 0; i < d; ++i) {
            r.truth(i, c) = row[static_cast<std::size_t>(1 + i)];
            r.estimate(i, c) = row[static_cast<std::size_t>(1 + d + i)];
            r.spread(i, c) = row[static_cast<std::size_t>(1 + 2 * d + i)];
        }
        r.sq_error.push_back((r.truth.col(c) - r.estimate.col(c)).squaredNorm());
    }
    return r;
}

void write_manifest(std::ostream& out, const RunConfig& cfg, const std::map<std::string, std::string>& extra)
{
    out << "# run manifest\n";
    out << "library_version = " << library_version() << '\n';
    out << "git_revision = " << git_revision() << '\n';
    for (const auto& [k, v] : cfg.entries()) out << k << " = " << v << '\n';
    for (const auto& [k, v] : extra) out << k << " = " << v << '\n';
}

void emit_records(const MetricsRecord& r, const RunConfig& cfg, const std::filesystem::path& dir,
                  const std::map<std::string, std::string>& extra)
{
    ensure_dir(dir);
    {
        const auto path = dir / "trajectory.csv";
        auto out = open_out(path);
        write_records_csv(out, r, cfg.record_stride);
        check_written(out, path);
    }
    auto meta = extra;
    if (r.aborted) meta["aborted"] = r.abort_reason;
    const auto path = dir / "manifest.txt";
    auto out = open_out(path);
    write_manifest(out, cfg, meta);
    check_written(out, path);
}

void emit_inversion(const InversionResult& r, const RunConfig& cfg, const std::filesystem::path& dir)
{
    ensure_dir(dir);
    const Eigen::Index d = r.final_ensemble.dim();
    {
        const auto path = dir / "iterations.csv";
        auto out = open_out(path);
        out << "iteration";
        for (Eigen::Index i = 0; i < d; ++i) out << ",mean_" << i;
        for (Eigen::Index i = 0; i < d; ++i) out << ",std_" << i;
        out << '\n';
        for (const auto& s : r.history) {
            out << s.iteration;
            for (Eigen::Index i = 0; i < d; ++i) out << ',' << format_double(s.mean[i]);
            for (Eigen::Index i = 0; i < d; ++i) out << ',' << format_double(s.stddev[i]);
            out << '\n';
        }
        check_written(out, path);
    }
    {
        const auto path = dir / "final_ensemble.csv";
        auto out = open_out(path);
        out << "member";
        for (Eigen::Index i = 0; i < d; ++i) out << ",u_" << i;
        out << '\n';
        for (Eigen::Index j = 0; j < r.final_ensemble.size(); ++j) {
            out << j;
            for (Eigen::Index i = 0; i < d; ++i) out << ',' << format_double(r.final_ensemble.members()(i, j));
            out << '\n';
        }
        check_written(out, path);
    }
    std::map<std::string, std::string> extra;
    for (Eigen::Index i = 0; i < r.data.size(); ++i) extra["data_" + std::to_string(i)] = format_double(r.data[i]);
    if (r.has_reference) {
        extra["reference_error"] = format_double(r.reference_error);
        extra["reference_verdict"] = r.reference_ok ? "pass" : "fail";
    }
    const auto path = dir / "manifest.txt";
    auto out = open_out(path);
    write_manifest(out, cfg, extra);
    check_written(out, path);
}

}  // namespace enkf
