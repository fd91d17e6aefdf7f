#include "enkf/errors.hpp"
#include "enkf/harness.hpp"
#include "enkf/parallel.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace enkf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("enkf_harness_test_" + name);
    fs::remove_all(p);
    return p;
}

RunConfig quick_twin(const std::string& filter)
{
    RunConfig c;
    c.filter = filter;
    c.sigma2 = 0.01;
    c.gamma2 = 0.01;
    c.tau = 0.01;
    c.horizon = 3.0;
    c.burn_in = 1.0;
    c.spinup = 2.0;
    c.ensemble_size = 30;
    return c;
}

}  // namespace

TEST_CASE("compute_mse basic cases")
{
    const Matrix a = Matrix::Random(3, 11);
    CHECK(compute_mse(a, a, 0.2, 1.0, 0.1) == 0.0);
    const Matrix b = a.array() + 0.25;
    CHECK(compute_mse(a, b, 0.2, 1.0, 0.1) == doctest::Approx(0.0625).epsilon(1e-14));
}

TEST_CASE("compute_mse hand evaluation")
{
    // tau = 0.5, t = 0.5, T = 1.5: columns 2 and 3 enter, d = 2, N = 2
    const Matrix truth{{0.0, 1.0, 2.0, 3.0}, {0.0, -1.0, 0.5, 4.0}};
    const Matrix est{{9.0, 9.0, 1.5, 1.0}, {9.0, 9.0, 0.0, 1.0}};
    const double expected = (0.25 + 0.25 + 4.0 + 9.0) / 4.0;
    CHECK(std::abs(compute_mse(truth, est, 0.5, 1.5, 0.5) - expected) < 1e-14);
}

TEST_CASE("compute_mse rejects misaligned inputs")
{
    const Matrix a = Matrix::Zero(2, 5);
    CHECK_THROWS_AS(compute_mse(a, Matrix::Zero(2, 4), 0.0, 1.0, 0.25), AlignmentError);
    CHECK_THROWS_AS(compute_mse(a, a, 0.1, 1.0, 0.25), AlignmentError);
    CHECK_THROWS_AS(compute_mse(a, a, 0.0, 2.0, 0.25), AlignmentError);
}

TEST_CASE("config parsing")
{
    std::istringstream in(R"(# twin experiment
[filter]
model = "l96"
filter = "enkf"
sigma2 = 0.01   # per step
ensemble_size = 40
seed = 17
)");
    const RunConfig c = parse_config(in);
    CHECK(c.filter == "enkf");
    CHECK(c.sigma2 == 0.01);
    CHECK(c.ensemble_size == 40);
    CHECK(c.seed == 17);

    std::istringstream unknown("colour = 3\n");
    CHECK_THROWS_AS(parse_config(unknown), ConfigError);
    std::istringstream malformed("tau = fast\n");
    CHECK_THROWS_AS(parse_config(malformed), ConfigError);
    std::istringstream negative("tau = -1\n");
    CHECK_THROWS_AS(parse_config(negative), ConfigError);
    std::istringstream bad_name("filter = \"particle\"\n");
    CHECK_THROWS_AS(parse_config(bad_name), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.toml"), ConfigError);
}

TEST_CASE("config entries round-trip")
{
    RunConfig c = quick_twin("etkf");
    c.seed = 99;
    c.output_dir = "somewhere";
    std::ostringstream out;
    for (const auto& [k, v] : c.entries()) out << k << " = " << v << '\n';
    std::istringstream in(out.str());
    const RunConfig back = parse_config(in);
    CHECK(back.entries() == c.entries());
}

TEST_CASE("noise-free 3DVAR started on the truth stays on it")
{
    RunConfig c = quick_twin("3dvar");
    c.sigma2 = 0.0;
    c.gamma2 = 0.0;
    c.init_offset = 0.0;
    const TwinResult r = run_twin_experiment(c);
    CHECK(r.mse == 0.0);
    CHECK(r.record.size() == 301);
}

TEST_CASE("3DVAR synchronizes with small noise")
{
    RunConfig c;
    c.filter = "3dvar";
    c.sigma2 = 1e-6;
    c.gamma2 = 1e-6;
    c.tau = 1e-3;
    c.horizon = 30.0;
    c.burn_in = 5.0;
    const TwinResult r = run_twin_experiment(c);
    double worst = 0.0;
    for (std::size_t n = 0; n < r.record.size(); ++n)
        if (r.record.time[n] > 5.0) {
            const auto k = static_cast<Eigen::Index>(n);
            worst = std::max(worst, std::abs(r.record.truth(2, k) - r.record.estimate(2, k)));
        }
    CHECK(worst < 0.2);
    CHECK(r.mse < 0.1);
}

TEST_CASE("every filter runs and reports spread where it has one")
{
    for (const std::string f : {"3dvar", "noisy3dvar", "enkf", "eakf_state", "eakf_obs", "etkf"}) {
        const TwinResult r = run_twin_experiment(quick_twin(f));
        INFO(f);
        CHECK(std::isfinite(r.mse));
        const bool ensemble = f != "3dvar" && f != "noisy3dvar";
        CHECK((r.record.spread.norm() > 0.0) == ensemble);
    }
    RunConfig lin = quick_twin("kf");
    lin.model = "linear";
    const TwinResult k = run_twin_experiment(lin);
    CHECK(std::isfinite(k.mse));
    lin.filter = "enkf";
    lin.ensemble_size = 400;
    const TwinResult e = run_twin_experiment(lin);
    CHECK(e.mse < 2.0 * k.mse);
    RunConfig ms = quick_twin("enkf");
    ms.model = "l96ms";
    ms.horizon = 1.0;
    ms.burn_in = 0.5;
    CHECK(std::isfinite(run_twin_experiment(ms).mse));
    lin.model = "l96";
    lin.filter = "kf";
    CHECK_THROWS_AS(run_twin_experiment(lin), ConfigError);
}

TEST_CASE("truth does not depend on the filter or ensemble size")
{
    RunConfig a = quick_twin("enkf");
    RunConfig b = quick_twin("etkf");
    b.ensemble_size = 11;
    CHECK(run_twin_experiment(a).record.truth == run_twin_experiment(b).record.truth);
}

TEST_CASE("a diverging filter aborts with a flagged partial record")
{
    RunConfig c = quick_twin("noisy3dvar");
    c.filter_sigma2 = 1e14;
    const TwinResult r = run_twin_experiment(c);
    CHECK(r.record.aborted);
    CHECK(std::isnan(r.mse));
    CHECK(r.record.size() < 301);
    const fs::path dir = scratch("abort");
    emit_records(r.record, c, dir);
    CHECK(slurp(dir / "manifest.txt").find("aborted = ") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("CSV output")
{
    MetricsRecord empty;
    empty.truth.resize(2, 0);
    empty.estimate.resize(2, 0);
    empty.spread.resize(2, 0);
    std::ostringstream e;
    write_records_csv(e, empty);
    CHECK(e.str() == "time,truth_0,truth_1,est_0,est_1,spread_0,spread_1\n");

    const TwinResult r = run_twin_experiment(quick_twin("enkf"));
    std::ostringstream out;
    write_records_csv(out, r.record);
    std::istringstream in(out.str());
    const MetricsRecord back = read_records_csv(in);
    CHECK(back.time == r.record.time);
    CHECK(back.truth == r.record.truth);
    CHECK(back.estimate == r.record.estimate);
    CHECK(back.spread == r.record.spread);
    CHECK(out.str().find('\r') == std::string::npos);

    std::ostringstream strided;
    write_records_csv(strided, r.record, 10);
    std::istringstream sin(strided.str());
    CHECK(read_records_csv(sin).size() == 31);

    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(std::stod(format_double(M_PI)) == M_PI);
}

TEST_CASE("equal config and seed give byte-identical files at any thread count")
{
    const RunConfig c = quick_twin("enkf");
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    set_thread_count(1);
    emit_records(run_twin_experiment(c).record, c, a);
    set_thread_count(3);
    emit_records(run_twin_experiment(c).record, c, b);
    set_thread_count(1);
    CHECK(slurp(a / "trajectory.csv") == slurp(b / "trajectory.csv"));
    CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));
    const std::string manifest = slurp(a / "manifest.txt");
    CHECK(manifest.find("seed = 1") != std::string::npos);
    CHECK(manifest.find("git_revision = ") != std::string::npos);
    RunConfig other = c;
    other.seed = 2;
    CHECK(run_twin_experiment(other).record.truth != run_twin_experiment(c).record.truth);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("inversion on the linear toy problem reports a posterior verdict")
{
    RunConfig c;
    c.inverter = "eki_transport";
    c.forward = "linear_toy";
    c.dt = 0.05;
    c.iterations = 20;
    c.ensemble_size = 2000;
    c.u_true = 1.0;
    c.prior_var = 1.0;
    const InversionResult r = run_inversion(c);
    CHECK(r.history.size() == 21);
    CHECK(r.has_reference);
    CHECK(r.reference_ok);

    const fs::path dir = scratch("inv");
    emit_inversion(r, c, dir);
    CHECK(fs::exists(dir / "iterations.csv"));
    CHECK(fs::exists(dir / "final_ensemble.csv"));
    CHECK(fs::exists(dir / "manifest.txt"));
    fs::remove_all(dir);
}

TEST_CASE("other inverters run on the cubic map")
{
    for (const std::string inv : {"eki", "eks", "bayes_iterinf"}) {
        RunConfig c;
        c.inverter = inv;
        c.forward = "cubic";
        c.u_true = 1.0;
        c.prior_var = 1.0;
        c.dt = 0.01;
        c.iterations = 10;
        c.ensemble_size = 50;
        const InversionResult r = run_inversion(c);
        INFO(inv);
        CHECK_FALSE(r.has_reference);
        CHECK(r.history.back().mean.allFinite());
        CHECK(r.history.back().stddev[0] < r.history.front().stddev[0]);
    }
}
