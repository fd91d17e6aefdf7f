#pragma once

#include "enkf/gaussian.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace enkf {

/// Experiment configuration. Loaded from a plain `key = value` file (TOML/INI
/// subset, `#` comments, optional `[section]` headers which are ignored).
struct RunConfig {
    // twin experiments
    std::string model = "l96";       ///< l96 | l96ms (multiscale truth, singlescale filter) | linear
    std::string filter = "3dvar";    ///< 3dvar | noisy3dvar | enkf | eakf_state | eakf_obs | etkf | kf
    double forcing = 10.0;
    double sigma2 = 0.1;
    double gamma2 = 0.1;
    double filter_sigma2 = -1.0;     ///< noise levels assumed by the filter; negative = truth values
    double filter_gamma2 = -1.0;
    double tau = 1e-3;
    double horizon = 30.0;           ///< T
    double burn_in = 5.0;            ///< t in the error average
    double spinup = 10.0;            ///< truth attractor spin-up before t = 0
    double init_offset = 1.0;        ///< variance of the filter's initial offset from the truth
    double init_spread = 1.0;        ///< variance of the initial ensemble about the offset state
    Eigen::Index ensemble_size = 100;
    int record_stride = 1;

    // inversion
    std::string inverter = "eki";            ///< eki | eki_transport | eks | bayes_iterinf
    std::string forward = "l96_average";     ///< l96_average | linear_toy | cubic
    int iterations = 15;
    double dt = 1.0;
    double alpha = 0.1;
    double prior_mean = 0.0;
    double prior_var = 10.0;
    double u_true = 10.0;
    double data_horizon = 10.0;      ///< T used to generate the data
    double map_horizon = 20.0;       ///< T used inside the algorithm
    double map_tau = 0.01;
    int noise_samples = 30;          ///< initial conditions used to estimate Gamma

    std::uint64_t seed = 1;
    std::string output_dir = "out";

    void validate() const;
    /// Key/value lines in a fixed order (used for the run manifest).
    std::vector<std::pair<std::string, std::string>> entries() const;
    /// Assign one key; throws ConfigError for unknown keys or malformed values.
    void set(const std::string& key, const std::string& value);
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);

/// Per-step trajectory data; columns are time points.
struct MetricsRecord {
    std::vector<double> time;
    Matrix truth;
    Matrix estimate;
    Matrix spread;                  ///< per-component ensemble std (zero for single-state filters)
    std::vector<double> sq_error;   ///< |truth - estimate|^2
    bool aborted = false;           ///< a NonFinite state stopped the run early
    std::string abort_reason;

    std::size_t size() const noexcept { return time.size(); }
    void validate() const;
};

/// e = (1/(N d)) sum_{n=1..N} |v_{n + t/tau} - v~_{n + t/tau}|^2 with t + N tau = T.
/// Column n of each path is the state at time n tau.
double compute_mse(const Matrix& truth, const Matrix& estimate, double t, double T, double tau);

struct TwinResult {
    MetricsRecord record;
    double mse = 0.0;
};

TwinResult run_twin_experiment(const RunConfig& cfg);

struct IterationStats {
    int iteration = 0;
    Vector mean;
    Vector stddev;
};

struct InversionResult {
    std::vector<IterationStats> history;  ///< entry 0 is the initial ensemble
    Ensemble final_ensemble;
    Vector data;
    Matrix gamma;
    bool has_reference = false;           ///< linear toy problem: posterior available
    Gaussian reference;
    double reference_error = 0.0;         ///< max(|m - m_post|, |C - C_post|_F) for the final ensemble
    bool reference_ok = false;
};

InversionResult run_inversion(const RunConfig& cfg);

/// Formats with 17 significant digits (round-trips exactly).
std::string format_double(double x);

/// CSV: time, truth_i..., est_i..., spread_i...; '\n' line endings.
void write_records_csv(std::ostream& out, const MetricsRecord& r, int stride = 1);
/// Writes trajectory.csv and manifest.txt into `dir` (created if missing).
void emit_records(const MetricsRecord& r, const RunConfig& cfg, const std::filesystem::path& dir,
                  const std::map<std::string, std::string>& extra = {});
/// Writes iterations.csv, final_ensemble.csv and manifest.txt.
void emit_inversion(const InversionResult& r, const RunConfig& cfg, const std::filesystem::path& dir);

void write_manifest(std::ostream& out, const RunConfig& cfg, const std::map<std::string, std::string>& extra);

/// Reads a CSV written by write_records_csv.
MetricsRecord read_records_csv(std::istream& in);

}  // namespace enkf
