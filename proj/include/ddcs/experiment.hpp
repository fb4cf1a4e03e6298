#pragma once

#include "ddcs/conic.hpp"
#include "ddcs/estimation.hpp"
#include "ddcs/evaluation.hpp"
#include "ddcs/io.hpp"
#include "ddcs/steering.hpp"
#include "ddcs/system_sim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddcs {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A failure inside one pipeline stage; exit_code follows the CLI convention.
struct StageError : std::runtime_error {
    StageError(std::string stage_, const std::string& what, int code)
        : std::runtime_error(stage_ + ": " + what), stage(std::move(stage_)), exit_code(code)
    {
    }
    std::string stage;
    int exit_code;
};

namespace exit_code {
inline constexpr int success = 0;
inline constexpr int config_error = 2;
inline constexpr int infeasible = 3;
inline constexpr int numerical_failure = 4;
} // namespace exit_code

struct ExperimentConfig {
    std::string preset = "custom"; // paper-4state, paper-3state or custom
    GroundTruthSystem system;
    int ell = 0;
    std::optional<Index> kappa;
    double gap_ratio = kDefaultGapRatio;
    bool identity_reduction = false; // L = I regardless of the singular-value gap
    std::vector<Index> sizes;
    int replicates = 20;
    double input_scale = 1.0;
    std::vector<EstimationMethod> sweep_methods{EstimationMethod::LS, EstimationMethod::TLS,
                                                EstimationMethod::IV2SLS};
    EstimationMethod method = EstimationMethod::IV2SLS;
    std::optional<int> instrument_lags;
    SteeringSpec steering;
    // {"lissajous": {amplitude, frequency, phase}}, a p x N row list, or null for a zero reference
    Json reference;
    Index rollouts = 1000;
    double confidence = 0.95;
    SolverSettings solver;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    int jobs = 1;

    void validate() const;
    // Rebuilds steering.y_ref from `reference` and the current horizon.
    void resolve_reference();
};

// Matrices and noise levels of the two numerical studies.
GroundTruthSystem preset_system(const std::string& name);
ExperimentConfig preset_config(const std::string& name);

// Preset fields are applied first, explicit keys override them. Matrices are row lists or
// strings naming a CSV file relative to base_dir.
ExperimentConfig parse_config(const Json& j, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);
Json config_to_json(const ExperimentConfig& cfg);

// First regression index leaving room for the deepest instrument the representation can need.
Index default_window_start(int ell, Index h, Index m, std::optional<int> lags);

struct CollectedData {
    Trajectory trajectory;
    DataMatrices dm;
    Reduction reduction;
};

// Simulates k0 + T + 1 samples from rest under i.i.d. excitation and builds the data matrices.
CollectedData collect_data(const ExperimentConfig& cfg, Index T, std::uint64_t seed);

struct EstimateSweepRow {
    Index T = 0;
    EstimationMethod method = EstimationMethod::LS;
    int replicate = 0;
    double error = 0.0;
    std::string status = "ok";
};

// Parameter error of every configured estimator on one dataset (L = I).
std::vector<EstimateSweepRow> run_estimate_replicate(const ExperimentConfig& cfg, Index T, int replicate);
std::vector<EstimateSweepRow> run_estimate_sweep(const ExperimentConfig& cfg, int jobs = 1);
std::string estimate_rows_csv(const std::vector<EstimateSweepRow>& rows);
std::string estimate_summary_csv(const std::vector<EstimateSweepRow>& rows);

struct SteerOutcome {
    Index T = 0;
    std::uint64_t seed = 0;
    CollectedData data;
    EstimatedModel model;
    InstrumentMatrix instruments;
    NoiseEstimate noise;
    InitialMoments initial_moments;
    Vector mu0;
    MeanSteeringResult mean;
    SteeringSolution covariance;
    std::optional<PropagationCheck> propagation;
    ControlLaw law; // gains applied in evaluation (zero when the program was not accepted)
    EvaluationReport report;
    std::string status = "ok";
    int exit_code = exit_code::success;
};

// collect -> represent -> estimate -> mean steer -> covariance program -> evaluate.
// Infeasible or failed programs are reported in status/exit_code; evaluation then runs with K = 0.
SteerOutcome run_steer_pipeline(const ExperimentConfig& cfg, Index T, std::uint64_t seed, int jobs = 1);

void write_steer_artifacts(const std::filesystem::path& dir, const SteerOutcome& out, const ExperimentConfig& cfg);

struct SweepSteerRow {
    Index T = 0;
    int replicate = 0;
    std::uint64_t seed = 0;
    std::string status;
    double terminal_mean_error = 0.0;
    double lambda_max_ratio = 0.0;
    double frobenius_distance = 0.0;
    double min_eig_difference = 0.0;
    double solve_seconds = 0.0;
};

Json sweep_row_to_json(const SweepSteerRow& row);
SweepSteerRow sweep_row_from_json(const Json& j);
std::string sweep_rows_csv(const std::vector<SweepSteerRow>& rows);
std::string sweep_summary_csv(const std::vector<SweepSteerRow>& rows);

// Each finished replicate is flushed to replicates/; existing files are reused on rerun.
std::vector<SweepSteerRow> run_sweep_steer(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                           int jobs = 1);

double median(std::vector<double> v);
double sample_variance(const std::vector<double>& v);

std::uint64_t replicate_seed(std::uint64_t root, Index T, int replicate);

} // namespace ddcs
