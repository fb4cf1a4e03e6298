#pragma once

#include "ddcs/core.hpp"
#include "ddcs/estimation.hpp"
#include "ddcs/evaluation.hpp"
#include "ddcs/moments.hpp"
#include "ddcs/representation.hpp"
#include "ddcs/steering.hpp"
#include "ddcs/system_sim.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace ddcs {

inline constexpr int kSchemaVersion = 1;

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Json = nlohmann::ordered_json;

// Shortest text that round-trips the double exactly.
std::string format_double(double x);

// Row lists: [[a, b], [c, d]]. A flat list is read as a column vector.
Json matrix_to_json(const Matrix& M);
Matrix matrix_from_json(const Json& j);

void write_matrix_csv(const std::filesystem::path& path, const Matrix& M);
Matrix read_matrix_csv(const std::filesystem::path& path);

// Columns k, u_1..u_m, y_1..y_p; one row per step.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory_csv(const std::filesystem::path& path);

// Directory of <name>.csv files plus manifest.json.
void write_data_matrices(const std::filesystem::path& dir, const DataMatrices& dm);
DataMatrices read_data_matrices(const std::filesystem::path& dir);

void write_model(const std::filesystem::path& dir, const EstimatedModel& model);
EstimatedModel read_model(const std::filesystem::path& dir);
void write_noise_estimate(const std::filesystem::path& dir, const NoiseEstimate& ne);
NoiseEstimate read_noise_estimate(const std::filesystem::path& dir);

// One row per k with row-major flattened mu, Sigma, Sigma_chizeta, Sigma_y.
void write_schedule_csv(const std::filesystem::path& path, const MomentSchedule& sched);

// solution.json, gains.csv, feedforward.csv.
void write_solution(const std::filesystem::path& dir, const SteeringSolution& sol);
Json solution_summary(const SteeringSolution& sol);

// report.json, moments.csv, ellipses.csv.
void write_report(const std::filesystem::path& dir, const EvaluationReport& rep);
Json report_summary(const EvaluationReport& rep);

void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace ddcs
