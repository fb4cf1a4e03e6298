#include "ddcs/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ddcs {

namespace fs = std::filesystem;

std::string format_double(double x)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s, const fs::path& where)
{
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw IoError(where.string() + ": not a number: '" + s + "'");
    }
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw IoError(where.string() + ": trailing characters in '" + s + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::ofstream open_out(const fs::path& path)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    return f;
}

std::ifstream open_in(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    return f;
}

void append_row_major(std::ostream& os, const Matrix& M)
{
    for (Index i = 0; i < M.rows(); ++i)
        for (Index j = 0; j < M.cols(); ++j) os << ',' << format_double(M(i, j));
}

void append_header(std::ostream& os, const std::string& base, Index rows, Index cols)
{
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) os << ',' << base << '_' << i + 1 << '_' << j + 1;
}

Json vector_to_json(const Vector& v)
{
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Vector vector_from_json(const Json& j)
{
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
    return v;
}

void write_named(const fs::path& dir, const std::string& name, const Matrix& M)
{
    write_matrix_csv(dir / (name + ".csv"), M);
}

Matrix read_named(const fs::path& dir, const std::string& name) { return read_matrix_csv(dir / (name + ".csv")); }

} // namespace

Json matrix_to_json(const Matrix& M)
{
    Json rows = Json::array();
    for (Index i = 0; i < M.rows(); ++i) {
        Json row = Json::array();
        for (Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(row);
    }
    return rows;
}

Matrix matrix_from_json(const Json& j)
{
    if (!j.is_array()) throw IoError("matrix must be a list of rows");
    if (j.empty()) return Matrix(0, 0);
    if (!j[0].is_array()) {
        Matrix v(static_cast<Index>(j.size()), 1);
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (!j[i].is_number()) throw IoError("matrix entries must be numbers");
            v(static_cast<Index>(i), 0) = j[i].get<double>();
        }
        return v;
    }
    const std::size_t cols = j[0].size();
    Matrix M(static_cast<Index>(j.size()), static_cast<Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_array() || j[i].size() != cols) throw IoError("matrix rows must have equal length");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[i][c].is_number()) throw IoError("matrix entries must be numbers");
            M(static_cast<Index>(i), static_cast<Index>(c)) = j[i][c].get<double>();
        }
    }
    return M;
}

void write_matrix_csv(const fs::path& path, const Matrix& M)
{
    auto f = open_out(path);
    for (Index i = 0; i < M.rows(); ++i) {
        for (Index j = 0; j < M.cols(); ++j) {
            if (j) f << ',';
            f << format_double(M(i, j));
        }
        f << '\n';
    }
}

Matrix read_matrix_csv(const fs::path& path)
{
    auto f = open_in(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        for (const auto& c : split_csv(line)) row.push_back(parse_double(c, path));
        if (!rows.empty() && row.size() != rows[0].size()) throw IoError(path.string() + ": ragged rows");
        rows.push_back(std::move(row));
    }
    Matrix M(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) M(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return M;
}

void write_trajectory_csv(const fs::path& path, const Trajectory& traj)
{
    require(traj.outputs.cols() == traj.length(), "write_trajectory_csv: inputs and outputs differ in length");
    auto f = open_out(path);
    f << 'k';
    for (Index i = 0; i < traj.m(); ++i) f << ",u_" << i + 1;
    for (Index i = 0; i < traj.p(); ++i) f << ",y_" << i + 1;
    f << '\n';
    for (Index k = 0; k < traj.length(); ++k) {
        f << k;
        for (Index i = 0; i < traj.m(); ++i) f << ',' << format_double(traj.inputs(i, k));
        for (Index i = 0; i < traj.p(); ++i) f << ',' << format_double(traj.outputs(i, k));
        f << '\n';
    }
}

Trajectory read_trajectory_csv(const fs::path& path)
{
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw IoError(path.string() + ": missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv(line);
    if (header.empty() || header[0] != "k") throw IoError(path.string() + ": header must start with k");
    Index m = 0, p = 0;
    for (std::size_t i = 1; i < header.size(); ++i) {
        const std::string expect_u = "u_" + std::to_string(m + 1), expect_y = "y_" + std::to_string(p + 1);
        if (p == 0 && header[i] == expect_u)
            ++m;
        else if (header[i] == expect_y)
            ++p;
        else
            throw IoError(path.string() + ": unexpected column '" + header[i] + "'");
    }
    if (p == 0) throw IoError(path.string() + ": no output columns");
    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) throw IoError(path.string() + ": row width does not match header");
        if (static_cast<std::size_t>(parse_double(cells[0], path)) != rows.size())
            throw IoError(path.string() + ": step index out of sequence");
        std::vector<double> row;
        for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(parse_double(cells[i], path));
        rows.push_back(std::move(row));
    }
    const auto len = static_cast<Index>(rows.size());
    Trajectory t;
    t.inputs.resize(m, len);
    t.outputs.resize(p, len);
    for (Index k = 0; k < len; ++k) {
        for (Index i = 0; i < m; ++i) t.inputs(i, k) = rows[k][i];
        for (Index i = 0; i < p; ++i) t.outputs(i, k) = rows[k][m + i];
    }
    return t;
}

void write_data_matrices(const fs::path& dir, const DataMatrices& dm)
{
    fs::create_directories(dir);
    const std::pair<const char*, const Matrix*> mats[] = {{"U0", &dm.U0}, {"Z0", &dm.Z0}, {"Z1", &dm.Z1},
                                                          {"X0", &dm.X0}, {"X1", &dm.X1}, {"Y0", &dm.Y0},
                                                          {"P", &dm.P},   {"Phi", &dm.Phi}, {"Theta", &dm.Theta},
                                                          {"L", &dm.L}};
    Json files = Json::array();
    for (const auto& [name, M] : mats) {
        write_named(dir, name, *M);
        files.push_back(std::string(name) + ".csv");
    }
    Json man;
    man["schema_version"] = kSchemaVersion;
    man["kind"] = "data_matrices";
    man["ell"] = dm.ell;
    man["r"] = dm.r;
    man["T"] = dm.T();
    man["k0"] = dm.k0;
    man["kappa"] = dm.kappa ? Json(*dm.kappa) : Json(nullptr);
    man["singular_values"] = vector_to_json(dm.singular_values);
    man["files"] = files;
    write_json(dir / "manifest.json", man);
}

DataMatrices read_data_matrices(const fs::path& dir)
{
    const Json man = read_json(dir / "manifest.json");
    if (man.value("kind", "") != "data_matrices") throw IoError(dir.string() + ": not a data-matrices directory");
    DataMatrices dm;
    dm.U0 = read_named(dir, "U0");
    dm.Z0 = read_named(dir, "Z0");
    dm.Z1 = read_named(dir, "Z1");
    dm.X0 = read_named(dir, "X0");
    dm.X1 = read_named(dir, "X1");
    dm.Y0 = read_named(dir, "Y0");
    dm.P = read_named(dir, "P");
    dm.Phi = read_named(dir, "Phi");
    dm.Theta = read_named(dir, "Theta");
    dm.L = read_named(dir, "L");
    dm.ell = man.at("ell").get<int>();
    dm.r = man.at("r").get<Index>();
    dm.k0 = man.at("k0").get<Index>();
    if (!man.at("kappa").is_null()) dm.kappa = man.at("kappa").get<Index>();
    dm.singular_values = vector_from_json(man.at("singular_values"));
    if (dm.T() != man.at("T").get<Index>()) throw IoError(dir.string() + ": T does not match U0");
    return dm;
}

void write_model(const fs::path& dir, const EstimatedModel& model)
{
    fs::create_directories(dir);
    write_named(dir, "A_hat", model.A_hat);
    write_named(dir, "B_hat", model.B_hat);
    write_named(dir, "C_hat", model.C_hat);
    Json man;
    man["schema_version"] = kSchemaVersion;
    man["kind"] = "model";
    man["method"] = to_string(model.method);
    man["r"] = model.r();
    man["m"] = model.m();
    man["p"] = model.p();
    write_json(dir / "manifest.json", man);
}

EstimatedModel read_model(const fs::path& dir)
{
    const Json man = read_json(dir / "manifest.json");
    if (man.value("kind", "") != "model") throw IoError(dir.string() + ": not a model directory");
    EstimatedModel m;
    m.A_hat = read_named(dir, "A_hat");
    m.B_hat = read_named(dir, "B_hat");
    m.C_hat = read_named(dir, "C_hat");
    m.method = parse_estimation_method(man.at("method").get<std::string>());
    return m;
}

void write_noise_estimate(const fs::path& dir, const NoiseEstimate& ne)
{
    fs::create_directories(dir);
    write_named(dir, "Z_hat", ne.Z_hat);
    write_named(dir, "Xi_hat", ne.Xi_hat);
    write_named(dir, "Sigma_zeta_hat", ne.Sigma_zeta_hat);
    write_named(dir, "Sigma_xi_hat", ne.Sigma_xi_hat);
    write_named(dir, "Psi_hat", ne.Psi_hat);
    write_named(dir, "D_hat", ne.D_hat);
    write_named(dir, "Sigma_chizeta_init", ne.Sigma_chizeta_init);
    Json man;
    man["schema_version"] = kSchemaVersion;
    man["kind"] = "noise_estimate";
    man["psi_radius_raw"] = ne.psi_radius_raw;
    man["psi_stabilized"] = ne.psi_stabilized;
    man["eta_autocorrelation"] = ne.eta_autocorrelation;
    write_json(dir / "manifest.json", man);
}

NoiseEstimate read_noise_estimate(const fs::path& dir)
{
    const Json man = read_json(dir / "manifest.json");
    if (man.value("kind", "") != "noise_estimate") throw IoError(dir.string() + ": not a noise-estimate directory");
    NoiseEstimate ne;
    ne.Z_hat = read_named(dir, "Z_hat");
    ne.Xi_hat = read_named(dir, "Xi_hat");
    ne.Sigma_zeta_hat = read_named(dir, "Sigma_zeta_hat");
    ne.Sigma_xi_hat = read_named(dir, "Sigma_xi_hat");
    ne.Psi_hat = read_named(dir, "Psi_hat");
    ne.D_hat = read_named(dir, "D_hat");
    ne.Sigma_chizeta_init = read_named(dir, "Sigma_chizeta_init");
    ne.psi_radius_raw = man.at("psi_radius_raw").get<double>();
    ne.psi_stabilized = man.at("psi_stabilized").get<bool>();
    ne.eta_autocorrelation = man.at("eta_autocorrelation").get<double>();
    return ne;
}

void write_schedule_csv(const fs::path& path, const MomentSchedule& sched)
{
    const Index N1 = static_cast<Index>(sched.Sigma.size());
    require(N1 >= 1, "write_schedule_csv: empty schedule");
    const Index r = sched.Sigma[0].rows();
    const bool has_mu = sched.mu.cols() == N1;
    const bool has_cross = static_cast<Index>(sched.Sigma_chizeta.size()) == N1;
    const bool has_y = static_cast<Index>(sched.Sigma_y.size()) == N1;
    auto f = open_out(path);
    f << 'k';
    if (has_mu) append_header(f, "mu", r, 1);
    append_header(f, "Sigma", r, r);
    if (has_cross) append_header(f, "Sigma_chizeta", sched.Sigma_chizeta[0].rows(), sched.Sigma_chizeta[0].cols());
    if (has_y) append_header(f, "Sigma_y", sched.Sigma_y[0].rows(), sched.Sigma_y[0].cols());
    f << '\n';
    for (Index k = 0; k < N1; ++k) {
        f << k;
        if (has_mu) append_row_major(f, sched.mu.col(k));
        append_row_major(f, sched.Sigma[k]);
        if (has_cross) append_row_major(f, sched.Sigma_chizeta[k]);
        if (has_y) append_row_major(f, sched.Sigma_y[k]);
        f << '\n';
    }
}

Json solution_summary(const SteeringSolution& sol)
{
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "steering_solution";
    j["status"] = to_string(sol.solver_status);
    j["accepted"] = sol.accepted();
    j["objective"] = sol.objective_value;
    j["iterations"] = sol.iterations;
    j["equality_residual"] = sol.equality_residual;
    j["solve_seconds"] = sol.solve_seconds;
    j["jitter_applied"] = sol.jitter_applied;
    j["message"] = sol.message;
    j["horizon"] = sol.law.horizon();
    j["slack_gap"] = sol.slack_gap;
    j["slack_min_eig"] = sol.slack_min_eig;
    return j;
}

void write_solution(const fs::path& dir, const SteeringSolution& sol)
{
    fs::create_directories(dir);
    write_json(dir / "solution.json", solution_summary(sol));
    const Index N = sol.law.horizon();
    if (N > 0) {
        auto g = open_out(dir / "gains.csv");
        g << 'k';
        append_header(g, "K", sol.law.K[0].rows(), sol.law.K[0].cols());
        g << '\n';
        for (Index k = 0; k < N; ++k) {
            g << k;
            append_row_major(g, sol.law.K[k]);
            g << '\n';
        }
    }
    if (sol.law.v.cols() > 0) {
        auto v = open_out(dir / "feedforward.csv");
        v << 'k';
        append_header(v, "v", sol.law.v.rows(), 1);
        v << '\n';
        for (Index k = 0; k < sol.law.v.cols(); ++k) {
            v << k;
            append_row_major(v, sol.law.v.col(k));
            v << '\n';
        }
    }
    if (!sol.schedule.Sigma.empty()) write_schedule_csv(dir / "schedule.csv", sol.schedule);
}

Json report_summary(const EvaluationReport& rep)
{
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "evaluation_report";
    j["rollout_count"] = rep.rollout_count;
    j["confidence"] = rep.confidence;
    j["terminal_mean_error"] = rep.terminal_mean_error;
    j["terminal_lambda_max"] = rep.terminal_lambda_max;
    j["lambda_max_ratio"] = rep.lambda_max_ratio;
    j["frobenius_distance"] = rep.frobenius_distance;
    j["empirical_terminal_cov"] = matrix_to_json(rep.empirical_terminal_cov);
    if (rep.output_means.cols() > 0) j["terminal_mean"] = vector_to_json(rep.output_means.col(rep.output_means.cols() - 1));
    return j;
}

void write_report(const fs::path& dir, const EvaluationReport& rep)
{
    fs::create_directories(dir);
    write_json(dir / "report.json", report_summary(rep));
    const Index N1 = rep.output_means.cols();
    if (N1 > 0) {
        const Index p = rep.output_means.rows();
        auto f = open_out(dir / "moments.csv");
        f << 'k';
        append_header(f, "mean_y", p, 1);
        append_header(f, "cov_y", p, p);
        f << '\n';
        for (Index k = 0; k < N1; ++k) {
            f << k;
            append_row_major(f, rep.output_means.col(k));
            append_row_major(f, rep.output_covs[k]);
            f << '\n';
        }
    }
    if (!rep.ellipses.empty()) {
        auto f = open_out(dir / "ellipses.csv");
        f << "k,center_1,center_2,major,minor,angle\n";
        for (std::size_t k = 0; k < rep.ellipses.size(); ++k) {
            const auto& e = rep.ellipses[k];
            f << k << ',' << format_double(e.center(0)) << ',' << format_double(e.center(1)) << ','
              << format_double(e.major) << ',' << format_double(e.minor) << ',' << format_double(e.angle) << '\n';
        }
    }
}

void write_json(const fs::path& path, const Json& j)
{
    auto f = open_out(path);
    f << j.dump(2) << '\n';
}

Json read_json(const fs::path& path)
{
    auto f = open_in(path);
    try {
        return Json::parse(f);
    } catch (const Json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    auto f = open_out(path);
    f << text;
}

} // namespace ddcs
