#include "ddcs/experiment.hpp"

#include "ddcs/random.hpp"
#include "ddcs/representation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace ddcs {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kStageExcitation = 1;
constexpr std::uint64_t kStageSimulation = 2;
constexpr std::uint64_t kStageEvaluation = 3;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename Fn>
void run_tasks(std::size_t count, int jobs, Fn&& fn)
{
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = static_cast<std::size_t>(w); i < count; i += static_cast<std::size_t>(workers)) fn(i);
        });
    for (auto& t : pool) t.join();
}

void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& section)
{
    if (!obj.is_object()) throw ConfigError(section + ": expected an object");
    for (const auto& [k, _] : obj.items())
        if (!allowed.count(k)) throw ConfigError(section + ": unknown key '" + k + "'");
}

Matrix read_matrix(const Json& j, const fs::path& base, const std::string& where)
{
    try {
        if (j.is_string()) return read_matrix_csv(base / j.get<std::string>());
        return matrix_from_json(j);
    } catch (const IoError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

Vector read_vector(const Json& j, const fs::path& base, const std::string& where)
{
    const Matrix M = read_matrix(j, base, where);
    if (M.cols() == 1) return M.col(0);
    if (M.rows() == 1) return M.row(0).transpose();
    throw ConfigError(where + ": expected a vector");
}

template <typename T>
T get_as(const Json& j, const std::string& where)
{
    try {
        return j.get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

Json vec_json(const Vector& v)
{
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

std::string format_or_nan(double x) { return std::isfinite(x) ? format_double(x) : "nan"; }

int exit_code_for(SolverStatus s)
{
    switch (s) {
    case SolverStatus::optimal:
    case SolverStatus::near_optimal: return exit_code::success;
    case SolverStatus::infeasible:
    case SolverStatus::unbounded: return exit_code::infeasible;
    default: return exit_code::numerical_failure;
    }
}

template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn())
{
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what(), exit_code::numerical_failure);
    }
}

// E[z_0] of the initial-history sampler: zero inputs, outputs C A^j m0.
Vector expected_initial_z(const GroundTruthSystem& sys, const InitialHistorySampler& sampler)
{
    const int ell = sampler.ell();
    Matrix uw = Matrix::Zero(sys.m(), ell), yw(sys.p(), ell);
    Vector x = sampler.state_mean();
    for (int j = 0; j < ell; ++j) {
        yw.col(j) = sys.C * x;
        x = sys.A * x;
    }
    return stack_history(uw, yw);
}

} // namespace

double median(std::vector<double> v)
{
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sample_variance(const std::vector<double>& v)
{
    std::vector<double> f;
    for (double x : v)
        if (std::isfinite(x)) f.push_back(x);
    if (f.size() < 2) return kNaN;
    double mean = 0.0;
    for (double x : f) mean += x;
    mean /= static_cast<double>(f.size());
    double s = 0.0;
    for (double x : f) s += (x - mean) * (x - mean);
    return s / static_cast<double>(f.size() - 1);
}

std::uint64_t replicate_seed(std::uint64_t root, Index T, int replicate)
{
    return derive_seed(root, static_cast<std::uint64_t>(T), static_cast<std::uint64_t>(replicate));
}

GroundTruthSystem preset_system(const std::string& name)
{
    GroundTruthSystem s;
    if (name == "paper-4state") {
        s.A.resize(4, 4);
        s.A << 0.5, 1, 0, 0, 0, 0.5, 0, 0, 0, 0, 0.3, 1, 0, 0, 0, 0.3;
        s.B.resize(4, 2);
        s.B << 1, -0.7, 0, 1, 0.5, -0.2, 0, 0.5;
        s.C.resize(2, 4);
        s.C << 1, 0, 0, 0, 0, 0, 1, 0;
        s.Sigma_w = 0.01 * Matrix::Identity(4, 4);
        s.Sigma_q = 0.04 * Matrix::Identity(2, 2);
    } else if (name == "paper-3state") {
        s.A.resize(3, 3);
        s.A << -0.5, 1.4, 0.4, -0.9, 0.3, -1.5, 1.1, 1.0, -0.4;
        s.A *= 0.55;
        s.B.resize(3, 2);
        s.B << 0.1, -0.3, -0.1, -0.7, 0.7, -1;
        s.C.resize(2, 3);
        s.C << 1, 0, 0, 0, 1, 0;
        s.Sigma_w = 0.01 * Matrix::Identity(3, 3);
        s.Sigma_q = 0.01 * Matrix::Identity(2, 2);
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return s;
}

ExperimentConfig preset_config(const std::string& name)
{
    ExperimentConfig c;
    c.preset = name;
    c.system = preset_system(name);
    c.ell = 2;
    c.steering.N = 15;
    c.steering.mu_y_init = Vector::Zero(2);
    c.steering.mu_y_final = Vector(2);
    c.steering.mu_y_final << -5.878, -9.511;
    c.steering.Sigma_y_init = 2.5 * Matrix::Identity(2, 2);
    c.steering.Sigma_y_final = 0.25 * Matrix::Identity(2, 2);
    c.steering.Q_y = Matrix::Identity(2, 2);
    c.steering.R = Matrix::Identity(2, 2);
    c.steering.terminal_mode = TerminalMode::upper_bound;
    c.reference = Json{{"lissajous", Json{{"amplitude", {10.0, 10.0}}, {"frequency", {1.8, 3.6}}, {"phase", {0.0, 0.0}}}}};
    if (name == "paper-4state") {
        c.identity_reduction = true;
        c.sizes = {50, 500, 5000};
    } else {
        c.kappa = 7;
        c.sizes = {300, 1500, 5000};
    }
    c.resolve_reference();
    return c;
}

void ExperimentConfig::resolve_reference()
{
    if (reference.is_null()) {
        steering.y_ref = Matrix();
        return;
    }
    if (reference.is_object() && reference.contains("lissajous")) {
        const Json& l = reference.at("lissajous");
        check_keys(l, {"amplitude", "frequency", "phase"}, "steering.reference.lissajous");
        const Vector amp = read_vector(l.at("amplitude"), ".", "steering.reference.lissajous.amplitude");
        const Vector freq = read_vector(l.at("frequency"), ".", "steering.reference.lissajous.frequency");
        const Vector phase = l.contains("phase") ? read_vector(l.at("phase"), ".", "steering.reference.lissajous.phase")
                                                 : Vector(Vector::Zero(amp.size()));
        if (freq.size() != amp.size() || phase.size() != amp.size())
            throw ConfigError("steering.reference.lissajous: amplitude, frequency and phase lengths differ");
        steering.y_ref = lissajous_reference(steering.N, amp, freq, phase);
        return;
    }
    steering.y_ref = read_matrix(reference, ".", "steering.reference");
}

void ExperimentConfig::validate() const
{
    try {
        system.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("system: ") + e.what());
    }
    const Index m = system.m(), p = system.p();
    if (ell < observability_index(system.A, system.C))
        throw ConfigError("ell is below the observability index of the system");
    const Index h = ell * (m + p);
    if (kappa && (*kappa <= m * ell || *kappa > h))
        throw ConfigError("kappa must lie in (m*ell, ell*(m+p)]");
    if (!(gap_ratio > 1.0)) throw ConfigError("gap_ratio must exceed 1");
    if (sizes.empty()) throw ConfigError("dataset.sizes must not be empty");
    for (Index T : sizes)
        if (T <= 0) throw ConfigError("dataset.sizes must be positive");
    if (replicates < 1) throw ConfigError("dataset.replicates must be at least 1");
    if (!(input_scale > 0)) throw ConfigError("dataset.input_scale must be positive");
    if (sweep_methods.empty()) throw ConfigError("estimation.sweep_methods must not be empty");
    if (instrument_lags && *instrument_lags < 1) throw ConfigError("estimation.instrument_lags must be positive");
    if (rollouts < 2) throw ConfigError("evaluation.rollouts must be at least 2");
    if (!(confidence > 0 && confidence < 1)) throw ConfigError("evaluation.confidence must lie in (0, 1)");
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    try {
        steering.validate(p, m);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig parse_config(const Json& j, const fs::path& base)
{
    check_keys(j, {"preset", "system", "noise_free", "ell", "kappa", "gap_ratio", "identity_reduction", "dataset",
                   "estimation", "steering", "evaluation", "solver", "seed", "output_dir", "jobs", "schema_version"},
               "config");
    ExperimentConfig c;
    if (j.contains("preset")) c = preset_config(get_as<std::string>(j.at("preset"), "preset"));

    if (j.contains("system")) {
        const Json& s = j.at("system");
        check_keys(s, {"A", "B", "C", "Sigma_w", "Sigma_q"}, "system");
        auto set = [&](const char* key, Matrix& dst) {
            if (s.contains(key)) dst = read_matrix(s.at(key), base, std::string("system.") + key);
        };
        set("A", c.system.A);
        set("B", c.system.B);
        set("C", c.system.C);
        set("Sigma_w", c.system.Sigma_w);
        set("Sigma_q", c.system.Sigma_q);
    } else if (c.preset == "custom") {
        throw ConfigError("config needs either a preset or a system section");
    }
    if (j.contains("noise_free") && get_as<bool>(j.at("noise_free"), "noise_free")) {
        c.system.Sigma_w = Matrix::Zero(c.system.A.rows(), c.system.A.rows());
        c.system.Sigma_q = Matrix::Zero(c.system.C.rows(), c.system.C.rows());
    }
    if (j.contains("ell")) c.ell = get_as<int>(j.at("ell"), "ell");
    if (j.contains("kappa"))
        c.kappa = j.at("kappa").is_null() ? std::nullopt : std::optional<Index>(get_as<Index>(j.at("kappa"), "kappa"));
    if (j.contains("gap_ratio")) c.gap_ratio = get_as<double>(j.at("gap_ratio"), "gap_ratio");
    if (j.contains("identity_reduction"))
        c.identity_reduction = get_as<bool>(j.at("identity_reduction"), "identity_reduction");

    if (j.contains("dataset")) {
        const Json& d = j.at("dataset");
        check_keys(d, {"sizes", "replicates", "input_scale"}, "dataset");
        if (d.contains("sizes")) c.sizes = get_as<std::vector<Index>>(d.at("sizes"), "dataset.sizes");
        if (d.contains("replicates")) c.replicates = get_as<int>(d.at("replicates"), "dataset.replicates");
        if (d.contains("input_scale")) c.input_scale = get_as<double>(d.at("input_scale"), "dataset.input_scale");
    }
    auto method = [](const Json& v, const std::string& where) {
        try {
            return parse_estimation_method(get_as<std::string>(v, where));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(where + ": " + e.what());
        }
    };
    if (j.contains("estimation")) {
        const Json& e = j.at("estimation");
        check_keys(e, {"method", "sweep_methods", "instrument_lags"}, "estimation");
        if (e.contains("method")) c.method = method(e.at("method"), "estimation.method");
        if (e.contains("sweep_methods")) {
            c.sweep_methods.clear();
            for (const auto& v : e.at("sweep_methods")) c.sweep_methods.push_back(method(v, "estimation.sweep_methods"));
        }
        if (e.contains("instrument_lags"))
            c.instrument_lags = e.at("instrument_lags").is_null()
                                    ? std::nullopt
                                    : std::optional<int>(get_as<int>(e.at("instrument_lags"), "estimation.instrument_lags"));
    }
    if (j.contains("steering")) {
        const Json& s = j.at("steering");
        check_keys(s, {"N", "mu_y_init", "mu_y_final", "Sigma_y_init", "Sigma_y_final", "Q_y", "R", "reference",
                       "terminal_mode", "slack_weight"},
                   "steering");
        auto& sp = c.steering;
        if (s.contains("N")) sp.N = get_as<int>(s.at("N"), "steering.N");
        if (s.contains("mu_y_init")) sp.mu_y_init = read_vector(s.at("mu_y_init"), base, "steering.mu_y_init");
        if (s.contains("mu_y_final")) sp.mu_y_final = read_vector(s.at("mu_y_final"), base, "steering.mu_y_final");
        if (s.contains("Sigma_y_init")) sp.Sigma_y_init = read_matrix(s.at("Sigma_y_init"), base, "steering.Sigma_y_init");
        if (s.contains("Sigma_y_final"))
            sp.Sigma_y_final = read_matrix(s.at("Sigma_y_final"), base, "steering.Sigma_y_final");
        if (s.contains("Q_y")) sp.Q_y = read_matrix(s.at("Q_y"), base, "steering.Q_y");
        if (s.contains("R")) sp.R = read_matrix(s.at("R"), base, "steering.R");
        if (s.contains("reference")) {
            c.reference = s.at("reference");
            if (c.reference.is_string())
                c.reference = matrix_to_json(read_matrix(c.reference, base, "steering.reference"));
        }
        if (s.contains("terminal_mode")) {
            try {
                sp.terminal_mode = parse_terminal_mode(get_as<std::string>(s.at("terminal_mode"), "steering.terminal_mode"));
            } catch (const DimensionError& e) {
                throw ConfigError(std::string("steering.terminal_mode: ") + e.what());
            }
        }
        if (s.contains("slack_weight")) sp.slack_weight = get_as<double>(s.at("slack_weight"), "steering.slack_weight");
    }
    if (j.contains("evaluation")) {
        const Json& e = j.at("evaluation");
        check_keys(e, {"rollouts", "confidence"}, "evaluation");
        if (e.contains("rollouts")) c.rollouts = get_as<Index>(e.at("rollouts"), "evaluation.rollouts");
        if (e.contains("confidence")) c.confidence = get_as<double>(e.at("confidence"), "evaluation.confidence");
    }
    if (j.contains("solver")) {
        const Json& s = j.at("solver");
        check_keys(s, {"max_iter", "feastol", "abstol", "reltol", "verbose"}, "solver");
        if (s.contains("max_iter")) c.solver.max_iterations = get_as<int>(s.at("max_iter"), "solver.max_iter");
        if (s.contains("feastol")) c.solver.feastol = get_as<double>(s.at("feastol"), "solver.feastol");
        if (s.contains("abstol")) c.solver.abstol = get_as<double>(s.at("abstol"), "solver.abstol");
        if (s.contains("reltol")) c.solver.reltol = get_as<double>(s.at("reltol"), "solver.reltol");
        if (s.contains("verbose")) c.solver.verbose = get_as<bool>(s.at("verbose"), "solver.verbose");
    }
    if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j.at("seed"), "seed");
    if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j.at("output_dir"), "output_dir");
    if (j.contains("jobs")) c.jobs = get_as<int>(j.at("jobs"), "jobs");

    if (c.steering.mu_y_init.size() == 0) {
        // steering defaults sized to the system when a custom config leaves them out
        const Index p = c.system.C.rows(), m = c.system.B.cols();
        c.steering.mu_y_init = Vector::Zero(p);
        if (c.steering.mu_y_final.size() == 0) c.steering.mu_y_final = Vector::Zero(p);
        if (c.steering.Sigma_y_init.size() == 0) c.steering.Sigma_y_init = Matrix::Identity(p, p);
        if (c.steering.Sigma_y_final.size() == 0) c.steering.Sigma_y_final = Matrix::Identity(p, p);
        if (c.steering.Q_y.size() == 0) c.steering.Q_y = Matrix::Identity(p, p);
        if (c.steering.R.size() == 0) c.steering.R = Matrix::Identity(m, m);
    }
    if (c.ell == 0 && c.system.A.size() > 0) c.ell = observability_index(c.system.A, c.system.C);
    c.resolve_reference();
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path)
{
    Json j;
    try {
        j = read_json(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

Json config_to_json(const ExperimentConfig& c)
{
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["preset"] = c.preset;
    j["system"] = Json{{"A", matrix_to_json(c.system.A)},
                       {"B", matrix_to_json(c.system.B)},
                       {"C", matrix_to_json(c.system.C)},
                       {"Sigma_w", matrix_to_json(c.system.Sigma_w)},
                       {"Sigma_q", matrix_to_json(c.system.Sigma_q)}};
    j["ell"] = c.ell;
    j["kappa"] = c.kappa ? Json(*c.kappa) : Json(nullptr);
    j["gap_ratio"] = c.gap_ratio;
    j["identity_reduction"] = c.identity_reduction;
    j["dataset"] = Json{{"sizes", c.sizes}, {"replicates", c.replicates}, {"input_scale", c.input_scale}};
    Json methods = Json::array();
    for (auto m : c.sweep_methods) methods.push_back(to_string(m));
    j["estimation"] = Json{{"method", to_string(c.method)},
                           {"sweep_methods", methods},
                           {"instrument_lags", c.instrument_lags ? Json(*c.instrument_lags) : Json(nullptr)}};
    const auto& s = c.steering;
    j["steering"] = Json{{"N", s.N},
                         {"mu_y_init", vec_json(s.mu_y_init)},
                         {"mu_y_final", vec_json(s.mu_y_final)},
                         {"Sigma_y_init", matrix_to_json(s.Sigma_y_init)},
                         {"Sigma_y_final", matrix_to_json(s.Sigma_y_final)},
                         {"Q_y", matrix_to_json(s.Q_y)},
                         {"R", matrix_to_json(s.R)},
                         {"reference", c.reference},
                         {"terminal_mode", to_string(s.terminal_mode)},
                         {"slack_weight", s.slack_weight}};
    j["evaluation"] = Json{{"rollouts", c.rollouts}, {"confidence", c.confidence}};
    j["solver"] = Json{{"max_iter", c.solver.max_iterations},
                       {"feastol", c.solver.feastol},
                       {"abstol", c.solver.abstol},
                       {"reltol", c.solver.reltol},
                       {"verbose", c.solver.verbose}};
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["jobs"] = c.jobs;
    return j;
}

Index default_window_start(int ell, Index h, Index m, std::optional<int> lags)
{
    Index lag = (h + m + m - 1) / m - 1;
    if (lags) lag = std::max<Index>(lag, *lags);
    return std::max<Index>(ell, lag);
}

CollectedData collect_data(const ExperimentConfig& cfg, Index T, std::uint64_t seed)
{
    const GroundTruthSystem& sys = cfg.system;
    const Index m = sys.m(), p = sys.p();
    const Index h = cfg.ell * (m + p);
    const Index k0 = default_window_start(cfg.ell, h, m, cfg.instrument_lags);
    const Index len = k0 + T + 1;

    CollectedData out;
    const Matrix u = generate_excitation(len, m, cfg.input_scale, derive_seed(seed, kStageExcitation));
    out.trajectory = simulate_trajectory(sys, Vector::Zero(sys.n()), u, derive_seed(seed, kStageSimulation));

    const Matrix I = Matrix::Identity(h, h);
    if (cfg.identity_reduction) {
        out.dm = assemble_data_matrices(out.trajectory, cfg.ell, I, k0, T);
        out.reduction.L = I;
        out.reduction.r = h;
        out.reduction.identity = true;
        out.reduction.singular_values = singular_values(out.dm.Z0);
    } else {
        const DataMatrices raw = assemble_data_matrices(out.trajectory, cfg.ell, I, k0, T);
        out.reduction = compute_L(raw.U0, raw.Z0, cfg.ell, cfg.kappa, cfg.gap_ratio);
        out.dm = assemble_data_matrices(out.trajectory, cfg.ell, out.reduction.L, k0, T);
    }
    out.dm.kappa = cfg.kappa;
    out.dm.singular_values = out.reduction.singular_values;
    return out;
}

std::vector<EstimateSweepRow> run_estimate_replicate(const ExperimentConfig& cfg_in, Index T, int replicate)
{
    ExperimentConfig cfg = cfg_in;
    cfg.identity_reduction = true;
    const CollectedData data = collect_data(cfg, T, replicate_seed(cfg.seed, T, replicate));
    const NonminimalGroundTruth truth = build_ground_truth_nonminimal(cfg.system, cfg.ell);
    const Matrix truth_BA = hstack({truth.B_z, truth.A_z});

    std::vector<EstimateSweepRow> rows;
    for (EstimationMethod method : cfg.sweep_methods) {
        EstimateSweepRow row{T, method, replicate, kNaN, "ok"};
        try {
            std::optional<InstrumentMatrix> G;
            if (method == EstimationMethod::IV2SLS)
                G = build_instruments(data.trajectory,
                                      cfg.instrument_lags.value_or(default_lag_count(data.dm.r, data.dm.m())), data.dm);
            const EstimatedModel est = estimate_dynamics(data.dm, method, G ? &*G : nullptr);
            row.error = model_error(est, truth_BA);
        } catch (const std::exception& e) {
            row.status = std::string("failed: ") + e.what();
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<EstimateSweepRow> run_estimate_sweep(const ExperimentConfig& cfg, int jobs)
{
    std::vector<std::pair<Index, int>> tasks;
    for (Index T : cfg.sizes)
        for (int r = 0; r < cfg.replicates; ++r) tasks.emplace_back(T, r);
    std::vector<std::vector<EstimateSweepRow>> parts(tasks.size());
    run_tasks(tasks.size(), jobs,
              [&](std::size_t i) { parts[i] = run_estimate_replicate(cfg, tasks[i].first, tasks[i].second); });
    std::vector<EstimateSweepRow> rows;
    for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
    return rows;
}

std::string estimate_rows_csv(const std::vector<EstimateSweepRow>& rows)
{
    std::ostringstream os;
    os << "T,method,replicate,e,status\n";
    for (const auto& r : rows)
        os << r.T << ',' << to_string(r.method) << ',' << r.replicate << ',' << format_or_nan(r.error) << ','
           << (r.status == "ok" ? "ok" : "failed") << '\n';
    return os.str();
}

std::string estimate_summary_csv(const std::vector<EstimateSweepRow>& rows)
{
    std::vector<std::pair<Index, EstimationMethod>> keys;
    for (const auto& r : rows)
        if (std::find(keys.begin(), keys.end(), std::make_pair(r.T, r.method)) == keys.end())
            keys.emplace_back(r.T, r.method);
    std::ostringstream os;
    os << "T,method,count,median_e,variance_e\n";
    for (const auto& [T, method] : keys) {
        std::vector<double> e;
        for (const auto& r : rows)
            if (r.T == T && r.method == method) e.push_back(r.error);
        os << T << ',' << to_string(method) << ',' << e.size() << ',' << format_or_nan(median(e)) << ','
           << format_or_nan(sample_variance(e)) << '\n';
    }
    return os.str();
}

SteerOutcome run_steer_pipeline(const ExperimentConfig& cfg, Index T, std::uint64_t seed, int jobs)
{
    SteerOutcome out;
    out.T = T;
    out.seed = seed;
    const GroundTruthSystem& sys = cfg.system;

    out.data = run_stage("collect", [&] { return collect_data(cfg, T, seed); });
    const DataMatrices& dm = out.data.dm;

    out.model = run_stage("estimate", [&] {
        const InstrumentMatrix* G = nullptr;
        if (cfg.method == EstimationMethod::IV2SLS) {
            out.instruments = build_instruments(out.data.trajectory,
                                                cfg.instrument_lags.value_or(default_lag_count(dm.r, dm.m())), dm);
            G = &out.instruments;
        }
        return estimate_model(dm, cfg.method, G);
    });
    out.noise = run_stage("noise", [&] { return estimate_noise(dm, out.model); });

    const std::uint64_t eval_seed = derive_seed(seed, kStageEvaluation);
    const InitialHistorySampler sampler = run_stage("initial_moments", [&] {
        return InitialHistorySampler(sys, cfg.steering.mu_y_init, cfg.steering.Sigma_y_init, cfg.ell);
    });
    out.initial_moments =
        run_stage("initial_moments", [&] { return measure_initial_moments(sys, sampler, cfg.rollouts, eval_seed); });
    out.mu0 = dm.L * expected_initial_z(sys, sampler);

    SteeringSpec spec = cfg.steering;
    spec.Sigma_y_init = out.initial_moments.cov;

    out.mean = run_stage("mean_steering", [&] { return solve_mean_steering(out.model, spec, out.mu0); });
    if (out.mean.status == SolverStatus::infeasible)
        throw StageError("mean_steering", out.mean.message, exit_code::infeasible);

    out.covariance = run_stage("covariance_program", [&] {
        const CovarianceProgram cp = assemble_covariance_sdp(dm, out.noise, out.model.C_hat, spec);
        return solve_covariance_sdp(cp, dm, cfg.solver);
    });
    out.status = to_string(out.covariance.solver_status);
    out.exit_code = exit_code_for(out.covariance.solver_status);

    if (out.covariance.accepted()) {
        out.law.K = out.covariance.law.K;
        out.propagation = run_stage("propagation_check",
                                    [&] { return check_propagation_consistency(out.covariance, dm, out.noise); });
    } else {
        out.law.K.assign(static_cast<std::size_t>(spec.N), Matrix::Zero(dm.m(), dm.r));
    }
    out.law.v = out.mean.v;
    out.covariance.law.v = out.mean.v;
    out.covariance.schedule.mu = out.mean.mu;

    out.report = run_stage("evaluate", [&] {
        ClosedLoopSetup setup;
        setup.system = &sys;
        setup.sampler = &sampler;
        setup.L = dm.L;
        setup.mu = out.mean.mu;
        setup.mu_y_final = spec.mu_y_final;
        setup.Sigma_y_final = spec.Sigma_y_final;
        setup.confidence = cfg.confidence;
        return run_closed_loop(setup, out.law, cfg.rollouts, eval_seed, jobs);
    });
    return out;
}

void write_steer_artifacts(const fs::path& dir, const SteerOutcome& out, const ExperimentConfig& cfg)
{
    fs::create_directories(dir);
    write_trajectory_csv(dir / "trajectory.csv", out.data.trajectory);
    write_data_matrices(dir / "data", out.data.dm);
    write_model(dir / "model", out.model);
    write_noise_estimate(dir / "noise", out.noise);
    write_solution(dir / "solution", out.covariance);
    write_report(dir / "report", out.report);
    if (out.propagation) write_schedule_csv(dir / "solution" / "repropagated.csv", out.propagation->repropagated);

    Json man;
    man["schema_version"] = kSchemaVersion;
    man["kind"] = "steer_run";
    man["T"] = out.T;
    man["seed"] = out.seed;
    man["evaluation_seed"] = derive_seed(out.seed, kStageEvaluation);
    man["status"] = out.status;
    man["exit_code"] = out.exit_code;
    man["r"] = out.data.dm.r;
    man["mean_steering"] = Json{{"status", to_string(out.mean.status)}, {"kkt_residual", out.mean.kkt_residual}};
    man["covariance_program"] = solution_summary(out.covariance);
    if (out.propagation)
        man["propagation_check"] = Json{{"min_eig_difference", out.propagation->min_eig_difference},
                                        {"max_abs_difference", out.propagation->max_abs_difference},
                                        {"max_slack_gap", out.propagation->max_slack_gap}};
    man["noise"] = Json{{"psi_radius_raw", out.noise.psi_radius_raw}, {"psi_stabilized", out.noise.psi_stabilized}};
    man["report"] = report_summary(out.report);
    man["files"] = {"trajectory.csv", "data/", "model/", "noise/", "solution/", "report/"};
    man["config"] = config_to_json(cfg);
    write_json(dir / "manifest.json", man);
}

Json sweep_row_to_json(const SweepSteerRow& r)
{
    auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
    return Json{{"schema_version", kSchemaVersion},
                {"T", r.T},
                {"replicate", r.replicate},
                {"seed", r.seed},
                {"status", r.status},
                {"terminal_mean_error", num(r.terminal_mean_error)},
                {"lambda_max_ratio", num(r.lambda_max_ratio)},
                {"frobenius_distance", num(r.frobenius_distance)},
                {"min_eig_difference", num(r.min_eig_difference)},
                {"solve_seconds", num(r.solve_seconds)}};
}

SweepSteerRow sweep_row_from_json(const Json& j)
{
    auto num = [&](const char* k) { return j.at(k).is_null() ? kNaN : j.at(k).get<double>(); };
    SweepSteerRow r;
    r.T = j.at("T").get<Index>();
    r.replicate = j.at("replicate").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.status = j.at("status").get<std::string>();
    r.terminal_mean_error = num("terminal_mean_error");
    r.lambda_max_ratio = num("lambda_max_ratio");
    r.frobenius_distance = num("frobenius_distance");
    r.min_eig_difference = num("min_eig_difference");
    r.solve_seconds = num("solve_seconds");
    return r;
}

std::string sweep_rows_csv(const std::vector<SweepSteerRow>& rows)
{
    std::ostringstream os;
    os << "T,replicate,seed,status,terminal_mean_error,lambda_max_ratio,frobenius_distance,min_eig_difference\n";
    for (const auto& r : rows)
        os << r.T << ',' << r.replicate << ',' << r.seed << ',' << r.status << ',' << format_or_nan(r.terminal_mean_error)
           << ',' << format_or_nan(r.lambda_max_ratio) << ',' << format_or_nan(r.frobenius_distance) << ','
           << format_or_nan(r.min_eig_difference) << '\n';
    return os.str();
}

std::string sweep_summary_csv(const std::vector<SweepSteerRow>& rows)
{
    std::vector<Index> sizes;
    for (const auto& r : rows)
        if (std::find(sizes.begin(), sizes.end(), r.T) == sizes.end()) sizes.push_back(r.T);
    std::ostringstream os;
    os << "T,count,accepted,median_terminal_mean_error,variance_terminal_mean_error,median_lambda_max_ratio,"
          "median_frobenius_distance\n";
    for (Index T : sizes) {
        std::vector<double> e, lam, fro;
        int accepted = 0;
        for (const auto& r : rows) {
            if (r.T != T) continue;
            e.push_back(r.terminal_mean_error);
            lam.push_back(r.lambda_max_ratio);
            fro.push_back(r.frobenius_distance);
            if (r.status == "optimal" || r.status == "near_optimal") ++accepted;
        }
        os << T << ',' << e.size() << ',' << accepted << ',' << format_or_nan(median(e)) << ','
           << format_or_nan(sample_variance(e)) << ',' << format_or_nan(median(lam)) << ','
           << format_or_nan(median(fro)) << '\n';
    }
    return os.str();
}

std::vector<SweepSteerRow> run_sweep_steer(const ExperimentConfig& cfg, const fs::path& out_dir, int jobs)
{
    const fs::path rep_dir = out_dir / "replicates";
    fs::create_directories(rep_dir);
    const Json cfg_json = config_to_json(cfg);
    const fs::path man_path = out_dir / "manifest.json";
    if (fs::exists(man_path)) {
        const Json old = read_json(man_path);
        Json a = old.value("config", Json()), b = cfg_json;
        // worker count and output location do not change results
        for (Json* c : {&a, &b}) {
            if (c->is_object()) {
                c->erase("jobs");
                c->erase("output_dir");
            }
        }
        if (a != b) throw ConfigError(out_dir.string() + " holds a sweep with a different configuration");
    }
    Json man;
    man["schema_version"] = kSchemaVersion;
    man["kind"] = "sweep_steer";
    man["seed"] = cfg.seed;
    man["config"] = cfg_json;
    man["completed"] = Json::array();
    write_json(man_path, man);

    std::vector<std::pair<Index, int>> tasks;
    for (Index T : cfg.sizes)
        for (int r = 0; r < cfg.replicates; ++r) tasks.emplace_back(T, r);
    std::vector<SweepSteerRow> rows(tasks.size());
    std::mutex writer;

    run_tasks(tasks.size(), jobs, [&](std::size_t i) {
        const auto [T, rep] = tasks[i];
        const fs::path file = rep_dir / ("T" + std::to_string(T) + "_r" + std::to_string(rep) + ".json");
        if (fs::exists(file)) {
            std::lock_guard lock(writer);
            rows[i] = sweep_row_from_json(read_json(file));
            return;
        }
        SweepSteerRow row;
        row.T = T;
        row.replicate = rep;
        row.seed = replicate_seed(cfg.seed, T, rep);
        row.terminal_mean_error = row.lambda_max_ratio = row.frobenius_distance = row.min_eig_difference = kNaN;
        try {
            const SteerOutcome o = run_steer_pipeline(cfg, T, row.seed, jobs > 1 ? 1 : cfg.jobs);
            row.status = o.status;
            row.terminal_mean_error = o.report.terminal_mean_error;
            row.lambda_max_ratio = o.report.lambda_max_ratio;
            row.frobenius_distance = o.report.frobenius_distance;
            row.solve_seconds = o.covariance.solve_seconds;
            if (o.propagation) row.min_eig_difference = o.propagation->min_eig_difference;
        } catch (const StageError& e) {
            row.status = "error:" + e.stage;
        }
        std::lock_guard lock(writer);
        const fs::path tmp = file.string() + ".tmp";
        write_json(tmp, sweep_row_to_json(row));
        fs::rename(tmp, file);
        rows[i] = row;
    });

    Json done = Json::array();
    for (const auto& r : rows) done.push_back(Json{{"T", r.T}, {"replicate", r.replicate}, {"status", r.status}});
    man["completed"] = done;
    write_json(man_path, man);
    write_text(out_dir / "rows.csv", sweep_rows_csv(rows));
    write_text(out_dir / "summary.csv", sweep_summary_csv(rows));
    return rows;
}

} // namespace ddcs
