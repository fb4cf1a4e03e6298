#include "ddcs/system_sim.hpp"

#include <sstream>

namespace ddcs {

void GroundTruthSystem::validate() const
{
    require(A.rows() == A.cols() && A.rows() > 0, "system: A must be square and nonempty");
    require(B.rows() == n() && B.cols() > 0, "system: B must have n rows");
    require(C.cols() == n() && C.rows() > 0, "system: C must have n columns");
    require_shape(Sigma_w, n(), n(), "system: Sigma_w");
    require_shape(Sigma_q, p(), p(), "system: Sigma_q");
    require((Sigma_w - Sigma_w.transpose()).cwiseAbs().maxCoeff() <= 1e-12, "system: Sigma_w not symmetric");
    require((Sigma_q - Sigma_q.transpose()).cwiseAbs().maxCoeff() <= 1e-12, "system: Sigma_q not symmetric");
    require(min_eigenvalue(Sigma_w) >= -1e-10, "system: Sigma_w not PSD");
    require(min_eigenvalue(Sigma_q) >= -1e-10, "system: Sigma_q not PSD");
    require(numerical_rank(observability_matrix(A, C, static_cast<int>(n()))) == n(),
            "system: (A, C) is not observable");
    require(numerical_rank(controllability_matrix(A, B)) == n(), "system: (A, B) is not controllable");
}

Matrix observability_matrix(const Matrix& A, const Matrix& C, int ell)
{
    require(ell >= 1, "observability_matrix: ell must be positive");
    const Index p = C.rows(), n = A.rows();
    Matrix O(p * ell, n);
    Matrix ca = C;
    for (int j = ell - 1; j >= 0; --j) {
        O.middleRows(p * j, p) = ca;
        ca = ca * A;
    }
    return O;
}

Matrix controllability_matrix(const Matrix& A, const Matrix& B)
{
    const Index n = A.rows(), m = B.cols();
    Matrix out(n, n * m);
    Matrix ab = B;
    for (Index j = 0; j < n; ++j) {
        out.middleCols(j * m, m) = ab;
        ab = A * ab;
    }
    return out;
}

int observability_index(const Matrix& A, const Matrix& C)
{
    const Index n = A.rows();
    for (int ell = 1; ell <= n; ++ell)
        if (numerical_rank(observability_matrix(A, C, ell)) == n) return ell;
    throw DimensionError("observability_index: (A, C) is not observable");
}

Trajectory simulate_trajectory(const GroundTruthSystem& sys, const Vector& x0, const Matrix& inputs,
                               std::uint64_t seed)
{
    require(inputs.cols() > 0, "simulate_trajectory: inputs must be nonempty");
    require(inputs.rows() == sys.m(), "simulate_trajectory: input dimension does not match B");
    require(x0.size() == sys.n(), "simulate_trajectory: x0 dimension does not match A");
    const Index len = inputs.cols(), n = sys.n(), p = sys.p();
    const CounterRng rng(seed);
    const Matrix fw = psd_factor(sys.Sigma_w), fq = psd_factor(sys.Sigma_q);

    Trajectory tr;
    tr.inputs = inputs;
    tr.outputs.resize(p, len);
    Matrix states(n, len), w(n, len), q(p, len);
    Vector x = x0;
    for (Index k = 0; k < len; ++k) {
        const auto kk = static_cast<std::uint64_t>(k);
        states.col(k) = x;
        q.col(k) = rng.gaussian(kk, channel::measurement, fq);
        w.col(k) = rng.gaussian(kk, channel::process, fw);
        tr.outputs.col(k) = sys.C * x + q.col(k);
        x = sys.A * x + sys.B * inputs.col(k) + w.col(k);
    }
    tr.states = std::move(states);
    tr.process_noise = std::move(w);
    tr.measurement_noise = std::move(q);
    return tr;
}

Matrix generate_excitation(Index T, Index m, double scale, std::uint64_t seed)
{
    require(T >= 1, "generate_excitation: T must be at least 1");
    require(m >= 1, "generate_excitation: m must be at least 1");
    require(scale > 0, "generate_excitation: scale must be positive");
    const CounterRng rng(seed);
    Matrix u(m, T);
    for (Index k = 0; k < T; ++k)
        for (Index i = 0; i < m; ++i)
            u(i, k) = scale * rng.normal(static_cast<std::uint64_t>(k), channel::excitation,
                                         static_cast<std::uint64_t>(i));
    return u;
}

InitialHistorySampler::InitialHistorySampler(const GroundTruthSystem& sys, const Vector& target_mean,
                                             const Matrix& target_cov, int ell)
    : sys_(sys), ell_(ell)
{
    require(ell >= 1, "sample_initial_history: ell must be positive");
    require(target_mean.size() == sys.p(), "sample_initial_history: target mean dimension");
    require_shape(target_cov, sys.p(), sys.p(), "sample_initial_history: target covariance");
    if (symmetry_error(target_cov) > 1e-10 || min_eigenvalue(target_cov) < -1e-10)
        throw DimensionError("sample_initial_history: target covariance is not symmetric PSD");

    const Matrix Al = matrix_power(sys.A, ell);
    Matrix pi_w = Matrix::Zero(sys.n(), sys.n());
    Matrix aj = Matrix::Identity(sys.n(), sys.n());
    for (int j = 0; j < ell; ++j) {
        pi_w += aj * sys.Sigma_w * aj.transpose();
        aj = aj * sys.A;
    }
    const Matrix cal = sys.C * Al;
    const double gain = cal.squaredNorm();
    const double rest = target_cov.trace() - (sys.C * pi_w * sys.C.transpose()).trace() - sys.Sigma_q.trace();
    lambda_ = gain > 0 ? std::max(0.0, rest / gain) : 0.0;
    state_mean_ = pseudo_inverse(cal) * target_mean;
    w_factor_ = psd_factor(sys.Sigma_w);
    q_factor_ = psd_factor(sys.Sigma_q);
}

InitialHistory InitialHistorySampler::sample(std::uint64_t seed) const
{
    const CounterRng rng(seed);
    const Index n = sys_.n(), m = sys_.m(), p = sys_.p();
    Vector x = state_mean_ + std::sqrt(lambda_) * rng.normal_vector(0, channel::initial_state, n);
    InitialHistory out;
    out.window.inputs = Matrix::Zero(m, ell_);
    out.window.outputs.resize(p, ell_);
    for (int j = 0; j < ell_; ++j) {
        const auto jj = static_cast<std::uint64_t>(j);
        out.window.outputs.col(j) = sys_.C * x + rng.gaussian(jj, channel::history_measurement, q_factor_);
        x = sys_.A * x + rng.gaussian(jj, channel::history_process, w_factor_);
    }
    out.x0 = x;
    return out;
}

InitialHistory sample_initial_history(const GroundTruthSystem& sys, const Vector& target_mean,
                                      const Matrix& target_cov, int ell, std::uint64_t seed)
{
    return InitialHistorySampler(sys, target_mean, target_cov, ell).sample(seed);
}

NonminimalGroundTruth build_ground_truth_nonminimal(const GroundTruthSystem& sys, int ell)
{
    require(ell >= 1, "build_ground_truth_nonminimal: ell must be positive");
    const Index n = sys.n(), m = sys.m(), p = sys.p();
    const Matrix& A = sys.A;
    const Matrix& B = sys.B;
    const Matrix& C = sys.C;

    NonminimalGroundTruth g;
    g.ell = ell;
    g.h = ell * (m + p);
    g.O = observability_matrix(A, C, ell);
    if (numerical_rank(g.O) < n) throw DimensionError("ell below observability index");
    g.O_pinv = pseudo_inverse(g.O);

    g.C_x.resize(n, m * ell);
    g.C_w.resize(n, n * ell);
    Matrix aj = Matrix::Identity(n, n);
    for (int j = 0; j < ell; ++j) {
        g.C_x.middleCols(j * m, m) = aj * B;
        g.C_w.middleCols(j * n, n) = aj;
        aj = aj * A;
    }
    const Matrix Al = aj;

    // block (j, i) = C A^{i-j-1} [B | I] for i > j
    g.T_u = Matrix::Zero(p * ell, m * ell);
    g.T_w = Matrix::Zero(p * ell, n * ell);
    for (int j = 0; j < ell; ++j)
        for (int i = j + 1; i < ell; ++i) {
            const Matrix cap = C * matrix_power(A, i - j - 1);
            g.T_u.block(j * p, i * m, p, m) = cap * B;
            g.T_w.block(j * p, i * n, p, n) = cap;
        }

    const Matrix cal_opinv = C * Al * g.O_pinv;
    g.S_script.resize(p, g.h);
    g.S_script.leftCols(m * ell) = C * g.C_x - cal_opinv * g.T_u;
    g.S_script.rightCols(p * ell) = cal_opinv;
    g.F_w = C * g.C_w - cal_opinv * g.T_w;
    g.F_q = -cal_opinv;

    const Index mu = m * ell;
    g.A_z = Matrix::Zero(g.h, g.h);
    if (ell > 1) {
        g.A_z.block(m, 0, m * (ell - 1), m * (ell - 1)).setIdentity();
        g.A_z.block(mu + p, mu, p * (ell - 1), p * (ell - 1)).setIdentity();
    }
    g.A_z.middleRows(mu, p) = g.S_script;
    g.B_z = Matrix::Zero(g.h, m);
    g.B_z.topRows(m).setIdentity();
    g.D_z = Matrix::Zero(g.h, p);
    g.D_z.middleRows(mu, p).setIdentity();
    return g;
}

Matrix induced_noise(const NonminimalGroundTruth& nm, const Trajectory& traj)
{
    require(traj.process_noise.has_value() && traj.measurement_noise.has_value(),
            "induced_noise: trajectory carries no noise log");
    const Matrix& w = *traj.process_noise;
    const Matrix& q = *traj.measurement_noise;
    const int ell = nm.ell;
    const Index n = w.rows(), p = q.rows(), len = traj.length();
    require(len > ell, "induced_noise: trajectory shorter than ell + 1");
    require_shape(nm.F_w, p, n * ell, "induced_noise: F_w");
    Matrix out(p, len - ell);
    Vector wt(n * ell), qt(p * ell);
    for (Index k = ell; k < len; ++k) {
        for (int j = 1; j <= ell; ++j) {
            wt.segment((j - 1) * n, n) = w.col(k - j);
            qt.segment((j - 1) * p, p) = q.col(k - j);
        }
        out.col(k - ell) = nm.F_w * wt + nm.F_q * qt + q.col(k);
    }
    return out;
}

} // namespace ddcs
