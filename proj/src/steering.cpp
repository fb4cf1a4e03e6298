#include "ddcs/steering.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

namespace ddcs {

std::string to_string(TerminalMode m)
{
    return m == TerminalMode::equality ? "equality" : "upper_bound";
}

TerminalMode parse_terminal_mode(const std::string& s)
{
    if (s == "equality") return TerminalMode::equality;
    if (s == "upper_bound") return TerminalMode::upper_bound;
    throw DimensionError("unknown terminal mode '" + s + "'");
}

void SteeringSpec::validate(Index p, Index m) const
{
    require(N >= 1, "steering spec: N must be at least 1");
    require(mu_y_init.size() == p && mu_y_final.size() == p, "steering spec: mean targets must be p-vectors");
    require_shape(Sigma_y_init, p, p, "steering spec: Sigma_y_init");
    require_shape(Sigma_y_final, p, p, "steering spec: Sigma_y_final");
    require_shape(Q_y, p, p, "steering spec: Q_y");
    require_shape(R, m, m, "steering spec: R");
    require(y_ref.size() == 0 || (y_ref.rows() == p && y_ref.cols() >= N), "steering spec: y_ref must be p x N");
    require(slack_weight >= 0, "steering spec: slack_weight must be nonnegative");
    require(min_eigenvalue(Sigma_y_final) >= -1e-10, "steering spec: Sigma_y_final must be PSD");
    require(min_eigenvalue(Sigma_y_init) >= -1e-10, "steering spec: Sigma_y_init must be PSD");
    require(min_eigenvalue(Q_y) >= -1e-10, "steering spec: Q_y must be PSD");
    require(min_eigenvalue(R) > 0, "steering spec: R must be positive definite");
}

Vector SteeringSpec::reference(Index k) const
{
    if (y_ref.size() == 0) return Vector::Zero(Q_y.rows());
    return y_ref.col(k);
}

Matrix lissajous_reference(int N, const Vector& amplitude, const Vector& frequency, const Vector& phase)
{
    require(N >= 1, "lissajous_reference: N must be positive");
    require(amplitude.size() == frequency.size() && phase.size() == amplitude.size(),
            "lissajous_reference: parameter lengths differ");
    Matrix y(amplitude.size(), N);
    for (int k = 0; k < N; ++k)
        for (Index i = 0; i < amplitude.size(); ++i)
            y(i, k) = amplitude(i) * std::sin(frequency(i) * std::numbers::pi * k / N + phase(i));
    return y;
}

MeanSteeringResult solve_mean_steering(const EstimatedModel& model, const SteeringSpec& spec,
                                       const std::optional<Vector>& fixed_mu0)
{
    const Index r = model.r(), m = model.m(), p = model.p();
    spec.validate(p, m);
    const int N = spec.N;
    const Matrix& A = model.A_hat;
    const Matrix& B = model.B_hat;
    const Matrix& C = model.C_hat;
    if (fixed_mu0) require(fixed_mu0->size() == r, "solve_mean_steering: fixed mu0 must be an r-vector");

    const Index nmu = r * (N + 1), nx = nmu + m * N;
    auto mu_at = [&](Index k) { return k * r; };
    auto v_at = [&](Index k) { return nmu + k * m; };

    const Matrix Q = C.transpose() * spec.Q_y * C;
    const Matrix Cpinv = pseudo_inverse(C);
    Matrix H = Matrix::Zero(nx, nx);
    Vector g = Vector::Zero(nx);
    for (int k = 0; k < N; ++k) {
        const Vector chi_ref = Cpinv * spec.reference(k);
        H.block(mu_at(k), mu_at(k), r, r) = 2.0 * Q;
        g.segment(mu_at(k), r) = -2.0 * Q * chi_ref;
        H.block(v_at(k), v_at(k), m, m) = 2.0 * spec.R;
    }

    const Index n_init = fixed_mu0 ? r : p;
    const Index neq = r * N + n_init + p;
    Matrix E = Matrix::Zero(neq, nx);
    Vector f = Vector::Zero(neq);
    for (int k = 0; k < N; ++k) {
        E.block(k * r, mu_at(k + 1), r, r) = Matrix::Identity(r, r);
        E.block(k * r, mu_at(k), r, r) = -A;
        E.block(k * r, v_at(k), r, m) = -B;
    }
    Index row = r * N;
    if (fixed_mu0) {
        E.block(row, mu_at(0), r, r) = Matrix::Identity(r, r);
        f.segment(row, r) = *fixed_mu0;
    } else {
        E.block(row, mu_at(0), p, r) = C;
        f.segment(row, p) = spec.mu_y_init;
    }
    row += n_init;
    E.block(row, mu_at(N), p, r) = C;
    f.segment(row, p) = spec.mu_y_final;

    MeanSteeringResult res;
    Matrix Ef(neq, nx + 1);
    Ef << E, f;
    res.constraint_rank = numerical_rank(E, 1e-10);
    res.augmented_rank = numerical_rank(Ef, 1e-10);
    if (res.augmented_rank > res.constraint_rank) {
        res.status = SolverStatus::infeasible;
        std::ostringstream os;
        os << "boundary means unreachable: rank [E f] = " << res.augmented_rank << " > rank E = " << res.constraint_rank;
        res.message = os.str();
        return res;
    }

    // null-space solve: the cost can be flat along unobservable directions, so take the min-norm optimum
    Eigen::JacobiSVD<Matrix> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
    svd.setThreshold(1e-10);
    const Index rankE = svd.rank();
    const Matrix Z = svd.matrixV().rightCols(nx - rankE);
    const Vector xp = svd.solve(f);
    const Matrix Hz = Z.transpose() * H * Z;
    const Vector gz = Z.transpose() * (H * xp + g);
    Vector y = Vector::Zero(Z.cols());
    if (Z.cols() > 0) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(Hz);
        const Vector& lam = eig.eigenvalues();
        const double cut = 1e-10 * std::max(1.0, lam.cwiseAbs().maxCoeff());
        const Matrix& V = eig.eigenvectors();
        const Vector c = V.transpose() * gz;
        Vector w = Vector::Zero(c.size());
        for (Index i = 0; i < c.size(); ++i)
            if (lam(i) > cut) w(i) = -c(i) / lam(i);
        y = V * w;
    }
    const Vector sol = xp + Z * y;
    const double stat = (Z.transpose() * (H * sol + g)).norm() / std::max(1.0, g.norm() + H.norm() * sol.norm());
    const double feas = (E * sol - f).norm() / std::max(1.0, f.norm());
    res.kkt_residual = std::max(stat, feas);

    res.mu.resize(r, N + 1);
    for (int k = 0; k <= N; ++k) res.mu.col(k) = sol.segment(mu_at(k), r);
    res.v.resize(m, N);
    for (int k = 0; k < N; ++k) res.v.col(k) = sol.segment(v_at(k), m);
    res.status = res.kkt_residual <= 1e-8 ? SolverStatus::optimal : SolverStatus::near_optimal;
    return res;
}

CovarianceProgram assemble_covariance_sdp(const DataMatrices& dm, const NoiseEstimate& ne, const Matrix& C_hat,
                                          const SteeringSpec& spec)
{
    const Index r = dm.r, m = dm.m(), p = dm.p(), T = dm.T();
    spec.validate(p, m);
    require_shape(C_hat, p, r, "assemble_covariance_sdp: C_hat");
    require_shape(ne.D_hat, r, p, "assemble_covariance_sdp: D_hat");
    require_shape(ne.Psi_hat, p, p, "assemble_covariance_sdp: Psi_hat");
    require_shape(ne.Sigma_zeta_hat, p, p, "assemble_covariance_sdp: Sigma_zeta_hat");
    require_shape(ne.Sigma_chizeta_init, r, p, "assemble_covariance_sdp: Sigma_chizeta_init");
    require_shape(ne.Z_hat, p, T, "assemble_covariance_sdp: Z_hat");
    if (!ne.D_hat.allFinite() || !ne.Psi_hat.allFinite() || !C_hat.allFinite())
        throw NumericalError("assemble_covariance_sdp: non-finite estimates");
    if (numerical_rank(dm.Phi, 1e-12) < m + r) throw NumericalError("assemble_covariance_sdp: Phi is singular");

    CovarianceProgram cp;
    cp.N = spec.N;
    cp.r = r;
    cp.m = m;
    cp.p = p;
    cp.normalization = static_cast<double>(T);
    cp.Phi_bar = dm.Phi / cp.normalization;
    cp.Theta_bar = dm.Theta / cp.normalization;
    cp.M_bar = (dm.X1 - ne.D_hat * ne.Z_hat) * dm.P.transpose() / cp.normalization;
    cp.C_hat = C_hat;
    cp.D_hat = ne.D_hat;
    cp.Psi_hat = ne.Psi_hat;
    cp.Sigma_zeta = ne.Sigma_zeta_hat;
    cp.terminal_mode = spec.terminal_mode;

    ConicProgram& pr = cp.program;
    const int N = spec.N;
    const Matrix Phib = cp.Phi_bar.bottomRows(r);
    const Matrix& Mb = cp.M_bar;
    const Matrix& D = cp.D_hat;
    const Matrix& Sz = cp.Sigma_zeta;
    const Matrix& Psi = cp.Psi_hat;
    const Matrix DSzD = symmetrize(Matrix(D * Sz * D.transpose()));
    const Matrix DSzPsi = D * Sz * Psi.transpose();

    std::vector<AffineExpr> Sig, S, U, W, Y;
    for (int k = 0; k <= N; ++k) {
        Sig.push_back(pr.add_variable(CovarianceProgram::name("Sigma", k), r, r, true));
        S.push_back(pr.add_variable(CovarianceProgram::name("Sigma_chizeta", k), r, p));
    }
    for (int k = 0; k < N; ++k) {
        U.push_back(pr.add_variable(CovarianceProgram::name("U", k), m + r, r));
        W.push_back(pr.add_variable(CovarianceProgram::name("W", k), m + r, p));
        Y.push_back(pr.add_variable(CovarianceProgram::name("Y", k), m + r, m + r, true));
    }
    const Index nv = pr.num_variables();
    const AffineExpr Szc = AffineExpr::constant(Sz, nv);

    const Matrix Q = C_hat.transpose() * spec.Q_y * C_hat;
    AffineExpr obj(1, 1, nv);
    for (int k = 0; k < N; ++k) {
        const AffineExpr MW = Mb * W[k];
        const AffineExpr cross = MW * D.transpose();
        pr.add_equality(Sig[k + 1], Mb * Y[k] * Mb.transpose() + cross + cross.transpose() + DSzD,
                        CovarianceProgram::name("covariance_recursion", k), true);
        pr.add_equality(S[k + 1], MW * Psi.transpose() + DSzPsi, CovarianceProgram::name("cross_recursion", k));
        pr.add_equality(Sig[k], Phib * U[k], CovarianceProgram::name("covariance_consistency", k));
        pr.add_equality(S[k], Phib * W[k], CovarianceProgram::name("cross_consistency", k));
        pr.add_psd(AffineExpr::blocks({{Sig[k], U[k].transpose(), S[k]},
                                       {U[k], Y[k], W[k]},
                                       {S[k].transpose(), W[k].transpose(), Szc}}),
                   CovarianceProgram::name("joint_moment", k));
        obj += (Q * Sig[k]).trace();
        obj += (spec.R * (cp.Theta_bar * Y[k] * cp.Theta_bar.transpose())).trace();
        if (spec.slack_weight > 0) obj += spec.slack_weight * Y[k].trace();
    }
    auto ycov = [&](int k) {
        const AffineExpr CS = C_hat * S[k];
        return C_hat * Sig[k] * C_hat.transpose() + CS + CS.transpose() + Sz;
    };
    pr.add_equality(ycov(0), spec.Sigma_y_init, "initial_output_covariance", true);
    pr.add_equality(S[0], ne.Sigma_chizeta_init, "initial_cross_covariance");
    if (spec.terminal_mode == TerminalMode::equality)
        pr.add_equality(ycov(N), spec.Sigma_y_final, "terminal_output_covariance", true);
    else
        pr.add_psd(AffineExpr::constant(spec.Sigma_y_final, nv) - ycov(N), "terminal_output_covariance");
    pr.set_objective(obj);
    return cp;
}

GainRecovery recover_gains(const MatrixSeq& U, const MatrixSeq& Sigma, const DataMatrices& dm, double scale)
{
    require(U.size() <= Sigma.size(), "recover_gains: need Sigma_k for every U_k");
    require(scale > 0, "recover_gains: scale must be positive");
    const Index r = dm.r, m = dm.m();
    const Matrix Phi = dm.Phi / scale;
    const Matrix Theta = Phi.topRows(m);
    const Eigen::PartialPivLU<Matrix> phi_lu(Phi);
    const Matrix I = Matrix::Identity(r, r);
    GainRecovery out;
    for (std::size_t k = 0; k < U.size(); ++k) {
        require_shape(U[k], m + r, r, "recover_gains: U_k");
        Matrix Sk = symmetrize(Sigma[k]);
        const double lmax = std::max(max_eigenvalue(Sk), 0.0);
        const double lmin = min_eigenvalue(Sk);
        if (lmin < -1e-6 * std::max(1.0, lmax))
            throw NumericalError("recover_gains: Sigma_" + std::to_string(k) + " is indefinite");
        // Ridge on ill-conditioned Sigma_k: directions the schedule leaves without variance get no feedback.
        if (lmin < kGainRidge * lmax || lmax == 0.0) {
            Sk += std::max(kGainRidge * lmax, 1e-12) * I;
            out.jitter_applied = true;
        }
        const Matrix K = Sk.llt().solve((Theta * U[k]).transpose()).transpose();
        Matrix KI(m + r, r);
        KI << K, I;
        const Matrix Gs = phi_lu.solve(KI); // Phi_bar^{-1} [K; I], so Phi_bar_bottom Gs = I exactly
        const double viol = (Phi.bottomRows(r) * Gs - I).cwiseAbs().maxCoeff();
        if (!Gs.allFinite() || viol > 1e-6 * std::max(1.0, Gs.cwiseAbs().maxCoeff())) {
            std::ostringstream os;
            os << "recover_gains: bottom block of Phi G_" << k << " differs from I by " << viol;
            throw NumericalError(os.str());
        }
        out.K.push_back(K);
        out.G.push_back(Gs / scale);
    }
    return out;
}

SteeringSolution solve_covariance_sdp(const CovarianceProgram& cp, const DataMatrices& dm,
                                      const SolverSettings& settings)
{
    SteeringSolution out;
    const auto t0 = std::chrono::steady_clock::now();
    const ConicSolution cs = solve_conic(cp.program, settings);
    out.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.solver_status = cs.status;
    out.objective_value = cs.objective;
    out.iterations = cs.iterations;
    out.equality_residual = cs.equality_residual;
    out.message = cs.message;
    if (!out.accepted()) return out;

    const auto& pr = cp.program;
    const int N = cp.N;
    for (int k = 0; k <= N; ++k) {
        out.schedule.Sigma.push_back(symmetrize(pr.value(CovarianceProgram::name("Sigma", k), cs.x)));
        out.schedule.Sigma_chizeta.push_back(pr.value(CovarianceProgram::name("Sigma_chizeta", k), cs.x));
    }
    for (int k = 0; k < N; ++k) {
        out.U.push_back(pr.value(CovarianceProgram::name("U", k), cs.x));
        out.W.push_back(pr.value(CovarianceProgram::name("W", k), cs.x));
        out.Y.push_back(symmetrize(pr.value(CovarianceProgram::name("Y", k), cs.x)));
    }
    attach_output_covariance(out.schedule, cp.C_hat, cp.Sigma_zeta);

    try {
        GainRecovery gr = recover_gains(out.U, out.schedule.Sigma, dm, cp.normalization);
        out.law.K = std::move(gr.K);
        out.G = std::move(gr.G);
        out.jitter_applied = gr.jitter_applied;
    } catch (const NumericalError& e) {
        out.solver_status = SolverStatus::numerical_trouble;
        out.message = e.what();
        return out;
    }
    for (int k = 0; k < N; ++k) {
        const Matrix Gs = out.G[k] * cp.normalization;
        const Matrix gap = out.Y[k] - Gs * out.schedule.Sigma[k] * Gs.transpose();
        out.slack_gap.push_back(max_eigenvalue(gap));
        out.slack_min_eig.push_back(min_eigenvalue(gap));
    }
    out.law.v = Matrix::Zero(cp.m, N);
    return out;
}

PropagationCheck check_propagation_consistency(const SteeringSolution& sol, const DataMatrices& dm,
                                               const NoiseEstimate& ne)
{
    require(sol.accepted() && !sol.schedule.Sigma.empty(), "check_propagation_consistency: no accepted solution");
    PropagationCheck chk;
    chk.repropagated = propagate_covariance_datadriven(dm, ne, sol.G, sol.schedule.Sigma.front(),
                                                       sol.schedule.Sigma_chizeta.front());
    chk.min_eig_difference = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < sol.schedule.Sigma.size(); ++k) {
        const Matrix diff = chk.repropagated.Sigma[k] - sol.schedule.Sigma[k];
        chk.min_eig_difference = std::min(chk.min_eig_difference, min_eigenvalue(diff));
        chk.max_abs_difference = std::max(chk.max_abs_difference, diff.cwiseAbs().maxCoeff());
    }
    for (double g : sol.slack_gap) chk.max_slack_gap = std::max(chk.max_slack_gap, g);
    return chk;
}

} // namespace ddcs
