#include "ddcs/steering.hpp"

#include "test_support.hpp"

using namespace ddcs;
using ddcs::testing::matrices_near;
using ddcs::testing::random_matrix;
using ddcs::testing::random_spd;

namespace {

struct Fitted {
    CollectedData data;
    EstimatedModel model;
    NoiseEstimate noise;
};

const Fitted& three_state_fit()
{
    static const Fitted f = [] {
        const ExperimentConfig cfg = ddcs::testing::three_state_config(1500);
        Fitted out;
        out.data = collect_data(cfg, 1500, replicate_seed(cfg.seed, 1500, 0));
        const InstrumentMatrix G =
            build_instruments(out.data.trajectory, default_lag_count(out.data.dm.r, 2), out.data.dm);
        out.model = estimate_model(out.data.dm, EstimationMethod::IV2SLS, &G);
        out.noise = estimate_noise(out.data.dm, out.model);
        return out;
    }();
    return f;
}

SteeringSpec scalar_spec(int N)
{
    SteeringSpec s;
    s.N = N;
    s.mu_y_init = Vector::Zero(1);
    s.mu_y_final = Vector::Ones(1);
    s.Sigma_y_init = s.Sigma_y_final = Matrix::Identity(1, 1);
    s.Q_y = Matrix::Zero(1, 1);
    s.R = Matrix::Identity(1, 1);
    return s;
}

EstimatedModel integrator()
{
    return {Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix::Ones(1, 1), EstimationMethod::LS};
}

} // namespace

TEST(MeanSteering, ZeroTargetsGiveZeroPlan)
{
    SteeringSpec s = scalar_spec(4);
    s.mu_y_final = Vector::Zero(1);
    const MeanSteeringResult r = solve_mean_steering(integrator(), s);
    ASSERT_EQ(r.status, SolverStatus::optimal);
    EXPECT_LT(r.mu.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(r.v.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MeanSteering, ScalarChainSplitsEffortEvenly)
{
    const MeanSteeringResult r = solve_mean_steering(integrator(), scalar_spec(2));
    ASSERT_EQ(r.status, SolverStatus::optimal);
    EXPECT_NEAR(r.v(0, 0), 0.5, 1e-10);
    EXPECT_NEAR(r.v(0, 1), 0.5, 1e-10);
    EXPECT_LE(r.kkt_residual, 1e-8);
}

TEST(MeanSteering, UnreachableTargetIsInfeasible)
{
    EstimatedModel m = integrator();
    m.B_hat.setZero();
    const MeanSteeringResult r = solve_mean_steering(m, scalar_spec(3));
    EXPECT_EQ(r.status, SolverStatus::infeasible);
    EXPECT_GT(r.augmented_rank, r.constraint_rank);
}

TEST(MeanSteering, FittedThreeStateHitsTerminalMean)
{
    const Fitted& f = three_state_fit();
    const ExperimentConfig cfg = ddcs::testing::three_state_config(1500);
    const MeanSteeringResult free0 = solve_mean_steering(f.model, cfg.steering);
    ASSERT_EQ(free0.status, SolverStatus::optimal) << free0.message;
    EXPECT_LT((f.model.C_hat * free0.mu.col(cfg.steering.N) - cfg.steering.mu_y_final).norm(), 1e-6);
    EXPECT_LT((f.model.C_hat * free0.mu.col(0) - cfg.steering.mu_y_init).norm(), 1e-6);
    // mean recursion holds along the plan
    EXPECT_TRUE(matrices_near(propagate_mean(f.model.A_hat, f.model.B_hat, free0.mu.col(0), free0.v), free0.mu, 1e-8));

    const Vector mu0 = Vector::Zero(f.model.r());
    const MeanSteeringResult fixed = solve_mean_steering(f.model, cfg.steering, mu0);
    ASSERT_EQ(fixed.status, SolverStatus::optimal);
    EXPECT_LT(fixed.mu.col(0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lissajous, SampledSine)
{
    const Matrix y = lissajous_reference(4, Vector::Constant(1, 2.0), Vector::Ones(1), Vector::Zero(1));
    EXPECT_NEAR(y(0, 0), 0.0, 1e-15);
    EXPECT_NEAR(y(0, 2), 2.0, 1e-15);
}

TEST(CovarianceProgram, AssembledShape)
{
    const Fitted& f = three_state_fit();
    const ExperimentConfig cfg = ddcs::testing::three_state_config(1500);
    const CovarianceProgram cp = assemble_covariance_sdp(f.data.dm, f.noise, f.model.C_hat, cfg.steering);
    const auto& psd = cp.program.psd_constraints();
    ASSERT_EQ(psd.size(), 16u);
    for (int k = 0; k < 15; ++k) EXPECT_EQ(psd[static_cast<std::size_t>(k)].expr.rows(), 18);
    EXPECT_EQ(psd.back().expr.rows(), 2);
    EXPECT_EQ(cp.r, 7);
    EXPECT_TRUE(cp.program.has_block("U_14"));
    EXPECT_FALSE(cp.program.has_block("U_15"));
}

TEST(CovarianceProgram, StationaryTargetIsFeasible)
{
    const Fitted& f = three_state_fit();
    SteeringSpec spec = ddcs::testing::three_state_config(1500).steering;
    spec.N = 4;
    spec.y_ref = Matrix();
    spec.Q_y.setZero();
    spec.Sigma_y_final = spec.Sigma_y_init;
    const CovarianceProgram cp = assemble_covariance_sdp(f.data.dm, f.noise, f.model.C_hat, spec);
    const SteeringSolution sol = solve_covariance_sdp(cp, f.data.dm);
    ASSERT_TRUE(sol.accepted()) << sol.message;
    EXPECT_LE(sol.equality_residual, 1e-6);
    for (const auto& S : sol.schedule.Sigma) EXPECT_GE(min_eigenvalue(S), -1e-7);
    for (double g : sol.slack_min_eig) EXPECT_GE(g, -1e-6);
    EXPECT_LE(max_eigenvalue(Matrix(sol.schedule.Sigma_y.back() - spec.Sigma_y_final)), 1e-6);
    ASSERT_EQ(sol.law.K.size(), 4u);
}

TEST(CovarianceProgram, TightTerminalCovarianceIsInfeasible)
{
    const Fitted& f = three_state_fit();
    SteeringSpec spec = ddcs::testing::three_state_config(1500).steering;
    spec.N = 1;
    spec.Sigma_y_init = 100.0 * Matrix::Identity(2, 2);
    spec.Sigma_y_final = 1e-4 * Matrix::Identity(2, 2); // below the noise floor
    const CovarianceProgram cp = assemble_covariance_sdp(f.data.dm, f.noise, f.model.C_hat, spec);
    const SteeringSolution sol = solve_covariance_sdp(cp, f.data.dm);
    EXPECT_FALSE(sol.accepted());
    EXPECT_EQ(sol.solver_status, SolverStatus::infeasible) << sol.message;
}

TEST(RecoverGains, RoundTripFromDataParameter)
{
    const Fitted& f = three_state_fit();
    const DataMatrices& dm = f.data.dm;
    MatrixSeq U, S;
    MatrixSeq Kt;
    for (int k = 0; k < 3; ++k) {
        Kt.push_back(random_matrix(2, 7, 50 + static_cast<std::uint64_t>(k), 0.3));
        S.push_back(random_spd(7, 60 + static_cast<std::uint64_t>(k)));
        U.push_back(gain_to_data_parameter(dm.Phi, Kt.back()) * S.back());
    }
    const GainRecovery g = recover_gains(U, S, dm);
    EXPECT_FALSE(g.jitter_applied);
    for (int k = 0; k < 3; ++k) {
        EXPECT_TRUE(matrices_near(g.K[static_cast<std::size_t>(k)], Kt[static_cast<std::size_t>(k)], 1e-8));
        EXPECT_TRUE(matrices_near(dm.phi_bottom() * g.G[static_cast<std::size_t>(k)], Matrix::Identity(7, 7), 1e-6));
    }
}

TEST(RecoverGains, ZeroGainBlock)
{
    const DataMatrices& dm = three_state_fit().data.dm;
    const Matrix S = random_spd(7, 70);
    const MatrixSeq U{gain_to_data_parameter(dm.Phi, Matrix::Zero(2, 7)) * S};
    const GainRecovery g = recover_gains(U, {S}, dm);
    EXPECT_LT(g.K[0].cwiseAbs().maxCoeff(), 1e-8);
}

TEST(RecoverGains, ScaledNormalisationAgrees)
{
    const DataMatrices& dm = three_state_fit().data.dm;
    const double T = static_cast<double>(dm.T());
    const Matrix S = random_spd(7, 71), K = random_matrix(2, 7, 72, 0.3);
    const Matrix Ub = gain_to_data_parameter(dm.Phi / T, K) * S;
    const GainRecovery g = recover_gains({Ub}, {S}, dm, T);
    EXPECT_TRUE(matrices_near(g.K[0], K, 1e-8));
    EXPECT_TRUE(matrices_near(dm.phi_bottom() * g.G[0], Matrix::Identity(7, 7), 1e-6));
}

TEST(RecoverGains, SingularCovarianceUsesRidge)
{
    const DataMatrices& dm = three_state_fit().data.dm;
    Matrix S = random_spd(7, 73);
    const Matrix F = random_matrix(7, 5, 74);
    S = F * F.transpose(); // rank 5
    const Matrix U = gain_to_data_parameter(dm.Phi, Matrix::Zero(2, 7)) * S;
    const GainRecovery g = recover_gains({U}, {S}, dm);
    EXPECT_TRUE(g.jitter_applied);
    EXPECT_TRUE(g.K[0].allFinite());
}

TEST(RecoverGains, IndefiniteCovarianceRejected)
{
    const DataMatrices& dm = three_state_fit().data.dm;
    Matrix S = Matrix::Identity(7, 7);
    S(3, 3) = -0.5;
    EXPECT_THROW(recover_gains({Matrix::Zero(9, 7)}, {S}, dm), NumericalError);
}

TEST(TerminalMode, Names)
{
    EXPECT_EQ(parse_terminal_mode(to_string(TerminalMode::equality)), TerminalMode::equality);
    EXPECT_EQ(parse_terminal_mode("upper_bound"), TerminalMode::upper_bound);
    EXPECT_THROW(parse_terminal_mode("loose"), DimensionError);
}
