#include "ddcs/estimation.hpp"
#include "ddcs/representation.hpp"

#include "test_support.hpp"

#include <cmath>

using namespace ddcs;
using ddcs::testing::matrices_near;
using ddcs::testing::noise_free;

namespace {

struct ScalarSamples {
    Matrix x, y, z;
};

// x observed with noise, y = 2 x_true + noise; equal noise variances make orthogonal regression consistent.
ScalarSamples errors_in_variables(Index n, std::uint64_t seed)
{
    const CounterRng rng(seed);
    ScalarSamples s{Matrix(n, 1), Matrix(n, 1), Matrix()};
    for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::uint64_t>(i);
        const double xt = rng.normal(k, 1, 0);
        s.x(i, 0) = xt + 0.5 * rng.normal(k, 2, 0);
        s.y(i, 0) = 2.0 * xt + 0.5 * rng.normal(k, 3, 0);
    }
    return s;
}

DataMatrices identity_data(const GroundTruthSystem& sys, Index T, std::uint64_t seed, Trajectory* out = nullptr)
{
    const Trajectory t =
        simulate_trajectory(sys, Vector::Zero(sys.n()), generate_excitation(T + 6, sys.m(), 1.0, seed), seed);
    if (out) *out = t;
    return assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 5, T);
}

} // namespace

TEST(EstimateLs, IdentityAndScaledColumn)
{
    const Matrix J = ddcs::testing::random_matrix(4, 4, 1);
    EXPECT_TRUE(matrices_near(estimate_ls(J, J), Matrix::Identity(4, 4), 1e-10));
    const Matrix Jt = ddcs::testing::random_matrix(30, 3, 2);
    const Matrix beta = estimate_ls(Jt, 2.0 * Jt.col(0));
    Matrix expect(1, 3);
    expect << 2, 0, 0;
    EXPECT_TRUE(matrices_near(beta, expect, 1e-12));
}

TEST(EstimateLs, RankDeficientRegressorsRejected)
{
    Matrix J = ddcs::testing::random_matrix(20, 3, 3);
    J.col(2) = J.col(0);
    EXPECT_THROW(estimate_ls(J, J.col(1)), NumericalError);
}

TEST(EstimateTls, MatchesLsOnExactData)
{
    const Matrix J = ddcs::testing::random_matrix(50, 3, 4);
    const Matrix beta = ddcs::testing::random_matrix(2, 3, 5);
    const Matrix Y = J * beta.transpose();
    EXPECT_TRUE(matrices_near(estimate_tls(J, Y), estimate_ls(J, Y), 1e-10));
    EXPECT_TRUE(matrices_near(estimate_tls(J, Y), beta, 1e-10));
}

TEST(EstimateTls, ConsistentUnderErrorsInVariables)
{
    const ScalarSamples s = errors_in_variables(100000, 6);
    const double tls = estimate_tls(s.x, s.y)(0, 0);
    const double ls = estimate_ls(s.x, s.y)(0, 0);
    EXPECT_NEAR(tls, 2.0, 0.02);
    // attenuation factor var(x) / (var(x) + var(noise)) = 1 / 1.25
    EXPECT_NEAR(ls, 2.0 * 0.8, 0.02);
}

TEST(EstimateTls, ScalarMatchesOrthogonalDistanceSearch)
{
    const ScalarSamples s = errors_in_variables(500, 7);
    auto cost = [&](double b) { return (s.y - b * s.x).squaredNorm() / (1 + b * b); };
    double best = 0, best_cost = 1e300;
    for (double b = 0.0; b <= 4.0; b += 1e-4)
        if (cost(b) < best_cost) {
            best_cost = cost(b);
            best = b;
        }
    EXPECT_NEAR(estimate_tls(s.x, s.y)(0, 0), best, 2e-4);
}

TEST(BuildInstruments, ZeroLagIsInputs)
{
    Trajectory t;
    t.inputs = ddcs::testing::random_matrix(2, 40, 8);
    t.outputs = Matrix::Zero(1, 40);
    const InstrumentMatrix G = build_instruments(t, 0, 3, 30);
    EXPECT_TRUE(matrices_near(G.G, t.inputs.middleCols(3, 30).transpose(), 0.0));
}

TEST(BuildInstruments, FullRankAndShiftConsistent)
{
    Trajectory t;
    t.inputs = generate_excitation(200, 2, 1.0, 9);
    t.outputs = Matrix::Zero(1, 200);
    const int lag = 3;
    const InstrumentMatrix G = build_instruments(t, lag, 5, 150);
    EXPECT_EQ(numerical_rank(G.G.transpose() * G.G), (lag + 1) * 2);
    const Matrix H = hankel(t.inputs, 5 - lag, lag + 1, 150); // oldest lag first
    for (int j = 0; j <= lag; ++j)
        EXPECT_TRUE(matrices_near(G.G.middleCols(2 * j, 2).transpose(), H.middleRows(2 * (lag - j), 2), 0.0));
    EXPECT_THROW(build_instruments(t, 6, 5, 150), DimensionError);
}

TEST(BuildInstruments, DefaultLagReachesRegressorCount)
{
    EXPECT_EQ(default_lag_count(7, 2), 4); // 5 * 2 >= 9
    EXPECT_EQ(default_lag_count(8, 2), 4);
    EXPECT_EQ(default_lag_count(3, 1), 3);
}

TEST(Estimate2sls, ReducesToLsWithRegressorsAsInstruments)
{
    const Matrix J = ddcs::testing::random_matrix(60, 3, 10);
    const Matrix Y = J * ddcs::testing::random_matrix(2, 3, 11).transpose() + 0.1 * ddcs::testing::random_matrix(60, 2, 12);
    InstrumentMatrix ins;
    ins.G = J;
    EXPECT_TRUE(matrices_near(estimate_2sls(J, Y, ins), estimate_ls(J, Y), 1e-10));
}

TEST(Estimate2sls, ConsistentForEndogenousRegressor)
{
    const Index n = 100000;
    const CounterRng rng(13);
    Matrix x(n, 1), y(n, 1);
    InstrumentMatrix ins;
    ins.G.resize(n, 1);
    for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::uint64_t>(i);
        const double z = rng.normal(k, 1, 0), e = rng.normal(k, 2, 0);
        ins.G(i, 0) = z;
        x(i, 0) = z + 0.5 * e;
        y(i, 0) = 3.0 * x(i, 0) + e;
    }
    EXPECT_NEAR(estimate_2sls(x, y, ins)(0, 0), 3.0, 0.02);
    // omitted-variable bias cov(x, e) / var(x) = 0.5 / 1.25
    EXPECT_NEAR(estimate_ls(x, y)(0, 0), 3.4, 0.02);
}

TEST(Estimate2sls, UncorrelatedInstrumentsRejected)
{
    const Matrix J = ddcs::testing::random_matrix(50, 2, 14);
    InstrumentMatrix ins;
    ins.G = Matrix::Zero(50, 2);
    ins.G.col(0) = J.col(0);
    EXPECT_THROW(estimate_2sls(J, J.col(1), ins), NumericalError);
    ins.G = J.leftCols(1);
    EXPECT_THROW(estimate_2sls(J, J.col(1), ins), NumericalError);
}

TEST(EstimateDynamics, ExactDataRecoveredByEveryMethod)
{
    const GroundTruthSystem sys = noise_free(preset_system("paper-4state"));
    const auto nm = build_ground_truth_nonminimal(sys, 2);
    Trajectory t;
    const DataMatrices dm = identity_data(sys, 300, 15, &t);
    const InstrumentMatrix G = build_instruments(t, default_lag_count(8, 2), dm);
    const Matrix truth = hstack({nm.B_z, nm.A_z});
    for (auto method : {EstimationMethod::LS, EstimationMethod::TLS, EstimationMethod::IV2SLS}) {
        const EstimatedModel est = estimate_model(dm, method, &G);
        EXPECT_LE((est.BA() - truth).norm(), 1e-8) << to_string(method);
        EXPECT_LE((est.C_hat * dm.X0 - dm.Y0).norm(), 1e-8) << to_string(method);
    }
}

TEST(EstimateDynamics, IvRequiresInstruments)
{
    const DataMatrices dm = identity_data(preset_system("paper-4state"), 100, 16);
    EXPECT_THROW(estimate_dynamics(dm, EstimationMethod::IV2SLS, nullptr), DimensionError);
}

TEST(EstimateNoise, ExactModelOnExactDataGivesZeroNoise)
{
    const GroundTruthSystem sys = noise_free(preset_system("paper-4state"));
    const auto nm = build_ground_truth_nonminimal(sys, 2);
    const DataMatrices dm = identity_data(sys, 300, 17);
    EstimatedModel exact{nm.A_z, nm.B_z, nm.S_script, EstimationMethod::LS};
    const NoiseEstimate ne = estimate_noise(dm, exact);
    EXPECT_LT(ne.Z_hat.cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(ne.Sigma_zeta_hat.cwiseAbs().maxCoeff(), 1e-18);
    EXPECT_LT(ne.Sigma_chizeta_init.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(EstimateNoise, InducedNoiseCovarianceMatchesAnalytic)
{
    const GroundTruthSystem sys = preset_system("paper-4state");
    const auto nm = build_ground_truth_nonminimal(sys, 2);
    const DataMatrices dm = identity_data(sys, 100000, 18);
    EstimatedModel exact{nm.A_z, nm.B_z, nm.S_script, EstimationMethod::LS};
    const NoiseEstimate ne = estimate_noise(dm, exact);
    Matrix Sw = Matrix::Zero(8, 8), Sq = Matrix::Zero(4, 4);
    for (int j = 0; j < 2; ++j) {
        Sw.block(4 * j, 4 * j, 4, 4) = sys.Sigma_w;
        Sq.block(2 * j, 2 * j, 2, 2) = sys.Sigma_q;
    }
    const Matrix analytic =
        nm.F_w * Sw * nm.F_w.transpose() + nm.F_q * Sq * nm.F_q.transpose() + sys.Sigma_q;
    EXPECT_LT(relative_frobenius(ne.Sigma_zeta_hat, analytic), 0.05);
}

TEST(EstimateNoise, PsiSpectralRadiusBelowOne)
{
    const ExperimentConfig cfg = ddcs::testing::three_state_config(1500);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const CollectedData data = collect_data(cfg, 1500, seed);
        const InstrumentMatrix G = build_instruments(data.trajectory, default_lag_count(7, 2), data.dm);
        const EstimatedModel est = estimate_model(data.dm, EstimationMethod::IV2SLS, &G);
        const NoiseEstimate ne = estimate_noise(data.dm, est);
        EXPECT_LT(spectral_radius(ne.Psi_hat), 1.0) << "seed " << seed;
        EXPECT_GE(min_eigenvalue(ne.Sigma_zeta_hat), 0.0);
        if (ne.psi_stabilized) EXPECT_NEAR(spectral_radius(ne.Psi_hat), kPsiRadiusCap, 1e-9);
    }
}

TEST(EstimateNoise, InnovationCovarianceIsPsd)
{
    Matrix Psi(2, 2);
    Psi << 0.5, 0.1, 0.0, 0.3;
    const Matrix S = ddcs::testing::random_spd(2, 19);
    EXPECT_TRUE(matrices_near(ar1_innovation_covariance(Psi, S), S - Psi * S * Psi.transpose(), 1e-12));
    EXPECT_GE(min_eigenvalue(ar1_innovation_covariance(2.0 * Matrix::Identity(2, 2), S)), -1e-12);
}

TEST(EstimationMethod, RoundTripNames)
{
    for (auto m : {EstimationMethod::LS, EstimationMethod::TLS, EstimationMethod::IV2SLS})
        EXPECT_EQ(parse_estimation_method(to_string(m)), m);
    EXPECT_THROW(parse_estimation_method("ridge"), DimensionError);
}
