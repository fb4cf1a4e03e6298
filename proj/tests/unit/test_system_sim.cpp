#include "ddcs/representation.hpp"
#include "ddcs/system_sim.hpp"

#include "test_support.hpp"

#include <cmath>

using namespace ddcs;
using ddcs::testing::matrices_near;
using ddcs::testing::noise_free;

namespace {

GroundTruthSystem scalar_system(double a)
{
    GroundTruthSystem s;
    s.A = Matrix::Constant(1, 1, a);
    s.B = Matrix::Constant(1, 1, 1.0);
    s.C = Matrix::Constant(1, 1, 1.0);
    s.Sigma_w = Matrix::Zero(1, 1);
    s.Sigma_q = Matrix::Zero(1, 1);
    return s;
}

} // namespace

TEST(SimulateTrajectory, ZeroDynamicsGiveZeroOutput)
{
    GroundTruthSystem s;
    s.A = s.B = s.C = Matrix::Identity(2, 2);
    s.Sigma_w = s.Sigma_q = Matrix::Zero(2, 2);
    const Trajectory t = simulate_trajectory(s, Vector::Zero(2), Matrix::Zero(2, 20), 1);
    EXPECT_EQ(t.outputs.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SimulateTrajectory, GeometricDecay)
{
    const Trajectory t = simulate_trajectory(scalar_system(0.5), Vector::Ones(1), Matrix::Zero(1, 6), 1);
    for (Index k = 0; k < 6; ++k) EXPECT_DOUBLE_EQ(t.outputs(0, k), std::pow(0.5, static_cast<double>(k)));
}

TEST(SimulateTrajectory, NoiseOnlyVarianceMatchesLyapunovRecursion)
{
    const GroundTruthSystem sys = preset_system("paper-4state");
    const Index len = 100, R = 2000;
    Matrix Pi = Matrix::Zero(4, 4);
    for (Index k = 0; k < len - 1; ++k) Pi = sys.A * Pi * sys.A.transpose() + sys.Sigma_w;
    const Matrix pred = sys.C * Pi * sys.C.transpose() + sys.Sigma_q;

    Matrix last(2, R);
    for (Index r = 0; r < R; ++r)
        last.col(r) = simulate_trajectory(sys, Vector::Zero(4), Matrix::Zero(2, len), derive_seed(77, r))
                          .outputs.col(len - 1);
    const Vector mean = last.rowwise().mean();
    const Matrix c = last.colwise() - mean;
    const Matrix emp = c * c.transpose() / static_cast<double>(R - 1);
    for (Index i = 0; i < 2; ++i) {
        const double se = pred(i, i) * std::sqrt(2.0 / static_cast<double>(R));
        EXPECT_NEAR(emp(i, i), pred(i, i), 3 * se);
    }
}

TEST(SimulateTrajectory, LogsNoiseConsistentWithOutputs)
{
    const GroundTruthSystem sys = preset_system("paper-3state");
    const Matrix u = generate_excitation(30, 2, 1.0, 3);
    const Trajectory t = simulate_trajectory(sys, Vector::Zero(3), u, 4);
    ASSERT_TRUE(t.states && t.process_noise && t.measurement_noise);
    EXPECT_TRUE(matrices_near(t.outputs, sys.C * *t.states + *t.measurement_noise, 1e-12));
    for (Index k = 0; k + 1 < 30; ++k)
        EXPECT_TRUE(matrices_near(t.states->col(k + 1),
                                  sys.A * t.states->col(k) + sys.B * u.col(k) + t.process_noise->col(k), 1e-12));
}

TEST(SimulateTrajectory, RejectsMismatchedInputs)
{
    const GroundTruthSystem sys = preset_system("paper-3state");
    EXPECT_THROW(simulate_trajectory(sys, Vector::Zero(3), Matrix::Zero(3, 5), 1), DimensionError);
    EXPECT_THROW(simulate_trajectory(sys, Vector::Zero(2), Matrix::Zero(2, 5), 1), DimensionError);
}

TEST(GenerateExcitation, Deterministic)
{
    EXPECT_TRUE(matrices_near(generate_excitation(5, 2, 1.0, 9), generate_excitation(5, 2, 1.0, 9), 0.0));
    EXPECT_FALSE(matrices_near(generate_excitation(5, 2, 1.0, 9), generate_excitation(5, 2, 1.0, 10), 0.0));
}

TEST(GenerateExcitation, SampleMeanNearZero)
{
    const Matrix u = generate_excitation(10000, 2, 1.0, 5);
    EXPECT_LT(u.rowwise().mean().cwiseAbs().maxCoeff(), 0.05);
    EXPECT_THROW(generate_excitation(10, 2, -1.0, 1), DimensionError);
}

TEST(GenerateExcitation, RegressorsFullRowRank)
{
    const GroundTruthSystem sys = preset_system("paper-4state");
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Trajectory t = simulate_trajectory(sys, Vector::Zero(4), generate_excitation(210, 2, 1.0, seed), seed);
        const DataMatrices dm = assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 200);
        EXPECT_EQ(numerical_rank(dm.P), 10) << "seed " << seed;
    }
}

TEST(InitialHistory, NoiseOnlyTargetGivesDeterministicStart)
{
    GroundTruthSystem sys = preset_system("paper-3state");
    sys.Sigma_w.setZero();
    const InitialHistorySampler s(sys, Vector::Zero(2), sys.Sigma_q, 2);
    EXPECT_EQ(s.lambda(), 0.0);
    EXPECT_TRUE(matrices_near(s.sample(1).x0, s.sample(2).x0, 0.0));
}

TEST(InitialHistory, MatchesTargetMoments)
{
    const GroundTruthSystem sys = preset_system("paper-3state");
    const InitialHistorySampler s(sys, Vector::Zero(2), 2.5 * Matrix::Identity(2, 2), 2);
    const Index M = 10000;
    const Matrix fq = psd_factor(sys.Sigma_q);
    Matrix y(2, M);
    for (Index i = 0; i < M; ++i) {
        const auto seed = derive_seed(3, i);
        y.col(i) = sys.C * s.sample(seed).x0 + CounterRng(seed).gaussian(0, channel::measurement, fq);
    }
    const Vector mean = y.rowwise().mean();
    const Matrix c = y.colwise() - mean;
    EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.1);
    EXPECT_NEAR((c * c.transpose()).trace() / (M - 1), 5.0, 0.25);
}

TEST(InitialHistory, NonzeroMeanTargetIsReproduced)
{
    const GroundTruthSystem sys = preset_system("paper-3state");
    Vector target(2);
    target << 1.0, -2.0;
    const InitialHistorySampler s(sys, target, 2.5 * Matrix::Identity(2, 2), 2);
    const Index M = 20000;
    Vector acc = Vector::Zero(2);
    for (Index i = 0; i < M; ++i) acc += sys.C * s.sample(derive_seed(8, i)).x0;
    EXPECT_LT((acc / M - target).cwiseAbs().maxCoeff(), 0.05);
}

TEST(InitialHistory, DeterministicWindowAndZeroInputs)
{
    const GroundTruthSystem sys = preset_system("paper-3state");
    const InitialHistory a = sample_initial_history(sys, Vector::Zero(2), 2.5 * Matrix::Identity(2, 2), 2, 11);
    const InitialHistory b = sample_initial_history(sys, Vector::Zero(2), 2.5 * Matrix::Identity(2, 2), 2, 11);
    EXPECT_TRUE(matrices_near(a.window.outputs, b.window.outputs, 0.0));
    EXPECT_TRUE(matrices_near(a.x0, b.x0, 0.0));
    EXPECT_EQ(a.window.inputs.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(a.window.outputs.cols(), 2);
}

TEST(NonminimalGroundTruth, NoiseFreeReplayReproducesZ)
{
    const GroundTruthSystem sys = noise_free(preset_system("paper-4state"));
    const auto nm = build_ground_truth_nonminimal(sys, 2);
    const Trajectory t = simulate_trajectory(sys, Vector::Ones(4), generate_excitation(50, 2, 1.0, 1), 1);
    const Matrix z = build_z_sequence(t, 2);
    Vector zk = z.col(0);
    for (Index j = 0; j + 1 < z.cols(); ++j) {
        zk = nm.A_z * zk + nm.B_z * t.inputs.col(2 + j);
        ASSERT_LT((zk - z.col(j + 1)).cwiseAbs().maxCoeff(), 1e-10) << "step " << j;
    }
}

TEST(NonminimalGroundTruth, InducedNoiseIdentityOnLoggedNoise)
{
    const GroundTruthSystem sys = preset_system("paper-4state");
    const auto nm = build_ground_truth_nonminimal(sys, 2);
    const Trajectory t = simulate_trajectory(sys, Vector::Zero(4), generate_excitation(60, 2, 1.0, 2), 2);
    const Matrix z = build_z_sequence(t, 2);
    const Matrix zeta = induced_noise(nm, t);
    for (Index j = 0; j < zeta.cols(); ++j)
        ASSERT_LT((t.outputs.col(2 + j) - nm.S_script * z.col(j) - zeta.col(j)).cwiseAbs().maxCoeff(), 1e-10);
    // the non-minimal recursion with D_z carries the noise into z
    for (Index j = 0; j + 1 < zeta.cols(); ++j)
        ASSERT_LT((nm.A_z * z.col(j) + nm.B_z * t.inputs.col(2 + j) + nm.D_z * zeta.col(j) - z.col(j + 1))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-10);
}

TEST(NonminimalGroundTruth, FullOutputSingleLagIsOneStepPrediction)
{
    GroundTruthSystem sys;
    sys.A.resize(2, 2);
    sys.A << 0.9, 0.2, -0.1, 0.7;
    sys.B.resize(2, 1);
    sys.B << 1, 0.5;
    sys.C = Matrix::Identity(2, 2);
    sys.Sigma_w = Matrix::Zero(2, 2);
    sys.Sigma_q = Matrix::Zero(2, 2);
    const auto nm = build_ground_truth_nonminimal(sys, 1);
    EXPECT_TRUE(matrices_near(nm.S_script, hstack({sys.B, sys.A}), 1e-12));
}

TEST(NonminimalGroundTruth, RejectsLagBelowObservabilityIndex)
{
    EXPECT_EQ(observability_index(preset_system("paper-4state").A, preset_system("paper-4state").C), 2);
    EXPECT_THROW(build_ground_truth_nonminimal(preset_system("paper-4state"), 1), DimensionError);
}

TEST(GroundTruthSystem, ValidateCatchesBadShapes)
{
    GroundTruthSystem sys = preset_system("paper-3state");
    EXPECT_NO_THROW(sys.validate());
    sys.Sigma_q = Matrix::Identity(3, 3);
    EXPECT_THROW(sys.validate(), DimensionError);
}
