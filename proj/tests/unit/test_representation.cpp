#include "ddcs/representation.hpp"

#include "test_support.hpp"

using namespace ddcs;
using ddcs::testing::matrices_near;
using ddcs::testing::noise_free;

namespace {

Trajectory noise_free_run(const std::string& preset, Index len, std::uint64_t seed)
{
    const GroundTruthSystem sys = noise_free(preset_system(preset));
    return simulate_trajectory(sys, Vector::Zero(sys.n()), generate_excitation(len, sys.m(), 1.0, seed), seed);
}

} // namespace

TEST(Hankel, ScalarDefinition)
{
    Matrix seq(1, 4);
    seq << 1, 2, 3, 4;
    Matrix expect(2, 3);
    expect << 1, 2, 3, 2, 3, 4;
    EXPECT_TRUE(matrices_near(hankel(seq, 0, 2, 3), expect, 0.0));
    EXPECT_TRUE(matrices_near(hankel(seq, 0, 1, 4), seq, 0.0));
}

TEST(Hankel, VectorSamplesAndOffset)
{
    Matrix seq(2, 3);
    seq << 1, 3, 5, 2, 4, 6;
    Matrix expect(4, 1);
    expect << 3, 4, 5, 6;
    EXPECT_TRUE(matrices_near(hankel(seq, 1, 2, 1), expect, 0.0));
}

TEST(Hankel, TooShortNamesNeededLength)
{
    Matrix seq(1, 4);
    seq << 1, 2, 3, 4;
    try {
        hankel(seq, 1, 2, 4);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("need 6"), std::string::npos) << e.what();
    }
}

TEST(BuildZ, SingleLag)
{
    Trajectory t;
    t.inputs = Matrix(1, 3);
    t.inputs << 1, 2, 3;
    t.outputs = Matrix(1, 3);
    t.outputs << 4, 5, 6;
    const Matrix z = build_z_sequence(t, 1);
    EXPECT_EQ(z.cols(), 3);
    EXPECT_EQ(z(0, 0), 1);
    EXPECT_EQ(z(1, 0), 4);
}

TEST(BuildZ, NewestFirstOrdering)
{
    Trajectory t;
    t.inputs = Matrix(1, 3);
    t.inputs << 1, 2, 3;
    t.outputs = Matrix(1, 3);
    t.outputs << 4, 5, 6;
    const Matrix z = build_z_sequence(t, 2);
    Vector z2(4);
    z2 << 2, 1, 5, 4;
    EXPECT_TRUE(matrices_near(z.col(0), z2, 0.0));
    Matrix uw(1, 2), yw(1, 2);
    uw << 1, 2;
    yw << 4, 5;
    EXPECT_TRUE(matrices_near(stack_history(uw, yw), z2, 0.0));
}

TEST(BuildZ, TimeInvariantUnderShift)
{
    const Trajectory t = noise_free_run("paper-3state", 40, 2);
    Trajectory s;
    s.inputs = t.inputs.rightCols(35);
    s.outputs = t.outputs.rightCols(35);
    const Matrix zt = build_z_sequence(t, 2), zs = build_z_sequence(s, 2);
    EXPECT_TRUE(matrices_near(zs, zt.rightCols(zs.cols()), 0.0));
}

TEST(ComputeL, FullRankStateGivesIdentity)
{
    const Trajectory t = noise_free_run("paper-4state", 300, 3);
    const DataMatrices raw = assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 290);
    const Reduction red = compute_L(raw.U0, raw.Z0, 2, std::nullopt);
    EXPECT_TRUE(red.identity);
    EXPECT_EQ(red.r, 8);
    EXPECT_TRUE(matrices_near(red.L, Matrix::Identity(8, 8), 0.0));
}

TEST(ComputeL, NoiseFreeThreeStateFindsStructuralRank)
{
    const Trajectory t = noise_free_run("paper-3state", 300, 4);
    const DataMatrices raw = assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 290);
    const Reduction red = compute_L(raw.U0, raw.Z0, 2, std::nullopt);
    // z spans m*l + n = 7 of its 8 coordinates
    EXPECT_EQ(red.r, 7);
    EXPECT_FALSE(red.identity);
    EXPECT_EQ(red.stacked_rank, 9);
    EXPECT_EQ(numerical_rank(vstack({raw.U0, raw.Z0})), 9);
    // L Z0 has unit sample second moments
    const Matrix X0 = red.L * raw.Z0;
    EXPECT_TRUE(matrices_near(X0 * X0.transpose() / 290.0, Matrix::Identity(7, 7), 1e-8));
}

TEST(ComputeL, DuplicatedRowDropsOneDirection)
{
    Matrix Z0 = ddcs::testing::random_matrix(6, 100, 5);
    Z0.row(5) = Z0.row(0);
    const Matrix U0 = ddcs::testing::random_matrix(1, 100, 6);
    const Reduction red = compute_L(U0, Z0, 2, std::nullopt);
    EXPECT_EQ(red.r, 5);
    EXPECT_EQ(numerical_rank(red.L * Z0), 5);
}

TEST(ComputeL, KappaOverridesGapSearch)
{
    const Trajectory t = noise_free_run("paper-3state", 300, 4);
    const DataMatrices raw = assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 290);
    EXPECT_EQ(compute_L(raw.U0, raw.Z0, 2, Index{6}).r, 6);
    EXPECT_THROW(compute_L(raw.U0, raw.Z0, 2, Index{9}), DimensionError);
}

TEST(ComputeL, NoGapAndRankDeficientThrows)
{
    // singular values decay geometrically by 2: no gap of 10 but far below 1e-8 at the end
    const Index h = 40;
    Matrix Z0 = ddcs::testing::random_matrix(h, 200, 7);
    Eigen::JacobiSVD<Matrix> svd(Z0, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Vector s(h);
    for (Index i = 0; i < h; ++i) s(i) = std::pow(0.5, static_cast<double>(i));
    Z0 = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    const Matrix U0 = ddcs::testing::random_matrix(1, 200, 8);
    EXPECT_THROW(compute_L(U0, Z0, 1, std::nullopt), NumericalError);
}

TEST(AssembleDataMatrices, NoiseFreeLinearRelation)
{
    const GroundTruthSystem sys = noise_free(preset_system("paper-4state"));
    const auto nm = build_ground_truth_nonminimal(sys, 2);
    const Trajectory t = noise_free_run("paper-4state", 210, 9);
    const DataMatrices dm = assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 200);
    const Matrix resid = dm.X1 - hstack({nm.B_z, nm.A_z}) * dm.P;
    EXPECT_LE(resid.norm(), 1e-8);
    EXPECT_TRUE(matrices_near(dm.Theta, dm.Phi.topRows(2), 0.0));
    EXPECT_GT(min_eigenvalue(dm.Phi), 0.0);
    EXPECT_TRUE(matrices_near(dm.phi_bottom(), dm.Phi.bottomRows(8), 0.0));
}

TEST(AssembleDataMatrices, RejectsShortTrajectory)
{
    const Trajectory t = noise_free_run("paper-4state", 50, 9);
    EXPECT_THROW(assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 47), DimensionError);
    EXPECT_NO_THROW(assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 46));
    EXPECT_THROW(assemble_data_matrices(t, 2, Matrix::Identity(7, 7), 4, 20), DimensionError);
}

TEST(Persistency, ConstantInputFails)
{
    const GroundTruthSystem sys = preset_system("paper-4state");
    const Trajectory t = simulate_trajectory(sys, Vector::Zero(4), Matrix::Ones(2, 200), 1);
    const auto rep = check_persistency(assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 190));
    EXPECT_FALSE(rep.pass);
    EXPECT_LT(rep.rank, 10);
    EXPECT_EQ(rep.required, 10);
}

TEST(Persistency, IidInputsPass)
{
    const GroundTruthSystem sys = preset_system("paper-4state");
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Trajectory t = simulate_trajectory(sys, Vector::Zero(4), generate_excitation(110, 2, 1.0, seed), seed);
        const auto rep = check_persistency(assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 100));
        EXPECT_TRUE(rep.pass) << "seed " << seed;
        EXPECT_EQ(rep.required, 10);
        EXPECT_GE(rep.condition_number, 1.0);
    }
}
