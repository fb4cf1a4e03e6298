#include "ddcs/moments.hpp"

#include "test_support.hpp"

using namespace ddcs;
using ddcs::testing::matrices_near;
using ddcs::testing::random_matrix;
using ddcs::testing::random_spd;

namespace {

ControlLaw constant_law(const Matrix& K, int N)
{
    ControlLaw law;
    law.K.assign(static_cast<std::size_t>(N), K);
    law.v = Matrix::Zero(K.rows(), N);
    return law;
}

Matrix stable_matrix(Index n, std::uint64_t seed, double radius)
{
    Matrix A = random_matrix(n, n, seed);
    return A * (radius / spectral_radius(A));
}

} // namespace

TEST(PropagateMean, ZeroInputKeepsFixedPoint)
{
    Vector mu0(2);
    mu0 << 1, 2;
    const Matrix mu = propagate_mean(Matrix::Identity(2, 2), Matrix::Zero(2, 1), mu0, Matrix::Zero(1, 4));
    for (Index k = 0; k <= 4; ++k) EXPECT_TRUE(matrices_near(mu.col(k), mu0, 0.0));
}

TEST(PropagateMean, ScalarRecursion)
{
    const Matrix mu = propagate_mean(Matrix::Constant(1, 1, 0.5), Matrix::Ones(1, 1), Vector::Zero(1),
                                     Matrix::Ones(1, 3));
    Matrix expect(1, 4);
    expect << 0, 1, 1.5, 1.75;
    EXPECT_TRUE(matrices_near(mu, expect, 1e-15));
}

TEST(PropagateCovarianceModel, NoiselessIsClosedLoopCongruence)
{
    const Matrix A = stable_matrix(3, 1, 0.8), B = random_matrix(3, 2, 2), K = random_matrix(2, 3, 3, 0.1);
    const Matrix S0 = random_spd(3, 4);
    const MomentSchedule s = propagate_covariance_model(A, B, Matrix::Zero(3, 2), Matrix::Zero(2, 2),
                                                        Matrix::Zero(2, 2), S0, Matrix::Zero(3, 2),
                                                        constant_law(K, 5));
    Matrix S = S0;
    const Matrix cl = A + B * K;
    for (Index k = 1; k <= 5; ++k) {
        S = cl * S * cl.transpose();
        EXPECT_TRUE(matrices_near(s.Sigma[k], S, 1e-12));
    }
}

TEST(PropagateCovarianceModel, WhiteNoiseLeavesNoCrossCovariance)
{
    const Matrix A = stable_matrix(3, 5, 0.8), B = random_matrix(3, 1, 6), D = random_matrix(3, 2, 7);
    const MomentSchedule s = propagate_covariance_model(A, B, D, Matrix::Zero(2, 2), random_spd(2, 8), random_spd(3, 9),
                                                        Matrix::Zero(3, 2), constant_law(Matrix::Zero(1, 3), 4));
    for (const auto& X : s.Sigma_chizeta) EXPECT_EQ(X.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PropagateCovarianceModel, ZeroGainIsOpenLoopRecursion)
{
    const Matrix A = stable_matrix(3, 10, 0.9), B = random_matrix(3, 2, 11), D = random_matrix(3, 2, 12);
    const Matrix Psi = 0.5 * Matrix::Identity(2, 2), Sz = random_spd(2, 13), S0 = random_spd(3, 14);
    const Matrix X0 = random_matrix(3, 2, 15, 0.1);
    const MomentSchedule s =
        propagate_covariance_model(A, B, D, Psi, Sz, S0, X0, constant_law(Matrix::Zero(2, 3), 3));
    Matrix S = S0, X = X0;
    for (Index k = 1; k <= 3; ++k) {
        const Matrix nS = A * S * A.transpose() + A * X * D.transpose() + D * X.transpose() * A.transpose() +
                          D * Sz * D.transpose();
        X = A * X * Psi.transpose() + D * Sz * Psi.transpose();
        S = nS;
        EXPECT_TRUE(matrices_near(s.Sigma[k], S, 1e-12));
        EXPECT_TRUE(matrices_near(s.Sigma_chizeta[k], X, 1e-12));
    }
}

TEST(PropagateCovarianceModel, InputNoiseAddsThroughB)
{
    const Matrix A = stable_matrix(2, 16, 0.5), B = random_matrix(2, 1, 17);
    ControlLaw law = constant_law(Matrix::Zero(1, 2), 1);
    law.Sigma_nu = {Matrix::Constant(1, 1, 4.0)};
    const MomentSchedule s = propagate_covariance_model(A, B, Matrix::Zero(2, 1), Matrix::Zero(1, 1),
                                                        Matrix::Zero(1, 1), Matrix::Zero(2, 2), Matrix::Zero(2, 1), law);
    EXPECT_TRUE(matrices_near(s.Sigma[1], 4.0 * B * B.transpose(), 1e-14));
}

TEST(PropagateCovarianceModel, MatchesJointMonteCarlo)
{
    // Joint (chi, zeta) simulation with AR(1) noise against the recursion.
    const Index r = 3, p = 2, M = 100000;
    const Matrix A = stable_matrix(r, 20, 0.7), B = random_matrix(r, 1, 21), D = random_matrix(r, p, 22, 0.5);
    const Matrix K = random_matrix(1, r, 23, 0.2);
    Matrix Psi(p, p);
    Psi << 0.4, 0.1, 0.0, 0.3;
    const Matrix Sz = random_spd(p, 24), S0 = Matrix::Identity(r, r);
    const Matrix X0 = random_matrix(r, p, 25, 0.2);
    const int N = 3;
    const MomentSchedule pred = propagate_covariance_model(A, B, D, Psi, Sz, S0, X0, constant_law(K, N));

    Matrix joint(r + p, r + p);
    joint << S0, X0, X0.transpose(), Sz;
    const Matrix F = psd_factor(joint), Fe = psd_factor(ar1_innovation_covariance(Psi, Sz));
    const CounterRng rng(26);
    Matrix acc = Matrix::Zero(r, r);
    for (Index i = 0; i < M; ++i) {
        const auto ii = static_cast<std::uint64_t>(i);
        const Vector j0 = rng.gaussian(ii, channel::auxiliary, F);
        Vector chi = j0.head(r), zeta = j0.tail(p);
        for (int k = 0; k < N; ++k) {
            chi = (A + B * K) * chi + D * zeta;
            zeta = Psi * zeta + rng.gaussian(ii, channel::process + static_cast<std::uint64_t>(k), Fe);
        }
        acc += chi * chi.transpose();
    }
    EXPECT_LT(relative_frobenius(acc / static_cast<double>(M), pred.Sigma[N]), 0.03);
}

TEST(DataDrivenPropagation, EqualsModelRecursionOnExactRelation)
{
    const GroundTruthSystem sys = preset_system("paper-4state");
    const auto nm = build_ground_truth_nonminimal(sys, 2);
    const Index T = 400, k0 = 4;
    const Trajectory t =
        simulate_trajectory(sys, Vector::Zero(4), generate_excitation(k0 + T + 1, 2, 1.0, 30), 30);
    const DataMatrices dm = assemble_data_matrices(t, 2, Matrix::Identity(8, 8), k0, T);
    const Matrix Z = induced_noise(nm, t).middleCols(k0 - 2, T);
    Matrix Psi(2, 2);
    Psi << 0.3, 0.0, 0.1, 0.2;
    const Matrix Sz = random_spd(2, 31);
    const DataDrivenPropagator prop(dm, nm.D_z, Z, Psi, Sz);

    MatrixSeq G;
    ControlLaw law;
    for (int k = 0; k < 5; ++k) {
        const Matrix Kt = random_matrix(2, 8, 40 + static_cast<std::uint64_t>(k), 0.1);
        G.push_back(gain_to_data_parameter(dm.Phi, Kt));
        law.K.push_back(dm.Theta * G.back());
    }
    const Matrix S0 = random_spd(8, 32), X0 = random_matrix(8, 2, 33, 0.1);
    const MomentSchedule dd = propagate_covariance_datadriven(prop, G, S0, X0);
    const MomentSchedule mb = propagate_covariance_model(nm.A_z, nm.B_z, nm.D_z, Psi, Sz, S0, X0, law);
    for (int k = 0; k <= 5; ++k) {
        EXPECT_LT((dd.Sigma[k] - mb.Sigma[k]).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, mb.Sigma[k].norm()));
        EXPECT_LT((dd.Sigma_chizeta[k] - mb.Sigma_chizeta[k]).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(DataDrivenPropagation, RejectsGainsOffTheIdentityConstraint)
{
    const GroundTruthSystem sys = preset_system("paper-4state");
    const Trajectory t = simulate_trajectory(sys, Vector::Zero(4), generate_excitation(105, 2, 1.0, 34), 34);
    const DataMatrices dm = assemble_data_matrices(t, 2, Matrix::Identity(8, 8), 4, 100);
    const DataDrivenPropagator prop(dm, Matrix::Zero(8, 2), Matrix::Zero(2, 100), Matrix::Zero(2, 2),
                                    Matrix::Zero(2, 2));
    const MatrixSeq G{random_matrix(10, 8, 35)};
    EXPECT_THROW(propagate_covariance_datadriven(prop, G, Matrix::Identity(8, 8), Matrix::Zero(8, 2)),
                 NumericalError);
}

TEST(OutputCovariance, Cases)
{
    const Matrix S = random_spd(2, 36), Sz = random_spd(2, 37);
    EXPECT_TRUE(matrices_near(output_covariance(Matrix::Identity(2, 2), S, Matrix::Zero(2, 2), Sz), S + Sz, 1e-15));
    EXPECT_TRUE(matrices_near(output_covariance(Matrix::Zero(2, 2), S, Matrix::Zero(2, 2), Sz), Sz, 0.0));
    Matrix X = Matrix::Zero(2, 2);
    X(0, 1) = 0.1;
    const Matrix Sy = output_covariance(Matrix::Identity(2, 2), S, X, Sz);
    EXPECT_TRUE(matrices_near(Sy, S + Sz + X + X.transpose(), 1e-15));
    EXPECT_EQ(symmetry_error(Sy), 0.0);
}

TEST(GainToDataParameter, SatisfiesBlockIdentity)
{
    const Matrix P = random_matrix(5, 200, 38);
    const Matrix Phi = P * P.transpose();
    const Matrix K = random_matrix(2, 3, 39);
    const Matrix G = gain_to_data_parameter(Phi, K);
    Matrix expect(5, 3);
    expect << K, Matrix::Identity(3, 3);
    EXPECT_TRUE(matrices_near(Phi * G, expect, 1e-10));
}
