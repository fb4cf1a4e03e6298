#pragma once

#include "ddcs/core.hpp"
#include "ddcs/estimation.hpp"
#include "ddcs/moments.hpp"
#include "ddcs/system_sim.hpp"

#include <cstdint>

namespace ddcs {

struct EllipseParams {
    Vector center;          // empirical mean
    double major = 0.0;     // semi-axis lengths
    double minor = 0.0;
    double angle = 0.0;     // radians, principal axis from the first coordinate axis, in (-pi/2, pi/2]
};

// Semi-axes sqrt(q * eig) with q the chi-square(2) quantile at the given confidence.
EllipseParams covariance_ellipse(const Matrix& Sigma, double confidence);
double chi2_2dof_quantile(double confidence);

// Mean and (M-1)-normalised covariance of the columns, summed with a fixed pairwise tree.
Vector pairwise_mean(const Matrix& samples);
Matrix pairwise_covariance(const Matrix& samples);

struct EvaluationReport {
    Index rollout_count = 0;
    double confidence = 0.95;
    double terminal_mean_error = 0.0;
    Matrix empirical_terminal_cov;
    double terminal_lambda_max = 0.0;
    double lambda_max_ratio = 0.0;    // lambda_max(empirical) / lambda_max(target)
    double frobenius_distance = 0.0;  // ||empirical - target||_F
    Matrix output_means;              // p x (N+1)
    MatrixSeq output_covs;
    Matrix state_means;               // n x (N+1), true plant state
    MatrixSeq state_covs;
    Matrix chi_means;                 // r x (N+1)
    MatrixSeq chi_covs;
    std::vector<EllipseParams> ellipses; // one per step when p = 2
};

struct ClosedLoopSetup {
    const GroundTruthSystem* system = nullptr;
    const InitialHistorySampler* sampler = nullptr;
    Matrix L;        // reduction applied to the realised window
    Matrix mu;       // r x (N+1) planned reduced-state means
    Vector mu_y_final;
    Matrix Sigma_y_final;
    double confidence = 0.95;
};

// Rollout i draws everything from derive_seed(seed, i); results do not depend on `jobs`.
EvaluationReport run_closed_loop(const ClosedLoopSetup& setup, const ControlLaw& law, Index M, std::uint64_t seed,
                                 int jobs = 1);

// Empirical moments of y_0 over the same rollouts run_closed_loop would generate.
struct InitialMoments {
    Vector mean;
    Matrix cov;
};
InitialMoments measure_initial_moments(const GroundTruthSystem& sys, const InitialHistorySampler& sampler, Index M,
                                       std::uint64_t seed);

double model_error(const EstimatedModel& est, const Matrix& truth_BA);

} // namespace ddcs
