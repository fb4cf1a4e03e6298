#pragma once

#include "ddcs/conic.hpp"
#include "ddcs/core.hpp"
#include "ddcs/estimation.hpp"
#include "ddcs/moments.hpp"
#include "ddcs/representation.hpp"

#include <optional>
#include <string>

namespace ddcs {

enum class TerminalMode { equality, upper_bound };

std::string to_string(TerminalMode m);
TerminalMode parse_terminal_mode(const std::string& s);

struct SteeringSpec {
    int N = 15;
    Vector mu_y_init, mu_y_final;
    Matrix Sigma_y_init, Sigma_y_final;
    Matrix Q_y; // p x p output tracking weight
    Matrix R;   // m x m input weight
    Matrix y_ref; // p x N (column k is the reference at step k); empty means zero
    TerminalMode terminal_mode = TerminalMode::upper_bound;
    // Weight on tr(Y_k); keeps the relaxation from trading slack for covariance.
    double slack_weight = 1.0;

    void validate(Index p, Index m) const;
    Vector reference(Index k) const;
};

// y_ref_k(i) = amplitude(i) sin(frequency(i) pi k / N + phase(i)), k = 0..N-1.
Matrix lissajous_reference(int N, const Vector& amplitude, const Vector& frequency, const Vector& phase);

struct MeanSteeringResult {
    Matrix mu; // r x (N+1)
    Matrix v;  // m x N
    SolverStatus status = SolverStatus::numerical_trouble;
    double kkt_residual = 0.0;
    Index constraint_rank = 0;
    Index augmented_rank = 0;
    std::string message;
};

// mu0 fixed when given, otherwise free subject to C mu0 = mu_y_init.
MeanSteeringResult solve_mean_steering(const EstimatedModel& model, const SteeringSpec& spec,
                                       const std::optional<Vector>& fixed_mu0 = std::nullopt);

// Relaxed covariance steering program. The data enter through sample moments (Phi/T, Theta/T and
// (X1 - D Z) P'/T); U, W, Y are expressed in that normalisation.
struct CovarianceProgram {
    ConicProgram program;
    int N = 0;
    Index r = 0, m = 0, p = 0;
    double normalization = 1.0;
    Matrix Phi_bar, Theta_bar, M_bar;
    Matrix C_hat, D_hat, Psi_hat, Sigma_zeta;
    TerminalMode terminal_mode = TerminalMode::upper_bound;

    static std::string name(const char* base, int k) { return std::string(base) + "_" + std::to_string(k); }
};

CovarianceProgram assemble_covariance_sdp(const DataMatrices& dm, const NoiseEstimate& ne, const Matrix& C_hat,
                                          const SteeringSpec& spec);

struct GainRecovery {
    MatrixSeq K;
    MatrixSeq G; // raw-data parameterisation: Phi_bottom G = I with Phi = P P'
    bool jitter_applied = false; // some Sigma_k needed the ridge
};

// Relative ridge on Sigma_k when lambda_min < kGainRidge * lambda_max.
inline constexpr double kGainRidge = 1e-6;

// K_k = Theta U_k Sigma_k^{-1} and G_k = Phi^{-1} [K_k; I], with U_k in the normalisation Phi/scale
// (scale = 1 for raw Phi). G_k equals U_k Sigma_k^{-1} whenever Sigma_k is well conditioned.
GainRecovery recover_gains(const MatrixSeq& U, const MatrixSeq& Sigma, const DataMatrices& dm, double scale = 1.0);

struct SteeringSolution {
    ControlLaw law;
    MomentSchedule schedule;
    SolverStatus solver_status = SolverStatus::numerical_trouble;
    double objective_value = 0.0;
    MatrixSeq U, W, Y, G;
    std::vector<double> slack_gap;     // lambda_max(Y_k - U_k Sigma_k^{-1} U_k')
    std::vector<double> slack_min_eig; // lambda_min of the same
    bool jitter_applied = false;
    int iterations = 0;
    double equality_residual = 0.0;
    double solve_seconds = 0.0;
    std::string message;

    bool accepted() const
    {
        return solver_status == SolverStatus::optimal || solver_status == SolverStatus::near_optimal;
    }
};

SteeringSolution solve_covariance_sdp(const CovarianceProgram& prog, const DataMatrices& dm,
                                      const SolverSettings& settings = {});

struct PropagationCheck {
    double min_eig_difference = 0.0; // min_k lambda_min(repropagated - solver)
    double max_abs_difference = 0.0;
    double max_slack_gap = 0.0;
    MomentSchedule repropagated;
};

// Re-propagates the solver's initial moments with the recovered G_k through the data-driven recursion.
PropagationCheck check_propagation_consistency(const SteeringSolution& sol, const DataMatrices& dm,
                                               const NoiseEstimate& ne);

} // namespace ddcs
