#pragma once

#include "ddcs/core.hpp"
#include "ddcs/representation.hpp"
#include "ddcs/system_sim.hpp"

#include <optional>
#include <string>

namespace ddcs {

enum class EstimationMethod { LS, TLS, IV2SLS };

std::string to_string(EstimationMethod m);
EstimationMethod parse_estimation_method(const std::string& s);

// Regressions return beta (s x q) with Y ~ J beta'; J is T x q, Y is T x s.
Matrix estimate_ls(const Matrix& J, const Matrix& Y);
Matrix estimate_tls(const Matrix& J, const Matrix& Y);

struct InstrumentMatrix {
    Matrix G; // T x (lag_count+1) m, row k = [u_k' u_{k-1}' ... u_{k-lag}']
    int lag_count = 0;
    Vector singular_values;
    // Filled by estimate_noise diagnostics when available: max |corr(g, residual)|.
    std::optional<double> residual_correlation;
};

// Smallest lag count whose instrument dimension (lag+1) m reaches r + m.
int default_lag_count(Index r, Index m);

// Rows for k = k0 .. k0+T-1; requires k0 >= lag_count.
InstrumentMatrix build_instruments(const Trajectory& traj, int lag_count, Index k0, Index T);
InstrumentMatrix build_instruments(const Trajectory& traj, int lag_count, const DataMatrices& dm);

Matrix estimate_2sls(const Matrix& J, const Matrix& Y, const InstrumentMatrix& G);

struct EstimatedModel {
    Matrix A_hat, B_hat, C_hat;
    EstimationMethod method = EstimationMethod::LS;

    Index r() const { return A_hat.rows(); }
    Index m() const { return B_hat.cols(); }
    Index p() const { return C_hat.rows(); }
    Matrix BA() const { return hstack({B_hat, A_hat}); }
};

// Regresses X1 on P; C_hat is left empty.
EstimatedModel estimate_dynamics(const DataMatrices& dm, EstimationMethod method,
                                 const InstrumentMatrix* G = nullptr);
Matrix estimate_C(const DataMatrices& dm, EstimationMethod method, const InstrumentMatrix* G = nullptr);
EstimatedModel estimate_model(const DataMatrices& dm, EstimationMethod method, const InstrumentMatrix* G = nullptr);

struct NoiseEstimate {
    Matrix Z_hat;   // p x T
    Matrix Xi_hat;  // r x T
    Matrix Sigma_zeta_hat, Sigma_xi_hat;
    Matrix Psi_hat;
    Matrix D_hat;
    Matrix Sigma_chizeta_init; // r x p
    double psi_radius_raw = 0.0;
    bool psi_stabilized = false;
    // max |lag-1 autocorrelation| of eta = zeta_{k+1} - Psi zeta_k, a whiteness diagnostic
    double eta_autocorrelation = 0.0;
};

inline constexpr double kPsiRadiusCap = 0.99;

NoiseEstimate estimate_noise(const DataMatrices& dm, const EstimatedModel& model);

// Sigma^eta implied by an AR(1) model (Psi, Sigma_zeta), clipped to PSD.
Matrix ar1_innovation_covariance(const Matrix& Psi, const Matrix& Sigma_zeta);

} // namespace ddcs
