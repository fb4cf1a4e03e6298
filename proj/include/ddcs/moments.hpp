#pragma once

#include "ddcs/core.hpp"
#include "ddcs/estimation.hpp"
#include "ddcs/representation.hpp"

namespace ddcs {

// u_k = K_k (chi_k - mu_k) + v_k + nu_k with nu_k ~ N(0, Sigma_nu_k); Sigma_nu may be empty (nu = 0).
struct ControlLaw {
    MatrixSeq K;
    Matrix v; // m x N
    MatrixSeq Sigma_nu;

    Index horizon() const { return static_cast<Index>(K.size()); }
    void validate(Index r, Index m) const;
};

struct MomentSchedule {
    Matrix mu;             // r x (N+1), may be empty when only covariances were propagated
    MatrixSeq Sigma;       // N+1 entries
    MatrixSeq Sigma_chizeta;
    MatrixSeq Sigma_y;

    Index horizon() const { return Sigma.empty() ? 0 : static_cast<Index>(Sigma.size()) - 1; }
};

// mu_{k+1} = A mu_k + B v_k; returns r x (N+1).
Matrix propagate_mean(const Matrix& A, const Matrix& B, const Vector& mu0, const Matrix& v);

MomentSchedule propagate_covariance_model(const Matrix& A, const Matrix& B, const Matrix& D, const Matrix& Psi,
                                          const Matrix& Sigma_zeta, const Matrix& Sigma0,
                                          const Matrix& Sigma_chizeta0, const ControlLaw& law);

// Ingredients of the data-driven recursion: closed-loop map (X1 - D Z) P' G_k.
struct DataDrivenPropagator {
    Matrix M;          // (X1 - D Z) P', r x (m+r)
    Matrix Phi_bottom; // [X0 U0', X0 X0']
    Matrix D, Psi, Sigma_zeta;

    DataDrivenPropagator(const DataMatrices& dm, const NoiseEstimate& ne);
    DataDrivenPropagator(const DataMatrices& dm, const Matrix& D, const Matrix& Z, const Matrix& Psi,
                         const Matrix& Sigma_zeta);
};

MomentSchedule propagate_covariance_datadriven(const DataDrivenPropagator& prop, const MatrixSeq& G_seq,
                                               const Matrix& Sigma0, const Matrix& Sigma_chizeta0);
MomentSchedule propagate_covariance_datadriven(const DataMatrices& dm, const NoiseEstimate& ne,
                                               const MatrixSeq& G_seq, const Matrix& Sigma0,
                                               const Matrix& Sigma_chizeta0);

Matrix output_covariance(const Matrix& C, const Matrix& Sigma, const Matrix& Sigma_chizeta,
                         const Matrix& Sigma_zeta);

// Fills schedule.Sigma_y from Sigma and Sigma_chizeta.
void attach_output_covariance(MomentSchedule& schedule, const Matrix& C, const Matrix& Sigma_zeta);

// G_k = Phi^{-1} [K_k; I], the data parameterisation of a given gain.
Matrix gain_to_data_parameter(const Matrix& Phi, const Matrix& K);

} // namespace ddcs
