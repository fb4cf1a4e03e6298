#pragma once

#include "ddcs/core.hpp"
#include "ddcs/random.hpp"

#include <cstdint>
#include <optional>

namespace ddcs {

struct GroundTruthSystem {
    Matrix A, B, C;
    Matrix Sigma_w, Sigma_q;

    Index n() const { return A.rows(); }
    Index m() const { return B.cols(); }
    Index p() const { return C.rows(); }

    // Shapes, noise covariances symmetric PSD, (A, C) observable, (A, B) controllable.
    void validate() const;
};

// Columns are time steps 0..len-1. State and noise logs are present for simulated data only.
struct Trajectory {
    Matrix inputs;
    Matrix outputs;
    std::optional<Matrix> states;
    std::optional<Matrix> process_noise;
    std::optional<Matrix> measurement_noise;

    Index length() const { return inputs.cols(); }
    Index m() const { return inputs.rows(); }
    Index p() const { return outputs.rows(); }
};

// Observability matrix with the most recent output on top: [C A^{l-1}; ...; C A; C].
Matrix observability_matrix(const Matrix& A, const Matrix& C, int ell);
Matrix controllability_matrix(const Matrix& A, const Matrix& B);
// Smallest l with rank([C; CA; ...; CA^{l-1}]) = n.
int observability_index(const Matrix& A, const Matrix& C);

Trajectory simulate_trajectory(const GroundTruthSystem& sys, const Vector& x0, const Matrix& inputs,
                               std::uint64_t seed);

// i.i.d. N(0, scale^2 I_m) inputs, one column per step.
Matrix generate_excitation(Index T, Index m, double scale, std::uint64_t seed);

struct HistoryWindow {
    Matrix inputs;  // m x l, chronological: u_{-l} .. u_{-1}
    Matrix outputs; // p x l, chronological: y_{-l} .. y_{-1}
};

struct InitialHistory {
    HistoryWindow window;
    Vector x0;
};

// Draws x_{-l} ~ N(m0, lambda I) and runs l zero-input steps. lambda matches the trace of the
// output covariance at k = 0 to the target; m0 is chosen so E[y_0] equals the target mean.
class InitialHistorySampler {
public:
    InitialHistorySampler(const GroundTruthSystem& sys, const Vector& target_mean, const Matrix& target_cov,
                          int ell);

    double lambda() const { return lambda_; }
    const Vector& state_mean() const { return state_mean_; }
    int ell() const { return ell_; }

    InitialHistory sample(std::uint64_t seed) const;

private:
    GroundTruthSystem sys_;
    int ell_;
    double lambda_;
    Vector state_mean_;
    Matrix w_factor_, q_factor_;
};

InitialHistory sample_initial_history(const GroundTruthSystem& sys, const Vector& target_mean,
                                      const Matrix& target_cov, int ell, std::uint64_t seed);

struct NonminimalGroundTruth {
    Matrix A_z, B_z, D_z;
    Matrix S_script;
    Matrix F_w, F_q;
    Matrix O, O_pinv;
    Matrix C_x, C_w, T_u, T_w;
    int ell = 0;
    Index h = 0;
};

NonminimalGroundTruth build_ground_truth_nonminimal(const GroundTruthSystem& sys, int ell);

// Induced output noise zeta~_k for k = l .. len-1 from the logged w, q (column j <-> k = l + j).
Matrix induced_noise(const NonminimalGroundTruth& nm, const Trajectory& traj);

} // namespace ddcs
