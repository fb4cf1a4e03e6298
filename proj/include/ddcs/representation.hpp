#pragma once

#include "ddcs/core.hpp"
#include "ddcs/system_sim.hpp"

#include <optional>
#include <sstream>

namespace ddcs {

// Column j stacks seq(i+j), ..., seq(i+j+depth-1); seq holds one sample per column.
template <typename Derived>
Matrix hankel(const Eigen::MatrixBase<Derived>& seq, Index i, Index depth, Index length)
{
    if (i < 0 || depth < 1 || length < 1) throw DimensionError("hankel: invalid start/depth/length");
    const Index need = i + length + depth - 1;
    if (need > seq.cols()) {
        std::ostringstream os;
        os << "hankel: sequence too short, need " << need << " samples, have " << seq.cols();
        throw DimensionError(os.str());
    }
    const Index d = seq.rows();
    Matrix H(d * depth, length);
    for (Index j = 0; j < length; ++j)
        for (Index t = 0; t < depth; ++t) H.block(t * d, j, d, 1) = seq.col(i + j + t);
    return H;
}

// z = col(u_{-1}, ..., u_{-l}, y_{-1}, ..., y_{-l}) from chronological windows (oldest first).
Vector stack_history(const Matrix& u_window, const Matrix& y_window);

// Column j is z_{l+j}; covers z_l .. z_len (len - l + 1 columns).
Matrix build_z_sequence(const Trajectory& traj, int ell);

struct Reduction {
    Matrix L;
    Vector singular_values;
    Index r = 0;
    bool identity = false;
    Index stacked_rank = 0; // numerical rank of [U0; L Z0]
};

// Default gap ratio separating structural from noise singular values.
inline constexpr double kDefaultGapRatio = 10.0;

// With kappa, keeps kappa directions. Without, searches for the first gap
// sigma_r / sigma_{r+1} >= gap_ratio with r > m*l; when none exists and Z0 has full numerical
// row rank, L = I. The returned L is sqrt(T) Lambda_1^{-1} U_1', so chi has unit sample moments.
Reduction compute_L(const Matrix& U0, const Matrix& Z0, int ell, std::optional<Index> kappa,
                    double gap_ratio = kDefaultGapRatio);

struct DataMatrices {
    Matrix U0, Z0, Z1, X0, X1, Y0;
    Matrix P, Phi, Theta;
    Matrix L;
    int ell = 0;
    Index r = 0;
    Index k0 = 0;
    std::optional<Index> kappa;
    Vector singular_values;

    Index T() const { return U0.cols(); }
    Index m() const { return U0.rows(); }
    Index p() const { return Y0.rows(); }
    Index h() const { return Z0.rows(); }
    // Phi's bottom block row [X0 U0', X0 X0'].
    Matrix phi_bottom() const { return Phi.bottomRows(r); }
};

// Regression window k = k0 .. k0+T-1 (k0 >= l); the trajectory must reach step k0 + T.
// T defaults to the longest window the trajectory allows.
DataMatrices assemble_data_matrices(const Trajectory& traj, int ell, const Matrix& L, Index k0,
                                    std::optional<Index> T = std::nullopt);

struct PersistencyReport {
    Index rank = 0;
    Index required = 0;
    double condition_number = 0.0;
    bool pass = false;
};

PersistencyReport check_persistency(const DataMatrices& dm);

} // namespace ddcs
