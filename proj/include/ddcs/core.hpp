#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace ddcs {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixSeq = std::vector<Matrix>;

// Shape or argument problems the caller can fix.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Rank loss, indefinite covariances, solver breakdowns.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what);
void require_shape(const Matrix& m, Index rows, Index cols, const std::string& name);

template <typename Derived>
typename Derived::PlainObject symmetrize(const Eigen::MatrixBase<Derived>& m)
{
    return (m + m.transpose()) / 2;
}

template <typename Derived>
typename Derived::Scalar symmetry_error(const Eigen::MatrixBase<Derived>& m)
{
    const auto scale = std::max<typename Derived::Scalar>(m.norm(), 1);
    return (m - m.transpose()).norm() / scale;
}

double min_eigenvalue(const Matrix& sym);
double max_eigenvalue(const Matrix& sym);
double spectral_radius(const Matrix& a);

// Symmetric square root of a PSD matrix with negative eigenvalues clipped to zero.
Matrix psd_sqrt(const Matrix& cov);
// Factor F with F F' = cov; Cholesky when possible, clipped eigen-decomposition otherwise.
Matrix psd_factor(const Matrix& cov);
Matrix clip_psd(const Matrix& sym);

Vector singular_values(const Matrix& m);
Index numerical_rank(const Matrix& m, double rel_tol = 1e-8);
Matrix pseudo_inverse(const Matrix& m, double rel_tol = 1e-12);

// X = A X A' + Q for a Schur-stable A.
Matrix solve_discrete_lyapunov(const Matrix& a, const Matrix& q);

Matrix matrix_power(const Matrix& a, int k);

// Blocks stacked vertically / horizontally.
Matrix vstack(const std::vector<Matrix>& blocks);
Matrix hstack(const std::vector<Matrix>& blocks);

double relative_frobenius(const Matrix& estimate, const Matrix& reference);

} // namespace ddcs
