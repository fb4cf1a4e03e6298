#include "ddcs/core.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ddcs {

void require(bool cond, const std::string& what)
{
    if (!cond) throw DimensionError(what);
}

void require_shape(const Matrix& m, Index rows, Index cols, const std::string& name)
{
    if (m.rows() != rows || m.cols() != cols) {
        std::ostringstream os;
        os << name << ": expected " << rows << "x" << cols << ", got " << m.rows() << "x" << m.cols();
        throw DimensionError(os.str());
    }
}

double min_eigenvalue(const Matrix& sym)
{
    if (sym.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sym), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

double max_eigenvalue(const Matrix& sym)
{
    if (sym.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sym), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(es.eigenvalues().size() - 1);
}

double spectral_radius(const Matrix& a)
{
    if (a.size() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(a, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix psd_sqrt(const Matrix& cov)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(cov));
    Vector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Matrix psd_factor(const Matrix& cov)
{
    Matrix s = symmetrize(cov);
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    // semidefinite: clip and take the symmetric root
    return psd_sqrt(s);
}

Matrix clip_psd(const Matrix& sym)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sym));
    Vector d = es.eigenvalues().cwiseMax(0.0);
    return symmetrize(Matrix(es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose()));
}

Vector singular_values(const Matrix& m)
{
    if (m.size() == 0) return Vector();
    Eigen::BDCSVD<Matrix> svd(m);
    return svd.singularValues();
}

Index numerical_rank(const Matrix& m, double rel_tol)
{
    const Vector s = singular_values(m);
    if (s.size() == 0 || s(0) == 0.0) return 0;
    return (s.array() > rel_tol * s(0)).count();
}

Matrix pseudo_inverse(const Matrix& m, double rel_tol)
{
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    Vector inv = Vector::Zero(s.size());
    const double cut = s.size() ? rel_tol * s(0) : 0.0;
    for (Index i = 0; i < s.size(); ++i)
        if (s(i) > cut) inv(i) = 1.0 / s(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Matrix solve_discrete_lyapunov(const Matrix& a, const Matrix& q)
{
    require(a.rows() == a.cols(), "lyapunov: A must be square");
    require_shape(q, a.rows(), a.rows(), "lyapunov: Q");
    if (spectral_radius(a) >= 1.0) throw NumericalError("lyapunov: A is not Schur stable");
    const Index n = a.rows();
    if (n <= 40) {
        Matrix kron(n * n, n * n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) kron.block(i * n, j * n, n, n) = a(i, j) * a;
        Matrix lhs = Matrix::Identity(n * n, n * n) - kron;
        Vector vq = Eigen::Map<const Vector>(q.data(), n * n);
        Vector vx = lhs.partialPivLu().solve(vq);
        return symmetrize(Matrix(Eigen::Map<Matrix>(vx.data(), n, n)));
    }
    // Smith doubling
    Matrix x = q, ak = a;
    for (int it = 0; it < 64; ++it) {
        Matrix step = ak * x * ak.transpose();
        x += step;
        ak = ak * ak;
        if (step.norm() <= 1e-15 * x.norm()) break;
    }
    return symmetrize(x);
}

Matrix matrix_power(const Matrix& a, int k)
{
    require(a.rows() == a.cols(), "matrix_power: square matrix required");
    require(k >= 0, "matrix_power: negative exponent");
    Matrix out = Matrix::Identity(a.rows(), a.cols());
    for (int i = 0; i < k; ++i) out = out * a;
    return out;
}

Matrix vstack(const std::vector<Matrix>& blocks)
{
    if (blocks.empty()) return Matrix();
    const Index cols = blocks.front().cols();
    Index rows = 0;
    for (const auto& b : blocks) {
        require(b.cols() == cols, "vstack: column mismatch");
        rows += b.rows();
    }
    Matrix out(rows, cols);
    Index r = 0;
    for (const auto& b : blocks) {
        out.middleRows(r, b.rows()) = b;
        r += b.rows();
    }
    return out;
}

Matrix hstack(const std::vector<Matrix>& blocks)
{
    if (blocks.empty()) return Matrix();
    const Index rows = blocks.front().rows();
    Index cols = 0;
    for (const auto& b : blocks) {
        require(b.rows() == rows, "hstack: row mismatch");
        cols += b.cols();
    }
    Matrix out(rows, cols);
    Index c = 0;
    for (const auto& b : blocks) {
        out.middleCols(c, b.cols()) = b;
        c += b.cols();
    }
    return out;
}

double relative_frobenius(const Matrix& estimate, const Matrix& reference)
{
    require(estimate.rows() == reference.rows() && estimate.cols() == reference.cols(),
            "relative_frobenius: shape mismatch");
    const double denom = reference.norm();
    return denom > 0 ? (estimate - reference).norm() / denom : (estimate - reference).norm();
}

} // namespace ddcs
