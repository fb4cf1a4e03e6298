#include "ddcs/representation.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace ddcs {

Vector stack_history(const Matrix& u_window, const Matrix& y_window)
{
    require(u_window.cols() == y_window.cols() && u_window.cols() >= 1, "stack_history: window lengths differ");
    const Index ell = u_window.cols(), m = u_window.rows(), p = y_window.rows();
    Vector z(ell * (m + p));
    for (Index j = 0; j < ell; ++j) {
        z.segment(j * m, m) = u_window.col(ell - 1 - j);
        z.segment(ell * m + j * p, p) = y_window.col(ell - 1 - j);
    }
    return z;
}

Matrix build_z_sequence(const Trajectory& traj, int ell)
{
    require(ell >= 1, "build_z_sequence: ell must be positive");
    const Index len = traj.length();
    require(traj.outputs.cols() == len, "build_z_sequence: input/output lengths differ");
    if (len < ell + 1) throw DimensionError("build_z_sequence: trajectory shorter than ell + 1");
    const Index m = traj.m(), p = traj.p();
    const Index h = ell * (m + p);
    Matrix Z(h, len - ell + 1);
    for (Index k = ell; k <= len; ++k) {
        auto col = Z.col(k - ell);
        for (int j = 1; j <= ell; ++j) {
            col.segment((j - 1) * m, m) = traj.inputs.col(k - j);
            col.segment(ell * m + (j - 1) * p, p) = traj.outputs.col(k - j);
        }
    }
    return Z;
}

Reduction compute_L(const Matrix& U0, const Matrix& Z0, int ell, std::optional<Index> kappa, double gap_ratio)
{
    require(U0.cols() == Z0.cols(), "compute_L: U0 and Z0 column counts differ");
    require(gap_ratio > 1.0, "compute_L: gap_ratio must exceed 1");
    const Index h = Z0.rows(), T = Z0.cols(), m = U0.rows();
    if (T <= h) throw DimensionError("compute_L: need more columns than rows in Z0");

    Eigen::BDCSVD<Matrix> svd(Z0, Eigen::ComputeThinU);
    Reduction red;
    red.singular_values = svd.singularValues();
    const Vector& s = red.singular_values;
    if (s(0) <= 0) throw NumericalError("compute_L: Z0 is zero");

    Index r = 0;
    if (kappa) {
        if (*kappa < 1 || *kappa > h) throw DimensionError("compute_L: kappa must lie in [1, h]");
        r = *kappa;
    } else {
        for (Index c = m * ell + 1; c < h; ++c) {
            if (s(c) <= 0 || s(c - 1) / s(c) >= gap_ratio) {
                r = c;
                break;
            }
        }
        if (r == 0) {
            if (s(h - 1) / s(0) > 1e-8) {
                red.L = Matrix::Identity(h, h);
                red.r = h;
                red.identity = true;
            } else {
                throw NumericalError("compute_L: no singular-value gap found; set kappa explicitly");
            }
        }
    }
    if (!red.identity) {
        if (r == h && s(h - 1) / s(0) > 1e-8) {
            red.L = Matrix::Identity(h, h);
            red.identity = true;
        } else {
            if (s(r - 1) / s(0) <= 1e-14) throw NumericalError("compute_L: retained singular value is zero");
            const Vector inv = s.head(r).cwiseInverse() * std::sqrt(static_cast<double>(T));
            red.L = inv.asDiagonal() * svd.matrixU().leftCols(r).transpose();
        }
        red.r = r;
    }
    Matrix stacked(m + red.r, T);
    stacked << U0, red.L * Z0;
    red.stacked_rank = numerical_rank(stacked);
    return red;
}

DataMatrices assemble_data_matrices(const Trajectory& traj, int ell, const Matrix& L, Index k0,
                                    std::optional<Index> T)
{
    require(ell >= 1, "assemble_data_matrices: ell must be positive");
    require(k0 >= ell, "assemble_data_matrices: k0 must be at least ell");
    const Index len = traj.length();
    const Index m = traj.m(), p = traj.p(), h = ell * (m + p);
    require(L.cols() == h, "assemble_data_matrices: L must have h = ell(m+p) columns");
    const Index avail = len - k0;
    const Index Tn = T.value_or(avail);
    if (Tn < 1 || Tn > avail) {
        std::ostringstream os;
        os << "assemble_data_matrices: trajectory of length " << len << " cannot supply T = " << Tn
           << " columns starting at k0 = " << k0;
        throw DimensionError(os.str());
    }
    const Matrix zs = build_z_sequence(traj, ell);

    DataMatrices dm;
    dm.ell = ell;
    dm.k0 = k0;
    dm.L = L;
    dm.r = L.rows();
    dm.U0 = traj.inputs.middleCols(k0, Tn);
    dm.Y0 = traj.outputs.middleCols(k0, Tn);
    dm.Z0 = zs.middleCols(k0 - ell, Tn);
    dm.Z1 = zs.middleCols(k0 - ell + 1, Tn);
    dm.X0 = L * dm.Z0;
    dm.X1 = L * dm.Z1;
    dm.P.resize(m + dm.r, Tn);
    dm.P << dm.U0, dm.X0;
    dm.Phi = symmetrize(Matrix(dm.P * dm.P.transpose()));
    dm.Theta = dm.Phi.topRows(m);
    return dm;
}

PersistencyReport check_persistency(const DataMatrices& dm)
{
    PersistencyReport rep;
    rep.required = dm.m() + dm.r;
    const Vector s = singular_values(dm.P);
    if (s.size() == 0 || s(0) == 0.0) return rep;
    rep.rank = (s.array() > 1e-8 * s(0)).count();
    const double smin = s(s.size() - 1);
    rep.condition_number = smin > 0 ? s(0) / smin : std::numeric_limits<double>::infinity();
    rep.pass = rep.rank == rep.required;
    return rep;
}

} // namespace ddcs
