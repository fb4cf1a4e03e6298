#include "ddcs/estimation.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

namespace ddcs {

std::string to_string(EstimationMethod m)
{
    switch (m) {
    case EstimationMethod::LS: return "LS";
    case EstimationMethod::TLS: return "TLS";
    case EstimationMethod::IV2SLS: return "IV";
    }
    return "?";
}

EstimationMethod parse_estimation_method(const std::string& s)
{
    if (s == "LS" || s == "ls") return EstimationMethod::LS;
    if (s == "TLS" || s == "tls") return EstimationMethod::TLS;
    if (s == "IV" || s == "iv" || s == "IV2SLS" || s == "2SLS" || s == "2sls") return EstimationMethod::IV2SLS;
    throw DimensionError("unknown estimation method '" + s + "'");
}

Matrix estimate_ls(const Matrix& J, const Matrix& Y)
{
    require(J.rows() == Y.rows(), "estimate_ls: J and Y row counts differ");
    require(J.rows() >= J.cols(), "estimate_ls: fewer samples than regressors");
    Eigen::ColPivHouseholderQR<Matrix> qr(J);
    qr.setThreshold(1e-12);
    if (qr.rank() < J.cols()) throw NumericalError("estimate_ls: regressor matrix is rank deficient");
    return qr.solve(Y).transpose();
}

Matrix estimate_tls(const Matrix& J, const Matrix& Y)
{
    require(J.rows() == Y.rows(), "estimate_tls: J and Y row counts differ");
    const Index q = J.cols(), s = Y.cols();
    require(J.rows() >= q + s, "estimate_tls: fewer samples than unknowns");
    Matrix aug(J.rows(), q + s);
    aug << J, Y;
    // compress the tall matrix first; the right singular vectors are unchanged
    Eigen::HouseholderQR<Matrix> qr(aug);
    Matrix R = qr.matrixQR().topRows(q + s).triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeFullV);
    const Matrix& V = svd.matrixV();
    const Matrix V12 = V.topRightCorner(q, s);
    const Matrix V22 = V.bottomRightCorner(s, s);
    Eigen::FullPivLU<Matrix> lu(V22);
    if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-12) throw NumericalError("TLS nongeneric");
    return (-V12 * lu.inverse()).transpose();
}

int default_lag_count(Index r, Index m)
{
    require(r >= 1 && m >= 1, "default_lag_count: positive dimensions required");
    const Index need = (r + m + m - 1) / m; // ceil((r+m)/m)
    return static_cast<int>(need - 1);
}

InstrumentMatrix build_instruments(const Trajectory& traj, int lag_count, Index k0, Index T)
{
    require(lag_count >= 0, "build_instruments: lag_count must be nonnegative");
    if (k0 < lag_count) throw DimensionError("build_instruments: not enough samples for the deepest lag");
    require(k0 + T <= traj.length(), "build_instruments: window runs past the trajectory");
    const Index m = traj.m();
    InstrumentMatrix ins;
    ins.lag_count = lag_count;
    ins.G.resize(T, (lag_count + 1) * m);
    for (Index t = 0; t < T; ++t)
        for (int j = 0; j <= lag_count; ++j)
            ins.G.block(t, j * m, 1, m) = traj.inputs.col(k0 + t - j).transpose();
    ins.singular_values = singular_values(ins.G);
    const Vector& s = ins.singular_values;
    if (s.size() == 0 || s(0) == 0 || (s.array() > 1e-10 * s(0)).count() < ins.G.cols())
        throw NumericalError("build_instruments: G'G is rank deficient (instruments not linearly independent)");
    return ins;
}

InstrumentMatrix build_instruments(const Trajectory& traj, int lag_count, const DataMatrices& dm)
{
    return build_instruments(traj, lag_count, dm.k0, dm.T());
}

Matrix estimate_2sls(const Matrix& J, const Matrix& Y, const InstrumentMatrix& ins)
{
    const Matrix& G = ins.G;
    require(J.rows() == Y.rows() && G.rows() == J.rows(), "estimate_2sls: row counts differ");
    if (G.cols() < J.cols())
        throw NumericalError("estimate_2sls: fewer instruments than regressors");
    // first stage: project J onto col(G)
    Eigen::ColPivHouseholderQR<Matrix> qr(G);
    qr.setThreshold(1e-10);
    const Matrix Q = qr.householderQ() * Matrix::Identity(G.rows(), qr.rank());
    const Matrix Jhat = Q * (Q.transpose() * J);
    Eigen::ColPivHouseholderQR<Matrix> q2(Jhat);
    q2.setThreshold(1e-10);
    if (q2.rank() < J.cols()) throw NumericalError("instruments insufficiently correlated with regressors");
    return q2.solve(Y).transpose();
}

static Matrix regress(const Matrix& J, const Matrix& Y, EstimationMethod method, const InstrumentMatrix* G)
{
    switch (method) {
    case EstimationMethod::LS: return estimate_ls(J, Y);
    case EstimationMethod::TLS: return estimate_tls(J, Y);
    case EstimationMethod::IV2SLS:
        if (!G) throw DimensionError("IV estimation requires an instrument matrix");
        return estimate_2sls(J, Y, *G);
    }
    throw DimensionError("unknown estimation method");
}

EstimatedModel estimate_dynamics(const DataMatrices& dm, EstimationMethod method, const InstrumentMatrix* G)
{
    const Matrix beta = regress(dm.P.transpose(), dm.X1.transpose(), method, G);
    EstimatedModel est;
    est.method = method;
    est.B_hat = beta.leftCols(dm.m());
    est.A_hat = beta.rightCols(dm.r);
    return est;
}

Matrix estimate_C(const DataMatrices& dm, EstimationMethod method, const InstrumentMatrix* G)
{
    return regress(dm.X0.transpose(), dm.Y0.transpose(), method, G);
}

EstimatedModel estimate_model(const DataMatrices& dm, EstimationMethod method, const InstrumentMatrix* G)
{
    EstimatedModel est = estimate_dynamics(dm, method, G);
    est.C_hat = estimate_C(dm, method, G);
    return est;
}

static Matrix centered(const Matrix& x)
{
    return x.colwise() - x.rowwise().mean();
}

NoiseEstimate estimate_noise(const DataMatrices& dm, const EstimatedModel& model)
{
    const Index T = dm.T(), p = dm.p(), r = dm.r;
    require_shape(model.A_hat, r, r, "estimate_noise: A_hat");
    require_shape(model.B_hat, r, dm.m(), "estimate_noise: B_hat");
    require_shape(model.C_hat, p, r, "estimate_noise: C_hat");
    if (T < p + 2) throw DimensionError("estimate_noise: T too small for the shifted noise regression");

    NoiseEstimate ne;
    ne.Xi_hat = dm.X1 - model.BA() * dm.P;
    ne.Z_hat = dm.Y0 - model.C_hat * dm.X0;
    const Matrix zc = centered(ne.Z_hat), xc = centered(ne.Xi_hat);
    ne.Sigma_zeta_hat = symmetrize(Matrix(zc * zc.transpose() / static_cast<double>(T)));
    ne.Sigma_xi_hat = symmetrize(Matrix(xc * xc.transpose() / static_cast<double>(T)));

    const Matrix z_prev = zc.leftCols(T - 1), z_next = zc.rightCols(T - 1);
    const double zscale = ne.Sigma_zeta_hat.trace();
    if (zscale > 1e-300) {
        ne.Psi_hat = estimate_tls(z_prev.transpose(), z_next.transpose());
        ne.psi_radius_raw = spectral_radius(ne.Psi_hat);
        if (ne.psi_radius_raw >= 1.0) {
            ne.Psi_hat *= kPsiRadiusCap / ne.psi_radius_raw;
            ne.psi_stabilized = true;
        }
        // D from Xi = D Z (least squares on the realised noise)
        ne.D_hat = estimate_ls(ne.Z_hat.transpose(), ne.Xi_hat.transpose());
        const Matrix eta = z_next - ne.Psi_hat * z_prev;
        if (eta.cols() > 2) {
            const Matrix e0 = centered(eta.leftCols(eta.cols() - 1)), e1 = centered(eta.rightCols(eta.cols() - 1));
            const Vector sd0 = e0.rowwise().norm(), sd1 = e1.rowwise().norm();
            double worst = 0.0;
            for (Index i = 0; i < p; ++i)
                if (sd0(i) > 0 && sd1(i) > 0) worst = std::max(worst, std::abs(e0.row(i).dot(e1.row(i))) / (sd0(i) * sd1(i)));
            ne.eta_autocorrelation = worst;
        }
    } else {
        // exact data: no noise to model
        ne.Psi_hat = Matrix::Zero(p, p);
        ne.D_hat = Matrix::Zero(r, p);
    }
    const double invT = 1.0 / static_cast<double>(T);
    const Matrix Eyx = dm.Y0 * dm.X0.transpose() * invT;
    const Matrix Exx = dm.X0 * dm.X0.transpose() * invT;
    ne.Sigma_chizeta_init = (Eyx - model.C_hat * Exx).transpose();
    return ne;
}

Matrix ar1_innovation_covariance(const Matrix& Psi, const Matrix& Sigma_zeta)
{
    return clip_psd(Sigma_zeta - Psi * Sigma_zeta * Psi.transpose());
}

} // namespace ddcs
