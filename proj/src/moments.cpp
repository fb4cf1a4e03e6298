#include "ddcs/moments.hpp"

#include <Eigen/Cholesky>

#include <sstream>

namespace ddcs {

void ControlLaw::validate(Index r, Index m) const
{
    const Index N = horizon();
    require(v.cols() == 0 || v.cols() == N, "control law: feedforward length differs from gain count");
    require(v.cols() == 0 || v.rows() == m, "control law: feedforward dimension");
    require(Sigma_nu.empty() || static_cast<Index>(Sigma_nu.size()) == N, "control law: Sigma_nu length");
    for (const auto& k : K) require_shape(k, m, r, "control law: K_k");
    for (const auto& s : Sigma_nu) require_shape(s, m, m, "control law: Sigma_nu_k");
}

Matrix propagate_mean(const Matrix& A, const Matrix& B, const Vector& mu0, const Matrix& v)
{
    require(A.rows() == A.cols(), "propagate_mean: A must be square");
    require(B.rows() == A.rows() && mu0.size() == A.rows(), "propagate_mean: dimension mismatch");
    require(v.rows() == B.cols() || v.cols() == 0, "propagate_mean: v dimension");
    const Index N = v.cols();
    Matrix mu(A.rows(), N + 1);
    mu.col(0) = mu0;
    for (Index k = 0; k < N; ++k) mu.col(k + 1) = A * mu.col(k) + B * v.col(k);
    return mu;
}

static void check_psd_start(const Matrix& Sigma0, const std::string& who)
{
    if (min_eigenvalue(Sigma0) < -1e-8) throw NumericalError(who + ": Sigma0 is not PSD");
}

MomentSchedule propagate_covariance_model(const Matrix& A, const Matrix& B, const Matrix& D, const Matrix& Psi,
                                          const Matrix& Sigma_zeta, const Matrix& Sigma0,
                                          const Matrix& Sigma_chizeta0, const ControlLaw& law)
{
    const Index r = A.rows(), m = B.cols(), p = Psi.rows();
    require_shape(A, r, r, "propagate_covariance_model: A");
    require_shape(D, r, p, "propagate_covariance_model: D");
    require_shape(Sigma_zeta, p, p, "propagate_covariance_model: Sigma_zeta");
    require_shape(Sigma0, r, r, "propagate_covariance_model: Sigma0");
    require_shape(Sigma_chizeta0, r, p, "propagate_covariance_model: Sigma_chizeta0");
    law.validate(r, m);
    check_psd_start(Sigma0, "propagate_covariance_model");

    MomentSchedule out;
    out.Sigma.push_back(symmetrize(Sigma0));
    out.Sigma_chizeta.push_back(Sigma_chizeta0);
    const Matrix DSzD = D * Sigma_zeta * D.transpose();
    const Matrix DSzPsi = D * Sigma_zeta * Psi.transpose();
    for (Index k = 0; k < law.horizon(); ++k) {
        const Matrix cl = A + B * law.K[k];
        const Matrix& S = out.Sigma.back();
        const Matrix& X = out.Sigma_chizeta.back();
        const Matrix cross = cl * X * D.transpose();
        Matrix next = cl * S * cl.transpose() + cross + cross.transpose() + DSzD;
        if (!law.Sigma_nu.empty()) next += B * law.Sigma_nu[k] * B.transpose();
        out.Sigma.push_back(symmetrize(next));
        out.Sigma_chizeta.push_back(cl * X * Psi.transpose() + DSzPsi);
    }
    return out;
}

DataDrivenPropagator::DataDrivenPropagator(const DataMatrices& dm, const NoiseEstimate& ne)
    : DataDrivenPropagator(dm, ne.D_hat, ne.Z_hat, ne.Psi_hat, ne.Sigma_zeta_hat)
{
}

DataDrivenPropagator::DataDrivenPropagator(const DataMatrices& dm, const Matrix& D_, const Matrix& Z,
                                           const Matrix& Psi_, const Matrix& Sigma_zeta_)
    : D(D_), Psi(Psi_), Sigma_zeta(Sigma_zeta_)
{
    require_shape(D, dm.r, dm.p(), "data-driven propagation: D");
    require_shape(Z, dm.p(), dm.T(), "data-driven propagation: noise realisation");
    M = (dm.X1 - D * Z) * dm.P.transpose();
    Phi_bottom = dm.phi_bottom();
}

MomentSchedule propagate_covariance_datadriven(const DataDrivenPropagator& prop, const MatrixSeq& G_seq,
                                               const Matrix& Sigma0, const Matrix& Sigma_chizeta0)
{
    const Index r = prop.M.rows(), mr = prop.M.cols(), p = prop.Psi.rows();
    require_shape(Sigma0, r, r, "propagate_covariance_datadriven: Sigma0");
    require_shape(Sigma_chizeta0, r, p, "propagate_covariance_datadriven: Sigma_chizeta0");
    check_psd_start(Sigma0, "propagate_covariance_datadriven");
    const Matrix I = Matrix::Identity(r, r);
    MomentSchedule out;
    out.Sigma.push_back(symmetrize(Sigma0));
    out.Sigma_chizeta.push_back(Sigma_chizeta0);
    const Matrix DSzD = prop.D * prop.Sigma_zeta * prop.D.transpose();
    const Matrix DSzPsi = prop.D * prop.Sigma_zeta * prop.Psi.transpose();
    for (std::size_t k = 0; k < G_seq.size(); ++k) {
        const Matrix& G = G_seq[k];
        require_shape(G, mr, r, "propagate_covariance_datadriven: G_k");
        const double viol = (prop.Phi_bottom * G - I).cwiseAbs().maxCoeff();
        const double tol = 1e-6 * std::max(1.0, prop.Phi_bottom.cwiseAbs().maxCoeff() * G.cwiseAbs().maxCoeff());
        if (viol > tol) {
            std::ostringstream os;
            os << "propagate_covariance_datadriven: G_" << k << " violates the identity bottom block (" << viol << ")";
            throw NumericalError(os.str());
        }
        const Matrix cl = prop.M * G;
        const Matrix& S = out.Sigma.back();
        const Matrix& X = out.Sigma_chizeta.back();
        const Matrix cross = cl * X * prop.D.transpose();
        out.Sigma.push_back(symmetrize(Matrix(cl * S * cl.transpose() + cross + cross.transpose() + DSzD)));
        out.Sigma_chizeta.push_back(cl * X * prop.Psi.transpose() + DSzPsi);
    }
    return out;
}

MomentSchedule propagate_covariance_datadriven(const DataMatrices& dm, const NoiseEstimate& ne,
                                               const MatrixSeq& G_seq, const Matrix& Sigma0,
                                               const Matrix& Sigma_chizeta0)
{
    return propagate_covariance_datadriven(DataDrivenPropagator(dm, ne), G_seq, Sigma0, Sigma_chizeta0);
}

Matrix output_covariance(const Matrix& C, const Matrix& Sigma, const Matrix& Sigma_chizeta,
                         const Matrix& Sigma_zeta)
{
    const Index p = C.rows(), r = C.cols();
    require_shape(Sigma, r, r, "output_covariance: Sigma");
    require_shape(Sigma_chizeta, r, p, "output_covariance: Sigma_chizeta");
    require_shape(Sigma_zeta, p, p, "output_covariance: Sigma_zeta");
    const Matrix cs = C * Sigma_chizeta;
    return symmetrize(Matrix(C * Sigma * C.transpose() + cs + cs.transpose() + Sigma_zeta));
}

void attach_output_covariance(MomentSchedule& schedule, const Matrix& C, const Matrix& Sigma_zeta)
{
    require(schedule.Sigma.size() == schedule.Sigma_chizeta.size(), "attach_output_covariance: ragged schedule");
    schedule.Sigma_y.clear();
    for (std::size_t k = 0; k < schedule.Sigma.size(); ++k)
        schedule.Sigma_y.push_back(output_covariance(C, schedule.Sigma[k], schedule.Sigma_chizeta[k], Sigma_zeta));
}

Matrix gain_to_data_parameter(const Matrix& Phi, const Matrix& K)
{
    const Index m = K.rows(), r = K.cols();
    require_shape(Phi, m + r, m + r, "gain_to_data_parameter: Phi");
    Matrix rhs(m + r, r);
    rhs << K, Matrix::Identity(r, r);
    Eigen::LDLT<Matrix> ldlt(Phi);
    if (ldlt.info() != Eigen::Success) throw NumericalError("gain_to_data_parameter: Phi is singular");
    return ldlt.solve(rhs);
}

} // namespace ddcs
