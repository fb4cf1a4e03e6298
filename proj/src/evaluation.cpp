#include "ddcs/evaluation.hpp"

#include "ddcs/random.hpp"
#include "ddcs/representation.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <thread>

namespace ddcs {

double chi2_2dof_quantile(double confidence)
{
    require(confidence > 0 && confidence < 1, "confidence must lie in (0, 1)");
    return -2.0 * std::log(1.0 - confidence);
}

EllipseParams covariance_ellipse(const Matrix& Sigma, double confidence)
{
    require_shape(Sigma, 2, 2, "covariance_ellipse: Sigma");
    if (symmetry_error(Sigma) > 1e-9) throw DimensionError("covariance_ellipse: Sigma is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(Sigma));
    if (es.eigenvalues()(0) < -1e-12 * std::max(1.0, es.eigenvalues()(1)))
        throw DimensionError("covariance_ellipse: Sigma is not PSD");
    const double q = chi2_2dof_quantile(confidence);
    EllipseParams e;
    e.center = Vector::Zero(2);
    e.major = std::sqrt(q * std::max(0.0, es.eigenvalues()(1)));
    e.minor = std::sqrt(q * std::max(0.0, es.eigenvalues()(0)));
    Vector v = es.eigenvectors().col(1);
    double ang = std::atan2(v(1), v(0));
    if (ang <= -std::numbers::pi / 2) ang += std::numbers::pi;
    if (ang > std::numbers::pi / 2) ang -= std::numbers::pi;
    e.angle = ang;
    return e;
}

namespace {

constexpr Index kLeaf = 8;

Vector pairwise_sum(const Matrix& s, Index lo, Index hi)
{
    if (hi - lo <= kLeaf) {
        Vector acc = Vector::Zero(s.rows());
        for (Index j = lo; j < hi; ++j) acc += s.col(j);
        return acc;
    }
    const Index mid = lo + (hi - lo) / 2;
    return pairwise_sum(s, lo, mid) + pairwise_sum(s, mid, hi);
}

Matrix pairwise_outer(const Matrix& c, Index lo, Index hi)
{
    if (hi - lo <= kLeaf) {
        Matrix acc = Matrix::Zero(c.rows(), c.rows());
        for (Index j = lo; j < hi; ++j) acc += c.col(j) * c.col(j).transpose();
        return acc;
    }
    const Index mid = lo + (hi - lo) / 2;
    return pairwise_outer(c, lo, mid) + pairwise_outer(c, mid, hi);
}

} // namespace

Vector pairwise_mean(const Matrix& samples)
{
    require(samples.cols() >= 1, "pairwise_mean: no samples");
    return pairwise_sum(samples, 0, samples.cols()) / static_cast<double>(samples.cols());
}

Matrix pairwise_covariance(const Matrix& samples)
{
    require(samples.cols() >= 2, "pairwise_covariance: need at least two samples");
    const Matrix c = samples.colwise() - pairwise_mean(samples);
    return symmetrize(Matrix(pairwise_outer(c, 0, c.cols()) / static_cast<double>(samples.cols() - 1)));
}

template <typename Fn>
static void parallel_for(Index count, int jobs, Fn&& fn)
{
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
    if (workers == 1) {
        for (Index i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (Index i = w; i < count; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

EvaluationReport run_closed_loop(const ClosedLoopSetup& setup, const ControlLaw& law, Index M, std::uint64_t seed,
                                 int jobs)
{
    require(setup.system && setup.sampler, "run_closed_loop: system and sampler are required");
    require(M >= 2, "run_closed_loop: need at least two rollouts");
    const GroundTruthSystem& sys = *setup.system;
    const Index n = sys.n(), m = sys.m(), p = sys.p();
    const int ell = setup.sampler->ell();
    const Index N = law.horizon();
    const Index r = setup.L.rows();
    require(setup.L.cols() == ell * (m + p), "run_closed_loop: L must have l(m+p) columns");
    law.validate(r, m);
    require_shape(setup.mu, r, N + 1, "run_closed_loop: mu");
    const bool has_nu = !law.Sigma_nu.empty();

    const Matrix fw = psd_factor(sys.Sigma_w), fq = psd_factor(sys.Sigma_q);
    MatrixSeq nu_factor;
    for (const auto& s : law.Sigma_nu) nu_factor.push_back(psd_factor(s));

    // samples[k] holds one column per rollout
    MatrixSeq ys(N + 1, Matrix(p, M)), xs(N + 1, Matrix(n, M)), chis(N + 1, Matrix(r, M));

    parallel_for(M, jobs, [&](Index i) {
        const std::uint64_t si = derive_seed(seed, static_cast<std::uint64_t>(i));
        const CounterRng rng(si);
        const InitialHistory hist = setup.sampler->sample(si);
        Matrix uw = hist.window.inputs, yw = hist.window.outputs;
        Vector x = hist.x0;
        for (Index k = 0; k <= N; ++k) {
            const auto kk = static_cast<std::uint64_t>(k);
            const Vector y = sys.C * x + rng.gaussian(kk, channel::measurement, fq);
            const Vector chi = setup.L * stack_history(uw, yw);
            ys[k].col(i) = y;
            xs[k].col(i) = x;
            chis[k].col(i) = chi;
            if (k == N) break;
            Vector u = law.K[k] * (chi - setup.mu.col(k));
            if (law.v.cols() > 0) u += law.v.col(k);
            if (has_nu) u += rng.gaussian(kk, channel::auxiliary, nu_factor[k]);
            x = sys.A * x + sys.B * u + rng.gaussian(kk, channel::process, fw);
            if (ell > 1) {
                uw.leftCols(ell - 1) = uw.rightCols(ell - 1).eval();
                yw.leftCols(ell - 1) = yw.rightCols(ell - 1).eval();
            }
            uw.col(ell - 1) = u;
            yw.col(ell - 1) = y;
        }
    });

    EvaluationReport rep;
    rep.rollout_count = M;
    rep.confidence = setup.confidence;
    rep.output_means.resize(p, N + 1);
    rep.state_means.resize(n, N + 1);
    rep.chi_means.resize(r, N + 1);
    for (Index k = 0; k <= N; ++k) {
        rep.output_means.col(k) = pairwise_mean(ys[k]);
        rep.output_covs.push_back(pairwise_covariance(ys[k]));
        rep.state_means.col(k) = pairwise_mean(xs[k]);
        rep.state_covs.push_back(pairwise_covariance(xs[k]));
        rep.chi_means.col(k) = pairwise_mean(chis[k]);
        rep.chi_covs.push_back(pairwise_covariance(chis[k]));
        if (p == 2) {
            EllipseParams e = covariance_ellipse(rep.output_covs.back(), setup.confidence);
            e.center = rep.output_means.col(k);
            rep.ellipses.push_back(e);
        }
    }
    rep.empirical_terminal_cov = rep.output_covs.back();
    rep.terminal_lambda_max = max_eigenvalue(rep.empirical_terminal_cov);
    if (setup.mu_y_final.size() == p) rep.terminal_mean_error = (rep.output_means.col(N) - setup.mu_y_final).norm();
    if (setup.Sigma_y_final.rows() == p && setup.Sigma_y_final.cols() == p) {
        const double tgt = max_eigenvalue(setup.Sigma_y_final);
        rep.lambda_max_ratio = tgt > 0 ? rep.terminal_lambda_max / tgt : std::numeric_limits<double>::infinity();
        rep.frobenius_distance = (rep.empirical_terminal_cov - setup.Sigma_y_final).norm();
    }
    return rep;
}

InitialMoments measure_initial_moments(const GroundTruthSystem& sys, const InitialHistorySampler& sampler, Index M,
                                       std::uint64_t seed)
{
    require(M >= 2, "measure_initial_moments: need at least two rollouts");
    const Matrix fq = psd_factor(sys.Sigma_q);
    Matrix ys(sys.p(), M);
    for (Index i = 0; i < M; ++i) {
        const std::uint64_t si = derive_seed(seed, static_cast<std::uint64_t>(i));
        const InitialHistory hist = sampler.sample(si);
        ys.col(i) = sys.C * hist.x0 + CounterRng(si).gaussian(0, channel::measurement, fq);
    }
    return {pairwise_mean(ys), pairwise_covariance(ys)};
}

double model_error(const EstimatedModel& est, const Matrix& truth_BA)
{
    const Matrix ba = est.BA();
    require(ba.rows() == truth_BA.rows() && ba.cols() == truth_BA.cols(), "model_error: shape mismatch");
    return (truth_BA - ba).norm();
}

} // namespace ddcs
