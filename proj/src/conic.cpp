#include "ddcs/conic.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace ddcs {

using Triplet = Eigen::Triplet<double>;
using RowSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// ---------------------------------------------------------------- AffineExpr

AffineExpr::AffineExpr(Index rows, Index cols, Index nvars)
    : constant_(Matrix::Zero(rows, cols)), coeffs_(rows * cols, nvars)
{
}

AffineExpr AffineExpr::constant(const Matrix& c, Index nvars)
{
    AffineExpr e(c.rows(), c.cols(), nvars);
    e.constant_ = c;
    return e;
}

AffineExpr AffineExpr::from_parts(Matrix constant, SparseMatrix coeffs)
{
    require(coeffs.rows() == constant.size(), "AffineExpr::from_parts: coefficient rows must equal rows*cols");
    AffineExpr e;
    e.constant_ = std::move(constant);
    e.coeffs_ = std::move(coeffs);
    return e;
}

Matrix AffineExpr::evaluate(const Vector& x) const
{
    require(x.size() >= nvars(), "AffineExpr::evaluate: decision vector too short");
    Vector v = coeffs_ * x.head(nvars());
    return constant_ + Eigen::Map<const Matrix>(v.data(), rows(), cols());
}

AffineExpr AffineExpr::widened(Index nv) const
{
    if (nv <= nvars()) return *this;
    AffineExpr e = *this;
    e.coeffs_.conservativeResize(rows() * cols(), nv);
    return e;
}

AffineExpr AffineExpr::transpose() const
{
    const Index R = rows(), C = cols();
    AffineExpr e(C, R, nvars());
    e.constant_ = constant_.transpose();
    std::vector<Triplet> t;
    t.reserve(coeffs_.nonZeros());
    for (Index k = 0; k < coeffs_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(coeffs_, k); it; ++it) {
            const Index i = it.row() % R, j = it.row() / R;
            t.emplace_back(j + i * C, it.col(), it.value());
        }
    e.coeffs_.setFromTriplets(t.begin(), t.end());
    return e;
}

AffineExpr AffineExpr::trace() const
{
    require(rows() == cols(), "AffineExpr::trace: square expression required");
    AffineExpr e(1, 1, nvars());
    e.constant_(0, 0) = constant_.trace();
    std::vector<Triplet> t;
    for (Index k = 0; k < coeffs_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(coeffs_, k); it; ++it)
            if (it.row() % rows() == it.row() / rows()) t.emplace_back(0, it.col(), it.value());
    e.coeffs_.setFromTriplets(t.begin(), t.end());
    return e;
}

AffineExpr& AffineExpr::operator+=(const AffineExpr& o)
{
    require(rows() == o.rows() && cols() == o.cols(), "AffineExpr: shape mismatch in addition");
    const Index nv = std::max(nvars(), o.nvars());
    if (nvars() < nv) coeffs_.conservativeResize(rows() * cols(), nv);
    constant_ += o.constant_;
    if (o.nvars() < nv)
        coeffs_ += o.widened(nv).coeffs_;
    else
        coeffs_ += o.coeffs_;
    return *this;
}

AffineExpr& AffineExpr::operator-=(const AffineExpr& o)
{
    AffineExpr neg = o;
    neg *= -1.0;
    return *this += neg;
}

AffineExpr& AffineExpr::operator*=(double a)
{
    constant_ *= a;
    coeffs_ *= a;
    return *this;
}

AffineExpr operator+(AffineExpr a, const Matrix& b)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), "AffineExpr: shape mismatch in addition");
    a.constant_ += b;
    return a;
}

AffineExpr operator-(AffineExpr a, const Matrix& b)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), "AffineExpr: shape mismatch in subtraction");
    a.constant_ -= b;
    return a;
}

AffineExpr operator*(const Matrix& M, const AffineExpr& e)
{
    require(M.cols() == e.rows(), "AffineExpr: inner dimension mismatch in left product");
    const Index a = M.rows(), R = e.rows(), C = e.cols();
    // vec(M X) = (I_C kron M) vec(X)
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(a * R * C));
    for (Index c = 0; c < C; ++c)
        for (Index j = 0; j < R; ++j)
            for (Index i = 0; i < a; ++i)
                if (M(i, j) != 0.0) t.emplace_back(c * a + i, c * R + j, M(i, j));
    SparseMatrix K(a * C, R * C);
    K.setFromTriplets(t.begin(), t.end());
    AffineExpr out(a, C, e.nvars());
    out.constant_ = M * e.constant_;
    out.coeffs_ = K * e.coeffs_;
    return out;
}

AffineExpr operator*(const AffineExpr& e, const Matrix& N)
{
    require(e.cols() == N.rows(), "AffineExpr: inner dimension mismatch in right product");
    const Index R = e.rows(), C = e.cols(), b = N.cols();
    // vec(X N) = (N' kron I_R) vec(X)
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(R * C * b));
    for (Index j = 0; j < b; ++j)
        for (Index c = 0; c < C; ++c)
            if (N(c, j) != 0.0)
                for (Index i = 0; i < R; ++i) t.emplace_back(j * R + i, c * R + i, N(c, j));
    SparseMatrix K(R * b, R * C);
    K.setFromTriplets(t.begin(), t.end());
    AffineExpr out(R, b, e.nvars());
    out.constant_ = e.constant_ * N;
    out.coeffs_ = K * e.coeffs_;
    return out;
}

AffineExpr AffineExpr::blocks(const std::vector<std::vector<AffineExpr>>& grid)
{
    require(!grid.empty() && !grid.front().empty(), "AffineExpr::blocks: empty grid");
    const std::size_t br = grid.size(), bc = grid.front().size();
    std::vector<Index> heights(br), widths(bc);
    Index nv = 0;
    for (std::size_t i = 0; i < br; ++i) {
        require(grid[i].size() == bc, "AffineExpr::blocks: ragged grid");
        heights[i] = grid[i][0].rows();
        for (std::size_t j = 0; j < bc; ++j) {
            require(grid[i][j].rows() == heights[i], "AffineExpr::blocks: row heights differ");
            if (i == 0) widths[j] = grid[0][j].cols();
            require(grid[i][j].cols() == widths[j], "AffineExpr::blocks: column widths differ");
            nv = std::max(nv, grid[i][j].nvars());
        }
    }
    Index R = 0, C = 0;
    for (auto h : heights) R += h;
    for (auto w : widths) C += w;
    AffineExpr out(R, C, nv);
    std::vector<Triplet> t;
    Index r0 = 0;
    for (std::size_t i = 0; i < br; ++i) {
        Index c0 = 0;
        for (std::size_t j = 0; j < bc; ++j) {
            const AffineExpr& e = grid[i][j];
            out.constant_.block(r0, c0, e.rows(), e.cols()) = e.constant_;
            for (Index k = 0; k < e.coeffs_.outerSize(); ++k)
                for (SparseMatrix::InnerIterator it(e.coeffs_, k); it; ++it) {
                    const Index li = it.row() % e.rows(), lj = it.row() / e.rows();
                    t.emplace_back((r0 + li) + (c0 + lj) * R, it.col(), it.value());
                }
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    out.coeffs_.setFromTriplets(t.begin(), t.end());
    return out;
}

// ---------------------------------------------------------------- ConicProgram

static Index packed_index(Index i, Index j)
{
    if (i > j) std::swap(i, j);
    return j * (j + 1) / 2 + i;
}

AffineExpr ConicProgram::add_variable(const std::string& name, Index rows, Index cols, bool symmetric)
{
    require(rows > 0 && cols > 0, "ConicProgram: variable '" + name + "' must be nonempty");
    require(!symmetric || rows == cols, "ConicProgram: symmetric variable '" + name + "' must be square");
    require(!index_.count(name), "ConicProgram: duplicate variable '" + name + "'");
    VariableBlock b;
    b.name = name;
    b.rows = rows;
    b.cols = cols;
    b.symmetric = symmetric;
    b.offset = nvars_;
    b.size = symmetric ? rows * (rows + 1) / 2 : rows * cols;
    nvars_ += b.size;
    index_[name] = blocks_.size();
    blocks_.push_back(b);

    std::vector<Triplet> t;
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i)
            t.emplace_back(i + j * rows, b.offset + (symmetric ? packed_index(i, j) : i + j * rows), 1.0);
    SparseMatrix c(rows * cols, nvars_);
    c.setFromTriplets(t.begin(), t.end());
    return AffineExpr::from_parts(Matrix::Zero(rows, cols), std::move(c));
}

const VariableBlock& ConicProgram::block(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end()) throw DimensionError("ConicProgram: unknown variable '" + name + "'");
    return blocks_[it->second];
}

Matrix ConicProgram::value(const std::string& name, const Vector& x) const
{
    const VariableBlock& b = block(name);
    require(x.size() >= b.offset + b.size, "ConicProgram::value: decision vector too short");
    Matrix out(b.rows, b.cols);
    for (Index j = 0; j < b.cols; ++j)
        for (Index i = 0; i < b.rows; ++i)
            out(i, j) = x(b.offset + (b.symmetric ? packed_index(i, j) : i + j * b.rows));
    return out;
}

void ConicProgram::add_equality(const AffineExpr& lhs, const AffineExpr& rhs, const std::string& label,
                                bool upper_only)
{
    require(lhs.rows() == rhs.rows() && lhs.cols() == rhs.cols(),
            "ConicProgram: equality '" + label + "' has mismatched sides");
    require(!upper_only || lhs.rows() == lhs.cols(), "ConicProgram: upper-triangle equality must be square");
    const AffineExpr diff = (lhs - rhs).widened(nvars_);
    const RowSparse rows = diff.coeffs();
    const Index R = diff.rows(), C = diff.cols();
    Index added = 0;
    for (Index j = 0; j < C; ++j)
        for (Index i = 0; i < R; ++i) {
            if (upper_only && i > j) continue;
            const Index e = i + j * R;
            const double rhs_val = -diff.constant_part()(i, j);
            bool any = false;
            for (RowSparse::InnerIterator it(rows, e); it; ++it)
                if (it.value() != 0.0) {
                    eq_triplets_.emplace_back(eq_rows_ + added, it.col(), it.value());
                    any = true;
                }
            if (!any && rhs_val == 0.0) continue;
            eq_rhs_.conservativeResize(eq_rows_ + added + 1);
            eq_rhs_(eq_rows_ + added) = rhs_val;
            eq_labels_.push_back(label);
            ++added;
        }
    eq_rows_ += added;
}

void ConicProgram::add_equality(const AffineExpr& lhs, const Matrix& rhs, const std::string& label, bool upper_only)
{
    add_equality(lhs, AffineExpr::constant(rhs, lhs.nvars()), label, upper_only);
}

void ConicProgram::add_psd(const AffineExpr& expr, const std::string& label)
{
    require(expr.rows() == expr.cols() && expr.rows() > 0, "ConicProgram: PSD constraint '" + label + "' must be square");
    psd_.push_back({label, expr});
}

void ConicProgram::set_objective(const AffineExpr& scalar)
{
    require(scalar.rows() == 1 && scalar.cols() == 1, "ConicProgram: objective must be scalar");
    obj_ = scalar.coeffs();
    obj_const_ = scalar.constant_part()(0, 0);
}

SparseMatrix ConicProgram::equality_matrix() const
{
    SparseMatrix A(eq_rows_, nvars_);
    A.setFromTriplets(eq_triplets_.begin(), eq_triplets_.end());
    return A;
}

Vector ConicProgram::objective() const
{
    Vector c = Vector::Zero(nvars_);
    for (Index k = 0; k < obj_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(obj_, k); it; ++it) c(it.col()) += it.value();
    return c;
}

std::string to_string(SolverStatus s)
{
    switch (s) {
    case SolverStatus::optimal: return "optimal";
    case SolverStatus::near_optimal: return "near_optimal";
    case SolverStatus::infeasible: return "infeasible";
    case SolverStatus::unbounded: return "unbounded";
    case SolverStatus::numerical_trouble: return "numerical_trouble";
    }
    return "?";
}

// ---------------------------------------------------------------- interior point solver
//
// Equalities are eliminated with a nullspace basis, leaving
//   min c'x  s.t.  G x + s = h,  s in a product of PSD cones (svec coordinates),
// which is solved by a homogeneous self-dual embedding with Nesterov-Todd scaling and a
// Mehrotra predictor-corrector step.

namespace {

const double kSqrt2 = std::sqrt(2.0);

Index svec_size(Index d) { return d * (d + 1) / 2; }

void svec_into(const Matrix& S, double* out)
{
    const Index d = S.rows();
    Index k = 0;
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i <= j; ++i) out[k++] = i == j ? S(i, j) : kSqrt2 * S(i, j);
}

Matrix smat(const double* v, Index d)
{
    Matrix S(d, d);
    Index k = 0;
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i <= j; ++i) {
            const double val = i == j ? v[k] : v[k] / kSqrt2;
            S(i, j) = val;
            S(j, i) = val;
            ++k;
        }
    return S;
}

struct ConeBlock {
    Index dim = 0;
    Index off = 0; // offset into svec vectors
    Matrix Gfull;  // dim^2 x nz, columns are vec of symmetric matrices
    // NT scaling
    Matrix R, Rinv;
    Vector lambda;
};

struct Embedding {
    std::vector<ConeBlock> cones;
    Matrix G;   // S x nz (svec rows)
    Vector h;   // S
    Vector c;   // nz
    Index S = 0;
    Index degree = 0;

    Matrix block(const Vector& v, std::size_t j) const { return smat(v.data() + cones[j].off, cones[j].dim); }
    void put(Vector& v, std::size_t j, const Matrix& M) const { svec_into(M, v.data() + cones[j].off); }
};

// Largest step a with L + a M PSD, L = diag(lambda).
double max_step(const Vector& lambda, const Matrix& M)
{
    const Vector isq = lambda.cwiseSqrt().cwiseInverse();
    const Matrix scaled = isq.asDiagonal() * M * isq.asDiagonal();
    const double mn = min_eigenvalue(scaled);
    return mn < 0 ? -1.0 / mn : std::numeric_limits<double>::infinity();
}

bool chol_factor(const Matrix& S, Matrix& L)
{
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) return false;
    L = llt.matrixL();
    return L.diagonal().minCoeff() > 0;
}

// Shift every cone block of v by (1 + t) I when v is not strictly interior.
void push_interior(const Embedding& E, Vector& v)
{
    double t = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < E.cones.size(); ++j) t = std::max(t, -min_eigenvalue(E.block(v, j)));
    if (t >= -1e-8 * std::max(v.norm(), 1.0)) {
        for (std::size_t j = 0; j < E.cones.size(); ++j) {
            Matrix M = E.block(v, j);
            M.diagonal().array() += 1.0 + t;
            E.put(v, j, M);
        }
    }
}

class KktSolver {
public:
    explicit KktSolver(const Embedding& E) : E_(E) {}

    bool factor(double reg_scale)
    {
        const Index nz = E_.G.cols();
        Ghat_.resize(E_.S, nz);
        for (const auto& cb : E_.cones) {
            const Index d = cb.dim;
            Eigen::Map<const Matrix> gmap(cb.Gfull.data(), d, d * nz);
            Matrix Y = cb.Rinv * gmap;
            for (Index i = 0; i < nz; ++i) Y.middleCols(i * d, d).transposeInPlace();
            const Matrix Z = cb.Rinv * Y;
            for (Index i = 0; i < nz; ++i) {
                double* col = Ghat_.col(i).data() + cb.off;
                Index k = 0;
                for (Index b = 0; b < d; ++b)
                    for (Index a = 0; a <= b; ++a)
                        col[k++] = a == b ? Z(a, i * d + b) : kSqrt2 * 0.5 * (Z(a, i * d + b) + Z(b, i * d + a));
            }
        }
        H_.setZero(nz, nz);
        H_.selfadjointView<Eigen::Lower>().rankUpdate(Ghat_.transpose());
        qr_ready_ = false;
        const double dmax = std::max(H_.diagonal().maxCoeff(), 1e-300);
        for (double reg = reg_scale; reg < 1e-2; reg *= 100) {
            Matrix Hr = H_;
            Hr.diagonal().array() += reg * dmax;
            llt_.compute(Hr);
            if (llt_.info() == Eigen::Success) return true;
        }
        return false;
    }

    // Solves G'dz = a, G dx - W'W dz = b. Returns dx, dz and W dz.
    void solve(const Vector& a, const Vector& b, Vector& dx, Vector& dz, Vector& wdz)
    {
        Vector bhat(E_.S);
        for (std::size_t j = 0; j < E_.cones.size(); ++j) {
            const auto& cb = E_.cones[j];
            E_.put(bhat, j, cb.Rinv * E_.block(b, j) * cb.Rinv.transpose());
        }
        // scaled system: Ghat' w = a, Ghat dx - w = bhat
        const double size = 1.0 + a.norm() + bhat.norm();
        auto refine = [&](bool qr) {
            const Vector ra = a - Ghat_.transpose() * wdz;
            const Vector rb = bhat - Ghat_ * dx + wdz;
            Vector cx, cw;
            qr ? solve_qr(ra, rb, cx, cw) : solve_normal(ra, rb, cx, cw);
            dx += cx;
            wdz += cw;
        };
        auto residual = [&] {
            return ((a - Ghat_.transpose() * wdz).norm() + (bhat - Ghat_ * dx + wdz).norm()) / size;
        };
        solve_normal(a, bhat, dx, wdz);
        for (int it = 0; it < 2; ++it) refine(false);
        // the normal equations square the conditioning; fall back to QR when refinement stalls
        if (residual() > 1e-11) {
            if (!qr_ready_) {
                qr_.compute(Ghat_);
                qr_ready_ = true;
            }
            solve_qr(a, bhat, dx, wdz);
            refine(true);
        }
        dz.resize(E_.S);
        for (std::size_t j = 0; j < E_.cones.size(); ++j) {
            const auto& cb = E_.cones[j];
            E_.put(dz, j, cb.Rinv.transpose() * E_.block(wdz, j) * cb.Rinv);
        }
    }

private:
    void solve_normal(const Vector& a, const Vector& bhat, Vector& dx, Vector& w) const
    {
        const Vector rhs = a + Ghat_.transpose() * bhat;
        dx = llt_.solve(rhs);
        w = Ghat_ * dx - bhat;
    }

    void solve_qr(const Vector& a, const Vector& bhat, Vector& dx, Vector& w) const
    {
        const Index n = Ghat_.cols();
        const auto R = qr_.matrixQR().topLeftCorner(n, n).triangularView<Eigen::Upper>();
        const Vector t = R.transpose().solve(a);
        Vector u = qr_.householderQ().transpose() * bhat;
        dx = R.solve(Vector(t + u.head(n)));
        u.head(n) = t;
        u.tail(u.size() - n) *= -1.0;
        w = qr_.householderQ() * u;
    }

    const Embedding& E_;
    Matrix Ghat_, H_;
    Eigen::LLT<Matrix> llt_;
    Eigen::HouseholderQR<Matrix> qr_;
    bool qr_ready_ = false;
};

} // namespace

ConicSolution solve_conic(const ConicProgram& prog, const SolverSettings& st)
{
    ConicSolution sol;
    const Index nv = prog.num_variables();
    require(nv > 0, "solve_conic: program has no variables");
    require(prog.num_psd() > 0, "solve_conic: program has no PSD constraints");

    // equality elimination: x = x0 + Q2 y
    const SparseMatrix Aeq = prog.equality_matrix();
    const Vector& beq = prog.equality_rhs();
    Vector x0 = Vector::Zero(nv);
    Matrix Q2;
    if (Aeq.rows() == 0) {
        Q2 = Matrix::Identity(nv, nv);
    } else {
        const Matrix At = Matrix(Aeq.transpose());
        const Index ne = At.cols();
        bool done = false;
        if (ne <= nv) {
            Eigen::HouseholderQR<Matrix> qr(At);
            const Vector rd = qr.matrixQR().diagonal().head(ne).cwiseAbs();
            if (rd.minCoeff() > 1e-10 * std::max(rd.maxCoeff(), 1.0)) {
                Vector y = Vector::Zero(nv);
                y.head(ne) = qr.matrixQR().topLeftCorner(ne, ne).triangularView<Eigen::Upper>().transpose().solve(beq);
                x0 = qr.householderQ() * y;
                Q2 = Matrix::Identity(nv, nv).rightCols(nv - ne);
                Q2.applyOnTheLeft(qr.householderQ());
                done = true;
            }
        }
        if (!done) {
            Eigen::ColPivHouseholderQR<Matrix> qr(At);
            qr.setThreshold(1e-10);
            const Index k = qr.rank();
            const Vector bp = qr.colsPermutation().transpose() * beq;
            Vector y = Vector::Zero(nv);
            y.head(k) = qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>().transpose().solve(bp.head(k));
            x0 = qr.householderQ() * y;
            Q2 = Matrix::Identity(nv, nv).rightCols(nv - k);
            Q2.applyOnTheLeft(qr.householderQ());
        }
        const double eres = (Aeq * x0 - beq).cwiseAbs().maxCoeff();
        sol.equality_residual = eres;
        if (eres > 1e-8 * (1.0 + beq.cwiseAbs().maxCoeff())) {
            sol.status = SolverStatus::infeasible;
            sol.x = x0;
            std::ostringstream os;
            os << "equality constraints are inconsistent (residual " << eres << ")";
            sol.message = os.str();
            return sol;
        }
    }
    const Index nz = Q2.cols();
    const Vector cx = prog.objective();

    Embedding E;
    E.c = Q2.transpose() * cx;
    const double cconst = cx.dot(x0) + prog.objective_constant();
    for (const auto& pc : prog.psd_constraints()) {
        ConeBlock cb;
        cb.dim = pc.expr.rows();
        cb.off = E.S;
        E.S += svec_size(cb.dim);
        E.degree += cb.dim;
        E.cones.push_back(std::move(cb));
    }
    E.G.resize(E.S, nz);
    E.h.resize(E.S);
    for (std::size_t j = 0; j < E.cones.size(); ++j) {
        auto& cb = E.cones[j];
        const AffineExpr ex = prog.psd_constraints()[j].expr.widened(nv);
        const Index d = cb.dim;
        // symmetric part of the coefficient map
        std::vector<Triplet> t;
        for (Index k = 0; k < ex.coeffs().outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(ex.coeffs(), k); it; ++it) {
                const Index a = it.row() % d, b = it.row() / d;
                t.emplace_back(it.row(), it.col(), 0.5 * it.value());
                t.emplace_back(b + a * d, it.col(), 0.5 * it.value());
            }
        SparseMatrix Cs(d * d, nv);
        Cs.setFromTriplets(t.begin(), t.end());
        cb.Gfull = -(Cs * Q2);
        const Vector f0 = Cs * x0;
        const Matrix H0 = symmetrize(ex.constant_part()) + Eigen::Map<const Matrix>(f0.data(), d, d);
        E.put(E.h, j, H0);
        for (Index i = 0; i < nz; ++i) svec_into(Eigen::Map<const Matrix>(cb.Gfull.col(i).data(), d, d), E.G.col(i).data() + cb.off);
    }
    // equilibrate the free variables to unit column norm
    if (nz > 0) {
        const Vector norms = E.G.colwise().norm().transpose();
        const double top = norms.maxCoeff();
        Vector scale(nz);
        for (Index i = 0; i < nz; ++i) scale(i) = 1.0 / std::max(norms(i), 1e-8 * std::max(top, 1e-300));
        E.G = E.G * scale.asDiagonal();
        for (auto& cb : E.cones) cb.Gfull = cb.Gfull * scale.asDiagonal();
        E.c = E.c.cwiseProduct(scale);
        Q2 = Q2 * scale.asDiagonal();
    }

    auto finish = [&](const Vector& y) {
        sol.x = x0 + Q2 * y;
        sol.objective = cx.dot(sol.x) + prog.objective_constant();
        sol.equality_residual = Aeq.rows() ? (Aeq * sol.x - beq).cwiseAbs().maxCoeff() : 0.0;
        double mn = std::numeric_limits<double>::infinity();
        for (const auto& pc : prog.psd_constraints()) mn = std::min(mn, min_eigenvalue(pc.expr.evaluate(sol.x)));
        sol.min_psd_eigenvalue = mn;
    };

    if (nz == 0) {
        finish(Vector::Zero(0));
        sol.status = sol.min_psd_eigenvalue >= -st.feastol ? SolverStatus::optimal : SolverStatus::infeasible;
        sol.message = "equalities determine the solution";
        return sol;
    }

    const double resx0 = std::max(1.0, E.c.norm()), resz0 = std::max(1.0, E.h.norm());
    KktSolver kkt(E);

    // least-squares starting point
    Vector x(nz), s(E.S), z(E.S);
    {
        for (auto& cb : E.cones) {
            cb.R = Matrix::Identity(cb.dim, cb.dim);
            cb.Rinv = cb.R;
            cb.lambda = Vector::Ones(cb.dim);
        }
        if (!kkt.factor(1e-12)) {
            sol.status = SolverStatus::numerical_trouble;
            sol.message = "initial KKT factorisation failed";
            finish(Vector::Zero(nz));
            return sol;
        }
        Vector dz, wdz;
        kkt.solve(Vector::Zero(nz), E.h, x, dz, wdz); // x = argmin ||Gx - h||
        s = E.h - E.G * x;
        Vector xx;
        kkt.solve(-E.c, Vector::Zero(E.S), xx, z, wdz); // z = -G (G'G)^{-1} c
        push_interior(E, s);
        push_interior(E, z);
    }
    double tau = 1.0, kappa = 1.0;

    // best iterate so far, returned if the run ends without converging
    struct Snapshot {
        Vector x, z;
        double tau = 1, pres = 0, dres = 0, absgap = 0, relgap = 0;
        double score = std::numeric_limits<double>::infinity();
    } best;

    int stalls = 0;
    double pres = 0, dres = 0, relgap = 0, absgap = 0;
    bool converged = false;
    int iter = 0;
    for (; iter <= st.max_iterations; ++iter) {
        const Vector Gx = E.G * x;
        const Vector Gtz = E.G.transpose() * z;
        const Vector rx = Gtz + tau * E.c;
        const Vector rz = Gx + s - tau * E.h;
        const double cx_ = E.c.dot(x), hz = E.h.dot(z);
        const double rt = kappa + cx_ + hz;
        const double gap = s.dot(z);
        const double mu = (gap + tau * kappa) / static_cast<double>(E.degree + 1);
        const double pcost = cx_ / tau, dcost = -hz / tau;
        pres = rz.norm() / tau / resz0;
        dres = rx.norm() / tau / resx0;
        absgap = gap / (tau * tau);
        if (pcost < 0)
            relgap = absgap / -pcost;
        else if (dcost > 0)
            relgap = absgap / dcost;
        else
            relgap = std::numeric_limits<double>::infinity();
        const double pinf = hz < 0 ? Gtz.norm() / resx0 / -hz : std::numeric_limits<double>::infinity();
        const double dinf = cx_ < 0 ? (Gx + s).norm() / resz0 / -cx_ : std::numeric_limits<double>::infinity();
        if (st.verbose)
            std::fprintf(stderr, "%3d  pcost %+.8e  dcost %+.8e  gap %.2e  pres %.2e  dres %.2e  k/t %.2e  pinf %.2e  dinf %.2e  tau %.2e\n",
                         iter, pcost + cconst, dcost + cconst, absgap, pres, dres, kappa / tau, pinf, dinf, tau);

        const double score = std::max({pres, dres, std::min(absgap, relgap)});
        if (score < best.score) best = {x, z, tau, pres, dres, absgap, relgap, score};

        if (pres <= st.feastol && dres <= st.feastol && (absgap <= st.abstol || relgap <= st.reltol)) {
            converged = true;
            sol.status = SolverStatus::optimal;
            break;
        }
        // tau vanishing against kappa means the iterates follow a certificate ray; accept a looser one then
        const bool diverging = tau <= 1e-6 * std::max(1.0, kappa);
        if (pinf <= st.feastol || (diverging && pinf <= st.near_feastol)) {
            sol.status = SolverStatus::infeasible;
            sol.message = "primal infeasibility certificate found";
            for (std::size_t j = 0; j < E.cones.size(); ++j) sol.psd_duals.push_back(E.block(z, j) / -hz);
            finish(x / tau);
            sol.iterations = iter;
            return sol;
        }
        if (dinf <= st.feastol || (diverging && dinf <= st.near_feastol)) {
            sol.status = SolverStatus::unbounded;
            sol.message = "dual infeasibility certificate found";
            finish(x / tau);
            sol.iterations = iter;
            return sol;
        }
        if (iter == st.max_iterations) break;

        // Nesterov-Todd scaling
        bool ok = true;
        for (std::size_t j = 0; j < E.cones.size() && ok; ++j) {
            auto& cb = E.cones[j];
            Matrix Ls, Lz;
            if (!chol_factor(E.block(s, j), Ls) || !chol_factor(E.block(z, j), Lz)) {
                ok = false;
                break;
            }
            Eigen::JacobiSVD<Matrix> svd(Lz.transpose() * Ls, Eigen::ComputeFullU | Eigen::ComputeFullV);
            cb.lambda = svd.singularValues();
            if (cb.lambda.minCoeff() <= 0) {
                ok = false;
                break;
            }
            const Vector isq = cb.lambda.cwiseSqrt().cwiseInverse();
            cb.R = Ls * svd.matrixV() * isq.asDiagonal();
            cb.Rinv = isq.asDiagonal() * svd.matrixU().transpose() * Lz.transpose();
        }
        if (!ok || !kkt.factor(1e-13)) {
            sol.message = "lost positive definiteness of the iterates";
            break;
        }

        Vector x1, z1, wz1;
        kkt.solve(-E.c, E.h, x1, z1, wz1);
        const double denom = E.c.dot(x1) + E.h.dot(z1) - kappa / tau;

        std::vector<Matrix> dsa(E.cones.size()), dza(E.cones.size());
        double dtau_a = 0, dkappa_a = 0, sigma = 0;
        Vector dx, dz, wdz, ds(E.S);
        double dtau = 0, dkappa = 0, alpha = 0;
        for (int phase = 0; phase < 2; ++phase) {
            const double f = phase == 0 ? 1.0 : 1.0 - sigma;
            Vector wvec(E.S);
            std::vector<Matrix> wblk(E.cones.size());
            for (std::size_t j = 0; j < E.cones.size(); ++j) {
                const auto& cb = E.cones[j];
                const Index d = cb.dim;
                Matrix rc = Matrix::Zero(d, d);
                rc.diagonal() = -cb.lambda.array().square();
                if (phase == 1) {
                    rc -= 0.5 * (dsa[j] * dza[j] + dza[j] * dsa[j]);
                    rc.diagonal().array() += sigma * mu;
                }
                Matrix w(d, d);
                for (Index b = 0; b < d; ++b)
                    for (Index a = 0; a < d; ++a) w(a, b) = 2.0 * rc(a, b) / (cb.lambda(a) + cb.lambda(b));
                wblk[j] = w;
                E.put(wvec, j, cb.R * w * cb.R.transpose());
            }
            const double rk = phase == 0 ? -tau * kappa : -tau * kappa - dtau_a * dkappa_a + sigma * mu;
            const Vector a = -f * rx;
            const Vector b = -f * rz - wvec;
            Vector x2, z2, wz2;
            kkt.solve(a, b, x2, z2, wz2);
            const double bt = -f * rt - rk / tau;
            dtau = (bt - E.c.dot(x2) - E.h.dot(z2)) / denom;
            dx = x2 + dtau * x1;
            dz = z2 + dtau * z1;
            wdz = wz2 + dtau * wz1;
            dkappa = (rk - kappa * dtau) / tau;

            double amax = std::numeric_limits<double>::infinity();
            std::vector<Matrix> dst(E.cones.size()), dzt(E.cones.size());
            // slack step straight from the linearised primal residual, which keeps pres from drifting
            ds = -f * rz - E.G * dx + dtau * E.h;
            for (std::size_t j = 0; j < E.cones.size(); ++j) {
                const auto& cb = E.cones[j];
                dzt[j] = E.block(wdz, j);
                dst[j] = symmetrize(Matrix(cb.Rinv * E.block(ds, j) * cb.Rinv.transpose()));
                amax = std::min(amax, max_step(E.cones[j].lambda, dst[j]));
                amax = std::min(amax, max_step(E.cones[j].lambda, dzt[j]));
            }
            if (dtau < 0) amax = std::min(amax, -tau / dtau);
            if (dkappa < 0) amax = std::min(amax, -kappa / dkappa);
            if (phase == 0) {
                const double aa = std::min(1.0, amax);
                sigma = std::pow(1.0 - aa, 3);
                dsa = dst;
                dza = dzt;
                dtau_a = dtau;
                dkappa_a = dkappa;
            } else {
                alpha = std::min(1.0, 0.99 * amax);
            }
        }
        x += alpha * dx;
        s += alpha * ds;
        z += alpha * dz;
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        stalls = alpha < 1e-8 ? stalls + 1 : 0;
        if (stalls >= 3) {
            sol.message = "step length collapsed";
            break;
        }
    }
    if (!converged && best.score < std::numeric_limits<double>::infinity()) {
        x = best.x;
        z = best.z;
        tau = best.tau;
        pres = best.pres;
        dres = best.dres;
        absgap = best.absgap;
        relgap = best.relgap;
    }
    sol.iterations = iter;
    sol.primal_residual = pres;
    sol.dual_residual = dres;
    sol.gap = absgap;
    sol.relative_gap = relgap;
    if (!converged) {
        const bool near = pres <= st.near_feastol && dres <= st.near_feastol &&
                          (relgap <= st.near_reltol || absgap <= st.near_feastol);
        sol.status = near ? SolverStatus::near_optimal : SolverStatus::numerical_trouble;
        if (sol.message.empty()) sol.message = "iteration limit reached";
    }
    for (std::size_t j = 0; j < E.cones.size(); ++j) sol.psd_duals.push_back(E.block(z, j) / tau);
    finish(x / tau);
    return sol;
}

} // namespace ddcs
