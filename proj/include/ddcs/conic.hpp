#pragma once

#include "ddcs/core.hpp"

#include <Eigen/SparseCore>

#include <map>
#include <string>
#include <vector>

namespace ddcs {

using SparseMatrix = Eigen::SparseMatrix<double>;

// Matrix-valued affine function of the decision vector x:
//   value(x) = constant + reshape(coeffs * x), with column-major vectorisation.
class AffineExpr {
public:
    AffineExpr() = default;
    AffineExpr(Index rows, Index cols, Index nvars);

    static AffineExpr constant(const Matrix& c, Index nvars = 0);
    // coeffs must be (rows*cols) x nvars
    static AffineExpr from_parts(Matrix constant, SparseMatrix coeffs);

    Index rows() const { return constant_.rows(); }
    Index cols() const { return constant_.cols(); }
    Index nvars() const { return coeffs_.cols(); }
    const Matrix& constant_part() const { return constant_; }
    const SparseMatrix& coeffs() const { return coeffs_; }

    Matrix evaluate(const Vector& x) const;
    AffineExpr transpose() const;
    AffineExpr trace() const;
    // Coefficients padded with zero columns up to nv variables.
    AffineExpr widened(Index nv) const;

    AffineExpr& operator+=(const AffineExpr& o);
    AffineExpr& operator-=(const AffineExpr& o);
    AffineExpr& operator*=(double a);

    friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
    friend AffineExpr operator-(AffineExpr a, const AffineExpr& b) { return a -= b; }
    friend AffineExpr operator+(AffineExpr a, const Matrix& b);
    friend AffineExpr operator-(AffineExpr a, const Matrix& b);
    friend AffineExpr operator*(double s, AffineExpr a) { return a *= s; }
    friend AffineExpr operator-(AffineExpr a) { return a *= -1.0; }
    friend AffineExpr operator*(const Matrix& M, const AffineExpr& e);
    friend AffineExpr operator*(const AffineExpr& e, const Matrix& N);

    // Block matrix from a grid of expressions (each row of the grid shares a height).
    static AffineExpr blocks(const std::vector<std::vector<AffineExpr>>& grid);

private:
    Matrix constant_;
    SparseMatrix coeffs_;
};

struct VariableBlock {
    std::string name;
    Index rows = 0, cols = 0;
    bool symmetric = false;
    Index offset = 0, size = 0;
};

struct PsdConstraint {
    std::string label;
    AffineExpr expr; // square; the symmetric part is constrained
};

class ConicProgram {
public:
    AffineExpr add_variable(const std::string& name, Index rows, Index cols, bool symmetric = false);
    // lhs == rhs elementwise; upper_only constrains the upper triangle of a square equality.
    void add_equality(const AffineExpr& lhs, const AffineExpr& rhs, const std::string& label, bool upper_only = false);
    void add_equality(const AffineExpr& lhs, const Matrix& rhs, const std::string& label, bool upper_only = false);
    void add_psd(const AffineExpr& expr, const std::string& label);
    void set_objective(const AffineExpr& scalar);

    Index num_variables() const { return nvars_; }
    Index num_equalities() const { return eq_rows_; }
    Index num_psd() const { return static_cast<Index>(psd_.size()); }

    const std::vector<VariableBlock>& blocks() const { return blocks_; }
    const VariableBlock& block(const std::string& name) const;
    bool has_block(const std::string& name) const { return index_.count(name) > 0; }
    Matrix value(const std::string& name, const Vector& x) const;

    SparseMatrix equality_matrix() const;
    const Vector& equality_rhs() const { return eq_rhs_; }
    const std::vector<std::string>& equality_labels() const { return eq_labels_; }
    const std::vector<PsdConstraint>& psd_constraints() const { return psd_; }
    Vector objective() const;
    double objective_constant() const { return obj_const_; }

private:
    Index nvars_ = 0;
    std::vector<VariableBlock> blocks_;
    std::map<std::string, std::size_t> index_;
    std::vector<Eigen::Triplet<double>> eq_triplets_;
    Vector eq_rhs_;
    std::vector<std::string> eq_labels_; // one per equality row
    Index eq_rows_ = 0;
    std::vector<PsdConstraint> psd_;
    SparseMatrix obj_;
    double obj_const_ = 0.0;
};

enum class SolverStatus { optimal, near_optimal, infeasible, unbounded, numerical_trouble };

std::string to_string(SolverStatus s);

struct SolverSettings {
    int max_iterations = 100;
    double feastol = 1e-8;
    double abstol = 1e-8;
    double reltol = 1e-7;
    // Looser thresholds accepted as near_optimal when progress stalls.
    double near_feastol = 1e-5;
    double near_reltol = 1e-4;
    bool verbose = false;
};

struct ConicSolution {
    SolverStatus status = SolverStatus::numerical_trouble;
    Vector x;
    double objective = 0.0;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gap = 0.0;
    double relative_gap = 0.0;
    double equality_residual = 0.0;
    double min_psd_eigenvalue = 0.0;
    std::string message;
    // Dual LMI multipliers (scaled as a certificate when infeasible).
    MatrixSeq psd_duals;
};

ConicSolution solve_conic(const ConicProgram& prog, const SolverSettings& settings = {});

} // namespace ddcs
