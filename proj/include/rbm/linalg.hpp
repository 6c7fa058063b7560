#pragma once

// Dense and block-tridiagonal real kernels. Storage is Eigen; every routine is a
// pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rbm/errors.hpp"

namespace rbm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Solves whose condition estimate exceeds this are censored.
inline constexpr double kConditionGuard = 1e12;
/// A pivot with magnitude at or below this is treated as exactly zero.
inline constexpr double kPivotFloor = 1e-300;

struct SolveReport {
    Matrix solution;
    double condition_estimate = 1.0;
    bool censored = false;
};

struct QrResult {
    Matrix q;
    Matrix r;
};

struct EigenResult {
    Vector values;   // ascending
    Matrix vectors;  // orthonormal columns
};

/// Partial-pivoted LU with a reciprocal-condition estimate attached.
class GuardedLu {
public:
    GuardedLu() = default;

    explicit GuardedLu(const Matrix& m, double guard = kConditionGuard) : guard_(guard) {
        if (m.rows() != m.cols()) {
            throw DimensionError("GuardedLu: matrix must be square");
        }
        lu_.compute(m);
        const auto& packed = lu_.matrixLU();
        for (Eigen::Index i = 0; i < packed.rows(); ++i) {
            if (!(std::abs(packed(i, i)) > kPivotFloor)) {
                throw SingularError("zero pivot at row " + std::to_string(i));
            }
        }
        const double rcond = lu_.rcond();
        condition_ = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
    }

    [[nodiscard]] double condition() const { return condition_; }
    [[nodiscard]] bool censored() const { return !(condition_ <= guard_); }
    [[nodiscard]] Eigen::Index size() const { return lu_.matrixLU().rows(); }

    template <typename Rhs>
    [[nodiscard]] Matrix solve(const Eigen::MatrixBase<Rhs>& rhs) const {
        return lu_.solve(rhs);
    }

    [[nodiscard]] Matrix inverse() const { return lu_.inverse(); }

private:
    Eigen::PartialPivLU<Matrix> lu_;
    double condition_ = 1.0;
    double guard_ = kConditionGuard;
};

/// Householder QR with the sign convention diag(r) >= 0.
inline QrResult qr_decompose(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw DimensionError("qr_decompose: matrix must be square");
    }
    const Eigen::Index n = m.rows();
    Eigen::HouseholderQR<Matrix> qr(m);
    QrResult out;
    out.q = qr.householderQ() * Matrix::Identity(n, n);
    out.r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (out.r(i, i) < 0.0) {
            out.r.row(i) *= -1.0;
            out.q.col(i) *= -1.0;
        }
    }
    return out;
}

/// max |m - m^T| relative to max(1, max|m|).
inline double asymmetry(const Matrix& m) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

inline void require_symmetric(const Matrix& m, const char* who, double tol = 1e-12) {
    if (m.rows() != m.cols()) {
        throw DimensionError(std::string(who) + ": matrix must be square");
    }
    if (asymmetry(m) > tol) {
        throw ContractError(std::string(who) + ": matrix is not symmetric");
    }
}

inline EigenResult sym_eigen(const Matrix& m) {
    require_symmetric(m, "sym_eigen");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success) {
        throw ContractError("sym_eigen: eigensolver did not converge");
    }
    return {solver.eigenvalues(), solver.eigenvectors()};
}

inline Vector sym_eigenvalues(const Matrix& m) {
    require_symmetric(m, "sym_eigenvalues");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw ContractError("sym_eigenvalues: eigensolver did not converge");
    }
    return solver.eigenvalues();
}

inline SolveReport solve_dense(const Matrix& m, const Matrix& rhs, double guard = kConditionGuard) {
    if (m.rows() != m.cols()) {
        throw DimensionError("solve_dense: matrix must be square");
    }
    if (rhs.rows() != m.rows()) {
        throw DimensionError("solve_dense: rhs row count does not match");
    }
    GuardedLu lu(m, guard);
    return {lu.solve(rhs), lu.condition(), lu.censored()};
}

/// Solves (H - shift) x = rhs for the symmetric block-tridiagonal H with diagonal
/// blocks `a_blocks` and super-diagonal blocks `b_blocks` (sub-diagonal b^T).
/// Block Thomas elimination; the condition estimate is the worst pivot block's.
inline SolveReport block_tridiag_solve(std::span<const Matrix> a_blocks,
                                       std::span<const Matrix> b_blocks, double shift,
                                       const Matrix& rhs, double guard = kConditionGuard) {
    const std::size_t n = a_blocks.size();
    if (n == 0 || b_blocks.size() + 1 != n) {
        throw DimensionError("block_tridiag_solve: need N diagonal and N-1 coupling blocks");
    }
    const Eigen::Index w = a_blocks[0].rows();
    for (const auto& a : a_blocks) {
        if (a.rows() != w || a.cols() != w) throw DimensionError("block_tridiag_solve: bad A block");
    }
    for (const auto& b : b_blocks) {
        if (b.rows() != w || b.cols() != w) throw DimensionError("block_tridiag_solve: bad B block");
    }
    if (rhs.rows() != static_cast<Eigen::Index>(n) * w) {
        throw DimensionError("block_tridiag_solve: rhs length must be N*W");
    }

    const Matrix identity = Matrix::Identity(w, w);
    std::vector<GuardedLu> pivots;
    pivots.reserve(n);
    std::vector<Matrix> y(n);

    auto factor = [&](const Matrix& s, std::size_t block) {
        try {
            pivots.emplace_back(s, guard);
        } catch (const SingularError&) {
            throw SingularError("block_tridiag_solve: singular pivot block " + std::to_string(block),
                                block);
        }
    };

    factor(a_blocks[0] - shift * identity, 0);
    y[0] = rhs.middleRows(0, w);
    for (std::size_t i = 1; i < n; ++i) {
        const Matrix& b = b_blocks[i - 1];
        const Matrix s = a_blocks[i] - shift * identity - b.transpose() * pivots[i - 1].solve(b);
        factor(s, i);
        y[i] = rhs.middleRows(static_cast<Eigen::Index>(i) * w, w) -
               b.transpose() * pivots[i - 1].solve(y[i - 1]);
    }

    SolveReport report;
    report.solution.resize(rhs.rows(), rhs.cols());
    Matrix next = pivots[n - 1].solve(y[n - 1]);
    report.solution.middleRows(static_cast<Eigen::Index>(n - 1) * w, w) = next;
    for (std::size_t i = n - 1; i-- > 0;) {
        next = pivots[i].solve(y[i] - b_blocks[i] * next);
        report.solution.middleRows(static_cast<Eigen::Index>(i) * w, w) = next;
    }
    for (const auto& p : pivots) {
        report.condition_estimate = std::max(report.condition_estimate, p.condition());
    }
    report.censored = !(report.condition_estimate <= guard);
    return report;
}

/// Largest singular value by power iteration on m^T m from a fixed start vector.
inline double op_norm(const Matrix& m, int max_iterations = 20000, double tolerance = 1e-14) {
    const Eigen::Index n = m.cols();
    if (m.size() == 0) return 0.0;
    Vector x(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        x(k) = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(k));
    }
    x.normalize();
    double lambda = 0.0;
    for (int it = 0; it < max_iterations; ++it) {
        const Vector z = m.transpose() * (m * x);
        const double next = x.dot(z);
        const double norm = z.norm();
        if (norm == 0.0) return 0.0;
        x = z / norm;
        if (std::abs(next - lambda) <= tolerance * next) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    return (m * x).norm();
}

}  // namespace rbm
