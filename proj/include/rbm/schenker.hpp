#pragma once

// Resolvent decomposition of the corner block G(1,N) = (H - E)^{-1}(1,N):
//
//   D_1 = A_1 - E,   D_{j+1} = A_{j+1} - E - B_j^T D_j^{-1} B_j,
//   G(1,N) = (-1)^{N-1} D_1^{-1} B_1 D_2^{-1} ... B_{N-1} D_N^{-1},
//
// and the backward sweep producing unit directions v_j and log-increments
// alpha_j with sum_j alpha_j = log ||G(1,N) w||. The sweep normalizes at every
// step, so the raw product is never formed.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "rbm/band_model.hpp"
#include "rbm/errors.hpp"
#include "rbm/linalg.hpp"

namespace rbm {

struct DSequence {
    std::vector<Matrix> blocks;
    std::vector<GuardedLu> lu;
    double max_condition = 1.0;
    bool censored = false;
};

struct Directions {
    std::vector<Vector> v_dirs;  // v_1 ... v_N, v_N = w
    std::vector<double> alphas;  // alpha_1 ... alpha_N
};

struct SchenkerChain {
    std::vector<Matrix> d_blocks;
    std::vector<Vector> v_dirs;
    std::vector<double> alphas;
    int sign = 1;
    bool censored = false;
    double max_condition = 1.0;

    [[nodiscard]] double log_norm() const {
        double s = 0.0;
        for (const double a : alphas) s += a;
        return s;
    }
};

/// D_1 .. D_N. Stops early and flags the sequence censored when a D_j is
/// singular or its condition estimate exceeds `guard`.
inline DSequence d_recursion(const BlockTridiagonal& h, double energy, double guard = kConditionGuard) {
    h.validate();
    const int w = h.block_size();
    const Matrix shift = energy * Matrix::Identity(w, w);
    DSequence out;
    out.blocks.reserve(h.a_blocks.size());
    out.lu.reserve(h.a_blocks.size());
    Matrix d = h.a_blocks[0] - shift;
    for (std::size_t j = 0;; ++j) {
        try {
            out.lu.emplace_back(d, guard);
        } catch (const SingularError&) {
            out.censored = true;
            out.max_condition = std::numeric_limits<double>::infinity();
            return out;
        }
        out.blocks.push_back(d);
        out.max_condition = std::max(out.max_condition, out.lu.back().condition());
        if (out.lu.back().censored()) {
            out.censored = true;
            return out;
        }
        if (j + 1 == h.a_blocks.size()) break;
        const Matrix& b = h.b_blocks[j];
        d = h.a_blocks[j + 1] - shift - b.transpose() * out.lu.back().solve(b);
        d = 0.5 * (d + d.transpose());
    }
    return out;
}

/// Backward sweep over the first `length` blocks (all when length = 0), using
/// the factorized D_j. The prefix used must be uncensored.
inline Directions backward_directions(const DSequence& d, std::span<const Matrix> b_blocks, const Vector& w,
                                      std::size_t length = 0) {
    const std::size_t n = length == 0 ? d.lu.size() : length;
    if (n == 0 || n > d.lu.size() || b_blocks.size() + 1 < n) throw DimensionError("backward_directions: bad length");
    for (std::size_t j = 0; j < n; ++j) {
        if (d.lu[j].censored()) throw ContractError("backward_directions: censored D block in prefix");
    }
    if (std::abs(w.norm() - 1.0) > 1e-12) throw ContractError("backward_directions: w must be a unit vector");
    Directions out;
    out.v_dirs.resize(n);
    out.alphas.resize(n);
    out.v_dirs[n - 1] = w;
    Vector t = d.lu[n - 1].solve(w);
    out.alphas[n - 1] = std::log(t.norm());
    for (std::size_t j = n - 1; j-- > 0;) {
        out.v_dirs[j] = t / t.norm();
        t = d.lu[j].solve(b_blocks[j] * out.v_dirs[j]);
        out.alphas[j] = std::log(t.norm());
    }
    return out;
}

/// Length of the longest uncensored prefix of a D sequence.
inline std::size_t valid_prefix(const DSequence& d) {
    std::size_t n = 0;
    while (n < d.lu.size() && !d.lu[n].censored()) ++n;
    return n;
}

/// Same sweep starting from explicit D blocks.
inline Directions backward_directions(std::span<const Matrix> d_blocks, std::span<const Matrix> b_blocks,
                                      const Vector& w, double guard = kConditionGuard) {
    DSequence d;
    for (const auto& block : d_blocks) {
        d.lu.emplace_back(block, guard);
        d.censored = d.censored || d.lu.back().censored();
    }
    d.blocks.assign(d_blocks.begin(), d_blocks.end());
    return backward_directions(d, b_blocks, w);
}

/// Full chain for H at `energy` and unit test vector w.
inline SchenkerChain schenker_chain(const BlockTridiagonal& h, double energy, const Vector& w,
                                    double guard = kConditionGuard) {
    SchenkerChain chain;
    const DSequence d = d_recursion(h, energy, guard);
    chain.sign = (h.n_blocks() % 2 == 1) ? 1 : -1;
    chain.max_condition = d.max_condition;
    chain.censored = d.censored;
    chain.d_blocks = d.blocks;
    if (d.censored) return chain;
    auto dirs = backward_directions(d, h.b_blocks, w);
    chain.v_dirs = std::move(dirs.v_dirs);
    chain.alphas = std::move(dirs.alphas);
    return chain;
}

inline Vector unit_vector(int w, int index = 0) {
    Vector e = Vector::Zero(w);
    e(index) = 1.0;
    return e;
}

/// (-1)^{N-1} D_1^{-1} B_1 D_2^{-1} ... B_{N-1} D_N^{-1}.
inline Matrix corner_block_product(const SchenkerChain& chain, std::span<const Matrix> b_blocks) {
    if (chain.censored) throw ContractError("corner_block_product: censored chain");
    const std::size_t n = chain.d_blocks.size();
    if (n == 0 || b_blocks.size() + 1 != n) throw DimensionError("corner_block_product: block count mismatch");
    GuardedLu last(chain.d_blocks[n - 1], std::numeric_limits<double>::infinity());
    Matrix p = last.inverse();
    for (std::size_t j = n - 1; j-- > 0;) {
        GuardedLu lu(chain.d_blocks[j], std::numeric_limits<double>::infinity());
        p = lu.solve(b_blocks[j] * p);
    }
    return static_cast<double>(chain.sign) * p;
}

struct IdentityReport {
    double product_residual = 0.0;        // ||product - G(1,N)||_F / ||G(1,N)||_F
    double schur_residual = 0.0;          // max_j ||D_j^{-1} - G_[1,j](j,j)||_F / ||D_j^{-1}||_F
    double alpha_sum_residual = 0.0;      // |sum alpha - log ||G(1,N) w|||
    double schur_formula_residual = 0.0;  // 2x2 partition of H - E
    bool censored = false;
    bool within_tolerance = false;

    [[nodiscard]] double max_residual() const {
        return std::max({product_residual, schur_residual, alpha_sum_residual, schur_formula_residual});
    }
};

namespace detail {

inline double relative_frobenius(const Matrix& value, const Matrix& reference) {
    const double diff = (value - reference).norm();
    const double ref = reference.norm();
    return ref > 0.0 ? diff / ref : diff;
}

}  // namespace detail

/// Residuals of every exact identity of the decomposition, each against a dense
/// oracle. `split` (1 <= split < NW) selects the 2x2 partition for the Schur
/// complement formula; 0 picks NW/2.
inline IdentityReport verify_identities(const BlockTridiagonal& h, double energy, const Vector& w,
                                        double tolerance = 1e-8, Eigen::Index split = 0) {
    IdentityReport r;
    const int n = h.n_blocks();
    const Eigen::Index bw = h.block_size();
    const Eigen::Index dim = h.dimension();
    const Matrix shifted = assemble_dense(h) - energy * Matrix::Identity(dim, dim);

    SchenkerChain chain;
    try {
        chain = schenker_chain(h, energy, w);
    } catch (const SingularError&) {
        r.censored = true;
        return r;
    }
    r.censored = chain.censored;
    if (chain.censored) return r;

    try {
        // (i) corner product against the dense inverse.
        const SolveReport full = solve_dense(shifted, Matrix::Identity(dim, dim));
        r.censored = r.censored || full.censored;
        const Matrix corner = full.solution.block(0, (n - 1) * bw, bw, bw);
        r.product_residual = detail::relative_frobenius(corner_block_product(chain, h.b_blocks), corner);

        // (ii) D_j^{-1} against the last diagonal block of (H_[1,j] - E)^{-1}.
        for (int j = 1; j <= n; ++j) {
            const Eigen::Index m = static_cast<Eigen::Index>(j) * bw;
            Matrix rhs = Matrix::Zero(m, bw);
            rhs.bottomRows(bw) = Matrix::Identity(bw, bw);
            const SolveReport sub = solve_dense(shifted.topLeftCorner(m, m), rhs);
            r.censored = r.censored || sub.censored;
            const Matrix d_inv = GuardedLu(chain.d_blocks[static_cast<std::size_t>(j - 1)]).inverse();
            r.schur_residual =
                std::max(r.schur_residual, detail::relative_frobenius(sub.solution.bottomRows(bw), d_inv));
        }

        // (iii) sum of log-increments against a direct block solve of G(1,N) w.
        Matrix rhs = Matrix::Zero(dim, 1);
        rhs.bottomRows(bw) = w;
        const SolveReport direct = block_tridiag_solve(h.a_blocks, h.b_blocks, energy, rhs);
        r.censored = r.censored || direct.censored;
        const double oracle = std::log(direct.solution.topRows(bw).norm());
        const double sum = chain.log_norm();
        r.alpha_sum_residual = (std::isinf(oracle) && oracle == sum) ? 0.0 : std::abs(sum - oracle);

        // (iv) (A^{-1})_11 = (A_11 - A_12 A_22^{-1} A_21)^{-1}.
        if (dim > 1) {
            const Eigen::Index k = split == 0 ? dim / 2 : split;
            if (k < 1 || k >= dim) throw DimensionError("verify_identities: split outside [1, NW)");
            const Eigen::Index rest = dim - k;
            const SolveReport a22 = solve_dense(shifted.bottomRightCorner(rest, rest), shifted.bottomLeftCorner(rest, k));
            const Matrix complement = shifted.topLeftCorner(k, k) - shifted.topRightCorner(k, rest) * a22.solution;
            const SolveReport inv = solve_dense(complement, Matrix::Identity(k, k));
            r.censored = r.censored || a22.censored || inv.censored;
            r.schur_formula_residual = detail::relative_frobenius(inv.solution, full.solution.topLeftCorner(k, k));
        }
    } catch (const SingularError&) {
        r.censored = true;
    }
    r.within_tolerance = r.max_residual() <= tolerance;
    return r;
}

}  // namespace rbm
