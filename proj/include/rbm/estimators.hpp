#pragma once

// Monte-Carlo estimators: fractional moments of the corner resolvent,
// eigenvector correlators and localization lengths, Wegner tails, Lyapunov
// spectra of transfer-matrix products, and operator-norm tails.
//
// Every sample i draws from streams derived from (seed, tag::sample, W, i), and
// per-sample results are merged in index order, so estimates do not depend on
// the worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "rbm/band_model.hpp"
#include "rbm/distributions.hpp"
#include "rbm/errors.hpp"
#include "rbm/linalg.hpp"
#include "rbm/parallel.hpp"
#include "rbm/random.hpp"
#include "rbm/schenker.hpp"
#include "rbm/statistics.hpp"

namespace rbm {

inline constexpr double kMaxFractionalQ = 0.2;

inline std::uint64_t sample_seed(std::uint64_t seed, int w, std::size_t index) {
    return derive_seed(seed, {tag::sample, static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(index)});
}

inline void require_fractional_q(double q) {
    if (!(q > 0.0 && q <= kMaxFractionalQ)) throw ContractError("q must lie in q ∈ (0, 1/5]");
}

// ---------------------------------------------------------------------------
// fractional moments

/// (1/q) log of the mean of exp(q x) over finite x.
inline double log_power_mean(std::span<const double> log_x, double q) {
    double top = -std::numeric_limits<double>::infinity();
    std::size_t n = 0;
    for (const double v : log_x) {
        if (std::isnan(v)) continue;
        top = std::max(top, q * v);
        ++n;
    }
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(top)) return top / q;
    double s = 0.0;
    for (const double v : log_x) {
        if (!std::isnan(v)) s += std::exp(q * v - top);
    }
    return (top + std::log(s / static_cast<double>(n))) / q;
}

struct FractionalCurve {
    int block_size = 0;
    double q = 0.0;
    std::vector<int> lengths;            // N values
    std::vector<double> log_moment;      // log (E ||G(1,N) e_1||^q)^{1/q}
    std::vector<double> log_moment_err;  // jackknife over sample batches
    std::vector<std::size_t> censored;   // per N
    std::size_t samples = 0;
    DecayFit fit;                        // log_moment against N; slope error from the jackknife
};

/// log ||G(1,N) e_1|| for every N in `lengths` from one sample at the largest N.
/// Entries are NaN where the D prefix is censored.
inline std::vector<double> corner_log_norms(const BandEnsemble& ens, std::span<const int> lengths, std::uint64_t seed) {
    const int n_max = *std::max_element(lengths.begin(), lengths.end());
    const auto h = sample_hamiltonian(ens.with_size(n_max, ens.block_size), seed);
    const auto d = d_recursion(h, ens.energy);
    const std::size_t valid = valid_prefix(d);
    const Vector w = unit_vector(ens.block_size);
    std::vector<double> out;
    out.reserve(lengths.size());
    for (const int n : lengths) {
        if (static_cast<std::size_t>(n) > valid) {
            out.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const auto dirs = backward_directions(d, h.b_blocks, w, static_cast<std::size_t>(n));
        out.push_back(std::accumulate(dirs.alphas.begin(), dirs.alphas.end(), 0.0));
    }
    return out;
}

namespace detail {

inline DecayFit fit_curve(std::span<const int> lengths, std::span<const double> y) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        if (std::isfinite(y[i])) {
            xs.push_back(lengths[i]);
            ys.push_back(y[i]);
        }
    }
    return linear_fit(xs, ys);
}

inline std::vector<double> curve_from_rows(const std::vector<std::vector<double>>& rows, std::size_t columns, double q,
                                           const std::vector<bool>* keep_batch, std::size_t batches) {
    std::vector<double> curve(columns);
    std::vector<double> column;
    for (std::size_t c = 0; c < columns; ++c) {
        column.clear();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (keep_batch && !(*keep_batch)[i * batches / rows.size()]) continue;
            column.push_back(rows[i][c]);
        }
        curve[c] = log_power_mean(column, q);
    }
    return curve;
}

}  // namespace detail

inline FractionalCurve fractional_moment_curve(const BandEnsemble& ens, std::vector<int> lengths, double q,
                                               std::size_t samples, std::uint64_t seed, std::size_t workers = 1,
                                               std::size_t batches = kDefaultBatches) {
    require_fractional_q(q);
    if (lengths.empty()) throw ContractError("fractional_moment_curve: empty N list");
    if (samples < batches) throw ContractError("fractional_moment_curve: fewer samples than jackknife batches");
    for (const int n : lengths) {
        if (n < 1) throw ContractError("fractional_moment_curve: N must be >= 1");
    }
    std::sort(lengths.begin(), lengths.end());
    ens.with_size(lengths.back(), ens.block_size).validate();
    const int w = ens.block_size;
    const auto rows = parallel_map(samples, workers,
                                   [&](std::size_t i) { return corner_log_norms(ens, lengths, sample_seed(seed, w, i)); });

    FractionalCurve out;
    out.block_size = w;
    out.q = q;
    out.lengths = lengths;
    out.samples = samples;
    out.censored.assign(lengths.size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out.censored[c] += std::isnan(row[c]) ? 1 : 0;
    }
    out.log_moment = detail::curve_from_rows(rows, lengths.size(), q, nullptr, batches);
    out.fit = detail::fit_curve(lengths, out.log_moment);

    // delete-one-batch jackknife for the curve and the slope
    std::vector<std::vector<double>> leave_out(batches);
    std::vector<bool> keep(batches, true);
    for (std::size_t b = 0; b < batches; ++b) {
        keep[b] = false;
        leave_out[b] = detail::curve_from_rows(rows, lengths.size(), q, &keep, batches);
        keep[b] = true;
    }
    const double scale = static_cast<double>(batches - 1) / static_cast<double>(batches);
    out.log_moment_err.assign(lengths.size(), 0.0);
    for (std::size_t c = 0; c < lengths.size(); ++c) {
        double mu = 0.0;
        for (const auto& lo : leave_out) mu += lo[c];
        mu /= static_cast<double>(batches);
        double ss = 0.0;
        for (const auto& lo : leave_out) ss += (lo[c] - mu) * (lo[c] - mu);
        out.log_moment_err[c] = std::sqrt(scale * ss);
    }
    std::vector<double> slopes;
    for (const auto& lo : leave_out) slopes.push_back(detail::fit_curve(lengths, lo).slope);
    const double ms = mean_of(slopes);
    double ss = 0.0;
    for (const double s : slopes) ss += (s - ms) * (s - ms);
    out.fit.std_error = std::sqrt(scale * ss);
    return out;
}

/// One curve per W; the N grid for W is multipliers x W.
inline std::vector<FractionalCurve> fractional_moment_scan(const BandEnsemble& ens, std::span<const int> widths,
                                                           std::span<const int> multipliers, double q,
                                                           std::size_t samples, std::uint64_t seed,
                                                           std::size_t workers = 1) {
    require_fractional_q(q);
    std::vector<FractionalCurve> out;
    for (const int w : widths) {
        std::vector<int> lengths;
        for (const int m : multipliers) lengths.push_back(m * w);
        out.push_back(fractional_moment_curve(ens.with_size(1, w), lengths, q, samples, seed, workers));
    }
    return out;
}

// ---------------------------------------------------------------------------
// eigenvector correlator and localization length

inline constexpr Eigen::Index kMaxDenseDimension = 4096;
inline constexpr double kProfileNoiseFloor = 1e-12;

struct Correlator {
    Matrix rho;               // rho(x, y) = sum over |E_j| <= E0 of |psi_j(x)| |psi_j(y)|
    std::size_t in_window = 0;
};

inline Correlator eigenvector_correlator(const BlockTridiagonal& h, double e0) {
    if (h.dimension() > kMaxDenseDimension) {
        throw ContractError("eigenvector_correlator: NW = " + std::to_string(h.dimension()) +
                            " exceeds 4096; use the fractional-moment estimator for long chains");
    }
    const auto eig = sym_eigen(assemble_dense(h));
    std::vector<Eigen::Index> cols;
    for (Eigen::Index k = 0; k < eig.values.size(); ++k) {
        if (std::abs(eig.values(k)) <= e0) cols.push_back(k);
    }
    Matrix psi(h.dimension(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) psi.col(static_cast<Eigen::Index>(c)) = eig.vectors.col(cols[c]).cwiseAbs();
    Correlator out;
    out.in_window = cols.size();
    out.rho = psi * psi.transpose();
    return out;
}

/// Mean of rho(x, x + d) over x, for d = 0 .. n-1.
inline Vector distance_profile(const Matrix& rho) {
    const Eigen::Index n = rho.rows();
    Vector p = Vector::Zero(n);
    for (Eigen::Index d = 0; d < n; ++d) {
        double s = 0.0;
        for (Eigen::Index x = 0; x + d < n; ++x) s += rho(x, x + d);
        p(d) = s / static_cast<double>(n - d);
    }
    return p;
}

struct LocalizationFit {
    DecayFit fit;
    double length = 0.0;  // -1 / slope
};

/// Least squares on log profile(d) over offset <= d <= max_distance, skipping
/// entries at or below the noise floor.
inline LocalizationFit localization_length_fit(const Vector& profile, Eigen::Index offset, Eigen::Index max_distance,
                                               double noise_floor = kProfileNoiseFloor) {
    std::vector<double> xs, ys;
    const Eigen::Index hi = std::min<Eigen::Index>(max_distance, profile.size() - 1);
    for (Eigen::Index d = std::max<Eigen::Index>(offset, 0); d <= hi; ++d) {
        if (profile(d) > noise_floor) {
            xs.push_back(static_cast<double>(d));
            ys.push_back(std::log(profile(d)));
        }
    }
    if (xs.size() < 3) throw FitError("localization_length_fit: fewer than 3 points above the noise floor");
    LocalizationFit out;
    out.fit = linear_fit(xs, ys);
    if (!(out.fit.slope < 0.0)) throw FitError("localization_length_fit: profile does not decay");
    out.length = -1.0 / out.fit.slope;
    return out;
}

struct LocalizationResult {
    int block_size = 0;
    int n_blocks = 0;
    std::size_t samples = 0;
    Vector profile;  // sample-averaged distance profile
    LocalizationFit fit;
};

/// Averages distance profiles over `samples` Hamiltonians and fits on [2W, NW/2].
inline LocalizationResult localization_scan(const BandEnsemble& ens, std::size_t samples, std::uint64_t seed,
                                            std::size_t workers = 1, double noise_floor = kProfileNoiseFloor) {
    ens.validate();
    if (samples < 1) throw ContractError("localization_scan: need at least one sample");
    const int w = ens.block_size;
    const auto profiles = parallel_map(samples, workers, [&](std::size_t i) {
        const auto h = sample_hamiltonian(ens, sample_seed(seed, w, i));
        return distance_profile(eigenvector_correlator(h, ens.energy_window).rho);
    });
    LocalizationResult out;
    out.block_size = w;
    out.n_blocks = ens.n_blocks;
    out.samples = samples;
    out.profile = Vector::Zero(profiles.front().size());
    for (const auto& p : profiles) out.profile += p;
    out.profile /= static_cast<double>(samples);
    const Eigen::Index n = out.profile.size();
    out.fit = localization_length_fit(out.profile, 2 * w, n / 2, noise_floor);
    return out;
}

// ---------------------------------------------------------------------------
// Wegner tail

struct WegnerTail {
    int block_size = 0;
    std::vector<double> lambdas;
    std::vector<double> tail;  // P(||G(i,j)|| > lambda)
    std::size_t samples = 0;   // uncensored
    std::size_t censored = 0;
    double sup_lambda_tail = 0.0;

    [[nodiscard]] double normalized() const { return sup_lambda_tail / std::pow(block_size, 1.5); }
};

/// ||G(i, j)||_op for 1-based block indices; NaN when the solve is censored.
inline double resolvent_block_norm(const BlockTridiagonal& h, double energy, int i, int j) {
    const Eigen::Index w = h.block_size();
    Matrix rhs = Matrix::Zero(h.dimension(), w);
    rhs.block((j - 1) * w, 0, w, w) = Matrix::Identity(w, w);
    try {
        const auto r = block_tridiag_solve(h.a_blocks, h.b_blocks, energy, rhs);
        if (r.censored) return std::numeric_limits<double>::quiet_NaN();
        return op_norm(r.solution.block((i - 1) * w, 0, w, w));
    } catch (const SingularError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

inline WegnerTail wegner_tail(const BandEnsemble& ens, int i, int j, std::vector<double> lambdas, std::size_t samples,
                              std::uint64_t seed, std::size_t workers = 1) {
    ens.validate();
    if (i < 1 || j < 1 || i > ens.n_blocks || j > ens.n_blocks) throw DimensionError("wegner_tail: block index outside [1, N]");
    if (lambdas.empty()) throw ContractError("wegner_tail: empty lambda grid");
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        if (!(lambdas[k] > 0.0) || (k > 0 && !(lambdas[k] > lambdas[k - 1]))) {
            throw ContractError("wegner_tail: lambda grid must be positive and increasing");
        }
    }
    const int w = ens.block_size;
    const auto norms = parallel_map(samples, workers, [&](std::size_t s) {
        return resolvent_block_norm(sample_hamiltonian(ens, sample_seed(seed, w, s)), ens.energy, i, j);
    });
    WegnerTail out;
    out.block_size = w;
    out.lambdas = lambdas;
    std::vector<double> valid;
    for (const double v : norms) {
        if (std::isnan(v)) {
            ++out.censored;
        } else {
            valid.push_back(v);
        }
    }
    out.samples = valid.size();
    std::sort(valid.begin(), valid.end());
    for (const double lambda : lambdas) {
        const auto above = valid.end() - std::upper_bound(valid.begin(), valid.end(), lambda);
        const double p = valid.empty() ? 0.0 : static_cast<double>(above) / static_cast<double>(valid.size());
        out.tail.push_back(p);
        out.sup_lambda_tail = std::max(out.sup_lambda_tail, lambda * p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lyapunov spectrum

inline constexpr int kDefaultReorthPeriod = 4;
inline constexpr std::size_t kMinLyapunovSteps = 1000;

struct LyapunovSpectrum {
    std::vector<double> exponents;   // descending
    std::vector<double> std_errors;  // batch means
    std::size_t steps = 0;
    std::size_t censored_steps = 0;

    [[nodiscard]] std::size_t size() const { return exponents.size(); }
    [[nodiscard]] double sum() const { return std::accumulate(exponents.begin(), exponents.end(), 0.0); }
    [[nodiscard]] double sum_std_error() const {
        double s = 0.0;
        for (const double e : std_errors) s += e * e;
        return std::sqrt(s);
    }
    /// Smallest nonnegative exponent gamma_W.
    [[nodiscard]] double gamma_min() const { return exponents[size() / 2 - 1]; }
    [[nodiscard]] double gamma_min_std_error() const { return std_errors[size() / 2 - 1]; }
    /// max_k |gamma_k + gamma_{2W+1-k}| / sqrt(se_k^2 + se_{2W+1-k}^2).
    [[nodiscard]] double max_pairing_sigmas() const {
        double worst = 0.0;
        for (std::size_t k = 0; k < size() / 2; ++k) {
            const std::size_t m = size() - 1 - k;
            const double se = std::hypot(std_errors[k], std_errors[m]);
            worst = std::max(worst, std::abs(exponents[k] + exponents[m]) / se);
        }
        return worst;
    }
    [[nodiscard]] double max_pairing() const {
        double worst = 0.0;
        for (std::size_t k = 0; k < size() / 2; ++k) worst = std::max(worst, std::abs(exponents[k] + exponents[size() - 1 - k]));
        return worst;
    }
};

/// QR-accumulation estimator over `steps` matrices from `next()` (each dim x dim),
/// after `warmup` unrecorded steps. Re-orthogonalizes every `period` steps.
template <typename Source>
LyapunovSpectrum lyapunov_from_source(Source&& next, Eigen::Index dim, std::size_t steps, int period,
                                      std::size_t warmup = 0, std::size_t batches = kDefaultBatches) {
    if (period < 1) throw ContractError("lyapunov: reorthogonalization period must be >= 1");
    Matrix q = Matrix::Identity(dim, dim);
    std::vector<std::vector<double>> increments(static_cast<std::size_t>(dim));
    auto advance = [&](std::size_t count, bool record) {
        std::size_t done = 0;
        while (done < count) {
            const std::size_t block = std::min<std::size_t>(static_cast<std::size_t>(period), count - done);
            Matrix m = q;
            for (std::size_t s = 0; s < block; ++s) m = next() * m;
            const auto qr = qr_decompose(m);
            q = qr.q;
            if (record) {
                for (Eigen::Index k = 0; k < dim; ++k) {
                    increments[static_cast<std::size_t>(k)].push_back(std::log(qr.r(k, k)) / static_cast<double>(block));
                }
            }
            done += block;
        }
    };
    advance(warmup, false);
    advance(steps, true);
    LyapunovSpectrum out;
    out.steps = steps;
    std::vector<std::pair<double, double>> pairs;
    for (const auto& inc : increments) {
        const auto est = batch_means(inc, batches);
        pairs.emplace_back(est.estimate, est.std_error);
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [g, se] : pairs) {
        out.exponents.push_back(g);
        out.std_errors.push_back(se);
    }
    return out;
}

/// T = [[B^{-1}(E - A), -B^{-1}], [B^T, 0]], mapping (psi_i, B_{i-1}^T psi_{i-1}) to
/// (psi_{i+1}, B_i^T psi_i). Symplectic, so its exponents pair as +-gamma.
inline Matrix transfer_matrix(const Matrix& a, const Matrix& b, double energy, const GuardedLu& b_lu) {
    const Eigen::Index w = a.rows();
    Matrix t = Matrix::Zero(2 * w, 2 * w);
    Matrix shifted = -a;
    shifted.diagonal().array() += energy;
    t.topLeftCorner(w, w) = b_lu.solve(shifted);
    t.topRightCorner(w, w) = -b_lu.inverse();
    t.bottomLeftCorner(w, w) = b.transpose();
    return t;
}

inline LyapunovSpectrum lyapunov_spectrum(const BandEnsemble& ens, std::size_t steps, std::uint64_t seed,
                                          int period = kDefaultReorthPeriod, std::size_t warmup = 100) {
    ens.validate();
    if (steps < kMinLyapunovSteps) throw ContractError("lyapunov_spectrum: need at least 1e3 steps");
    const int w = ens.block_size;
    Stream rng = make_stream(seed, {tag::transfer, static_cast<std::uint64_t>(w)});
    std::size_t censored = 0;
    auto next = [&]() -> Matrix {
        const Matrix a = sample_symmetric_block(ens.a_laws, w, rng);
        for (;;) {
            const Matrix b = sample_full_block(ens.b_law, w, rng);
            try {
                const GuardedLu lu(b);
                if (!lu.censored()) return transfer_matrix(a, b, ens.energy, lu);
            } catch (const SingularError&) {
            }
            ++censored;
        }
    };
    auto out = lyapunov_from_source(next, 2 * w, steps, period, warmup);
    out.censored_steps = censored;
    return out;
}

// ---------------------------------------------------------------------------
// operator-norm tails

enum class MatrixFill { symmetric, general, score };

inline std::string to_string(MatrixFill f) {
    switch (f) {
        case MatrixFill::symmetric: return "symmetric";
        case MatrixFill::general: return "general";
        default: return "score";
    }
}

/// n x n matrix with unnormalized i.i.d. entries from `law`; `score` fills a
/// symmetric matrix with score(X) / sqrt(M) so the entry variance is at most 1.
inline Matrix fill_matrix(const MRegularLaw& law, int n, MatrixFill fill, Stream& rng) {
    Matrix m(n, n);
    const double inv_sqrt_m = 1.0 / std::sqrt(law.m_bound());
    for (int i = 0; i < n; ++i) {
        for (int k = fill == MatrixFill::general ? 0 : i; k < n; ++k) {
            double x = law.sample(rng);
            if (fill == MatrixFill::score) x = law.score(x) * inv_sqrt_m;
            m(i, k) = x;
            if (fill != MatrixFill::general) m(k, i) = x;
        }
    }
    return m;
}

/// Spectral norm: largest |eigenvalue| for symmetric input, largest singular value otherwise.
inline double spectral_norm(const Matrix& m, MatrixFill fill) {
    if (fill == MatrixFill::general) return Eigen::BDCSVD<Matrix>(m).singularValues()(0);
    return sym_eigenvalues(m).cwiseAbs().maxCoeff();
}

struct BaiYinRow {
    int n = 0;
    MatrixFill fill = MatrixFill::symmetric;
    double probability = 0.0;  // P(||A|| >= (2 + eps) sqrt(n))
    double std_error = 0.0;
    std::size_t samples = 0;
};

inline std::vector<BaiYinRow> bai_yin_tail(const MRegularLaw& law, std::span<const int> sizes, double epsilon,
                                           std::size_t samples, std::uint64_t seed, MatrixFill fill,
                                           std::size_t workers = 1) {
    if (!(epsilon > 0.0)) throw ContractError("bai_yin_tail: epsilon must be positive");
    if (samples < 1) throw ContractError("bai_yin_tail: need at least one sample");
    std::vector<BaiYinRow> rows;
    for (const int n : sizes) {
        if (n < 1) throw ContractError("bai_yin_tail: n must be >= 1");
        const double threshold = (2.0 + epsilon) * std::sqrt(static_cast<double>(n));
        const auto hits = parallel_map(samples, workers, [&](std::size_t s) {
            Stream rng = make_stream(seed, {tag::matrix_fill, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(s)});
            return spectral_norm(fill_matrix(law, n, fill, rng), fill) >= threshold ? 1.0 : 0.0;
        });
        BaiYinRow row;
        row.n = n;
        row.fill = fill;
        row.samples = samples;
        row.probability = mean_of(hits);
        row.std_error = std::sqrt(row.probability * (1.0 - row.probability) / static_cast<double>(samples));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace rbm
