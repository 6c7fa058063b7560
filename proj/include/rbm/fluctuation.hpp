#pragma once

// Fluctuation machinery for a single coupling block B = B_j conditioned on the
// D sequence: the rank-one map T_{delta,v}(B) = B + delta (Bv) v^T, the
// conditional density
//
//     F_j(B) ~ phi_{1,j+1}(D_{j+1} + E + B^T D_j^{-1} B) phi_{2,j}(B),
//
// its second-difference distortion, a Metropolis sampler for it, and the
// Monte-Carlo / quadrature checks built around them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rbm/band_model.hpp"
#include "rbm/distributions.hpp"
#include "rbm/errors.hpp"
#include "rbm/linalg.hpp"
#include "rbm/random.hpp"
#include "rbm/schenker.hpp"

namespace rbm {

// ---------------------------------------------------------------------------
// rank-one map

struct PerturbationStep {
    double delta = 0.0;
    Vector direction;

    PerturbationStep() = default;
    PerturbationStep(double d, Vector v) : delta(d), direction(std::move(v)) { validate(); }

    /// 2 W^{-1/2}, or 3 W^{-1/2} at W = 4 where 2 W^{-1/2} = 1 makes T_{-delta} singular.
    static double default_delta(int w) {
        if (w < 1) throw ContractError("default_delta: W must be positive");
        return (w == 4 ? 3.0 : 2.0) / std::sqrt(static_cast<double>(w));
    }

    static PerturbationStep default_for(const Vector& v) {
        return {default_delta(static_cast<int>(v.size())), v};
    }

    [[nodiscard]] PerturbationStep negated() const { return {-delta, direction}; }

    void validate() const {
        if (std::abs(direction.norm() - 1.0) > 1e-12) throw ContractError("step: direction must be a unit vector");
        if (!(std::abs(delta) <= 2.0)) throw ContractError("step: |delta| must not exceed 2");
        if (delta == -1.0) throw ContractError("step: delta = -1 gives a singular map");
    }
};

/// B + delta (B v) v^T.
inline Matrix rank_one_map(const Matrix& b, const PerturbationStep& step) {
    const Vector& v = step.direction;
    if (b.cols() != v.size()) throw DimensionError("rank_one_map: B and v differ in size");
    if (std::abs(v.norm() - 1.0) > 1e-12) throw ContractError("rank_one_map: v must be a unit vector");
    return b + step.delta * (b * v) * v.transpose();
}

/// Matrix of the map on column-major vec(B) (W^2 x W^2).
inline Matrix rank_one_map_operator(const PerturbationStep& step) {
    const Eigen::Index w = step.direction.size();
    Matrix op(w * w, w * w);
    Matrix basis = Matrix::Zero(w, w);
    for (Eigen::Index k = 0; k < w * w; ++k) {
        basis(k % w, k / w) = 1.0;
        const Matrix image = rank_one_map(basis, step);
        op.col(k) = Eigen::Map<const Vector>(image.data(), w * w);
        basis(k % w, k / w) = 0.0;
    }
    return op;
}

// ---------------------------------------------------------------------------
// conditional density of B_j

class FluctuationContext {
public:
    FluctuationContext(Matrix d_j, Matrix d_j_plus_1, double energy, EntryLaws a_laws, MRegularLaw b_law,
                       double guard = kConditionGuard)
        : d_j_(std::move(d_j)),
          d_next_(std::move(d_j_plus_1)),
          energy_(energy),
          a_laws_(std::move(a_laws)),
          b_law_(std::move(b_law)) {
        const Eigen::Index w = d_j_.rows();
        if (w < 1 || d_j_.cols() != w || d_next_.rows() != w || d_next_.cols() != w) {
            throw DimensionError("FluctuationContext: D_j and D_{j+1} must be W x W");
        }
        lu_ = GuardedLu(d_j_, guard);
        sqrt_w_ = std::sqrt(static_cast<double>(w));
    }

    /// Context for position j (1-based, j < N) of a sampled Hamiltonian.
    static FluctuationContext at(const BlockTridiagonal& h, const BandEnsemble& ens, const DSequence& d, int j) {
        if (j < 1 || j >= h.n_blocks()) throw DimensionError("FluctuationContext::at: need 1 <= j < N");
        if (static_cast<std::size_t>(j) >= d.blocks.size()) throw ContractError("FluctuationContext::at: D sequence censored");
        return {d.blocks[static_cast<std::size_t>(j - 1)], d.blocks[static_cast<std::size_t>(j)], ens.energy,
                ens.a_laws, ens.b_law};
    }

    [[nodiscard]] int block_size() const { return static_cast<int>(d_j_.rows()); }
    [[nodiscard]] const Matrix& d_j() const { return d_j_; }
    [[nodiscard]] const Matrix& d_j_plus_1() const { return d_next_; }
    [[nodiscard]] double energy() const { return energy_; }
    [[nodiscard]] const EntryLaws& a_laws() const { return a_laws_; }
    [[nodiscard]] const MRegularLaw& b_law() const { return b_law_; }
    [[nodiscard]] bool censored() const { return lu_.censored(); }

    /// D_j^{-1} x.
    [[nodiscard]] Matrix solve(const Matrix& x) const {
        if (censored()) throw SingularError("fluctuation context: D_j solve censored");
        return lu_.solve(x);
    }

    /// A(B) = D_{j+1} + E + B^T D_j^{-1} B, symmetrized.
    [[nodiscard]] Matrix implied_a(const Matrix& b) const {
        Matrix a = d_next_ + b.transpose() * solve(b);
        a.diagonal().array() += energy_;
        return 0.5 * (a + a.transpose());
    }

    [[nodiscard]] double log_phi1(const Matrix& a) const {
        const Eigen::Index w = a.rows();
        double s = 0.0;
        for (Eigen::Index i = 0; i < w; ++i) {
            for (Eigen::Index k = i; k < w; ++k) s += entry_log_density(a_laws_.at(i, k), sqrt_w_, a(i, k));
        }
        return s;
    }

    [[nodiscard]] double log_phi2(const Matrix& b) const {
        double s = 0.0;
        for (Eigen::Index k = 0; k < b.size(); ++k) s += entry_log_density(b_law_, sqrt_w_, b.data()[k]);
        return s;
    }

private:
    Matrix d_j_;
    Matrix d_next_;
    double energy_ = 0.0;
    EntryLaws a_laws_;
    MRegularLaw b_law_;
    GuardedLu lu_;
    double sqrt_w_ = 1.0;
};

/// log F_j(B) + log Z.
inline double conditional_log_density(const Matrix& b, const FluctuationContext& ctx) {
    if (b.rows() != ctx.block_size() || b.cols() != ctx.block_size()) {
        throw DimensionError("conditional_log_density: B must be W x W");
    }
    return ctx.log_phi1(ctx.implied_a(b)) + ctx.log_phi2(b);
}

struct DistortionReport {
    double value = 0.0;        // log F(T_-B) + log F(T_+B) - 2 log F(B)
    double phi1_term = 0.0;
    double phi2_term = 0.0;
    double bv_norm = 0.0;      // ||B v||
    double score_norm = 0.0;   // ||f_{j+1}(A_{j+1}) v||
    double bdb_norm = 0.0;     // ||B^T D_j^{-1} B v||
    double bound = 0.0;        // delta^2 W (sum of the three squares)

    /// |value| / bound, the empirical constant; 0 when both vanish.
    [[nodiscard]] double ratio() const { return bound > 0.0 ? std::abs(value) / bound : 0.0; }
};

inline DistortionReport distortion(const Matrix& b, const PerturbationStep& step, const FluctuationContext& ctx) {
    step.validate();
    const Matrix plus = rank_one_map(b, step);
    const Matrix minus = rank_one_map(b, step.negated());
    const Matrix a0 = ctx.implied_a(b);
    DistortionReport r;
    r.phi1_term = ctx.log_phi1(ctx.implied_a(minus)) + ctx.log_phi1(ctx.implied_a(plus)) - 2.0 * ctx.log_phi1(a0);
    r.phi2_term = ctx.log_phi2(minus) + ctx.log_phi2(plus) - 2.0 * ctx.log_phi2(b);
    r.value = r.phi1_term + r.phi2_term;
    const Vector& v = step.direction;
    const int w = ctx.block_size();
    const Vector bv = b * v;
    r.bv_norm = bv.norm();
    r.score_norm = (score_matrix(a0, ctx.a_laws(), w) * v).norm();
    r.bdb_norm = (b.transpose() * ctx.solve(bv)).norm();
    r.bound = step.delta * step.delta * w *
              (r.bv_norm * r.bv_norm + r.score_norm * r.score_norm + r.bdb_norm * r.bdb_norm);
    return r;
}

// ---------------------------------------------------------------------------
// Metropolis sampler for F_j

inline constexpr double kAcceptLow = 0.2;
inline constexpr double kAcceptHigh = 0.4;
inline constexpr int kTuneWindow = 100;

inline std::size_t default_burn_in(int w) { return 1000 * static_cast<std::size_t>(w) * static_cast<std::size_t>(w); }

class ConditionalSampler {
public:
    ConditionalSampler(FluctuationContext ctx, Stream rng, Matrix start)
        : ctx_(std::move(ctx)), rng_(std::move(rng)), state_(std::move(start)) {
        log_f_ = conditional_log_density(state_, ctx_);
        step_size_ = 0.5 / std::sqrt(static_cast<double>(ctx_.block_size()));
    }

    /// Starts from the zero matrix.
    ConditionalSampler(const FluctuationContext& ctx, Stream rng)
        : ConditionalSampler(ctx, std::move(rng), Matrix::Zero(ctx.block_size(), ctx.block_size())) {}

    /// Runs `steps` tuning steps, adjusting the proposal scale each window of
    /// kTuneWindow steps toward acceptance in [0.2, 0.4], then freezes it.
    void burn_in(std::size_t steps) {
        double factor = 2.0;
        int last_direction = 0;
        std::size_t accepted = 0, in_window = 0;
        for (std::size_t s = 0; s < steps; ++s) {
            accepted += step() ? 1 : 0;
            if (++in_window == kTuneWindow) {
                const double rate = static_cast<double>(accepted) / kTuneWindow;
                int direction = rate < kAcceptLow ? -1 : (rate > kAcceptHigh ? 1 : 0);
                if (direction != 0) {
                    if (last_direction != 0 && direction != last_direction) factor = std::sqrt(factor);
                    step_size_ = direction > 0 ? step_size_ * factor : step_size_ / factor;
                    last_direction = direction;
                }
                accepted = 0;
                in_window = 0;
            }
        }
        proposals_ = accepts_ = 0;
    }

    /// One Metropolis step; returns whether the proposal was accepted.
    bool step() {
        Matrix proposal = state_;
        for (Eigen::Index k = 0; k < proposal.size(); ++k) proposal.data()[k] += step_size_ * standard_normal(rng_);
        const double log_p = conditional_log_density(proposal, ctx_);
        ++proposals_;
        const double log_u = std::log(uniform_open01(rng_));
        if (log_u < log_p - log_f_) {
            state_ = std::move(proposal);
            log_f_ = log_p;
            ++accepts_;
            return true;
        }
        return false;
    }

    void run(std::size_t steps) {
        for (std::size_t s = 0; s < steps; ++s) step();
    }

    [[nodiscard]] const Matrix& state() const { return state_; }
    [[nodiscard]] double log_density() const { return log_f_; }
    [[nodiscard]] double step_size() const { return step_size_; }
    [[nodiscard]] double acceptance_rate() const {
        return proposals_ ? static_cast<double>(accepts_) / static_cast<double>(proposals_) : 0.0;
    }

private:
    FluctuationContext ctx_;
    Stream rng_;
    Matrix state_;
    double log_f_ = 0.0;
    double step_size_ = 1.0;
    std::size_t proposals_ = 0;
    std::size_t accepts_ = 0;
};

/// State after a default-length burn-in followed by `steps` frozen steps.
inline Matrix mcmc_conditional_sample(const FluctuationContext& ctx, std::uint64_t seed, std::size_t steps) {
    const std::size_t burn = default_burn_in(ctx.block_size());
    if (steps < burn) throw ContractError("mcmc_conditional_sample: steps must be at least the burn-in 1e3 W^2");
    ConditionalSampler sampler(ctx, make_stream(seed, {tag::mcmc}));
    sampler.burn_in(burn);
    sampler.run(steps);
    return sampler.state();
}

// ---------------------------------------------------------------------------
// anti-concentration

inline constexpr std::size_t kMinAntiConcentrationSamples = 100;

/// max_a of the weighted mass in [a - width, a + width]; `points` need not be
/// sorted, weights need not be normalized.
inline double anti_concentration_weighted(std::vector<std::pair<double, double>> points, double width) {
    if (points.empty()) throw ContractError("anti_concentration: no samples");
    if (!(width >= 0.0)) throw ContractError("anti_concentration: width must be nonnegative");
    std::sort(points.begin(), points.end());
    double total = 0.0;
    for (const auto& p : points) total += p.second;
    if (!(total > 0.0)) throw ContractError("anti_concentration: total weight must be positive");
    double best = 0.0, window = 0.0;
    std::size_t lo = 0;
    for (std::size_t hi = 0; hi < points.size(); ++hi) {
        window += points[hi].second;
        while (points[hi].first - points[lo].first > 2.0 * width) window -= points[lo++].second;
        best = std::max(best, window);
    }
    return std::min(1.0, best / total);
}

/// max_a of the empirical fraction of samples in [a - width, a + width].
inline double anti_concentration(std::span<const double> samples, double width) {
    if (samples.size() < kMinAntiConcentrationSamples) throw ContractError("anti_concentration: need at least 100 samples");
    if (!(width >= 0.0)) throw ContractError("anti_concentration: width must be nonnegative");
    std::vector<double> xs(samples.begin(), samples.end());
    std::sort(xs.begin(), xs.end());
    std::size_t best = 0, lo = 0;
    for (std::size_t hi = 0; hi < xs.size(); ++hi) {
        while (xs[hi] - xs[lo] > 2.0 * width) ++lo;
        best = std::max(best, hi - lo + 1);
    }
    return static_cast<double>(best) / static_cast<double>(xs.size());
}

/// alpha_j (1-based j) of one full chain with w = e_1; nullopt when censored.
inline std::optional<double> sample_alpha(const BandEnsemble& ens, std::uint64_t seed, int j) {
    if (j < 1 || j > ens.n_blocks) throw DimensionError("sample_alpha: j outside [1, N]");
    const auto h = sample_hamiltonian(ens, seed);
    const auto chain = schenker_chain(h, ens.energy, unit_vector(ens.block_size));
    if (chain.censored) return std::nullopt;
    return chain.alphas[static_cast<std::size_t>(j - 1)];
}

// ---------------------------------------------------------------------------
// abstract Mermin-Wagner toy

/// A 1-D diffeomorphism with its Jacobian.
struct ToyMap {
    std::function<double(double)> map;
    std::function<double(double)> jacobian;
};

inline constexpr double kMwConstant = 0.125;

struct MwToyReport {
    double shift = 0.0;       // guaranteed |g(T(x)) - g(x)|
    double t = 0.0;
    double sup_window = 0.0;  // sup_a P(|g(X) - a| <= shift / 2)
    double p = 0.0;           // P(pullback ratio product >= t)
    double bound = 0.0;       // 1 - c sqrt(t) p
    double margin = 0.0;      // bound - sup_window
    bool holds = false;
};

/// Checks sup_a P(|g(X) - a| <= shift/2) <= 1 - (1/8) sqrt(t) P(r(X) >= t) with
/// r = (T_+^# phi / phi)(T_-^# phi / phi), by midpoint quadrature on [lo, hi].
/// `shift` must satisfy |g(T_pm(x)) - g(x)| >= shift.
inline MwToyReport mw_toy_check(const std::function<double(double)>& density, double lo, double hi,
                                const std::function<double(double)>& g, const ToyMap& plus, const ToyMap& minus,
                                double shift, double t, std::size_t nodes = 200000) {
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("mw_toy_check: t must lie in [0, 1]");
    if (!(hi > lo) || nodes < 2) throw ContractError("mw_toy_check: bad quadrature grid");
    const double h = (hi - lo) / static_cast<double>(nodes);
    std::vector<std::pair<double, double>> weighted;
    weighted.reserve(nodes);
    double total = 0.0, good = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) {
        const double x = lo + (static_cast<double>(k) + 0.5) * h;
        const double phi = density(x);
        if (!(phi > 0.0)) continue;
        const double w = phi * h;
        total += w;
        const double rp = density(plus.map(x)) * std::abs(plus.jacobian(x)) / phi;
        const double rm = density(minus.map(x)) * std::abs(minus.jacobian(x)) / phi;
        if (rp * rm >= t) good += w;
        weighted.emplace_back(g(x), w);
    }
    MwToyReport r;
    r.shift = shift;
    r.t = t;
    r.p = good / total;
    r.sup_window = anti_concentration_weighted(std::move(weighted), 0.5 * shift);
    r.bound = 1.0 - kMwConstant * std::sqrt(t) * r.p;
    r.margin = r.bound - r.sup_window;
    r.holds = r.margin > 0.0;
    return r;
}

/// The instructive instance: X standard gaussian, T_pm(x) = (1 pm delta) x,
/// g = log|x|. The guaranteed shift is log(1 + delta).
inline MwToyReport mw_toy_gaussian(double delta, double t, std::size_t nodes = 200000) {
    if (!(delta >= 0.0 && delta < 1.0)) throw ContractError("mw_toy_gaussian: delta must lie in [0, 1)");
    const auto gaussian = MRegularLaw::gaussian(1.0);
    auto density = [gaussian](double x) { return gaussian.density(x); };
    ToyMap plus{[delta](double x) { return (1.0 + delta) * x; }, [delta](double) { return 1.0 + delta; }};
    ToyMap minus{[delta](double x) { return (1.0 - delta) * x; }, [delta](double) { return 1.0 - delta; }};
    return mw_toy_check(density, -12.0, 12.0, [](double x) { return std::log(std::abs(x)); }, plus, minus,
                        std::log1p(delta), t, nodes);
}

// ---------------------------------------------------------------------------
// Jensen gap

struct JensenGapReport {
    double gap = 0.0;    // log E e^{2X} - 2 log E e^X
    double p = 0.0;      // 1 - sup_a P(|X - a| <= delta)
    double bound = 0.0;  // p delta^2
    double fitted_c = 0.0;
    std::size_t clipped = 0;
};

inline constexpr double kJensenClip = 700.0;

/// Empirical gap, with values clipped to +-kJensenClip/2 so e^{2X} stays finite.
inline JensenGapReport jensen_gap(std::span<const double> samples, double delta) {
    if (samples.empty()) throw ContractError("jensen_gap: no samples");
    JensenGapReport r;
    std::vector<double> xs(samples.begin(), samples.end());
    for (auto& x : xs) {
        const double c = std::clamp(x, -0.5 * kJensenClip, 0.5 * kJensenClip);
        if (c != x) ++r.clipped;
        x = c;
    }
    // log-sum-exp around the maximum
    const double top = *std::max_element(xs.begin(), xs.end());
    double s1 = 0.0, s2 = 0.0;
    for (const double x : xs) {
        s1 += std::exp(x - top);
        s2 += std::exp(2.0 * (x - top));
    }
    const double n = static_cast<double>(xs.size());
    r.gap = std::max(0.0, std::log(s2 / n) - 2.0 * std::log(s1 / n));
    r.p = xs.size() >= kMinAntiConcentrationSamples ? 1.0 - anti_concentration(xs, delta) : 0.0;
    r.bound = r.p * delta * delta;
    r.fitted_c = r.bound > 0.0 ? r.gap / r.bound : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// either-or claim and the X_j statistics

inline constexpr double kNormGuard = 10.0;
inline constexpr double kEitherOrBound = 100.0;

/// ||m||_op <= bound, short-circuited through ||m||_op <= ||m||_F.
inline bool op_norm_at_most(const Matrix& m, double bound) { return m.norm() <= bound || op_norm(m) <= bound; }

struct EitherOrReport {
    std::size_t checked = 0;
    std::size_t unchecked = 0;   // positions failing the norm guard
    std::size_t violations = 0;
    std::size_t first_branch_failures = 0;
    double max_first = 0.0;      // max ||B_j^T D_j^{-1} B_j v_j|| over checked positions
};

namespace detail {

/// ||B_j^T D_j^{-1} B_j v_j||, 1-based j.
inline double bdb_norm(const SchenkerChain& chain, const BlockTridiagonal& h, int j) {
    const auto k = static_cast<std::size_t>(j - 1);
    const Matrix& b = h.b_blocks[k];
    const Vector bv = b * chain.v_dirs[k];
    return (b.transpose() * GuardedLu(chain.d_blocks[k], std::numeric_limits<double>::infinity()).solve(bv)).norm();
}

}  // namespace detail

/// For every j in [1, N-1] with ||A_j||, ||B_j|| <= 10: ||B_j^T D_j^{-1} B_j v_j|| <= 100
/// or ||B_{j-1}^T D_{j-1}^{-1} B_{j-1} v_{j-1}|| <= 100 + |E|. At j = 1 the second
/// quantity is (A_1 - E - D_1) v_0 = 0, so only the first branch can fail.
inline EitherOrReport either_or_check(const SchenkerChain& chain, const BlockTridiagonal& h, double energy) {
    if (chain.censored) throw ContractError("either_or_check: censored chain");
    EitherOrReport r;
    for (int j = 1; j < h.n_blocks(); ++j) {
        const auto k = static_cast<std::size_t>(j - 1);
        if (!op_norm_at_most(h.a_blocks[k], kNormGuard) || !op_norm_at_most(h.b_blocks[k], kNormGuard)) {
            ++r.unchecked;
            continue;
        }
        ++r.checked;
        const double first = detail::bdb_norm(chain, h, j);
        r.max_first = std::max(r.max_first, first);
        if (first <= kEitherOrBound) continue;
        ++r.first_branch_failures;
        const double second = j == 1 ? 0.0 : detail::bdb_norm(chain, h, j - 1);
        if (second > kEitherOrBound + std::abs(energy)) ++r.violations;
    }
    return r;
}

/// X_j = max(||B_j v_j||, ||f_{j+1}(A_{j+1}) v_j||, ||B_j^T D_j^{-1} B_j v_j||) for j = 1..N-1.
inline std::vector<double> x_statistics(const SchenkerChain& chain, const BlockTridiagonal& h, const EntryLaws& laws) {
    if (chain.censored) throw ContractError("x_statistics: censored chain");
    const int w = h.block_size();
    std::vector<double> xs;
    for (int j = 1; j < h.n_blocks(); ++j) {
        const auto k = static_cast<std::size_t>(j - 1);
        const Vector& v = chain.v_dirs[k];
        const double bv = (h.b_blocks[k] * v).norm();
        const double fv = (score_matrix(h.a_blocks[k + 1], laws, w) * v).norm();
        xs.push_back(std::max({bv, fv, detail::bdb_norm(chain, h, j)}));
    }
    return xs;
}

struct IndicatorFrequency {
    std::vector<double> per_position;  // j = 1..N-1
    double average = 0.0;
    std::size_t chains = 0;
};

/// Frequency of {X_j <= t0} per position over a set of X_j rows.
inline IndicatorFrequency x_indicator_frequency(std::span<const std::vector<double>> rows, double t0) {
    if (rows.empty()) throw ContractError("x_indicator_frequency: no chains");
    IndicatorFrequency f;
    f.chains = rows.size();
    f.per_position.assign(rows.front().size(), 0.0);
    for (const auto& row : rows) {
        if (row.size() != f.per_position.size()) throw DimensionError("x_indicator_frequency: ragged rows");
        for (std::size_t j = 0; j < row.size(); ++j) f.per_position[j] += row[j] <= t0 ? 1.0 : 0.0;
    }
    double s = 0.0;
    for (auto& p : f.per_position) {
        p /= static_cast<double>(rows.size());
        s += p;
    }
    f.average = f.per_position.empty() ? 0.0 : s / static_cast<double>(f.per_position.size());
    return f;
}

/// t0 = 100 (1 + M + |E|).
inline double default_t0(double m, double energy) { return 100.0 * (1.0 + m + std::abs(energy)); }

}  // namespace rbm
