#pragma once

// M-regular scalar laws and the matrix score map.
//
// A law is immutable after construction and cheap to copy (shared state). The
// certified bound M is computed from the law itself: the larger of the fourth
// moment and sup |(log phi)''| over the verification grid.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

// Boost 1.74 pchip calls isnan unqualified.
namespace boost::math::interpolators {
using std::isnan;
}
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "rbm/detail/spline.hpp"
#include "rbm/errors.hpp"
#include "rbm/linalg.hpp"
#include "rbm/random.hpp"

namespace rbm {

enum class LawKind { gaussian, heavy_tail, tabulated };

inline constexpr double kCurvatureGridLo = -20.0;
inline constexpr double kCurvatureGridHi = 20.0;
inline constexpr double kCurvatureGridStep = 1e-3;
inline constexpr std::size_t kInverseCdfPoints = 4096;

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

template <typename F>
double integrate(F&& f, double a, double b) {
    double error = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, a, b, 15, 1e-12, &error);
}

struct LawState {
    LawKind kind = LawKind::gaussian;
    double alpha = 0.0;
    double scale = 1.0;
    double m_bound = 0.0;
    // heavy tail: normalization of 1/(1+|y|^alpha) over R
    double norm = 1.0;
    // inverse CDF table for heavy tail (log F -> y on y <= 0) or tabulated (F -> x)
    std::vector<double> table_u;
    std::vector<double> table_x;
    std::shared_ptr<const boost::math::interpolators::pchip<std::vector<double>>> inverse;
    // tabulated
    NaturalCubicSpline log_phi;
    double log_norm = 0.0;
    std::vector<double> node_cdf;
};

// Unscaled heavy tail: integral of 1/(1+t^alpha) over [a, inf), a >= 0.
inline double heavy_upper(double alpha, double a) {
    return integrate([alpha](double t) { return 1.0 / (1.0 + std::pow(t, alpha)); }, a, kInf);
}

}  // namespace detail

class MRegularLaw {
public:
    /// Standard gaussian.
    MRegularLaw() : MRegularLaw(gaussian(1.0)) {}

    static MRegularLaw gaussian(double scale = 1.0) {
        if (!(scale > 0.0)) throw ContractError("gaussian: scale must be positive");
        auto s = std::make_shared<detail::LawState>();
        s->kind = LawKind::gaussian;
        s->scale = scale;
        MRegularLaw law(std::move(s));
        law.certify();
        return law;
    }

    /// Density proportional to 1/(1+|x/scale|^alpha); alpha > 5. The default
    /// scale normalizes the second moment to exactly 1.
    static MRegularLaw heavy_tail(double alpha, double scale = 0.0) {
        if (!(alpha > 5.0)) throw ContractError("heavy_tail: alpha must exceed 5");
        return heavy_tail_unchecked(alpha, scale);
    }

    /// Heavy tail without the alpha > 5 gate (alpha > 3 so the variance exists).
    /// Used to exhibit laws that fail the regularity certificate.
    static MRegularLaw heavy_tail_unchecked(double alpha, double scale = 0.0) {
        if (!(alpha > 3.0)) throw ContractError("heavy_tail: alpha must exceed 3");
        auto s = std::make_shared<detail::LawState>();
        s->kind = LawKind::heavy_tail;
        s->alpha = alpha;
        s->norm = 2.0 * detail::heavy_upper(alpha, 0.0);
        if (scale <= 0.0) {
            const double m2 = 2.0 *
                              detail::integrate(
                                  [alpha](double t) { return t * t / (1.0 + std::pow(t, alpha)); }, 0.0,
                                  detail::kInf) /
                              s->norm;
            scale = 1.0 / std::sqrt(m2);
        }
        s->scale = scale;
        build_heavy_tail_table(*s);
        MRegularLaw law(std::move(s));
        law.certify();
        return law;
    }

    /// Law given by density samples on an increasing grid; log-density is a
    /// natural cubic spline, zero density outside the grid.
    static MRegularLaw tabulated(std::vector<double> x, std::vector<double> density) {
        if (x.size() != density.size() || x.size() < 4) {
            throw ContractError("tabulated: need at least four (x, density) pairs");
        }
        std::vector<double> logs(density.size());
        for (std::size_t i = 0; i < density.size(); ++i) {
            if (!(density[i] > 0.0) || !std::isfinite(density[i])) {
                throw ContractError("tabulated: density must be strictly positive");
            }
            logs[i] = std::log(density[i]);
        }
        auto s = std::make_shared<detail::LawState>();
        s->kind = LawKind::tabulated;
        try {
            s->log_phi = detail::NaturalCubicSpline(x, std::move(logs));
        } catch (const std::invalid_argument& e) {
            throw ContractError(std::string("tabulated: ") + e.what());
        }
        build_tabulated_table(*s, x);
        MRegularLaw law(std::move(s));
        law.certify();
        return law;
    }

    /// Two whitespace-separated columns (x, density); '#' starts a comment.
    static MRegularLaw load_tabulated(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ContractError("tabulated: cannot open " + path);
        std::vector<double> xs, ds;
        std::string line;
        while (std::getline(in, line)) {
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            std::istringstream row(line);
            double x = 0.0, d = 0.0;
            if (!(row >> x)) continue;
            if (!(row >> d)) throw ContractError("tabulated: malformed line in " + path);
            xs.push_back(x);
            ds.push_back(d);
        }
        return tabulated(std::move(xs), std::move(ds));
    }

    /// Same law with an explicitly supplied certificate M.
    [[nodiscard]] MRegularLaw with_m_bound(double m) const {
        if (!(m > 0.0)) throw ContractError("m_bound must be positive");
        auto copy = std::make_shared<detail::LawState>(*state_);
        copy->m_bound = m;
        return MRegularLaw(std::move(copy));
    }

    [[nodiscard]] LawKind kind() const { return state_->kind; }
    [[nodiscard]] double alpha() const { return state_->alpha; }
    [[nodiscard]] double scale() const { return state_->scale; }
    [[nodiscard]] double m_bound() const { return state_->m_bound; }

    [[nodiscard]] std::string name() const {
        switch (kind()) {
            case LawKind::gaussian: return "gaussian";
            case LawKind::heavy_tail: return "heavy_tail";
            default: return "tabulated";
        }
    }

    [[nodiscard]] double log_density(double x) const {
        const auto& s = *state_;
        switch (s.kind) {
            case LawKind::gaussian: {
                const double y = x / s.scale;
                return -0.5 * y * y - std::log(s.scale) - 0.5 * std::log(2.0 * std::numbers::pi);
            }
            case LawKind::heavy_tail: {
                const double y = std::abs(x) / s.scale;
                return -std::log1p(std::pow(y, s.alpha)) - std::log(s.norm * s.scale);
            }
            default:
                if (x < s.log_phi.lo() || x > s.log_phi.hi()) return -detail::kInf;
                return s.log_phi.value(x) - s.log_norm;
        }
    }

    [[nodiscard]] double density(double x) const { return std::exp(log_density(x)); }

    /// d/dx log phi.
    [[nodiscard]] double score(double x) const {
        const auto& s = *state_;
        switch (s.kind) {
            case LawKind::gaussian: return -x / (s.scale * s.scale);
            case LawKind::heavy_tail: {
                const double y = x / s.scale;
                const double ay = std::abs(y);
                if (ay == 0.0) return 0.0;
                const double p = std::pow(ay, s.alpha - 1.0);
                return -s.alpha * p * (y > 0 ? 1.0 : -1.0) / (1.0 + p * ay) / s.scale;
            }
            default: return s.log_phi.derivative(x);
        }
    }

    /// d^2/dx^2 log phi.
    [[nodiscard]] double score_derivative(double x) const {
        const auto& s = *state_;
        switch (s.kind) {
            case LawKind::gaussian: return -1.0 / (s.scale * s.scale);
            case LawKind::heavy_tail: {
                const double a = s.alpha;
                const double y = std::abs(x) / s.scale;
                if (y == 0.0) return 0.0;
                const double g = std::pow(y, a);
                const double g1 = a * g / y;
                const double g2 = a * (a - 1.0) * g / (y * y);
                const double one_g = 1.0 + g;
                return -(g2 * one_g - g1 * g1) / (one_g * one_g) / (s.scale * s.scale);
            }
            default: return s.log_phi.second_derivative(x);
        }
    }

    [[nodiscard]] double cdf(double x) const {
        const auto& s = *state_;
        switch (s.kind) {
            case LawKind::gaussian: return 0.5 * boost::math::erfc(-x / (s.scale * std::numbers::sqrt2));
            case LawKind::heavy_tail: {
                const double tail = detail::heavy_upper(s.alpha, std::abs(x) / s.scale) / s.norm;
                return x < 0.0 ? tail : 1.0 - tail;
            }
            default: {
                const auto& nodes = s.log_phi.nodes();
                if (x <= nodes.front()) return 0.0;
                if (x >= nodes.back()) return 1.0;
                const auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
                const std::size_t i = static_cast<std::size_t>(std::distance(nodes.begin(), it)) - 1;
                return s.node_cdf[i] + detail::integrate([this](double t) { return density(t); }, nodes[i], x);
            }
        }
    }

    [[nodiscard]] double quantile(double u) const {
        if (!(u > 0.0 && u < 1.0)) throw ContractError("quantile: u must lie in (0, 1)");
        const auto& s = *state_;
        switch (s.kind) {
            case LawKind::gaussian: return -s.scale * std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
            case LawKind::heavy_tail: {
                if (u > 0.5) return -quantile(1.0 - u);
                const double lu = std::log(u);
                double y = 0.0;
                if (lu < s.table_u.front()) {
                    // Beyond the table: tail ~ y^{1-alpha} / ((alpha-1) Z).
                    y = -std::pow((s.alpha - 1.0) * s.norm * u, -1.0 / (s.alpha - 1.0));
                } else {
                    y = (*s.inverse)(std::min(lu, s.table_u.back()));
                }
                return s.scale * y;
            }
            default: return (*s.inverse)(std::clamp(u, s.table_u.front(), s.table_u.back()));
        }
    }

    [[nodiscard]] double sample(Stream& rng) const {
        if (kind() == LawKind::gaussian) return scale() * standard_normal(rng);
        return quantile(uniform_open01(rng));
    }

    /// Whether E|X|^k is finite.
    [[nodiscard]] bool moment_finite(int k) const {
        return kind() != LawKind::heavy_tail || static_cast<double>(k) < alpha() - 1.0;
    }

    /// E X^k by quadrature (+inf when divergent).
    [[nodiscard]] double moment(int k) const {
        if (!moment_finite(k)) return detail::kInf;
        const auto& s = *state_;
        switch (s.kind) {
            case LawKind::gaussian: {
                if (k % 2 == 1) return 0.0;
                double v = 1.0;
                for (int i = k - 1; i > 0; i -= 2) v *= i;
                return v * std::pow(s.scale, k);
            }
            case LawKind::heavy_tail: {
                if (k % 2 == 1) return 0.0;
                const double a = s.alpha;
                const double half = detail::integrate(
                    [a, k](double t) { return std::pow(t, k) / (1.0 + std::pow(t, a)); }, 0.0, detail::kInf);
                return 2.0 * half / s.norm * std::pow(s.scale, k);
            }
            default: {
                double total = 0.0;
                const auto& nodes = s.log_phi.nodes();
                for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
                    total += detail::integrate(
                        [this, k](double t) { return std::pow(t, k) * density(t); }, nodes[i], nodes[i + 1]);
                }
                return total;
            }
        }
    }

    /// sup |(log phi)''| over the grid [lo, hi] with the given step (intersected with
    /// the support for tabulated laws).
    [[nodiscard]] double sup_curvature(double lo = kCurvatureGridLo, double hi = kCurvatureGridHi,
                                       double step = kCurvatureGridStep) const {
        if (kind() == LawKind::tabulated) {
            lo = std::max(lo, state_->log_phi.lo());
            hi = std::min(hi, state_->log_phi.hi());
        }
        const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
        double best = 0.0;
        for (std::size_t i = 0; i <= count; ++i) {
            best = std::max(best, std::abs(score_derivative(lo + static_cast<double>(i) * step)));
        }
        return best;
    }

private:
    explicit MRegularLaw(std::shared_ptr<detail::LawState> s) : state_(std::move(s)) {}

    void certify() {
        double m = sup_curvature();
        if (moment_finite(4)) m = std::max(m, moment(4));
        state_->m_bound = m;
    }

    static void build_heavy_tail_table(detail::LawState& s) {
        // y_k = -sinh(t_k) covers [-1e4, 0]; interpolate y against log F(y).
        const std::size_t n = kInverseCdfPoints;
        const double t_max = std::asinh(1e4);
        const double a = s.alpha;
        auto unscaled = [a](double t) { return 1.0 / (1.0 + std::pow(std::abs(t), a)); };
        std::vector<double> ys(n), log_f(n);
        for (std::size_t k = 0; k < n; ++k) {
            ys[k] = -std::sinh(t_max * (1.0 - static_cast<double>(k) / static_cast<double>(n - 1)));
        }
        double mass = detail::heavy_upper(a, -ys[0]) / s.norm;
        log_f[0] = std::log(mass);
        for (std::size_t k = 1; k < n; ++k) {
            mass += detail::integrate(unscaled, ys[k - 1], ys[k]) / s.norm;
            log_f[k] = std::log(mass);
        }
        s.table_u = log_f;
        s.table_x = ys;
        s.inverse = std::make_shared<const boost::math::interpolators::pchip<std::vector<double>>>(
            std::move(log_f), std::move(ys));
    }

    static void build_tabulated_table(detail::LawState& s, const std::vector<double>& nodes) {
        const auto& spline = s.log_phi;
        auto raw = [&spline](double t) { return std::exp(spline.value(t)); };
        double total = 0.0;
        std::vector<double> cumulative(nodes.size(), 0.0);
        for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
            total += detail::integrate(raw, nodes[i], nodes[i + 1]);
            cumulative[i + 1] = total;
        }
        s.log_norm = std::log(total);
        for (auto& c : cumulative) c /= total;
        s.node_cdf = cumulative;

        // Refine each interval so the inverse table has about kInverseCdfPoints entries.
        const std::size_t per = std::max<std::size_t>(1, kInverseCdfPoints / (nodes.size() - 1));
        std::vector<double> us{0.0}, xs{nodes.front()};
        for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
            double acc = cumulative[i];
            double left = nodes[i];
            for (std::size_t j = 1; j <= per; ++j) {
                const double right = nodes[i] + (nodes[i + 1] - nodes[i]) * static_cast<double>(j) /
                                                    static_cast<double>(per);
                acc += detail::integrate(raw, left, right) / total;
                left = right;
                if (acc > us.back()) {
                    us.push_back(acc);
                    xs.push_back(right);
                }
            }
        }
        us.back() = 1.0;
        s.table_u = us;
        s.table_x = xs;
        s.inverse = std::make_shared<const boost::math::interpolators::pchip<std::vector<double>>>(
            std::move(us), std::move(xs));
    }

    std::shared_ptr<detail::LawState> state_;
};

/// Laws for the entries of sqrt(W) A (diagonal and off-diagonal may differ).
struct EntryLaws {
    MRegularLaw diagonal;
    MRegularLaw off_diagonal;

    /// GOE normalization: phi(A) proportional to exp(-(W/4) Tr A^2).
    static EntryLaws goe() { return {MRegularLaw::gaussian(std::numbers::sqrt2), MRegularLaw::gaussian(1.0)}; }
    static EntryLaws uniform(const MRegularLaw& law) { return {law, law}; }

    [[nodiscard]] const MRegularLaw& at(Eigen::Index i, Eigen::Index k) const {
        return i == k ? diagonal : off_diagonal;
    }
};

/// Log-density of an unscaled entry a whose rescaling sqrt(W) a follows `law`.
inline double entry_log_density(const MRegularLaw& law, double sqrt_w, double a) {
    return law.log_density(sqrt_w * a) + std::log(sqrt_w);
}

/// d/da of entry_log_density.
inline double entry_score(const MRegularLaw& law, double sqrt_w, double a) {
    return sqrt_w * law.score(sqrt_w * a);
}

/// (1/W) times the gradient of log phi(A) with respect to <A, B> = Tr(AB):
/// diagonal entries (1/W) d/dx log phi_ii, off-diagonal (1/(2W)) d/dx log phi_ik.
inline Matrix score_matrix(const Matrix& a, const EntryLaws& laws, int w) {
    require_symmetric(a, "score_matrix");
    if (w < 1) throw ContractError("score_matrix: W must be positive");
    const double sqrt_w = std::sqrt(static_cast<double>(w));
    const double inv_w = 1.0 / static_cast<double>(w);
    const Eigen::Index n = a.rows();
    Matrix f(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        f(i, i) = inv_w * entry_score(laws.diagonal, sqrt_w, a(i, i));
        for (Eigen::Index k = i + 1; k < n; ++k) {
            const double v = 0.5 * inv_w * entry_score(laws.off_diagonal, sqrt_w, a(i, k));
            f(i, k) = v;
            f(k, i) = v;
        }
    }
    return f;
}

struct MomentEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

struct MRegularReport {
    double m_bound = 0.0;
    std::size_t samples = 0;
    MomentEstimate mean;
    MomentEstimate second_moment;
    MomentEstimate fourth_moment;
    bool fourth_moment_finite = true;
    MomentEstimate score_mean;
    MomentEstimate score_moment2;
    MomentEstimate score_moment4;
    double sup_log_density_curvature = 0.0;
    bool pass = false;
    std::vector<std::string> failures;
};

namespace detail {

struct Accumulator {
    double sum = 0.0;
    double sum_sq = 0.0;
    void add(double x) {
        sum += x;
        sum_sq += x * x;
    }
    [[nodiscard]] MomentEstimate finish(std::size_t n) const {
        const double dn = static_cast<double>(n);
        const double mean = sum / dn;
        const double var = std::max(0.0, (sum_sq / dn - mean * mean) * dn / (dn - 1.0));
        return {mean, std::sqrt(var / dn)};
    }
};

}  // namespace detail

/// Monte-Carlo and grid check of the regularity conditions together with the
/// score-moment bounds E s = 0, E s^2 <= M, E s^4 <= 3 M^2 (3-sigma bands).
inline MRegularReport verify_m_regular(const MRegularLaw& law, std::size_t samples, std::uint64_t seed,
                                       double grid_lo = kCurvatureGridLo, double grid_hi = kCurvatureGridHi,
                                       double grid_step = kCurvatureGridStep) {
    if (samples < 10000) throw ContractError("verify_m_regular: need at least 1e4 samples");
    detail::Accumulator x1, x2, x4, s1, s2, s4;
    Stream rng = make_stream(seed, {tag::sample});
    for (std::size_t i = 0; i < samples; ++i) {
        const double x = law.sample(rng);
        const double s = law.score(x);
        x1.add(x);
        x2.add(x * x);
        x4.add(x * x * x * x);
        s1.add(s);
        s2.add(s * s);
        s4.add(s * s * s * s);
    }
    MRegularReport r;
    r.m_bound = law.m_bound();
    r.samples = samples;
    r.mean = x1.finish(samples);
    r.second_moment = x2.finish(samples);
    r.fourth_moment = x4.finish(samples);
    r.fourth_moment_finite = law.moment_finite(4);
    if (!r.fourth_moment_finite) r.fourth_moment.value = detail::kInf;
    r.score_mean = s1.finish(samples);
    r.score_moment2 = s2.finish(samples);
    r.score_moment4 = s4.finish(samples);
    r.sup_log_density_curvature = law.sup_curvature(grid_lo, grid_hi, grid_step);

    const double m = r.m_bound;
    auto check = [&r](bool ok, const char* what) {
        if (!ok) r.failures.emplace_back(what);
    };
    check(std::abs(r.mean.value) <= 3.0 * r.mean.std_error, "mean");
    check(r.second_moment.value <= 1.0 + 3.0 * r.second_moment.std_error, "second_moment");
    check(r.fourth_moment_finite && r.fourth_moment.value <= m + 3.0 * r.fourth_moment.std_error,
          "fourth_moment");
    check(r.sup_log_density_curvature <= m * (1.0 + 1e-12), "log_density_curvature");
    check(std::abs(r.score_mean.value) <= 3.0 * r.score_mean.std_error, "score_mean");
    check(r.score_moment2.value <= m + 3.0 * r.score_moment2.std_error, "score_moment2");
    check(r.score_moment4.value <= 3.0 * m * m + 3.0 * r.score_moment4.std_error, "score_moment4");
    r.pass = r.failures.empty();
    return r;
}

}  // namespace rbm
