#pragma once

// Small Monte-Carlo statistics toolkit: batch means, least-squares lines,
// delete-one jackknife.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rbm/errors.hpp"

namespace rbm {

inline constexpr std::size_t kDefaultBatches = 20;

struct EstimateReport {
    double estimate = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;
    std::size_t censored = 0;
};

struct DecayFit {
    double slope = 0.0;
    double intercept = 0.0;
    double std_error = 0.0;  // of the slope
    double r_squared = 0.0;
    std::size_t points_used = 0;
};

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) throw ContractError("mean of empty sequence");
    double s = 0.0;
    for (const double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Mean with the standard error from `batches` contiguous batch means.
/// Fewer values than batches falls back to one value per batch.
inline EstimateReport batch_means(std::span<const double> xs, std::size_t batches = kDefaultBatches) {
    EstimateReport r;
    r.samples = xs.size();
    if (xs.empty()) return r;
    r.estimate = mean_of(xs);
    const std::size_t b = std::min(batches, xs.size());
    if (b < 2) return r;
    const std::size_t per = xs.size() / b;
    std::vector<double> means(b);
    for (std::size_t k = 0; k < b; ++k) {
        const std::size_t hi = k + 1 == b ? xs.size() : (k + 1) * per;
        means[k] = mean_of(xs.subspan(k * per, hi - k * per));
    }
    const double mu = mean_of(means);
    double ss = 0.0;
    for (const double m : means) ss += (m - mu) * (m - mu);
    r.std_error = std::sqrt(ss / static_cast<double>(b - 1) / static_cast<double>(b));
    return r;
}

/// Ordinary least squares y = intercept + slope x.
inline DecayFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DimensionError("linear_fit: x and y differ in length");
    const std::size_t n = x.size();
    if (n < 3) throw FitError("linear_fit: fewer than 3 usable points");
    const double mx = mean_of(x), my = mean_of(y);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw FitError("linear_fit: all x values coincide");
    DecayFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.points_used = n;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - f.intercept - f.slope * x[i];
        rss += e * e;
    }
    f.std_error = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
    f.r_squared = syy > 0.0 ? 1.0 - rss / syy : 1.0;
    return f;
}

/// Delete-one-group jackknife standard error of `statistic(groups kept)`.
/// `statistic` receives a mask of kept groups.
inline double jackknife_error(std::size_t groups, const std::function<double(const std::vector<bool>&)>& statistic) {
    if (groups < 2) throw ContractError("jackknife: need at least two groups");
    std::vector<double> leave(groups);
    std::vector<bool> keep(groups, true);
    for (std::size_t g = 0; g < groups; ++g) {
        keep[g] = false;
        leave[g] = statistic(keep);
        keep[g] = true;
    }
    const double mu = mean_of(leave);
    double ss = 0.0;
    for (const double v : leave) ss += (v - mu) * (v - mu);
    const double n = static_cast<double>(groups);
    return std::sqrt((n - 1.0) / n * ss);
}

}  // namespace rbm
