#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace rbm::detail {

// Natural cubic spline through (x_k, y_k); C2 on [x_0, x_n].
class NaturalCubicSpline {
public:
    NaturalCubicSpline() = default;

    NaturalCubicSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
        const std::size_t n = x_.size();
        if (n < 3 || y_.size() != n) {
            throw std::invalid_argument("spline needs at least three nodes");
        }
        for (std::size_t i = 1; i < n; ++i) {
            if (!(x_[i] > x_[i - 1])) throw std::invalid_argument("spline nodes must increase");
        }
        // Second derivatives from the tridiagonal system, natural end conditions.
        m_.assign(n, 0.0);
        std::vector<double> diag(n, 1.0), upper(n, 0.0), rhs(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double h0 = x_[i] - x_[i - 1];
            const double h1 = x_[i + 1] - x_[i];
            const double lower = h0 / 6.0;
            diag[i] = (h0 + h1) / 3.0;
            upper[i] = h1 / 6.0;
            rhs[i] = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
            const double factor = lower / diag[i - 1];
            diag[i] -= factor * upper[i - 1];
            rhs[i] -= factor * rhs[i - 1];
        }
        for (std::size_t i = n - 1; i-- > 1;) {
            m_[i] = (rhs[i] - upper[i] * m_[i + 1]) / diag[i];
        }
    }

    [[nodiscard]] double lo() const { return x_.front(); }
    [[nodiscard]] double hi() const { return x_.back(); }
    [[nodiscard]] const std::vector<double>& nodes() const { return x_; }

    [[nodiscard]] double value(double t) const { return eval(t, 0); }
    [[nodiscard]] double derivative(double t) const { return eval(t, 1); }
    [[nodiscard]] double second_derivative(double t) const { return eval(t, 2); }

private:
    [[nodiscard]] double eval(double t, int order) const {
        t = std::clamp(t, x_.front(), x_.back());
        auto it = std::upper_bound(x_.begin(), x_.end(), t);
        std::size_t i = static_cast<std::size_t>(std::distance(x_.begin(), it));
        i = std::clamp<std::size_t>(i, 1, x_.size() - 1);
        const double h = x_[i] - x_[i - 1];
        const double a = (x_[i] - t) / h;
        const double b = (t - x_[i - 1]) / h;
        switch (order) {
            case 0:
                return a * y_[i - 1] + b * y_[i] +
                       ((a * a * a - a) * m_[i - 1] + (b * b * b - b) * m_[i]) * h * h / 6.0;
            case 1:
                return (y_[i] - y_[i - 1]) / h - (3.0 * a * a - 1.0) / 6.0 * h * m_[i - 1] +
                       (3.0 * b * b - 1.0) / 6.0 * h * m_[i];
            default:
                return a * m_[i - 1] + b * m_[i];
        }
    }

    std::vector<double> x_;
    std::vector<double> y_;
    std::vector<double> m_;
};

}  // namespace rbm::detail
