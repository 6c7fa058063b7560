#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "oracles.hpp"
#include "rbm/distributions.hpp"

using rbm::Matrix;
using rbm::MRegularLaw;

namespace {

constexpr double kPi = std::numbers::pi;

double gaussian_log_density(double x, double s) { return -0.5 * x * x / (s * s) - std::log(s * std::sqrt(2 * kPi)); }

std::vector<double> draw(const MRegularLaw& law, std::size_t n, std::uint64_t seed) {
    rbm::Stream rng = rbm::make_stream(seed, {rbm::tag::sample});
    std::vector<double> xs(n);
    for (auto& x : xs) x = law.sample(rng);
    return xs;
}

}  // namespace

TEST(Gaussian, ClosedForms) {
    for (double s : {1.0, std::numbers::sqrt2, 0.5}) {
        const auto law = MRegularLaw::gaussian(s);
        for (double x : {-3.0, -0.7, 0.0, 1.2, 5.0}) {
            EXPECT_NEAR(law.log_density(x), gaussian_log_density(x, s), 1e-13);
            EXPECT_NEAR(law.score(x), -x / (s * s), 1e-13);
            EXPECT_NEAR(law.score_derivative(x), -1.0 / (s * s), 1e-13);
            EXPECT_NEAR(law.cdf(x), 0.5 * std::erfc(-x / (s * std::numbers::sqrt2)), 1e-13);
        }
        EXPECT_DOUBLE_EQ(law.moment(2), s * s);
        EXPECT_DOUBLE_EQ(law.moment(4), 3 * s * s * s * s);
        EXPECT_EQ(law.moment(3), 0.0);
    }
}

TEST(Gaussian, StandardCertificateIsThree) {
    const auto law = MRegularLaw::gaussian(1.0);
    EXPECT_NEAR(law.sup_curvature(), 1.0, 1e-12);
    EXPECT_NEAR(law.m_bound(), 3.0, 1e-12);
}

TEST(Gaussian, RejectsNonPositiveScale) {
    EXPECT_THROW(MRegularLaw::gaussian(0.0), rbm::ContractError);
    EXPECT_THROW(MRegularLaw::gaussian(-1.0), rbm::ContractError);
}

TEST(HeavyTail, UnitVarianceScaleMatchesClosedForm) {
    const auto law = MRegularLaw::heavy_tail(6.0);
    const double var_unscaled = oracle::heavy_tail_raw_moment(6, 2) / oracle::heavy_tail_normalization(6);
    EXPECT_NEAR(var_unscaled, 0.5, 1e-14);
    EXPECT_NEAR(law.scale(), 1.0 / std::sqrt(var_unscaled), 1e-10);
    EXPECT_NEAR(law.moment(2), 1.0, 1e-10);
    const double m4 = oracle::heavy_tail_raw_moment(6, 4) / oracle::heavy_tail_normalization(6) *
                      std::pow(law.scale(), 4);
    EXPECT_NEAR(law.moment(4), m4, 1e-9);
    EXPECT_NEAR(m4, 4.0, 1e-12);
}

TEST(HeavyTail, DensityIntegratesToOne) {
    for (double alpha : {5.5, 6.0, 9.0}) {
        const auto law = MRegularLaw::heavy_tail(alpha, 1.0);
        const double total = oracle::integrate_line([&](double x) { return law.density(x); }, 1e-13);
        EXPECT_NEAR(total, 1.0, 1e-9) << alpha;
        EXPECT_NEAR(law.density(0.0), 1.0 / oracle::heavy_tail_normalization(alpha), 1e-12);
    }
}

TEST(HeavyTail, ScoreAtOneUnscaled) {
    const auto law = MRegularLaw::heavy_tail(6.0, 1.0);
    EXPECT_NEAR(law.score(1.0), -3.0, 1e-13);
    EXPECT_NEAR(law.score(0.0), 0.0, 1e-15);
}

TEST(HeavyTail, ScoreMatchesFiniteDifferences) {
    const auto law = MRegularLaw::heavy_tail(6.0);
    for (double x : {-4.0, -1.3, -0.2, 0.4, 1.0, 2.5, 7.0}) {
        const double ds = oracle::central_difference([&](double t) { return law.log_density(t); }, x);
        const double dds = oracle::central_difference([&](double t) { return law.score(t); }, x);
        EXPECT_NEAR(law.score(x), ds, 1e-7 * (1 + std::abs(ds)));
        EXPECT_NEAR(law.score_derivative(x), dds, 1e-6 * (1 + std::abs(dds)));
    }
}

TEST(HeavyTail, CurvatureAndCertificate) {
    const auto law = MRegularLaw::heavy_tail(6.0);
    const double s2 = law.scale() * law.scale();
    double expected = 0.0;
    for (double t = 0.0; t <= 20.0 / law.scale(); t += 1e-5) {
        const double t4 = t * t * t * t, t6 = t4 * t * t;
        expected = std::max(expected, std::abs(30 * t4 - 6 * t6 * t4) / ((1 + t6) * (1 + t6)) / s2);
    }
    EXPECT_NEAR(law.sup_curvature(), expected, 1e-4 * expected);
    EXPECT_NEAR(law.m_bound(), 4.0, 1e-8);
}

TEST(HeavyTail, CdfAgainstQuadrature) {
    const auto law = MRegularLaw::heavy_tail(6.0);
    for (double x : {-30.0, -3.0, -1.0, 0.0, 0.5, 2.0, 10.0}) {
        const double half = oracle::integrate([&](double t) { return law.density(t); }, 0.0, std::abs(x), 1e-14);
        const double expected = x < 0 ? 0.5 - half : 0.5 + half;
        EXPECT_NEAR(law.cdf(x), expected, 1e-10) << x;
    }
}

TEST(HeavyTail, QuantileInvertsCdf) {
    const auto law = MRegularLaw::heavy_tail(6.0);
    for (double u : {1e-9, 1e-4, 0.01, 0.3, 0.5, 0.77, 0.999, 1 - 1e-8}) {
        EXPECT_NEAR(law.cdf(law.quantile(u)), u, 1e-8 * std::max(1.0, u / (1 - u)) + 1e-12) << u;
    }
}

TEST(HeavyTail, SamplesPassKolmogorovSmirnov) {
    const auto law = MRegularLaw::heavy_tail(6.0);
    const std::size_t n = 20000;
    const double d = oracle::ks_statistic(draw(law, n, 7), [&](double x) { return law.cdf(x); });
    EXPECT_LT(d, 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST(HeavyTail, MomentFiniteness) {
    EXPECT_THROW(MRegularLaw::heavy_tail(5.0), rbm::ContractError);
    const auto light = MRegularLaw::heavy_tail(6.0);
    EXPECT_TRUE(light.moment_finite(4));
    const auto heavy = MRegularLaw::heavy_tail_unchecked(4.0);
    EXPECT_TRUE(heavy.moment_finite(2));
    EXPECT_FALSE(heavy.moment_finite(4));
    EXPECT_TRUE(std::isinf(heavy.moment(4)));
}

TEST(Gaussian, SamplesPassKolmogorovSmirnov) {
    const auto law = MRegularLaw::gaussian(1.0);
    const std::size_t n = 20000;
    const double d = oracle::ks_statistic(draw(law, n, 11), [](double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); });
    EXPECT_LT(d, 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST(Sampling, DeterministicPerSeed) {
    const auto law = MRegularLaw::heavy_tail(6.0);
    EXPECT_EQ(draw(law, 50, 3), draw(law, 50, 3));
    EXPECT_NE(draw(law, 50, 3), draw(law, 50, 4));
}

TEST(Tabulated, ReproducesGaussian) {
    std::vector<double> x, d;
    for (double t = -8.0; t <= 8.0 + 1e-12; t += 0.05) {
        x.push_back(t);
        d.push_back(std::exp(gaussian_log_density(t, 1.0)));
    }
    const auto law = MRegularLaw::tabulated(x, d);
    for (double t : {-2.0, -0.33, 0.0, 1.5}) {
        EXPECT_NEAR(law.log_density(t), gaussian_log_density(t, 1.0), 1e-6);
        EXPECT_NEAR(law.score(t), -t, 1e-4);
    }
    EXPECT_NEAR(law.moment(2), 1.0, 1e-6);
    EXPECT_NEAR(law.moment(4), 3.0, 1e-5);
    EXPECT_NEAR(law.cdf(0.0), 0.5, 1e-6);
    EXPECT_EQ(law.density(9.0), 0.0);
}

TEST(Tabulated, LoadFromFile) {
    const auto path = std::filesystem::temp_directory_path() / "rbm_tabulated_law.txt";
    {
        std::ofstream out(path);
        out << "# x density\n";
        for (double t = -8.0; t <= 8.0 + 1e-12; t += 0.1) out << t << ' ' << std::exp(-0.5 * t * t) << "  # row\n";
    }
    const auto law = MRegularLaw::load_tabulated(path.string());
    EXPECT_NEAR(law.moment(2), 1.0, 1e-5);
    {
        std::ofstream out(path);
        out << "0 1\n1\n2 1\n3 1\n4 1\n";
    }
    EXPECT_THROW(MRegularLaw::load_tabulated(path.string()), rbm::ContractError);
    std::filesystem::remove(path);
    EXPECT_THROW(MRegularLaw::load_tabulated(path.string()), rbm::ContractError);
}

TEST(Tabulated, RejectsBadInput) {
    EXPECT_THROW(MRegularLaw::tabulated({0, 1, 2}, {1, 1, 1}), rbm::ContractError);
    EXPECT_THROW(MRegularLaw::tabulated({0, 1, 2, 3}, {1, 0, 1, 1}), rbm::ContractError);
    EXPECT_THROW(MRegularLaw::tabulated({0, 2, 1, 3}, {1, 1, 1, 1}), rbm::ContractError);
}

TEST(MRegular, WithExplicitBound) {
    const auto law = MRegularLaw::gaussian(1.0).with_m_bound(10.0);
    EXPECT_EQ(law.m_bound(), 10.0);
    EXPECT_EQ(MRegularLaw::gaussian(1.0).m_bound(), 3.0);
    EXPECT_THROW((void)law.with_m_bound(0.0), rbm::ContractError);
}

TEST(VerifyMRegular, GaussianPasses) {
    const auto r = rbm::verify_m_regular(MRegularLaw::gaussian(1.0), 20000, 1);
    EXPECT_TRUE(r.pass);
    EXPECT_NEAR(r.score_moment2.value, 1.0, 5 * r.score_moment2.std_error);
}

TEST(VerifyMRegular, HeavyTailSixPasses) {
    const auto r = rbm::verify_m_regular(MRegularLaw::heavy_tail(6.0), 20000, 2);
    EXPECT_TRUE(r.pass) << (r.failures.empty() ? "" : r.failures.front());
    EXPECT_TRUE(r.fourth_moment_finite);
}

TEST(VerifyMRegular, InfiniteFourthMomentFails) {
    const auto r = rbm::verify_m_regular(MRegularLaw::heavy_tail_unchecked(4.0), 20000, 3);
    EXPECT_FALSE(r.pass);
    EXPECT_FALSE(r.fourth_moment_finite);
    EXPECT_NE(std::find(r.failures.begin(), r.failures.end(), "fourth_moment"), r.failures.end());
}

TEST(VerifyMRegular, RejectsSmallSampleCount) {
    EXPECT_THROW(rbm::verify_m_regular(MRegularLaw::gaussian(1.0), 100, 1), rbm::ContractError);
}

TEST(ScoreMatrix, GoeIsMinusHalfA) {
    const int w = 5;
    const Matrix a = oracle::random_symmetric(w, 21) / std::sqrt(w);
    const Matrix f = rbm::score_matrix(a, rbm::EntryLaws::goe(), w);
    EXPECT_LT((f + 0.5 * a).norm(), 1e-13);
}

TEST(ScoreMatrix, DirectionalDerivativeOracle) {
    const int w = 4;
    const auto laws = rbm::EntryLaws::uniform(MRegularLaw::heavy_tail(6.0));
    const double sw = std::sqrt(static_cast<double>(w));
    const Matrix a = oracle::random_symmetric(w, 5) / sw;
    const Matrix b = oracle::random_symmetric(w, 6);
    auto log_phi = [&](double t) {
        const Matrix m = a + t * b;
        double total = 0.0;
        for (int i = 0; i < w; ++i)
            for (int k = i; k < w; ++k) total += rbm::entry_log_density(laws.at(i, k), sw, m(i, k));
        return total;
    };
    const double fd = oracle::central_difference(log_phi, 0.0, 1e-6);
    const Matrix f = rbm::score_matrix(a, laws, w);
    EXPECT_NEAR(w * (f * b).trace(), fd, 1e-6 * (1 + std::abs(fd)));
}
