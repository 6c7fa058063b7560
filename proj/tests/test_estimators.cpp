#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "rbm/estimators.hpp"

using rbm::BandEnsemble;
using rbm::Matrix;
using rbm::Vector;

namespace {

// |G(1,N)| for a scalar tridiagonal chain: prod |b_j| / prod |d_j|.
double scalar_corner_log(const rbm::BlockTridiagonal& h, double e, int n) {
    double d = h.a_blocks[0](0, 0) - e;
    double s = -std::log(std::abs(d));
    for (int j = 1; j < n; ++j) {
        const double b = h.b_blocks[static_cast<std::size_t>(j - 1)](0, 0);
        d = h.a_blocks[static_cast<std::size_t>(j)](0, 0) - e - b * b / d;
        s += std::log(std::abs(b)) - std::log(std::abs(d));
    }
    return s;
}

double gaussian_density(double x, double sigma) {
    return std::exp(-0.5 * x * x / (sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

TEST(FractionalMoment, RejectsQOutsideRange) {
    const auto ens = BandEnsemble::wegner_orbital(1, 2);
    for (double q : {0.3, 0.0, -0.1, 0.2000001}) {
        EXPECT_THROW(rbm::fractional_moment_curve(ens, {2, 4, 6}, q, 40, 1), rbm::ContractError) << q;
    }
    try {
        rbm::fractional_moment_curve(ens, {2, 4, 6}, 0.3, 40, 1);
    } catch (const rbm::ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("(0, 1/5]"), std::string::npos);
    }
    EXPECT_NO_THROW(rbm::fractional_moment_curve(ens, {2, 4, 6}, 0.2, 40, 1));
}

TEST(FractionalMoment, LogPowerMeanBasics) {
    const std::vector<double> logs{std::log(2.0), std::log(8.0)};
    EXPECT_NEAR(rbm::log_power_mean(logs, 1.0), std::log(5.0), 1e-14);
    EXPECT_NEAR(rbm::log_power_mean(logs, 0.5), 2.0 * std::log((std::sqrt(2.0) + std::sqrt(8.0)) / 2.0), 1e-14);
    const std::vector<double> with_nan{std::log(2.0), std::nan(""), std::log(8.0)};
    EXPECT_NEAR(rbm::log_power_mean(with_nan, 1.0), std::log(5.0), 1e-14);
    const std::vector<double> huge{-800.0, -801.0};
    EXPECT_TRUE(std::isfinite(rbm::log_power_mean(huge, 0.2)));
}

TEST(FractionalMoment, PowerMeanMonotoneInQ) {
    const auto ens = BandEnsemble::wegner_orbital(1, 2);
    const std::vector<int> lengths{4, 8, 16};
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < 500; ++i) rows.push_back(rbm::corner_log_norms(ens, lengths, rbm::sample_seed(3, 2, i)));
    for (std::size_t c = 0; c < lengths.size(); ++c) {
        std::vector<double> col;
        for (const auto& r : rows) col.push_back(r[c]);
        const double geo = rbm::mean_of(col);
        double prev = geo;
        for (double q : {0.05, 0.1, 0.2}) {
            const double v = rbm::log_power_mean(col, q);
            EXPECT_GE(v, prev - 1e-12) << "N=" << lengths[c] << " q=" << q;
            prev = v;
        }
        EXPECT_LT(std::abs(rbm::log_power_mean(col, 1e-4) - geo), 1e-2);
    }
}

TEST(FractionalMoment, ScalarChainMatchesFastPath) {
    auto ens = BandEnsemble::wegner_orbital(1, 1, 0.0);
    const std::vector<int> lengths{5, 20, 60};
    for (std::size_t i = 0; i < 20; ++i) {
        const auto seed = rbm::sample_seed(9, 1, i);
        const auto got = rbm::corner_log_norms(ens, lengths, seed);
        const auto h = rbm::sample_hamiltonian(ens.with_size(60, 1), seed);
        for (std::size_t c = 0; c < lengths.size(); ++c) {
            EXPECT_NEAR(got[c], scalar_corner_log(h, 0.0, lengths[c]), 1e-9 * (1.0 + std::abs(got[c])));
        }
    }
}

TEST(FractionalMoment, CornerMatchesDenseInverse) {
    const auto ens = BandEnsemble::wegner_orbital(1, 3);
    const std::vector<int> lengths{1, 3, 7};
    const auto seed = rbm::sample_seed(5, 3, 0);
    const auto got = rbm::corner_log_norms(ens, lengths, seed);
    const auto h = rbm::sample_hamiltonian(ens.with_size(7, 3), seed);
    for (std::size_t c = 0; c < lengths.size(); ++c) {
        const auto sub = rbm::restrict(h, 1, lengths[c]);
        const Eigen::Index dim = sub.dimension();
        const Matrix g = oracle::dense_inverse(rbm::assemble_dense(sub) - 0.3 * Matrix::Identity(dim, dim));
        const double expected = std::log(g.block(0, dim - 3, 3, 3).col(0).norm());
        EXPECT_NEAR(got[c], expected, 1e-9);
    }
}

TEST(FractionalMoment, ScalarChainDecays) {
    const auto ens = BandEnsemble::wegner_orbital(1, 1, 0.0);
    std::vector<int> lengths;
    for (int n = 20; n <= 200; n += 20) lengths.push_back(n);
    const auto curve = rbm::fractional_moment_curve(ens, lengths, 0.2, 2000, 11);
    EXPECT_LT(curve.fit.slope, -5.0 * curve.fit.std_error);
    EXPECT_GE(curve.fit.points_used, 3u);

    // independent recomputation of the moment at N = 200 with the scalar recursion
    std::vector<double> logs;
    for (std::size_t i = 0; i < 2000; ++i) {
        const auto h = rbm::sample_hamiltonian(ens.with_size(200, 1), rbm::sample_seed(11, 1, i));
        logs.push_back(scalar_corner_log(h, 0.0, 200));
    }
    double top = -1e300;
    for (double v : logs) top = std::max(top, 0.2 * v);
    double s = 0.0;
    for (double v : logs) s += std::exp(0.2 * v - top);
    const double expected = (top + std::log(s / 2000.0)) / 0.2;
    EXPECT_NEAR(curve.log_moment.back(), expected, 1e-6 * std::abs(expected));
}

TEST(FractionalMoment, WorkerCountIndependent) {
    const auto ens = BandEnsemble::wegner_orbital(1, 2);
    const auto a = rbm::fractional_moment_curve(ens, {4, 8, 12, 16}, 0.2, 60, 21, 1);
    const auto b = rbm::fractional_moment_curve(ens, {4, 8, 12, 16}, 0.2, 60, 21, 4);
    EXPECT_EQ(a.log_moment, b.log_moment);
    EXPECT_EQ(a.log_moment_err, b.log_moment_err);
    EXPECT_EQ(a.fit.slope, b.fit.slope);
}

TEST(FractionalMoment, ScanUsesMultipliers) {
    const auto ens = BandEnsemble::wegner_orbital(1, 1);
    const std::vector<int> widths{1, 2};
    const std::vector<int> mult{5, 10, 15};
    const auto scan = rbm::fractional_moment_scan(ens, widths, mult, 0.1, 40, 2);
    ASSERT_EQ(scan.size(), 2u);
    EXPECT_EQ(scan[1].lengths, (std::vector<int>{10, 20, 30}));
    EXPECT_EQ(scan[1].block_size, 2);
}

TEST(Correlator, DecoupledBlocksDoNotMix) {
    auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(4, 3), 8);
    for (auto& b : h.b_blocks) b.setZero();
    const auto c = rbm::eigenvector_correlator(h, 2.0);
    for (Eigen::Index x = 0; x < 12; ++x) {
        for (Eigen::Index y = 0; y < 12; ++y) {
            if (x / 3 != y / 3) EXPECT_LT(std::abs(c.rho(x, y)), 1e-12);
        }
    }
}

TEST(Correlator, MassBounds) {
    const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(16, 4), 13);
    const auto c = rbm::eigenvector_correlator(h, 1.0);
    const Eigen::Index n = c.rho.rows();
    const double count = static_cast<double>(c.in_window);
    ASSERT_GT(c.in_window, 0u);
    EXPECT_LT((c.rho - c.rho.transpose()).norm(), 1e-12);
    EXPECT_NEAR(c.rho.trace(), count, 1e-9 * count);
    for (Eigen::Index x = 0; x < n; ++x) {
        EXPECT_LE(c.rho.row(x).sum(), std::sqrt(static_cast<double>(n) * count) + 1e-9);
        for (Eigen::Index y = 0; y < n; ++y) {
            EXPECT_LE(c.rho(x, y), std::sqrt(c.rho(x, x) * c.rho(y, y)) + 1e-12);
            EXPECT_LE(c.rho(x, y), 1.0 + 1e-12);
        }
    }
}

TEST(Correlator, RejectsLargeDimension) {
    const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(4097, 1), 1);
    EXPECT_THROW(rbm::eigenvector_correlator(h, 2.0), rbm::ContractError);
}

TEST(Correlator, SingleGoeBlockIsFlat) {
    const auto ens = BandEnsemble::wegner_orbital(1, 64);
    Vector avg = Vector::Zero(64);
    for (std::uint64_t s = 0; s < 20; ++s) {
        avg += rbm::distance_profile(rbm::eigenvector_correlator(rbm::sample_hamiltonian(ens, s), 2.0).rho);
    }
    avg /= 20.0;
    const Vector off = avg.segment(1, 40);
    EXPECT_LT(off.maxCoeff() / off.minCoeff(), 2.0);
}

TEST(LocalizationFit, RecoversSyntheticLength) {
    Vector p(400);
    for (Eigen::Index d = 0; d < 400; ++d) p(d) = 3.0 * std::exp(-static_cast<double>(d) / 37.0);
    const auto f = rbm::localization_length_fit(p, 8, 200);
    EXPECT_NEAR(f.length, 37.0, 0.37);
    EXPECT_EQ(f.fit.points_used, 193u);
}

TEST(LocalizationFit, RespectsNoiseFloor) {
    Vector p(400);
    for (Eigen::Index d = 0; d < 400; ++d) p(d) = std::exp(-static_cast<double>(d) / 5.0);
    const auto f = rbm::localization_length_fit(p, 0, 399);
    EXPECT_NEAR(f.length, 5.0, 1e-9);
    EXPECT_EQ(f.fit.points_used, 139u);  // e^{-d/5} > 1e-12 for d <= 138
}

TEST(LocalizationFit, FlatProfileFails) {
    const Vector p = Vector::Constant(100, 0.5);
    EXPECT_THROW(rbm::localization_length_fit(p, 0, 99), rbm::FitError);
    const Vector tiny = Vector::Constant(100, 1e-20);
    EXPECT_THROW(rbm::localization_length_fit(tiny, 0, 99), rbm::FitError);
}

TEST(LocalizationScan, GaussianProfileDecays) {
    const auto r = rbm::localization_scan(BandEnsemble::wegner_orbital(64, 2), 20, 4);
    EXPECT_GT(r.fit.length, 0.0);
    EXPECT_LT(r.fit.fit.slope, -5.0 * r.fit.fit.std_error);
}

TEST(Wegner, TailMonotoneAndStartsAtOne) {
    const auto t = rbm::wegner_tail(BandEnsemble::wegner_orbital(4, 2), 2, 2, {1e-6, 1, 10, 100, 1000}, 300, 6);
    EXPECT_DOUBLE_EQ(t.tail.front(), 1.0);
    for (std::size_t k = 1; k < t.tail.size(); ++k) EXPECT_LE(t.tail[k], t.tail[k - 1]);
    EXPECT_EQ(t.samples + t.censored, 300u);
}

TEST(Wegner, RejectsBadGrid) {
    const auto ens = BandEnsemble::wegner_orbital(4, 2);
    EXPECT_THROW(rbm::wegner_tail(ens, 1, 1, {1, 1}, 10, 1), rbm::ContractError);
    EXPECT_THROW(rbm::wegner_tail(ens, 1, 1, {-1, 1}, 10, 1), rbm::ContractError);
    EXPECT_THROW(rbm::wegner_tail(ens, 5, 1, {1}, 10, 1), rbm::DimensionError);
}

TEST(Wegner, ScalarQuadratureOracle) {
    const double e = 0.3;
    const double sigma = std::numbers::sqrt2;
    const std::vector<double> lambdas{0.5, 1.0, 3.0, 10.0};
    const std::size_t n = 20000;
    const auto t = rbm::wegner_tail(BandEnsemble::wegner_orbital(1, 1, e), 1, 1, lambdas, n, 17);
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        const double r = 1.0 / lambdas[k];
        const double p = oracle::integrate([&](double x) { return gaussian_density(x, sigma); }, e - r, e + r);
        const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
        EXPECT_NEAR(t.tail[k], p, 4.0 * se + 1e-12) << lambdas[k];
    }
}

TEST(Lyapunov, DeterministicProductMatchesEigenvalues) {
    const double e = 0.3;
    const Vector a = (Vector(3) << -2.7, 2.8, -3.9).finished();
    Matrix t = rbm::transfer_matrix(Matrix(a.asDiagonal()), Matrix::Identity(3, 3), e, rbm::GuardedLu(Matrix::Identity(3, 3)));
    const Eigen::EigenSolver<Matrix> es(t);
    std::vector<double> expected;
    for (Eigen::Index k = 0; k < 6; ++k) expected.push_back(std::log(std::abs(es.eigenvalues()(k))));
    std::sort(expected.rbegin(), expected.rend());
    const auto spectrum = rbm::lyapunov_from_source([&] { return t; }, 6, 2000, 4, 200);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(spectrum.exponents[k], expected[k], 1e-6);
    // channel k: lambda^2 - (E - a_k) lambda + 1 = 0
    const double c = e - a(2);
    EXPECT_NEAR(expected[0], std::log((std::abs(c) + std::sqrt(c * c - 4.0)) / 2.0), 1e-10);
}

TEST(Lyapunov, TransferMatrixIsSymplectic) {
    rbm::Stream rng = rbm::make_stream(3, {1});
    const Matrix a = rbm::sample_symmetric_block(rbm::EntryLaws::goe(), 3, rng);
    const Matrix b = rbm::sample_full_block(rbm::MRegularLaw::gaussian(1.0), 3, rng);
    const Matrix t = rbm::transfer_matrix(a, b, 0.3, rbm::GuardedLu(b));
    Matrix j = Matrix::Zero(6, 6);
    j.topRightCorner(3, 3) = Matrix::Identity(3, 3);
    j.bottomLeftCorner(3, 3) = -Matrix::Identity(3, 3);
    EXPECT_LT((t.transpose() * j * t - j).norm(), 1e-10);
    EXPECT_NEAR(t.determinant(), 1.0, 1e-10);
}

TEST(Lyapunov, GaussianSpectrumStructure) {
    const auto spectrum = rbm::lyapunov_spectrum(BandEnsemble::wegner_orbital(1, 2), 4000, 7);
    ASSERT_EQ(spectrum.size(), 4u);
    EXPECT_TRUE(std::is_sorted(spectrum.exponents.rbegin(), spectrum.exponents.rend()));
    EXPECT_LE(std::abs(spectrum.sum()), 3.0 * spectrum.sum_std_error());
    EXPECT_LE(spectrum.max_pairing_sigmas(), 5.0);
    EXPECT_GT(spectrum.gamma_min(), 3.0 * spectrum.gamma_min_std_error());
}

TEST(Lyapunov, Contracts) {
    const auto ens = BandEnsemble::wegner_orbital(1, 2);
    EXPECT_THROW(rbm::lyapunov_spectrum(ens, 999, 1), rbm::ContractError);
    EXPECT_THROW(rbm::lyapunov_spectrum(ens, 1000, 1, 0), rbm::ContractError);
}

TEST(BaiYin, ScalarQuadratureOracle) {
    const auto law = rbm::MRegularLaw::gaussian(1.0);
    const std::vector<int> sizes{1};
    const std::size_t n = 20000;
    const auto rows = rbm::bai_yin_tail(law, sizes, 0.1, n, 5, rbm::MatrixFill::symmetric);
    const double p = std::erfc(2.1 / std::numbers::sqrt2);
    EXPECT_NEAR(rows[0].probability, p, 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST(BaiYin, GaussianSymmetricConcentrates) {
    const std::vector<int> sizes{256};
    const auto rows = rbm::bai_yin_tail(rbm::MRegularLaw::gaussian(1.0), sizes, 0.1, 200, 8, rbm::MatrixFill::symmetric);
    EXPECT_LE(rows[0].probability, 0.1);
}

TEST(BaiYin, GaussianScoreFillIsScaledNegative) {
    const auto law = rbm::MRegularLaw::gaussian(1.0);
    rbm::Stream r1 = rbm::make_stream(4, {2});
    rbm::Stream r2 = rbm::make_stream(4, {2});
    const Matrix a = rbm::fill_matrix(law, 12, rbm::MatrixFill::symmetric, r1);
    const Matrix f = rbm::fill_matrix(law, 12, rbm::MatrixFill::score, r2);
    EXPECT_LT((f + a / std::sqrt(law.m_bound())).norm(), 1e-13);
    EXPECT_NEAR(rbm::op_norm(f), rbm::op_norm(a) / std::sqrt(law.m_bound()), 1e-10);
}

TEST(BaiYin, GeneralFillIsNotSymmetric) {
    rbm::Stream rng = rbm::make_stream(4, {3});
    const Matrix g = rbm::fill_matrix(rbm::MRegularLaw::gaussian(1.0), 6, rbm::MatrixFill::general, rng);
    EXPECT_GT(rbm::asymmetry(g), 1e-3);
}

TEST(FractionalMoment, TwoSeedsAgreeWithinErrors) {
    const auto ens = BandEnsemble::wegner_orbital(1, 2);
    const std::vector<int> lengths{10, 20, 40};
    const auto a = rbm::fractional_moment_curve(ens, lengths, 0.2, 400, 101);
    const auto b = rbm::fractional_moment_curve(ens, lengths, 0.2, 400, 202);
    for (std::size_t k = 0; k < lengths.size(); ++k) {
        const double se = std::hypot(a.log_moment_err[k], b.log_moment_err[k]);
        EXPECT_LE(std::abs(a.log_moment[k] - b.log_moment[k]), 3.0 * se) << lengths[k];
    }
}

TEST(Lyapunov, SmallestExponentScalesAsInverseWidth) {
    std::vector<double> scaled;
    for (int w : {2, 4, 8}) scaled.push_back(rbm::lyapunov_spectrum(BandEnsemble::wegner_orbital(1, w), 4000, 3).gamma_min() * w);
    const auto [lo, hi] = std::minmax_element(scaled.begin(), scaled.end());
    EXPECT_LE(*hi / *lo, 3.0);
}
