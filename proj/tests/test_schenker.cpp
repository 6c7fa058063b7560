#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rbm/schenker.hpp"

using rbm::BandEnsemble;
using rbm::Matrix;
using rbm::Vector;

namespace {

Matrix dense_corner(const rbm::BlockTridiagonal& h, double e) {
    const auto dim = h.dimension();
    const auto w = h.block_size();
    const Matrix g = oracle::dense_inverse(rbm::assemble_dense(h) - e * Matrix::Identity(dim, dim));
    return g.block(0, dim - w, w, w);
}

}  // namespace

TEST(DRecursion, SingleBlock) {
    const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(1, 3), 4);
    const auto d = rbm::d_recursion(h, 0.3);
    ASSERT_EQ(d.blocks.size(), 1u);
    EXPECT_EQ(d.blocks[0], h.a_blocks[0] - 0.3 * Matrix::Identity(3, 3));
    const auto chain = rbm::schenker_chain(h, 0.3, rbm::unit_vector(3));
    EXPECT_EQ(chain.sign, 1);
    EXPECT_LT((rbm::corner_block_product(chain, h.b_blocks) - dense_corner(h, 0.3)).norm(), 1e-10);
}

TEST(DRecursion, ScalarContinuedFraction) {
    rbm::BlockTridiagonal h;
    for (double a : {1.0, -0.5, 2.0, 0.7}) h.a_blocks.push_back(Matrix::Constant(1, 1, a));
    for (double b : {0.4, -1.1, 0.9}) h.b_blocks.push_back(Matrix::Constant(1, 1, b));
    const double e = 0.3;
    double d = 1.0 - e;
    std::vector<double> expected{d};
    const double as[] = {-0.5, 2.0, 0.7}, bs[] = {0.4, -1.1, 0.9};
    for (int j = 0; j < 3; ++j) {
        d = as[j] - e - bs[j] * bs[j] / d;
        expected.push_back(d);
    }
    const auto seq = rbm::d_recursion(h, e);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(seq.blocks[j](0, 0), expected[j], 1e-14);
    EXPECT_FALSE(seq.censored);
}

TEST(SchenkerChain, CornerProductMatchesDenseInverse) {
    for (int w : {1, 2, 4}) {
        for (int n : {1, 2, 8, 32}) {
            const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(n, w), 100 * w + n);
            const auto chain = rbm::schenker_chain(h, 0.3, rbm::unit_vector(w));
            if (chain.censored) continue;
            const Matrix expected = dense_corner(h, 0.3);
            EXPECT_LE((rbm::corner_block_product(chain, h.b_blocks) - expected).norm() / expected.norm(), 1e-8)
                << "W=" << w << " N=" << n;
            EXPECT_EQ(chain.sign, n % 2 == 1 ? 1 : -1);
        }
    }
}

TEST(SchenkerChain, AlphaSumIsLogNorm) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const int w = 3, n = 12;
        const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(n, w), seed);
        Vector v = oracle::random_matrix(w, 1, seed + 50).col(0);
        v.normalize();
        const auto chain = rbm::schenker_chain(h, 0.3, v);
        ASSERT_FALSE(chain.censored);
        const double expected = std::log((dense_corner(h, 0.3) * v).norm());
        EXPECT_NEAR(chain.log_norm(), expected, 1e-8 * (1 + std::abs(expected)));
        ASSERT_EQ(chain.v_dirs.size(), static_cast<std::size_t>(n));
        EXPECT_EQ(chain.v_dirs.back(), v);
        for (const auto& d : chain.v_dirs) EXPECT_NEAR(d.norm(), 1.0, 1e-13);
    }
}

TEST(SchenkerChain, DirectionsFollowBackwardRecursion) {
    const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(6, 2), 3);
    const Vector w = rbm::unit_vector(2, 1);
    const auto chain = rbm::schenker_chain(h, 0.3, w);
    // v_{j} is the direction of D_{j+1}^{-1} B_{j+1} v_{j+1}, computed here with full pivoting.
    for (std::size_t j = 0; j + 1 < chain.v_dirs.size(); ++j) {
        Vector next = chain.v_dirs[j + 1];
        Vector t = oracle::dense_inverse(chain.d_blocks[j + 1]) *
                   (j + 1 + 1 < chain.v_dirs.size() ? Vector(h.b_blocks[j + 1] * next) : next);
        EXPECT_LT((t.normalized() - chain.v_dirs[j]).norm(), 1e-10);
        EXPECT_NEAR(chain.alphas[j + 1], std::log(t.norm()), 1e-10);
    }
}

TEST(BackwardDirections, PrefixMatchesRestrictedChain) {
    const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(20, 3), 12);
    const auto d = rbm::d_recursion(h, 0.3);
    const Vector w = rbm::unit_vector(3);
    for (std::size_t len : {1u, 5u, 13u, 20u}) {
        const auto dirs = rbm::backward_directions(d, h.b_blocks, w, len);
        const auto sub = rbm::schenker_chain(rbm::restrict(h, 1, static_cast<int>(len)), 0.3, w);
        ASSERT_EQ(dirs.alphas.size(), len);
        for (std::size_t j = 0; j < len; ++j) EXPECT_NEAR(dirs.alphas[j], sub.alphas[j], 1e-12);
    }
    EXPECT_THROW(rbm::backward_directions(d, h.b_blocks, w, 21), rbm::DimensionError);
    EXPECT_THROW(rbm::backward_directions(d, h.b_blocks, 2.0 * w), rbm::ContractError);
}

TEST(BackwardDirections, FromExplicitBlocks) {
    const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(5, 2), 8);
    const auto chain = rbm::schenker_chain(h, 0.3, rbm::unit_vector(2));
    const auto dirs = rbm::backward_directions(std::span<const Matrix>(chain.d_blocks), h.b_blocks, rbm::unit_vector(2));
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(dirs.alphas[j], chain.alphas[j], 1e-14);
}

TEST(DRecursion, SingularBlockIsCensored) {
    rbm::BlockTridiagonal h;
    h.a_blocks = {0.3 * Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
    h.b_blocks = {Matrix::Identity(2, 2)};
    const auto d = rbm::d_recursion(h, 0.3);
    EXPECT_TRUE(d.censored);
    const auto chain = rbm::schenker_chain(h, 0.3, rbm::unit_vector(2));
    EXPECT_TRUE(chain.censored);
    EXPECT_THROW(rbm::corner_block_product(chain, h.b_blocks), rbm::ContractError);
    EXPECT_TRUE(rbm::verify_identities(h, 0.3, rbm::unit_vector(2)).censored);
}

TEST(DRecursion, IllConditionedBlockIsCensored) {
    rbm::BlockTridiagonal h;
    Matrix a = Matrix::Identity(2, 2);
    a(1, 1) = 0.3 + 1e-15;
    h.a_blocks = {a};
    const auto d = rbm::d_recursion(h, 0.3);
    EXPECT_TRUE(d.censored);
    EXPECT_GT(d.max_condition, rbm::kConditionGuard);
}

TEST(VerifyIdentities, RandomInstancesWithinTolerance) {
    int checked = 0;
    for (int w : {1, 2, 4, 8}) {
        for (int n : {1, 2, 8, 32}) {
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(n, w), 7000 + 31 * seed + w * n);
                const auto r = rbm::verify_identities(h, 0.3, rbm::unit_vector(w));
                if (r.censored) continue;
                ++checked;
                EXPECT_TRUE(r.within_tolerance) << "W=" << w << " N=" << n << " residual " << r.max_residual();
            }
        }
    }
    EXPECT_GE(checked, 40);
}

TEST(VerifyIdentities, SplitChoice) {
    const auto h = rbm::sample_hamiltonian(BandEnsemble::wegner_orbital(4, 2), 1);
    for (Eigen::Index k = 1; k < 8; ++k) EXPECT_TRUE(rbm::verify_identities(h, 0.3, rbm::unit_vector(2), 1e-8, k).within_tolerance);
    EXPECT_THROW(rbm::verify_identities(h, 0.3, rbm::unit_vector(2), 1e-8, 8), rbm::DimensionError);
}
