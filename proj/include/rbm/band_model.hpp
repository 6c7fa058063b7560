#pragma once

// The block tri-diagonal random band matrix
//
//     H = [ A_1    B_1                 ]
//         [ B_1^T  A_2    B_2          ]
//         [        ...    ...   B_{N-1}]
//         [             B_{N-1}^T  A_N ]
//
// with symmetric A_i and entries of sqrt(W) A_i, sqrt(W) B_i drawn from the
// configured laws. Block i is drawn from its own stream derived from
// (seed, block kind, i), so a Hamiltonian with N blocks is the restriction of any
// longer one sampled from the same seed.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "rbm/distributions.hpp"
#include "rbm/errors.hpp"
#include "rbm/linalg.hpp"
#include "rbm/random.hpp"

namespace rbm {

inline constexpr double kDefaultEnergyWindow = 2.0;

struct BandEnsemble {
    int n_blocks = 1;
    int block_size = 1;
    double energy = 0.3;
    EntryLaws a_laws = EntryLaws::goe();
    MRegularLaw b_law = MRegularLaw::gaussian(1.0);
    double energy_window = kDefaultEnergyWindow;  // E_0

    /// Real Wegner orbital model: GOE diagonal blocks, Ginibre couplings.
    static BandEnsemble wegner_orbital(int n, int w, double energy = 0.3) {
        BandEnsemble e;
        e.n_blocks = n;
        e.block_size = w;
        e.energy = energy;
        return e;
    }

    /// Every entry of sqrt(W) H drawn from the same law.
    static BandEnsemble uniform_law(int n, int w, const MRegularLaw& law, double energy = 0.3) {
        BandEnsemble e;
        e.n_blocks = n;
        e.block_size = w;
        e.energy = energy;
        e.a_laws = EntryLaws::uniform(law);
        e.b_law = law;
        return e;
    }

    [[nodiscard]] BandEnsemble with_size(int n, int w) const {
        BandEnsemble e = *this;
        e.n_blocks = n;
        e.block_size = w;
        return e;
    }

    void validate() const {
        if (n_blocks < 1 || block_size < 1) throw ContractError("ensemble: N and W must be >= 1");
        if (!(energy_window > 0.0)) throw ContractError("ensemble: E_0 must be positive");
        if (!(std::abs(energy) <= energy_window)) throw ContractError("ensemble: |E| exceeds E_0");
    }
};

struct BlockTridiagonal {
    std::vector<Matrix> a_blocks;
    std::vector<Matrix> b_blocks;

    [[nodiscard]] int n_blocks() const { return static_cast<int>(a_blocks.size()); }
    [[nodiscard]] int block_size() const { return a_blocks.empty() ? 0 : static_cast<int>(a_blocks[0].rows()); }
    [[nodiscard]] Eigen::Index dimension() const {
        return static_cast<Eigen::Index>(n_blocks()) * block_size();
    }

    void validate() const {
        if (a_blocks.empty() || b_blocks.size() + 1 != a_blocks.size()) {
            throw DimensionError("block tridiagonal: need N >= 1 diagonal and N-1 coupling blocks");
        }
        const Eigen::Index w = a_blocks[0].rows();
        for (const auto& a : a_blocks) {
            if (a.rows() != w || a.cols() != w) throw DimensionError("block tridiagonal: bad A block");
            if (asymmetry(a) > 1e-14) throw ContractError("block tridiagonal: A block not symmetric");
        }
        for (const auto& b : b_blocks) {
            if (b.rows() != w || b.cols() != w) throw DimensionError("block tridiagonal: bad B block");
        }
    }
};

inline Matrix sample_symmetric_block(const EntryLaws& laws, int w, Stream& rng) {
    const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(w));
    Matrix a(w, w);
    for (int i = 0; i < w; ++i) {
        a(i, i) = inv_sqrt_w * laws.diagonal.sample(rng);
        for (int k = i + 1; k < w; ++k) {
            const double v = inv_sqrt_w * laws.off_diagonal.sample(rng);
            a(i, k) = v;
            a(k, i) = v;
        }
    }
    return a;
}

inline Matrix sample_full_block(const MRegularLaw& law, int w, Stream& rng) {
    const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(w));
    Matrix b(w, w);
    for (int i = 0; i < w; ++i) {
        for (int k = 0; k < w; ++k) b(i, k) = inv_sqrt_w * law.sample(rng);
    }
    return b;
}

inline BlockTridiagonal sample_hamiltonian(const BandEnsemble& ens, std::uint64_t seed) {
    ens.validate();
    BlockTridiagonal h;
    h.a_blocks.reserve(static_cast<std::size_t>(ens.n_blocks));
    h.b_blocks.reserve(static_cast<std::size_t>(ens.n_blocks - 1));
    for (int i = 0; i < ens.n_blocks; ++i) {
        Stream rng = make_stream(seed, {tag::a_block, static_cast<std::uint64_t>(i)});
        h.a_blocks.push_back(sample_symmetric_block(ens.a_laws, ens.block_size, rng));
    }
    for (int i = 0; i + 1 < ens.n_blocks; ++i) {
        Stream rng = make_stream(seed, {tag::b_block, static_cast<std::uint64_t>(i)});
        h.b_blocks.push_back(sample_full_block(ens.b_law, ens.block_size, rng));
    }
    return h;
}

inline Matrix assemble_dense(const BlockTridiagonal& h) {
    h.validate();
    const Eigen::Index w = h.block_size();
    const Eigen::Index n = h.dimension();
    Matrix m = Matrix::Zero(n, n);
    for (int i = 0; i < h.n_blocks(); ++i) {
        m.block(i * w, i * w, w, w) = h.a_blocks[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i + 1 < h.n_blocks(); ++i) {
        const Matrix& b = h.b_blocks[static_cast<std::size_t>(i)];
        m.block(i * w, (i + 1) * w, w, w) = b;
        m.block((i + 1) * w, i * w, w, w) = b.transpose();
    }
    return m;
}

/// Sub-chain on the 1-based inclusive block interval [first, last].
inline BlockTridiagonal restrict(const BlockTridiagonal& h, int first, int last) {
    if (first < 1 || last < first || last > h.n_blocks()) {
        throw DimensionError("restrict: interval [" + std::to_string(first) + ", " + std::to_string(last) +
                             "] is empty or outside [1, " + std::to_string(h.n_blocks()) + "]");
    }
    BlockTridiagonal out;
    out.a_blocks.assign(h.a_blocks.begin() + (first - 1), h.a_blocks.begin() + last);
    out.b_blocks.assign(h.b_blocks.begin() + (first - 1), h.b_blocks.begin() + (last - 1));
    return out;
}

/// One row per line, space separated, 17 significant digits.
inline void write_dense_text(std::ostream& out, const Matrix& m) {
    const auto flags = out.flags();
    const auto precision = out.precision();
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            if (k) out << ' ';
            out << m(i, k);
        }
        out << '\n';
    }
    out.flags(flags);
    out.precision(precision);
}

}  // namespace rbm
