#pragma once

// Experiment drivers. Each run_* turns a validated config into result tables;
// the typed sweeps underneath are also used directly by the acceptance suite.

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rbm/band_model.hpp"
#include "rbm/distributions.hpp"
#include "rbm/estimators.hpp"
#include "rbm/fluctuation.hpp"
#include "rbm/harness/config.hpp"
#include "rbm/harness/output.hpp"
#include "rbm/parallel.hpp"
#include "rbm/random.hpp"
#include "rbm/schenker.hpp"

namespace rbm::harness {

inline constexpr double kMapTolerance = 1e-10;
inline constexpr double kMaxCensoredFraction = 0.01;

// ---------------------------------------------------------------------------
// exact identities

struct IdentityRow {
    std::size_t instance = 0;
    int w = 0;
    int n = 0;
    IdentityReport report;
};

/// Instances cycle through widths fastest, then lengths.
inline std::vector<IdentityRow> identity_sweep(const ExperimentConfig& cfg) {
    const std::size_t nw = cfg.widths.size();
    const std::size_t nl = cfg.lengths.size();
    return parallel_map(cfg.instances, cfg.workers, [&](std::size_t k) {
        IdentityRow row;
        row.instance = k;
        row.w = cfg.widths[k % nw];
        row.n = cfg.lengths[(k / nw) % nl];
        const auto h = sample_hamiltonian(cfg.ensemble_at(row.n, row.w), sample_seed(cfg.seed, row.w, k));
        row.report = verify_identities(h, cfg.energy, unit_vector(row.w), cfg.tolerance);
        return row;
    });
}

inline Vector random_unit(int w, Stream& rng) {
    Vector v(w);
    for (int i = 0; i < w; ++i) v(i) = standard_normal(rng);
    return v / v.norm();
}

struct MapRow {
    std::string check;  // determinant | composition | transfer
    int w = 0;
    double delta = 0.0;
    double value = 0.0;
    double expected = 0.0;
    double residual = 0.0;  // relative
};

/// det of the assembled rank-one map against (1 + delta)^W, the composition law
/// T_a T_b = T_{a + b + ab}, and det T = 1 with T^T J T = J for transfer matrices.
inline std::vector<MapRow> map_checks(std::uint64_t seed, std::span<const int> widths = std::vector<int>{2, 3, 4, 8}) {
    std::vector<MapRow> rows;
    for (const int w : widths) {
        Stream rng = make_stream(seed, {tag::mcmc, static_cast<std::uint64_t>(w)});
        const Vector v = random_unit(w, rng);
        for (const double delta : {0.5, -0.5, 2.0 / std::sqrt(static_cast<double>(w))}) {
            const double det = rank_one_map_operator(PerturbationStep(delta, v)).determinant();
            const double expected = std::pow(1.0 + delta, w);
            rows.push_back({"determinant", w, delta, det, expected, std::abs(det - expected) / std::abs(expected)});
        }
        const Matrix b = sample_full_block(MRegularLaw::gaussian(1.0), w, rng);
        const double d1 = 0.3, d2 = -0.2;
        const Matrix twice = rank_one_map(rank_one_map(b, PerturbationStep(d2, v)), PerturbationStep(d1, v));
        const Matrix once = rank_one_map(b, PerturbationStep(d1 + d2 + d1 * d2, v));
        rows.push_back({"composition", w, d1 + d2 + d1 * d2, twice.norm(), once.norm(), (twice - once).norm() / once.norm()});

        const Matrix a = sample_symmetric_block(EntryLaws::goe(), w, rng);
        const Matrix t = transfer_matrix(a, b, 0.3, GuardedLu(b));
        Matrix j = Matrix::Zero(2 * w, 2 * w);
        j.topRightCorner(w, w) = Matrix::Identity(w, w);
        j.bottomLeftCorner(w, w) = -Matrix::Identity(w, w);
        const double det = t.determinant();
        rows.push_back({"transfer", w, 0.0, det, 1.0, std::max(std::abs(det - 1.0), (t.transpose() * j * t - j).norm() / j.norm())});
    }
    return rows;
}

struct Phi2Row {
    std::size_t instance = 0;
    int w = 0;
    double delta = 0.0;
    double phi2 = 0.0;
    double expected = 0.0;  // -W delta^2 ||Bv||^2
    double residual = 0.0;  // |phi2 - expected| / max(1, |expected|)
};

/// Gaussian couplings: the phi_2 part of the second difference in closed form.
inline std::vector<Phi2Row> gaussian_phi2_checks(std::size_t count, std::span<const int> widths, std::uint64_t seed) {
    std::vector<Phi2Row> rows;
    for (std::size_t k = 0; k < count; ++k) {
        const int w = widths[k % widths.size()];
        const auto ens = BandEnsemble::wegner_orbital(2, w);
        const auto h = sample_hamiltonian(ens, sample_seed(seed, w, k));
        const auto d = d_recursion(h, ens.energy);
        if (d.blocks.size() < 2) continue;
        const auto ctx = FluctuationContext::at(h, ens, d, 1);
        Stream rng = make_stream(seed, {tag::mcmc, static_cast<std::uint64_t>(w), k});
        const Vector v = random_unit(w, rng);
        const auto step = PerturbationStep::default_for(v);
        const Matrix& b = h.b_blocks[0];
        const PerturbationStep minus = step.negated();
        const double phi2 = ctx.log_phi2(rank_one_map(b, minus)) + ctx.log_phi2(rank_one_map(b, step)) - 2.0 * ctx.log_phi2(b);
        const double bv = (b * v).squaredNorm();
        const double expected = -static_cast<double>(w) * step.delta * step.delta * bv;
        rows.push_back({k, w, step.delta, phi2, expected, std::abs(phi2 - expected) / std::max(1.0, std::abs(expected))});
    }
    return rows;
}

inline RunResult run_verify(const ExperimentConfig& cfg) {
    RunResult r;
    Table ids{"identities",
              {"instance", "W", "N", "product_residual", "schur_residual", "alpha_sum_residual", "schur_formula_residual",
               "censored", "pass"},
              {}};
    double worst = 0.0;
    for (const auto& row : identity_sweep(cfg)) {
        const auto& rep = row.report;
        const bool ok = rep.censored || rep.max_residual() <= cfg.tolerance;
        if (rep.censored) {
            ++r.censored;
        } else {
            worst = std::max(worst, rep.max_residual());
        }
        if (!ok) r.failures.push_back("identity residual above tolerance at instance " + std::to_string(row.instance));
        ids.add({count_cell(row.instance), row.w, row.n, rep.product_residual, rep.schur_residual, rep.alpha_sum_residual,
                 rep.schur_formula_residual, rep.censored ? 1LL : 0LL, ok ? 1LL : 0LL});
    }
    const double censored_fraction = static_cast<double>(r.censored) / static_cast<double>(cfg.instances);
    if (censored_fraction >= kMaxCensoredFraction) r.failures.push_back("censored fraction at or above 1%");

    Table maps{"maps", {"check", "W", "delta", "value", "expected", "residual", "pass"}, {}};
    for (const auto& m : map_checks(cfg.seed)) {
        const bool ok = m.residual <= kMapTolerance;
        if (!ok) r.failures.push_back(m.check + " residual above tolerance at W=" + std::to_string(m.w));
        maps.add({m.check, m.w, m.delta, m.value, m.expected, m.residual, ok ? 1LL : 0LL});
    }

    Table phi2{"distortion", {"instance", "W", "delta", "phi2_term", "expected", "residual", "pass"}, {}};
    for (const auto& p : gaussian_phi2_checks(100, cfg.widths, cfg.seed)) {
        const bool ok = p.residual <= kMapTolerance;
        if (!ok) r.failures.push_back("phi2 closed form off at instance " + std::to_string(p.instance));
        phi2.add({count_cell(p.instance), p.w, p.delta, p.phi2, p.expected, p.residual, ok ? 1LL : 0LL});
    }

    r.summary["instances"] = cfg.instances;
    r.summary["censored_fraction"] = censored_fraction;
    r.summary["max_identity_residual"] = worst;
    r.summary["tolerance"] = cfg.tolerance;
    r.tables = {std::move(ids), std::move(maps), std::move(phi2)};
    return r;
}

// ---------------------------------------------------------------------------
// estimators

inline RunResult run_decay(const ExperimentConfig& cfg) {
    RunResult r;
    Table moments{"moments", {"W", "N", "q", "log_moment", "log_moment_err", "moment", "censored", "samples"}, {}};
    Table fits{"fits", {"W", "slope", "slope_err", "intercept", "r_squared", "points_used", "slope_times_W"}, {}};
    const auto ens = cfg.ensemble_at(1, cfg.widths.front());
    const auto scan = fractional_moment_scan(ens, cfg.widths, cfg.length_multipliers, cfg.q, cfg.sample_count(), cfg.seed,
                                             cfg.workers);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& c : scan) {
        for (std::size_t k = 0; k < c.lengths.size(); ++k) {
            moments.add({c.block_size, c.lengths[k], c.q, c.log_moment[k], c.log_moment_err[k], std::exp(c.log_moment[k]),
                         count_cell(c.censored[k]), count_cell(c.samples)});
            r.censored += c.censored[k];
        }
        const double sw = std::abs(c.fit.slope) * c.block_size;
        lo = std::min(lo, sw);
        hi = std::max(hi, sw);
        fits.add({c.block_size, c.fit.slope, c.fit.std_error, c.fit.intercept, c.fit.r_squared,
                  count_cell(c.fit.points_used), c.fit.slope * c.block_size});
    }
    r.summary["slope_times_W_ratio"] = hi / lo;
    r.tables = {std::move(moments), std::move(fits)};
    return r;
}

inline RunResult run_localize(const ExperimentConfig& cfg) {
    RunResult r;
    Table profiles{"profiles", {"W", "N", "distance", "profile"}, {}};
    Table fits{"fits", {"W", "N", "samples", "slope", "slope_err", "length", "points_used", "r_squared", "length_over_W2"}, {}};
    std::vector<std::pair<int, double>> lengths;
    for (const int w : cfg.widths) {
        const int n = std::max(1, cfg.dimension / w);
        const auto ens = cfg.ensemble_at(n, w);
        const int samples = static_cast<int>(cfg.sample_count());
        std::optional<LocalizationResult> res;
        try {
            res = localization_scan(ens, static_cast<std::size_t>(samples), cfg.seed, cfg.workers, cfg.noise_floor);
        } catch (const FitError& e) {
            r.failures.push_back("W=" + std::to_string(w) + ": " + e.what());
            fits.add({w, n, samples, std::nan(""), std::nan(""), std::nan(""), 0LL, std::nan(""), std::nan("")});
            continue;
        }
        for (Eigen::Index d = 0; d < res->profile.size(); ++d) profiles.add({w, n, static_cast<long long>(d), res->profile(d)});
        const auto& f = res->fit;
        fits.add({w, n, samples, f.fit.slope, f.fit.std_error, f.length, count_cell(f.fit.points_used), f.fit.r_squared,
                  f.length / (w * w)});
        lengths.emplace_back(w, f.length);
    }
    if (lengths.size() >= 2) {
        const auto [w0, l0] = lengths.front();
        const auto [w1, l1] = lengths.back();
        r.summary["length_ratio"] = l1 / l0;
        r.summary["predicted_ratio"] = std::pow(static_cast<double>(w1) / w0, 2);
    }
    r.tables = {std::move(profiles), std::move(fits)};
    return r;
}

inline RunResult run_wegner(const ExperimentConfig& cfg) {
    RunResult r;
    Table tail{"tail", {"W", "lambda", "tail", "samples", "censored"}, {}};
    Table scaling{"scaling", {"W", "sup_lambda_tail", "normalized"}, {}};
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const int w : cfg.widths) {
        const auto t = wegner_tail(cfg.ensemble_at(cfg.blocks, w), cfg.block_i, cfg.block_j, cfg.lambdas,
                                   cfg.sample_count(), cfg.seed, cfg.workers);
        for (std::size_t k = 0; k < t.lambdas.size(); ++k) {
            tail.add({w, t.lambdas[k], t.tail[k], count_cell(t.samples), count_cell(t.censored)});
        }
        scaling.add({w, t.sup_lambda_tail, t.normalized()});
        lo = std::min(lo, t.normalized());
        hi = std::max(hi, t.normalized());
        r.censored += t.censored;
    }
    r.summary["normalized_spread"] = hi / lo;
    r.tables = {std::move(tail), std::move(scaling)};
    return r;
}

inline RunResult run_lyapunov(const ExperimentConfig& cfg) {
    RunResult r;
    Table exps{"exponents", {"W", "k", "gamma", "std_error"}, {}};
    Table structure{"structure",
                    {"W", "sum", "sum_std_error", "max_pairing", "max_pairing_sigmas", "gamma_min", "gamma_min_std_error",
                     "gamma_min_times_W", "censored_steps"},
                    {}};
    const auto results = parallel_map(cfg.widths.size(), cfg.workers, [&](std::size_t k) {
        return lyapunov_spectrum(cfg.ensemble_at(1, cfg.widths[k]), cfg.steps, cfg.seed, cfg.reorth_period);
    });
    for (std::size_t i = 0; i < results.size(); ++i) {
        const int w = cfg.widths[i];
        const auto& s = results[i];
        for (std::size_t k = 0; k < s.size(); ++k) exps.add({w, static_cast<long long>(k + 1), s.exponents[k], s.std_errors[k]});
        structure.add({w, s.sum(), s.sum_std_error(), s.max_pairing(), s.max_pairing_sigmas(), s.gamma_min(),
                       s.gamma_min_std_error(), s.gamma_min() * w, count_cell(s.censored_steps)});
        r.censored += s.censored_steps;
    }
    r.tables = {std::move(exps), std::move(structure)};
    return r;
}

// ---------------------------------------------------------------------------
// fluctuation checks

struct ChainSurvey {
    int w = 0;
    int n = 0;
    int middle = 0;
    std::size_t chains = 0;
    std::size_t censored = 0;
    EitherOrReport either_or;
    std::vector<double> alphas;  // alpha at the middle index
    std::vector<std::vector<double>> x_rows;
    double max_distortion_ratio = 0.0;
};

/// Full chains at (N, W) with w = e_1: either-or totals, alpha_{N/2}, X_j rows,
/// and the distortion ratio at the middle position along v_{N/2}.
inline ChainSurvey survey_chains(const BandEnsemble& ens, std::size_t chains, std::uint64_t seed, std::size_t workers) {
    struct One {
        bool censored = true;
        EitherOrReport eo;
        double alpha = 0.0;
        std::vector<double> x;
        double ratio = 0.0;
    };
    const int w = ens.block_size;
    const int n = ens.n_blocks;
    const int middle = std::max(1, n / 2);
    const auto parts = parallel_map(chains, workers, [&](std::size_t i) {
        One o;
        const auto h = sample_hamiltonian(ens, derive_seed(seed, {tag::sample, static_cast<std::uint64_t>(w),
                                                                  static_cast<std::uint64_t>(n), i}));
        const auto chain = schenker_chain(h, ens.energy, unit_vector(w));
        if (chain.censored) return o;
        o.censored = false;
        o.eo = either_or_check(chain, h, ens.energy);
        o.alpha = chain.alphas[static_cast<std::size_t>(middle - 1)];
        o.x = x_statistics(chain, h, ens.a_laws);
        if (middle < n) {
            const auto d = d_recursion(h, ens.energy);
            const auto ctx = FluctuationContext::at(h, ens, d, middle);
            if (!ctx.censored()) {
                const auto step = PerturbationStep::default_for(chain.v_dirs[static_cast<std::size_t>(middle - 1)]);
                o.ratio = distortion(h.b_blocks[static_cast<std::size_t>(middle - 1)], step, ctx).ratio();
            }
        }
        return o;
    });
    ChainSurvey s;
    s.w = w;
    s.n = n;
    s.middle = middle;
    s.chains = chains;
    for (const auto& o : parts) {
        if (o.censored) {
            ++s.censored;
            continue;
        }
        s.either_or.checked += o.eo.checked;
        s.either_or.unchecked += o.eo.unchecked;
        s.either_or.violations += o.eo.violations;
        s.either_or.first_branch_failures += o.eo.first_branch_failures;
        s.either_or.max_first = std::max(s.either_or.max_first, o.eo.max_first);
        s.alphas.push_back(o.alpha);
        if (!o.x.empty()) s.x_rows.push_back(o.x);
        s.max_distortion_ratio = std::max(s.max_distortion_ratio, o.ratio);
    }
    return s;
}

inline RunResult run_fluctuate(const ExperimentConfig& cfg) {
    RunResult r;
    Table checks{"checks", {"check", "W", "N", "delta", "t", "value", "bound", "count", "holds"}, {}};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const double delta : cfg.deltas) {
        for (const double t : cfg.t_values) {
            const auto mw = mw_toy_gaussian(delta, t);
            checks.add({"mw_toy", 0LL, 0LL, delta, t, mw.sup_window, mw.bound, 0LL, mw.holds ? 1LL : 0LL});
            if (!mw.holds) r.failures.push_back("Mermin-Wagner toy fails at delta=" + format_double(delta));
        }
    }
    const double t0 = default_t0(cfg.build_law().m_bound(), cfg.energy);
    for (const int w : cfg.widths) {
        for (const int n : cfg.lengths) {
            if (n < 2) continue;
            const auto s = survey_chains(cfg.ensemble_at(n, w), cfg.sample_count(), cfg.seed, cfg.workers);
            r.censored += s.censored;
            const double width = 1.0 / std::sqrt(static_cast<double>(w));
            checks.add({"either_or", w, n, nan, nan, static_cast<double>(s.either_or.violations), 0.0,
                        count_cell(s.either_or.checked), s.either_or.violations == 0 ? 1LL : 0LL});
            if (s.either_or.violations > 0) r.failures.push_back("either-or violated at W=" + std::to_string(w));
            if (s.alphas.size() >= kMinAntiConcentrationSamples) {
                const double p = anti_concentration(s.alphas, width);
                checks.add({"anti_concentration", w, n, width, nan, p, 0.98, count_cell(s.alphas.size()), p <= 0.98 ? 1LL : 0LL});
            }
            if (!s.x_rows.empty()) {
                const auto f = x_indicator_frequency(s.x_rows, t0);
                checks.add({"x_indicator", w, n, nan, t0, f.average, nan, count_cell(f.chains), 1LL});
            }
            checks.add({"distortion_constant", w, n, PerturbationStep::default_delta(w), nan, s.max_distortion_ratio, nan,
                        count_cell(s.alphas.size()), 1LL});
        }
    }
    r.tables = {std::move(checks)};
    return r;
}

inline RunResult run_mregular(const ExperimentConfig& cfg) {
    RunResult r;
    const auto law = cfg.build_law();
    const auto rep = verify_m_regular(law, cfg.sample_count(), cfg.seed);
    Table moments{"moments", {"law", "quantity", "estimate", "std_error", "bound"}, {}};
    const double m = rep.m_bound;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    moments.add({cfg.law, "mean", rep.mean.value, rep.mean.std_error, 0.0});
    moments.add({cfg.law, "second_moment", rep.second_moment.value, rep.second_moment.std_error, 1.0});
    moments.add({cfg.law, "fourth_moment", rep.fourth_moment.value, rep.fourth_moment.std_error, m});
    moments.add({cfg.law, "log_density_curvature", rep.sup_log_density_curvature, 0.0, m});
    moments.add({cfg.law, "score_mean", rep.score_mean.value, rep.score_mean.std_error, 0.0});
    moments.add({cfg.law, "score_moment2", rep.score_moment2.value, rep.score_moment2.std_error, m});
    moments.add({cfg.law, "score_moment4", rep.score_moment4.value, rep.score_moment4.std_error, 3.0 * m * m});
    moments.add({cfg.law, "m_bound", m, 0.0, nan});
    for (const auto& f : rep.failures) r.failures.push_back("m-regularity: " + f);

    Table tails{"bai_yin", {"fill", "n", "epsilon", "probability", "std_error", "samples"}, {}};
    for (const auto fill : cfg.fills()) {
        for (const auto& row : bai_yin_tail(law, cfg.sizes, cfg.epsilon, cfg.matrix_samples, cfg.seed, fill, cfg.workers)) {
            tails.add({to_string(fill), row.n, cfg.epsilon, row.probability, row.std_error, count_cell(row.samples)});
        }
    }
    r.summary["m_bound"] = m;
    r.tables = {std::move(moments), std::move(tails)};
    return r;
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    switch (cfg.experiment) {
        case Experiment::verify: return run_verify(cfg);
        case Experiment::decay: return run_decay(cfg);
        case Experiment::localize: return run_localize(cfg);
        case Experiment::wegner: return run_wegner(cfg);
        case Experiment::lyapunov: return run_lyapunov(cfg);
        case Experiment::fluctuate: return run_fluctuate(cfg);
        default: return run_mregular(cfg);
    }
}

/// Runs, writes tables and sidecar, logs a summary. Exit status 0 when every
/// check held, 1 otherwise.
inline int run(const ExperimentConfig& cfg, std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    const auto result = run_experiment(cfg);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& p : write_outputs(cfg, result, wall)) log << "wrote " << p.string() << '\n';
    if (!result.summary.empty()) log << result.summary.dump() << '\n';
    for (const auto& f : result.failures) log << "FAILED: " << f << '\n';
    return result.passed() ? 0 : 1;
}

}  // namespace rbm::harness
