#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "shadowphase/errors.hpp"
#include "shadowphase/random_unitary.hpp"
#include "shadowphase/rng.hpp"
#include "shadowphase/statevector.hpp"

namespace shadowphase {

// Stream tags for the splittable RNG; keep these stable so datasets are
// reproducible across versions.
enum StreamTag : std::uint64_t {
    kTagOnsite = 0x01,
    kTagBrickwall = 0x02,
    kTagShadows = 0x03,
    kTagBasis = 0x04,
    kTagOutcome = 0x05,
    kTagState = 0x06,
    kTagLanczos = 0x07,
    kTagMomBlocks = 0x08,
    kTagGemRestart = 0x09,
    kTagInit = 0x0a,
    kTagShuffle = 0x0b,
    kTagDropout = 0x0c,
};

// One randomized measurement round on a patch: per site, the measurement
// basis (3 Euler angles) and the Z outcome bit.
struct ShadowSnapshot {
    std::vector<EulerAngles> basis;
    std::vector<std::uint8_t> outcomes;

    int patch_length() const { return static_cast<int>(basis.size()); }
};

struct ShadowSet {
    int patch_length = 0;
    std::vector<ShadowSnapshot> snapshots;
    std::string source_label;

    int n_snapshots() const { return static_cast<int>(snapshots.size()); }
};

struct MomConfig {
    int blocks = 10;             // K
    std::uint64_t seed = 0;      // block-assignment shuffle seed
};

struct MeasureOptions {
    bool pin_z_basis = false;    // test hook: all bases forced to (0,0,0)
};

// Flag value used when an estimator is undefined for a state; callers that
// build ROC curves keep the ordering (undefined sorts below everything).
inline constexpr double kEstimatorSentinel = -1e300;

namespace detail {

inline void apply_1q_vec(std::vector<cplx>& v, int qubit, const Eigen::Matrix2cd& u) {
    const std::size_t mask = std::size_t{1} << qubit;
    const cplx u00 = u(0, 0), u01 = u(0, 1), u10 = u(1, 0), u11 = u(1, 1);
    for (std::size_t base = 0; base < v.size(); base += 2 * mask) {
        for (std::size_t low = 0; low < mask; ++low) {
            const std::size_t i0 = base + low, i1 = i0 + mask;
            const cplx x = v[i0], y = v[i1];
            v[i0] = u00 * x + u01 * y;
            v[i1] = u10 * x + u11 * y;
        }
    }
}

// Pure-state ensemble equivalent to the marginal of `state` on the window:
// rho_window = sum_k weight_k |vec_k><vec_k|. Exact up to a 1e-13 eigenvalue
// cutoff on the trace-1 marginal. Rotating these window-sized vectors is far
// cheaper than rotating a full-chain working copy for every shadow.
struct WindowEnsemble {
    int length = 0;
    std::vector<double> weights;
    std::vector<std::vector<cplx>> vectors;  // each of dim 2^length
};

inline WindowEnsemble window_ensemble(const Statevector& state, int first_site, int length) {
    check_window(state.n_qubits, first_site, length, "window_ensemble");
    const std::size_t wdim = std::size_t{1} << length;
    const std::size_t lowdim = std::size_t{1} << first_site;
    const int high_bits = state.n_qubits - first_site - length;
    const std::size_t highdim = std::size_t{1} << high_bits;
    const std::size_t rdim = lowdim * highdim;

    WindowEnsemble ens;
    ens.length = length;

    if (wdim > 1024) {
        // Large window, few environment configurations: use the raw
        // environment columns |psi(rest = r, .)> directly.
        ens.weights.reserve(rdim);
        ens.vectors.reserve(rdim);
        for (std::size_t hi = 0; hi < highdim; ++hi) {
            for (std::size_t lo = 0; lo < lowdim; ++lo) {
                std::vector<cplx> col(wdim);
                double w = 0.0;
                const std::size_t base = (hi << (first_site + length)) | lo;
                for (std::size_t k = 0; k < wdim; ++k) {
                    col[k] = state.amps[base | (k << first_site)];
                    w += std::norm(col[k]);
                }
                if (w < 1e-300) continue;
                const double inv = 1.0 / std::sqrt(w);
                for (cplx& c : col) c *= inv;
                ens.weights.push_back(w);
                ens.vectors.push_back(std::move(col));
            }
        }
        return ens;
    }

    // Small window: eigendecompose the window marginal and keep the
    // significant eigenpairs (rank is bounded by the boundary lightcone for
    // shallow circuits, typically far below 2^length).
    const DensityMatrix rho = reduced_density_matrix(state, first_site, length);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho.m);
    const auto& vals = es.eigenvalues();
    const auto& vecs = es.eigenvectors();
    for (Eigen::Index k = 0; k < vals.size(); ++k) {
        if (vals(k) < 1e-13) continue;
        ens.weights.push_back(vals(k));
        std::vector<cplx> col(wdim);
        for (std::size_t j = 0; j < wdim; ++j) col[j] = vecs(static_cast<Eigen::Index>(j), k);
        ens.vectors.push_back(std::move(col));
    }
    return ens;
}

}  // namespace detail

// n_s rounds of single-site random-basis measurements on the patch
// [patch_start, patch_start + l). The source state is untouched. Basis and
// outcome streams are keyed by (shadow index, site index), so results do not
// depend on evaluation order.
inline ShadowSet measure_shadows(const Statevector& state, int patch_start, int l, int n_s,
                                 const RandomStream& rng, const MeasureOptions& opt = {}) {
    detail::check_window(state.n_qubits, patch_start, l, "measure_shadows");
    if (n_s < 1) throw ConfigError("measure_shadows: n_s must be >= 1");

    const detail::WindowEnsemble ens = detail::window_ensemble(state, patch_start, l);
    const std::size_t wdim = std::size_t{1} << l;
    const RandomStream base = rng.fork(kTagShadows);

    ShadowSet set;
    set.patch_length = l;
    set.snapshots.resize(static_cast<std::size_t>(n_s));

    std::vector<std::vector<cplx>> work(ens.vectors.size());
    for (int s = 0; s < n_s; ++s) {
        ShadowSnapshot& snap = set.snapshots[static_cast<std::size_t>(s)];
        snap.basis.resize(static_cast<std::size_t>(l));
        snap.outcomes.resize(static_cast<std::size_t>(l));

        const RandomStream shadow_rng = base.fork(static_cast<std::uint64_t>(s));
        work = ens.vectors;
        for (int k = 0; k < l; ++k) {
            EulerAngles a;
            if (!opt.pin_z_basis) {
                RandomStream site_rng = shadow_rng.fork(kTagBasis, static_cast<std::uint64_t>(k));
                a = euler_from_unitary(haar_u2(site_rng)).angles;
            }
            snap.basis[static_cast<std::size_t>(k)] = a;
            if (!opt.pin_z_basis) {
                const Eigen::Matrix2cd u = unitary_from_euler(a);
                for (auto& v : work) detail::apply_1q_vec(v, k, u);
            }
        }

        std::vector<double> p(wdim, 0.0);
        for (std::size_t e = 0; e < work.size(); ++e) {
            const double w = ens.weights[e];
            for (std::size_t j = 0; j < wdim; ++j) p[j] += w * std::norm(work[e][j]);
        }
        RandomStream outcome_rng = shadow_rng.fork(kTagOutcome);
        const std::vector<int> bits = detail::sample_from_window_table(p, l, outcome_rng);
        for (int k = 0; k < l; ++k) snap.outcomes[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(bits[static_cast<std::size_t>(k)]);
    }
    return set;
}

namespace detail {

inline Eigen::Matrix2cd single_site_snapshot(const EulerAngles& a, int outcome) {
    const Eigen::Matrix2cd u = unitary_from_euler(a);
    const Eigen::Vector2cd col = u.adjoint().col(outcome);  // U^dag |b>
    return 3.0 * (col * col.adjoint()) - Eigen::Matrix2cd::Identity();
}

// Bloch vector of the single-site snapshot (trace is 1, |r| = 3).
inline std::array<double, 3> snapshot_bloch(const EulerAngles& a, int outcome) {
    const Eigen::Matrix2cd m = single_site_snapshot(a, outcome);
    return {2.0 * m(0, 1).real(), -2.0 * m(0, 1).imag(), m(0, 0).real() - m(1, 1).real()};
}

inline Eigen::MatrixXcd kron(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
    Eigen::MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline void check_sites(const ShadowSet& set, std::span<const int> sites, int cap, const char* what) {
    if (sites.empty()) throw ConfigError(std::string(what) + ": empty site set");
    if (static_cast<int>(sites.size()) > cap)
        throw ConfigError(std::string(what) + ": " + std::to_string(sites.size()) +
                          " sites exceeds cap of " + std::to_string(cap));
    int prev = -1;
    for (int s : sites) {
        if (s <= prev || s >= set.patch_length)
            throw ConfigError(std::string(what) + ": sites must be strictly ascending within the patch");
        prev = s;
    }
}

}  // namespace detail

// Inverse-channel reconstruction of one snapshot on a subset of patch sites:
// tensor product over sites of 3 U^dag |b><b| U - I. Trace 1; not positive in
// general.
inline DensityMatrix snapshot_density(const ShadowSnapshot& snap, std::span<const int> sites) {
    if (sites.empty()) throw ConfigError("snapshot_density: empty site set");
    for (int s : sites)
        if (s < 0 || s >= snap.patch_length())
            throw ConfigError("snapshot_density: site outside patch");
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Ones(1, 1);
    for (int s : sites) {
        const Eigen::Matrix2cd d = detail::single_site_snapshot(
            snap.basis[static_cast<std::size_t>(s)], snap.outcomes[static_cast<std::size_t>(s)]);
        acc = detail::kron(d, acc);  // later (higher) sites are more significant
    }
    DensityMatrix rho;
    rho.n_qubits = static_cast<int>(sites.size());
    rho.m = std::move(acc);
    return rho;
}

inline constexpr int kMaxTomographySites = 6;

// Arithmetic mean of snapshot_density over all snapshots; the tomographic
// estimate of the marginal. Hermitian, trace 1, positivity not guaranteed.
inline DensityMatrix mean_snapshot(const ShadowSet& set, std::span<const int> sites) {
    detail::check_sites(set, sites, kMaxTomographySites, "mean_snapshot");
    if (set.snapshots.empty()) throw ConfigError("mean_snapshot: empty shadow set");
    const Eigen::Index dim = Eigen::Index{1} << sites.size();
    Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(dim, dim);
    for (const ShadowSnapshot& snap : set.snapshots) sum += snapshot_density(snap, sites).m;
    DensityMatrix rho;
    rho.n_qubits = static_cast<int>(sites.size());
    rho.m = sum / static_cast<double>(set.snapshots.size());
    return rho;
}

inline constexpr int kMaxPuritySites = 4;

struct PurityStats {
    std::size_t pair_evaluations = 0;                 // unique pairs across all blocks
    std::vector<double> block_estimates;
};

// Median-of-means estimate of tr(rho^2) on a site subset, via the pairwise
// U-statistic tr(rho_j rho_l) within each block. Blocks are contiguous
// chunks of a seeded shuffle. Cost is O(n_s^2 / K) pair evaluations. The
// estimate can leave [0, 1] from shot noise; it is never clamped here.
inline double purity_mom(const ShadowSet& set, std::span<const int> sites, const MomConfig& cfg,
                         PurityStats* stats = nullptr) {
    detail::check_sites(set, sites, kMaxPuritySites, "purity_mom");
    const int n = set.n_snapshots();
    if (cfg.blocks < 1) throw ConfigError("purity_mom: blocks must be >= 1");
    if (2 * cfg.blocks > n)
        throw ConfigError("purity_mom: need at least 2 snapshots per block (n_s=" +
                          std::to_string(n) + ", K=" + std::to_string(cfg.blocks) + ")");

    // Per-snapshot, per-site Bloch vectors: the pair trace factorizes as
    // prod_sites (1 + r_j . r_l) / 2.
    const int ns = static_cast<int>(sites.size());
    std::vector<std::array<double, 3>> bloch(static_cast<std::size_t>(n) * ns);
    for (int j = 0; j < n; ++j) {
        const ShadowSnapshot& snap = set.snapshots[static_cast<std::size_t>(j)];
        for (int s = 0; s < ns; ++s)
            bloch[static_cast<std::size_t>(j) * ns + s] = detail::snapshot_bloch(
                snap.basis[static_cast<std::size_t>(sites[s])],
                snap.outcomes[static_cast<std::size_t>(sites[s])]);
    }
    const auto pair_trace = [&](int j, int l) {
        double prod = 1.0;
        for (int s = 0; s < ns; ++s) {
            const auto& a = bloch[static_cast<std::size_t>(j) * ns + s];
            const auto& b = bloch[static_cast<std::size_t>(l) * ns + s];
            prod *= 0.5 * (1.0 + a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
        }
        return prod;
    };

    // Seeded shuffle, then contiguous chunks (sizes differ by at most one).
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    RandomStream shuffle_rng = RandomStream(cfg.seed).fork(kTagMomBlocks);
    for (int i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[shuffle_rng.next_below(static_cast<std::uint64_t>(i) + 1)]);

    std::vector<double> block_means;
    block_means.reserve(static_cast<std::size_t>(cfg.blocks));
    std::size_t pairs_total = 0;
    std::vector<double> vals;
    for (int k = 0; k < cfg.blocks; ++k) {
        const int lo = static_cast<int>((static_cast<long long>(k) * n) / cfg.blocks);
        const int hi = static_cast<int>((static_cast<long long>(k + 1) * n) / cfg.blocks);
        const int m = hi - lo;
        if (m < 2) throw ConfigError("purity_mom: block of size < 2");
        vals.clear();
        vals.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
        for (int a = lo; a < hi; ++a)
            for (int b = a + 1; b < hi; ++b) vals.push_back(pair_trace(order[a], order[b]));
        pairs_total += vals.size();
        // Sorted running mean: bit-exact under snapshot permutation and
        // exact when every pair value is identical.
        std::sort(vals.begin(), vals.end());
        double mean = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i)
            mean += (vals[i] - mean) / static_cast<double>(i + 1);
        block_means.push_back(mean);
    }

    std::vector<double> sorted = block_means;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    const double median = (sorted.size() % 2 == 1)
                              ? sorted[mid]
                              : 0.5 * (sorted[mid - 1] + sorted[mid]);
    if (stats) {
        stats->pair_evaluations = pairs_total;
        stats->block_estimates = std::move(block_means);
    }
    return median;
}

// Renyi-2 mutual information between two patch sites (defaults: the leftmost
// and rightmost), natural logarithm:
//   I2 = S2(A) + S2(B) - S2(AB) = ln(p_AB / (p_A p_B)).
// Throws EstimatorUndefined when any purity estimate is non-positive.
inline double renyi2_mutual_information(const ShadowSet& set, const MomConfig& cfg,
                                        int site_a = 0, int site_b = -1) {
    if (site_b < 0) site_b = set.patch_length - 1;
    if (site_a >= site_b) throw ConfigError("renyi2_mutual_information: need site_a < site_b");
    const std::array<int, 1> a{site_a};
    const std::array<int, 1> b{site_b};
    const std::array<int, 2> ab{site_a, site_b};
    const double pa = purity_mom(set, a, cfg);
    const double pb = purity_mom(set, b, cfg);
    const double pab = purity_mom(set, ab, cfg);
    if (pa <= 0.0 || pb <= 0.0 || pab <= 0.0)
        throw EstimatorUndefined("renyi2_mutual_information: non-positive purity estimate (p_A=" +
                                 std::to_string(pa) + ", p_B=" + std::to_string(pb) +
                                 ", p_AB=" + std::to_string(pab) + "); raise n_s");
    return std::log(pab / (pa * pb));
}

struct MiClassification {
    std::vector<int> labels;
    std::vector<double> estimates;      // sentinel-clamped when undefined
    std::vector<std::uint8_t> undefined;
};

// Threshold classifier on the mutual-information estimate; label 1 (SSB) iff
// the estimate exceeds the threshold. Undefined estimates are clamped to the
// sentinel minimum and flagged, so ROC construction still sees every state.
inline MiClassification mi_classify(const std::vector<ShadowSet>& sets, double threshold,
                                    const MomConfig& cfg) {
    MiClassification out;
    out.labels.reserve(sets.size());
    out.estimates.reserve(sets.size());
    out.undefined.reserve(sets.size());
    int patch = -1;
    for (const ShadowSet& s : sets) {
        if (patch < 0) patch = s.patch_length;
        if (s.patch_length != patch)
            throw ConfigError("mi_classify: inhomogeneous patch lengths");
        double est;
        std::uint8_t undef = 0;
        try {
            est = renyi2_mutual_information(s, cfg);
        } catch (const EstimatorUndefined&) {
            est = kEstimatorSentinel;
            undef = 1;
        }
        out.estimates.push_back(est);
        out.undefined.push_back(undef);
        out.labels.push_back(est > threshold ? 1 : 0);
    }
    return out;
}

}  // namespace shadowphase
