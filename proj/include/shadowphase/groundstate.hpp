#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shadowphase/errors.hpp"
#include "shadowphase/rng.hpp"
#include "shadowphase/shadows.hpp"
#include "shadowphase/statevector.hpp"

namespace shadowphase {

inline constexpr int kMaxEdQubits = 20;

// H = -J ( sum_j (sz_j sz_{j+1} - kappa sz_j sz_{j+2}) + g sum_j sx_j ),
// periodic, J = 1 sets the energy scale. kappa = 0 is the transverse-field
// Ising chain.
struct AnnniParams {
    double coupling = 1.0;      // J
    double field = 1.0;         // g
    double next_nearest = 0.0;  // kappa
    int n_sites = 16;

    void validate() const {
        if (n_sites < 3 || n_sites > kMaxEdQubits)
            throw ConfigError("AnnniParams: n_sites must be in [3, " +
                              std::to_string(kMaxEdQubits) + "]");
        if (field < 0.0 || next_nearest < 0.0)
            throw ConfigError("AnnniParams: g and kappa must be >= 0");
    }

    // Loose operator-norm bound, used to scale residual tolerances.
    double norm_bound() const {
        return std::abs(coupling) * n_sites * (1.0 + next_nearest + field);
    }
};

namespace detail {

inline std::size_t rotate_bits_down(std::size_t i, int by, int n) {
    const std::size_t mask = (std::size_t{1} << n) - 1;
    return ((i >> by) | (i << (n - by))) & mask;
}

}  // namespace detail

// On-the-fly H * v: the sz sz terms are diagonal bit-parity lookups, the sx
// terms are bit flips. No matrix is materialized.
inline void hamiltonian_matvec(const AnnniParams& p, std::span<const cplx> in,
                               std::span<cplx> out) {
    p.validate();
    const std::size_t dim = std::size_t{1} << p.n_sites;
    if (in.size() != dim || out.size() != dim)
        throw ConfigError("hamiltonian_matvec: vector length must be 2^N");
    const int n = p.n_sites;
    const double j = p.coupling;
    const double g = p.field;
    const double kappa = p.next_nearest;
    for (std::size_t i = 0; i < dim; ++i) {
        const int diff1 = std::popcount(i ^ detail::rotate_bits_down(i, 1, n));
        const int diff2 = std::popcount(i ^ detail::rotate_bits_down(i, 2, n));
        const double zz_nn = n - 2 * diff1;
        const double zz_nnn = n - 2 * diff2;
        const double diag = -j * (zz_nn - kappa * zz_nnn);
        cplx acc = diag * in[i];
        for (int q = 0; q < n; ++q) acc += (-j * g) * in[i ^ (std::size_t{1} << q)];
        out[i] = acc;
    }
}

struct GroundStateResult {
    double energy = 0.0;
    Statevector state;
    bool z2_even = true;
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

namespace detail {

// Project onto the +1 eigenspace of the spin-flip operator P = prod_j sx_j
// (P|i> = |~i>). Does not renormalize.
inline void project_z2_even(std::vector<cplx>& v, int n) {
    const std::size_t dim = std::size_t{1} << n;
    const std::size_t mask = dim - 1;
    for (std::size_t i = 0; i < dim; ++i) {
        const std::size_t j = ~i & mask;
        if (j < i) continue;
        const cplx avg = 0.5 * (v[i] + v[j]);
        v[i] = avg;
        v[j] = avg;
    }
}

inline cplx dot(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    cplx s(0.0, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s;
}

inline double vec_norm(const std::vector<cplx>& a) {
    double s = 0.0;
    for (const cplx& c : a) s += std::norm(c);
    return std::sqrt(s);
}

}  // namespace detail

// Lowest eigenpair within the Z2-even sector: the start vector is projected
// even and re-projected every iteration (guards roundoff leakage into the
// odd sector); full reorthogonalization against the stored Krylov basis.
// tol is relative to a bound on ||H||.
inline GroundStateResult lanczos_ground(const AnnniParams& p, double tol = 1e-10,
                                        int max_iter = 500, std::uint64_t seed = 1) {
    p.validate();
    const std::size_t dim = std::size_t{1} << p.n_sites;
    const double scale = std::max(1.0, p.norm_bound());

    RandomStream rng = RandomStream(seed).fork(kTagLanczos);
    std::vector<std::vector<cplx>> basis;
    std::vector<double> alpha, beta;  // T diagonal / off-diagonal

    std::vector<cplx> v(dim);
    for (cplx& c : v) c = cplx(rng.normal(), rng.normal());
    detail::project_z2_even(v, p.n_sites);
    {
        const double n0 = detail::vec_norm(v);
        if (n0 < 1e-12) throw NumericError("lanczos_ground: start vector vanished under even projection");
        for (cplx& c : v) c /= n0;
    }

    std::vector<cplx> w(dim);
    GroundStateResult res;
    res.z2_even = true;

    double conv_energy = 0.0;
    Eigen::VectorXd ritz;  // coefficients of the lowest Ritz vector in the basis

    for (int it = 0; it < max_iter; ++it) {
        basis.push_back(v);
        hamiltonian_matvec(p, basis.back(), w);
        const double a = detail::dot(basis.back(), w).real();
        alpha.push_back(a);
        const double b_prev = beta.empty() ? 0.0 : beta.back();
        const std::vector<cplx>* v_prev = basis.size() >= 2 ? &basis[basis.size() - 2] : nullptr;
        for (std::size_t i = 0; i < dim; ++i) {
            w[i] -= a * basis.back()[i];
            if (v_prev) w[i] -= b_prev * (*v_prev)[i];
        }
        detail::project_z2_even(w, p.n_sites);
        for (const auto& b : basis) {  // full reorthogonalization
            const cplx c = detail::dot(b, w);
            for (std::size_t i = 0; i < dim; ++i) w[i] -= c * b[i];
        }
        double wn = detail::vec_norm(w);

        // Lowest eigenpair of the current tridiagonal T.
        const int k = static_cast<int>(alpha.size());
        Eigen::MatrixXd t = Eigen::MatrixXd::Zero(k, k);
        for (int i = 0; i < k; ++i) {
            t(i, i) = alpha[static_cast<std::size_t>(i)];
            if (i + 1 < k) {
                t(i, i + 1) = beta[static_cast<std::size_t>(i)];
                t(i + 1, i) = beta[static_cast<std::size_t>(i)];
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
        int lowest = 0;
        es.eigenvalues().minCoeff(&lowest);
        conv_energy = es.eigenvalues()(lowest);
        ritz = es.eigenvectors().col(lowest);
        res.iterations = k;

        const double resid_est = wn * std::abs(ritz(k - 1));
        if (resid_est <= tol * scale) {
            res.converged = true;
            break;
        }
        double beta_next = wn;
        if (wn < 1e-13 * scale) {
            // Krylov space exhausted without meeting the estimate: start a
            // fresh block from randomness orthogonal to the basis. beta = 0
            // keeps T valid (the exhausted subspace is invariant).
            for (cplx& c : w) c = cplx(rng.normal(), rng.normal());
            detail::project_z2_even(w, p.n_sites);
            for (const auto& b : basis) {
                const cplx c = detail::dot(b, w);
                for (std::size_t i = 0; i < dim; ++i) w[i] -= c * b[i];
            }
            wn = detail::vec_norm(w);
            if (wn < 1e-12) {  // sector fully spanned; T is exact
                res.converged = true;
                break;
            }
            beta_next = 0.0;
        }
        beta.push_back(beta_next);
        for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / wn;
    }

    // Assemble the Ritz vector and report the true residual.
    res.energy = conv_energy;
    res.state.n_qubits = p.n_sites;
    res.state.amps.assign(dim, cplx(0.0, 0.0));
    for (std::size_t b = 0; b < basis.size(); ++b) {
        const double c = ritz(static_cast<Eigen::Index>(b));
        for (std::size_t i = 0; i < dim; ++i) res.state.amps[i] += c * basis[b][i];
    }
    detail::project_z2_even(res.state.amps, p.n_sites);
    {
        const double n0 = detail::vec_norm(res.state.amps);
        if (n0 < 1e-300) throw NumericError("lanczos_ground: assembled state has zero norm");
        for (cplx& c : res.state.amps) c /= n0;
    }
    hamiltonian_matvec(p, res.state.amps, w);
    double r2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) r2 += std::norm(w[i] - res.energy * res.state.amps[i]);
    res.residual = std::sqrt(r2);
    if (res.residual > tol * scale * 100.0) res.converged = false;
    return res;
}

// Closed-form Ising-transition line g_I(kappa) for kappa in [0, 0.5]:
// ((1 - kappa)/kappa) * (1 - sqrt((1 - 3 kappa + 4 kappa^2)/(1 - kappa))),
// with the analytic limits g_I(0) = 1 and g_I(0.5) = 0.
inline double ising_boundary(double kappa) {
    if (kappa < 0.0 || kappa > 0.5)
        throw ConfigError("ising_boundary: kappa must be in [0, 0.5]");
    if (kappa == 0.0) return 1.0;
    if (kappa == 0.5) return 0.0;
    const double radicand = (1.0 - 3.0 * kappa + 4.0 * kappa * kappa) / (1.0 - kappa);
    return (1.0 - kappa) / kappa * (1.0 - std::sqrt(radicand));
}

// Closed-form BKT line g_BKT(kappa) = 1.05 sqrt((kappa - 0.5)(kappa - 0.1))
// for kappa >= 0.5.
inline double bkt_boundary(double kappa) {
    if (kappa < 0.5) throw ConfigError("bkt_boundary: kappa must be >= 0.5");
    return 1.05 * std::sqrt((kappa - 0.5) * (kappa - 0.1));
}

}  // namespace shadowphase
