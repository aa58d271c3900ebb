#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "shadowphase/errors.hpp"
#include "shadowphase/rng.hpp"

namespace shadowphase {

using cplx = std::complex<double>;

inline constexpr int kMaxQubits = 24;
inline constexpr double kUnitaryTol = 1e-8;

// Dense N-qubit pure state. Amplitudes are little-endian: qubit 0 is the
// least significant bit of the basis index.
struct Statevector {
    int n_qubits = 0;
    std::vector<cplx> amps;

    std::size_t dim() const { return amps.size(); }

    double norm() const {
        double s = 0.0;
        for (const cplx& a : amps) s += std::norm(a);
        return std::sqrt(s);
    }
};

struct DensityMatrix {
    int n_qubits = 0;
    Eigen::MatrixXcd m;
};

namespace detail {

inline void check_n_qubits(int n, int lo, const char* what) {
    if (n < lo || n > kMaxQubits)
        throw ConfigError(std::string(what) + ": n_qubits " + std::to_string(n) +
                          " outside [" + std::to_string(lo) + ", " + std::to_string(kMaxQubits) + "]");
}

template <class Mat>
inline void check_unitary(const Mat& u, const char* what) {
    const Mat d = u.adjoint() * u - Mat::Identity(u.rows(), u.cols());
    if (d.cwiseAbs().maxCoeff() > kUnitaryTol)
        throw NumericError(std::string(what) + ": matrix is not unitary (||u^H u - I|| = " +
                           std::to_string(d.cwiseAbs().maxCoeff()) + ")");
}

inline void check_site(int site, int n, const char* what) {
    if (site < 0 || site >= n)
        throw ConfigError(std::string(what) + ": site " + std::to_string(site) +
                          " outside chain of " + std::to_string(n));
}

inline void check_window(int n, int first, int length, const char* what) {
    if (length < 1 || first < 0 || first + length > n)
        throw ConfigError(std::string(what) + ": window [" + std::to_string(first) + ", " +
                          std::to_string(first + length) + ") does not fit a chain of " +
                          std::to_string(n));
}

}  // namespace detail

// (|0> + |1>)/sqrt(2) on every site.
inline Statevector new_product_plus(int n_qubits) {
    detail::check_n_qubits(n_qubits, 1, "new_product_plus");
    Statevector s;
    s.n_qubits = n_qubits;
    s.amps.assign(std::size_t{1} << n_qubits, cplx(std::pow(2.0, -0.5 * n_qubits), 0.0));
    return s;
}

inline Statevector new_all_ones(int n_qubits) {
    detail::check_n_qubits(n_qubits, 1, "new_all_ones");
    Statevector s;
    s.n_qubits = n_qubits;
    s.amps.assign(std::size_t{1} << n_qubits, cplx(0.0, 0.0));
    s.amps.back() = 1.0;
    return s;
}

// (|1...1> + |0...0>)/sqrt(2).
inline Statevector new_ghz(int n_qubits) {
    detail::check_n_qubits(n_qubits, 2, "new_ghz");
    Statevector s;
    s.n_qubits = n_qubits;
    s.amps.assign(std::size_t{1} << n_qubits, cplx(0.0, 0.0));
    s.amps.front() = std::numbers::sqrt2 / 2.0;
    s.amps.back() = std::numbers::sqrt2 / 2.0;
    return s;
}

// In-place single-qubit gate via stride masking over amplitude pairs.
inline void apply_1q(Statevector& state, int site, const Eigen::Matrix2cd& u) {
    detail::check_site(site, state.n_qubits, "apply_1q");
    detail::check_unitary(u, "apply_1q");
    const std::size_t mask = std::size_t{1} << site;
    const std::size_t dim = state.dim();
    const cplx u00 = u(0, 0), u01 = u(0, 1), u10 = u(1, 0), u11 = u(1, 1);
    cplx* a = state.amps.data();
    for (std::size_t base = 0; base < dim; base += 2 * mask) {
        for (std::size_t low = 0; low < mask; ++low) {
            const std::size_t i0 = base + low;
            const std::size_t i1 = i0 + mask;
            const cplx x = a[i0], y = a[i1];
            a[i0] = u00 * x + u01 * y;
            a[i1] = u10 * x + u11 * y;
        }
    }
}

// In-place two-qubit gate on (site, site+1 mod N), supporting the periodic
// wrap pair. Local basis index of the 4x4 matrix: bit(site) + 2*bit(site+1),
// i.e. u = kron(u_high, u_low) when it factorizes, with u_low on `site`.
inline void apply_2q(Statevector& state, int site, const Eigen::Matrix4cd& u) {
    detail::check_site(site, state.n_qubits, "apply_2q");
    if (state.n_qubits < 2) throw ConfigError("apply_2q: need at least 2 qubits");
    detail::check_unitary(u, "apply_2q");
    const int q0 = site;
    const int q1 = (site + 1) % state.n_qubits;
    const std::size_t m0 = std::size_t{1} << q0;
    const std::size_t m1 = std::size_t{1} << q1;
    const std::size_t dim = state.dim();
    cplx* a = state.amps.data();
    for (std::size_t i = 0; i < dim; ++i) {
        if (i & (m0 | m1)) continue;
        const std::size_t i0 = i, i1 = i | m0, i2 = i | m1, i3 = i | m0 | m1;
        const cplx x0 = a[i0], x1 = a[i1], x2 = a[i2], x3 = a[i3];
        a[i0] = u(0, 0) * x0 + u(0, 1) * x1 + u(0, 2) * x2 + u(0, 3) * x3;
        a[i1] = u(1, 0) * x0 + u(1, 1) * x1 + u(1, 2) * x2 + u(1, 3) * x3;
        a[i2] = u(2, 0) * x0 + u(2, 1) * x1 + u(2, 2) * x2 + u(2, 3) * x3;
        a[i3] = u(3, 0) * x0 + u(3, 1) * x1 + u(3, 2) * x2 + u(3, 3) * x3;
    }
}

inline constexpr int kMaxReducedWindow = 12;  // 4^12 entries is the dense cap

// Partial trace over the complement of a contiguous, non-wrapping window.
inline DensityMatrix reduced_density_matrix(const Statevector& state, int first_site, int length) {
    detail::check_window(state.n_qubits, first_site, length, "reduced_density_matrix");
    if (length > kMaxReducedWindow)
        throw ConfigError("reduced_density_matrix: window length " + std::to_string(length) +
                          " exceeds dense cap " + std::to_string(kMaxReducedWindow));
    const std::size_t wdim = std::size_t{1} << length;
    const std::size_t lowdim = std::size_t{1} << first_site;
    const int high_bits = state.n_qubits - first_site - length;
    const std::size_t highdim = std::size_t{1} << high_bits;
    DensityMatrix rho;
    rho.n_qubits = length;
    rho.m = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(wdim), static_cast<Eigen::Index>(wdim));
    const cplx* a = state.amps.data();
    for (std::size_t hi = 0; hi < highdim; ++hi) {
        const std::size_t hbase = hi << (first_site + length);
        for (std::size_t w = 0; w < wdim; ++w) {
            const std::size_t iw = hbase | (w << first_site);
            for (std::size_t v = 0; v <= w; ++v) {
                const std::size_t iv = hbase | (v << first_site);
                cplx acc(0.0, 0.0);
                for (std::size_t lo = 0; lo < lowdim; ++lo) acc += a[iw | lo] * std::conj(a[iv | lo]);
                rho.m(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(v)) += acc;
                if (v != w)
                    rho.m(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(w)) += std::conj(acc);
            }
        }
    }
    return rho;
}

namespace detail {

// Z-basis probability table of a contiguous window: p(w) = sum over the rest
// of |amp|^2. One pass over the full vector.
inline std::vector<double> window_probabilities(const Statevector& state, int first_site, int length) {
    const std::size_t wdim = std::size_t{1} << length;
    const std::size_t wmask = (wdim - 1) << first_site;
    std::vector<double> p(wdim, 0.0);
    const std::size_t dim = state.dim();
    for (std::size_t i = 0; i < dim; ++i) p[(i & wmask) >> first_site] += std::norm(state.amps[i]);
    return p;
}

// Sequential conditional sampling with collapse on the window-marginal
// working buffer: fix one bit at a time, renormalizing the surviving block.
inline std::vector<int> sample_from_window_table(std::vector<double>& p, int length,
                                                 RandomStream& rng) {
    std::vector<int> bits(length, 0);
    std::size_t fixed = 0;   // already-decided low bits
    std::size_t value = 0;   // their outcomes
    double weight = 0.0;
    for (double q : p) weight += q;
    for (int k = 0; k < length; ++k) {
        const std::size_t bit = std::size_t{1} << k;
        double p1 = 0.0;
        for (std::size_t w = 0; w < p.size(); ++w) {
            if ((w & fixed) != value) continue;
            if (w & bit) p1 += p[w];
        }
        const double u = rng.uniform() * weight;
        const int outcome = (u < p1) ? 1 : 0;
        bits[k] = outcome;
        fixed |= bit;
        if (outcome) value |= bit;
        weight = outcome ? p1 : (weight - p1);
        if (weight <= 0.0) weight = 1e-300;  // fp underflow guard on impossible branches
    }
    return bits;
}

}  // namespace detail

// Samples the joint Z-basis distribution of a contiguous window exactly.
// The caller's state is untouched. bits[k] is the outcome of site first+k.
inline std::vector<int> sample_z(const Statevector& state, int first_site, int length,
                                 RandomStream& rng) {
    detail::check_window(state.n_qubits, first_site, length, "sample_z");
    std::vector<double> p = detail::window_probabilities(state, first_site, length);
    return detail::sample_from_window_table(p, length, rng);
}

}  // namespace shadowphase
