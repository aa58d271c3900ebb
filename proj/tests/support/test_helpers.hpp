#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <complex>
#include <vector>

#include "shadowphase/rng.hpp"
#include "shadowphase/statevector.hpp"

namespace shadowphase::test {

inline Statevector random_state(int n_qubits, std::uint64_t seed) {
    RandomStream rng(seed);
    Statevector s;
    s.n_qubits = n_qubits;
    s.amps.resize(std::size_t{1} << n_qubits);
    for (cplx& a : s.amps) a = cplx(rng.normal(), rng.normal());
    const double n = s.norm();
    for (cplx& a : s.amps) a /= n;
    return s;
}

inline double max_abs_diff(const Statevector& a, const Statevector& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.amps.size(); ++i)
        m = std::max(m, std::abs(a.amps[i] - b.amps[i]));
    return m;
}

// Independent partial-trace oracle: forms the full |psi><psi| implicitly and
// sums over explicit (low, high) environment multi-indices.
inline Eigen::MatrixXcd dense_partial_trace(const Statevector& s, int first, int len) {
    const std::size_t wdim = std::size_t{1} << len;
    const std::size_t lowdim = std::size_t{1} << first;
    const std::size_t highdim = std::size_t{1} << (s.n_qubits - first - len);
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(wdim),
                                                  static_cast<Eigen::Index>(wdim));
    for (std::size_t w = 0; w < wdim; ++w)
        for (std::size_t v = 0; v < wdim; ++v) {
            cplx acc(0.0, 0.0);
            for (std::size_t hi = 0; hi < highdim; ++hi)
                for (std::size_t lo = 0; lo < lowdim; ++lo) {
                    const std::size_t iw = lo | (w << first) | (hi << (first + len));
                    const std::size_t iv = lo | (v << first) | (hi << (first + len));
                    acc += s.amps[iw] * std::conj(s.amps[iv]);
                }
            rho(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(v)) = acc;
        }
    return rho;
}

// 0.5 * ||a - b||_1 for Hermitian a, b.
inline double trace_distance(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(a - b);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

// Cyclic relabeling: qubit k of the input becomes qubit (k+1) mod N.
inline Statevector shift_qubits_up(const Statevector& s) {
    Statevector out;
    out.n_qubits = s.n_qubits;
    out.amps.resize(s.amps.size());
    const std::size_t mask = s.amps.size() - 1;
    for (std::size_t i = 0; i < s.amps.size(); ++i) {
        const std::size_t j = ((i << 1) | (i >> (s.n_qubits - 1))) & mask;
        out.amps[j] = s.amps[i];
    }
    return out;
}

}  // namespace shadowphase::test
