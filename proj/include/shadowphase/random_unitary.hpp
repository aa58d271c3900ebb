#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <numbers>

#include "shadowphase/errors.hpp"
#include "shadowphase/rng.hpp"
#include "shadowphase/statevector.hpp"

namespace shadowphase {

// Measurement-basis parameterization: theta in [0, 2pi), phi in [0, 2pi),
// chi in [-2pi, 2pi]. The decomposition below always produces theta in
// [0, pi], which lies inside the storage range.
struct EulerAngles {
    double theta = 0.0;
    double phi = 0.0;
    double chi = 0.0;
};

namespace detail {

template <int N>
Eigen::Matrix<cplx, N, N> haar_fixed(RandomStream& rng) {
    // QR of a complex Ginibre matrix with the R-diagonal phase fix
    // (Q -> Q * diag(r_jj / |r_jj|)) gives the Haar measure on U(N).
    Eigen::Matrix<cplx, N, N> g;
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) g(i, j) = cplx(rng.normal(), rng.normal());
    Eigen::HouseholderQR<Eigen::Matrix<cplx, N, N>> qr(g);
    Eigen::Matrix<cplx, N, N> q = qr.householderQ();
    const Eigen::Matrix<cplx, N, N> r = qr.matrixQR().template triangularView<Eigen::Upper>();
    for (int j = 0; j < N; ++j) {
        const cplx d = r(j, j);
        const double mag = std::abs(d);
        q.col(j) *= (mag > 0.0) ? d / mag : cplx(1.0, 0.0);
    }
    return q;
}

}  // namespace detail

inline Eigen::Matrix2cd haar_u2(RandomStream& rng) { return detail::haar_fixed<2>(rng); }
inline Eigen::Matrix4cd haar_u4(RandomStream& rng) { return detail::haar_fixed<4>(rng); }

inline Eigen::MatrixXcd haar_unitary(int dim, RandomStream& rng) {
    if (dim == 2) return haar_u2(rng);
    if (dim == 4) return haar_u4(rng);
    throw ConfigError("haar_unitary: dim must be 2 or 4, got " + std::to_string(dim));
}

// U(theta, phi, chi) =
//   [ cos(t/2) e^{i(phi+chi)/2}    i sin(t/2) e^{i(phi-chi)/2} ]
//   [ i sin(t/2) e^{-i(phi-chi)/2}  cos(t/2) e^{-i(phi+chi)/2} ]
inline Eigen::Matrix2cd unitary_from_euler(const EulerAngles& a) {
    if (a.theta < 0.0 || a.theta >= 2.0 * std::numbers::pi || a.phi < 0.0 ||
        a.phi >= 2.0 * std::numbers::pi || a.chi < -2.0 * std::numbers::pi ||
        a.chi > 2.0 * std::numbers::pi)
        throw ConfigError("unitary_from_euler: angles out of range");
    const double c = std::cos(0.5 * a.theta);
    const double s = std::sin(0.5 * a.theta);
    const double sum = 0.5 * (a.phi + a.chi);
    const double diff = 0.5 * (a.phi - a.chi);
    const cplx i(0.0, 1.0);
    Eigen::Matrix2cd u;
    u(0, 0) = c * std::exp(i * sum);
    u(0, 1) = i * s * std::exp(i * diff);
    u(1, 0) = i * s * std::exp(-i * diff);
    u(1, 1) = c * std::exp(-i * sum);
    return u;
}

struct EulerDecomposition {
    EulerAngles angles;
    double global_phase = 0.0;  // u = e^{i phase} * U(angles)
};

// Inverse of unitary_from_euler up to a global phase: branch cuts are
// resolved deterministically (theta from |u00| on [0, pi], phi+chi and
// phi-chi from atan2 of u00 and -i*u01). Degenerate |u00| in {0, 1} fixes
// chi = 0.
inline EulerDecomposition euler_from_unitary(const Eigen::Matrix2cd& u) {
    detail::check_unitary(u, "euler_from_unitary");
    // Split off the determinant phase to land in SU(2):
    // u = e^{i alpha} [a, b; -conj(b), conj(a)].
    const cplx det = u(0, 0) * u(1, 1) - u(0, 1) * u(1, 0);
    double alpha = 0.5 * std::arg(det);
    const cplx phase = std::exp(cplx(0.0, -alpha));
    const cplx a = phase * u(0, 0);
    const cplx b = phase * u(0, 1);

    EulerAngles ang;
    const double ca = std::min(1.0, std::abs(a));
    ang.theta = 2.0 * std::acos(ca);  // in [0, pi]

    const double tiny = 1e-12;
    double sum, diff;  // phi+chi and phi-chi
    if (std::abs(a) <= tiny) {
        // theta = pi: only b is meaningful; fix chi = 0.
        diff = 2.0 * std::arg(b / cplx(0.0, 1.0));
        sum = diff;
    } else if (std::abs(b) <= tiny) {
        // theta = 0: only a is meaningful; fix chi = 0.
        sum = 2.0 * std::arg(a);
        diff = sum;
    } else {
        sum = 2.0 * std::arg(a);
        diff = 2.0 * std::arg(b / cplx(0.0, 1.0));
    }
    ang.phi = 0.5 * (sum + diff);
    ang.chi = 0.5 * (sum - diff);

    // Normalize phi into [0, 2pi). A 2pi shift of phi negates U(angles),
    // which is absorbed as a pi shift of the global phase.
    const double two_pi = 2.0 * std::numbers::pi;
    while (ang.phi < 0.0) {
        ang.phi += two_pi;
        alpha += std::numbers::pi;
    }
    while (ang.phi >= two_pi) {
        ang.phi -= two_pi;
        alpha += std::numbers::pi;
    }
    // chi stays in [-2pi, 2pi] by construction: |sum|, |diff| <= 2pi.

    // Wrap the phase into (-pi, pi] for a canonical report.
    while (alpha > std::numbers::pi) alpha -= two_pi;
    while (alpha <= -std::numbers::pi) alpha += two_pi;

    return {ang, alpha};
}

}  // namespace shadowphase
