#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "shadowphase/errors.hpp"
#include "shadowphase/random_unitary.hpp"
#include "shadowphase/rng.hpp"
#include "shadowphase/shadows.hpp"
#include "shadowphase/statevector.hpp"

namespace shadowphase {

// Entanglement witness on a 4-site window at channel depth 1: the outer
// unitary pair (u_left on sites 0,1 and u_right on 2,3) is applied, the two
// boundary sites 0 and 3 are traced out, the inner unitary u_center acts on
// the surviving pair, and the overlap with |00> is read off. The witness
// value is -log of the maximum overlap; zero for marginals of brick-aligned
// depth-1 circuit states.
struct GemConfig {
    int restarts = 8;
    int max_iters = 500;
    double objective_tol = 1e-9;
    double step_tol = 1e-10;
    std::uint64_t seed = 0;
    bool polar_sweep = false;  // secondary coordinate-update strategy
};

struct GemResult {
    double value = 0.0;        // -log(objective); +inf sentinel when flagged
    double objective = 0.0;    // best overlap found
    bool converged = false;
    bool objective_nonpositive = false;
    int restarts_used = 0;
};

namespace detail {

// sigma = (u_right (x) u_left) rho (.)^dag on the 4-qubit window
// (basis index b0 + 2 b1 + 4 b2 + 8 b3; u_left on qubits 0,1).
inline Eigen::MatrixXcd outer_layer(const Eigen::MatrixXcd& rho, const Eigen::Matrix4cd& u_left,
                                    const Eigen::Matrix4cd& u_right) {
    Eigen::MatrixXcd w(16, 16);
    for (int h = 0; h < 4; ++h)
        for (int hp = 0; hp < 4; ++hp)
            for (int l = 0; l < 4; ++l)
                for (int lp = 0; lp < 4; ++lp)
                    w(h * 4 + l, hp * 4 + lp) = u_right(h, hp) * u_left(l, lp);
    return w * rho * w.adjoint();
}

// Trace out qubits 0 and 3; remaining index is b1 + 2 b2.
inline Eigen::Matrix4cd trace_boundary(const Eigen::MatrixXcd& sigma) {
    Eigen::Matrix4cd tau = Eigen::Matrix4cd::Zero();
    for (int t = 0; t < 4; ++t)
        for (int tp = 0; tp < 4; ++tp)
            for (int b0 = 0; b0 < 2; ++b0)
                for (int b3 = 0; b3 < 2; ++b3) {
                    const int i = b0 + 2 * (t & 1) + 4 * ((t >> 1) & 1) + 8 * b3;
                    const int j = b0 + 2 * (tp & 1) + 4 * ((tp >> 1) & 1) + 8 * b3;
                    tau(t, tp) += sigma(i, j);
                }
    return tau;
}

inline void check_gem_inputs(const Eigen::MatrixXcd& rho, const Eigen::Matrix4cd& u_left,
                             const Eigen::Matrix4cd& u_right, const Eigen::Matrix4cd& u_center) {
    if (rho.rows() != 16 || rho.cols() != 16)
        throw ConfigError("gem: density matrix must be 16x16 (4 qubits)");
    if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, rho.cwiseAbs().maxCoeff()))
        throw NumericError("gem: input density matrix is not Hermitian");
    check_unitary(u_left, "gem u_left");
    check_unitary(u_right, "gem u_right");
    check_unitary(u_center, "gem u_center");
}

}  // namespace detail

// <00| u_center tr_{0,3}[(u_left (x) u_right) rho (.)^dag] u_center^dag |00>.
// Real for Hermitian rho (asserted); may leave [0, 1] for shadow-estimated
// inputs.
inline double gem_objective(const DensityMatrix& rho, const Eigen::Matrix4cd& u_left,
                            const Eigen::Matrix4cd& u_right, const Eigen::Matrix4cd& u_center) {
    detail::check_gem_inputs(rho.m, u_left, u_right, u_center);
    const Eigen::Matrix4cd tau = detail::trace_boundary(detail::outer_layer(rho.m, u_left, u_right));
    const cplx f = (u_center.row(0) * tau * u_center.row(0).adjoint())(0, 0);
    if (std::abs(f.imag()) > 1e-10 * std::max(1.0, std::abs(f.real())))
        throw NumericError("gem_objective: non-real objective (imag = " +
                           std::to_string(f.imag()) + ")");
    return f.real();
}

namespace detail {

struct GemGradients {
    double objective = 0.0;
    Eigen::Matrix4cd g_left, g_right, g_center;  // d f / d conj(U)
};

// Wirtinger gradients of the objective with respect to each unitary.
inline GemGradients gem_gradients(const Eigen::MatrixXcd& rho, const Eigen::Matrix4cd& u_left,
                                  const Eigen::Matrix4cd& u_right,
                                  const Eigen::Matrix4cd& u_center) {
    GemGradients out;
    const Eigen::MatrixXcd sigma = outer_layer(rho, u_left, u_right);
    const Eigen::Matrix4cd tau = trace_boundary(sigma);

    // f = <00| Uc tau Uc^dag |00>: gradient wrt conj(Uc) lives in row 0.
    const Eigen::RowVector4cd row = u_center.row(0) * tau;
    out.g_center.setZero();
    out.g_center.row(0) = row;
    out.objective = (u_center.row(0) * tau * u_center.row(0).adjoint())(0, 0).real();

    // f = tr(Q W rho W^dag) with W = u_right (x) u_left and
    // Q = I (x) (Uc^dag |00><00| Uc) (x) I on qubits (0; 1,2; 3).
    const Eigen::Vector4cd wvec = u_center.row(0).adjoint();  // Uc^dag |00>
    const Eigen::Matrix4cd m = wvec * wvec.adjoint();
    Eigen::MatrixXcd q = Eigen::MatrixXcd::Zero(16, 16);
    for (int t = 0; t < 4; ++t)
        for (int tp = 0; tp < 4; ++tp)
            for (int b0 = 0; b0 < 2; ++b0)
                for (int b3 = 0; b3 < 2; ++b3) {
                    const int i = b0 + 2 * (t & 1) + 4 * ((t >> 1) & 1) + 8 * b3;
                    const int j = b0 + 2 * (tp & 1) + 4 * ((tp >> 1) & 1) + 8 * b3;
                    q(i, j) += m(t, tp);
                }
    Eigen::MatrixXcd w(16, 16);
    for (int h = 0; h < 4; ++h)
        for (int hp = 0; hp < 4; ++hp)
            for (int l = 0; l < 4; ++l)
                for (int lp = 0; lp < 4; ++lp)
                    w(h * 4 + l, hp * 4 + lp) = u_right(h, hp) * u_left(l, lp);
    const Eigen::MatrixXcd gw = q * w * rho;  // d f / d conj(W)

    out.g_left.setZero();
    out.g_right.setZero();
    for (int h = 0; h < 4; ++h)
        for (int hp = 0; hp < 4; ++hp)
            for (int l = 0; l < 4; ++l)
                for (int lp = 0; lp < 4; ++lp) {
                    out.g_left(l, lp) += gw(h * 4 + l, hp * 4 + lp) * std::conj(u_right(h, hp));
                    out.g_right(h, hp) += gw(h * 4 + l, hp * 4 + lp) * std::conj(u_left(l, lp));
                }
    return out;
}

inline Eigen::Matrix4cd skew_part(const Eigen::Matrix4cd& m) { return 0.5 * (m - m.adjoint()); }

// Cayley retraction along the tangent direction U * A (A anti-Hermitian).
inline Eigen::Matrix4cd cayley_step(const Eigen::Matrix4cd& u, const Eigen::Matrix4cd& a,
                                    double step) {
    const Eigen::Matrix4cd half = 0.5 * step * a;
    const Eigen::Matrix4cd num = Eigen::Matrix4cd::Identity() + half;
    const Eigen::Matrix4cd den = Eigen::Matrix4cd::Identity() - half;
    return u * den.partialPivLu().solve(num);
}

struct AscentOutcome {
    double objective = 0.0;
    bool converged = false;
    std::array<Eigen::Matrix4cd, 3> u;
};

// Exact maximization over the center unitary given the outer pair: the top
// eigenvector of tau becomes <00| u_center. Monotone by construction.
inline Eigen::Matrix4cd best_center(const Eigen::Matrix4cd& tau) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> es(tau);
    Eigen::Matrix4cd u;
    for (int r = 0; r < 4; ++r) u.row(r) = es.eigenvectors().col(3 - r).adjoint();
    return u;
}

// Riemannian gradient ascent on the outer pair with projected gradients and
// Cayley retraction under Armijo backtracking, interleaved with the exact
// center-coordinate maximization. Plain gradient ascent alone crawls on this
// landscape (nearly flat ridges, curvature ~1e-6 near product optima); the
// exact center step removes the stiff block while every iterate stays
// monotone.
inline AscentOutcome riemannian_ascent(const Eigen::MatrixXcd& rho,
                                       std::array<Eigen::Matrix4cd, 3> u, const GemConfig& cfg,
                                       std::vector<double>* trace = nullptr) {
    double step = 1.0;
    AscentOutcome out;
    double f = gem_gradients(rho, u[0], u[1], u[2]).objective;
    if (trace) trace->push_back(f);
    for (int it = 0; it < cfg.max_iters; ++it) {
        const Eigen::Matrix4cd tau = trace_boundary(outer_layer(rho, u[0], u[1]));
        const Eigen::Matrix4cd centered = best_center(tau);
        {
            const double fc = (centered.row(0) * tau * centered.row(0).adjoint())(0, 0).real();
            if (fc >= f) {
                u[2] = centered;
                f = fc;
                if (trace) trace->push_back(f);
            }
        }
        GemGradients g = gem_gradients(rho, u[0], u[1], u[2]);
        const std::array<Eigen::Matrix4cd, 2> a = {skew_part(u[0].adjoint() * g.g_left),
                                                   skew_part(u[1].adjoint() * g.g_right)};
        const double grad_norm2 = a[0].squaredNorm() + a[1].squaredNorm();
        const double scale = std::max(1.0, std::abs(f));
        if (std::sqrt(grad_norm2) < cfg.step_tol * scale) {
            out.converged = true;
            break;
        }
        bool accepted = false;
        double trial = step;
        std::array<Eigen::Matrix4cd, 3> u_new = u;
        double f_new = f;
        for (int back = 0; back < 80; ++back) {
            u_new[0] = cayley_step(u[0], a[0], trial);
            u_new[1] = cayley_step(u[1], a[1], trial);
            f_new = gem_gradients(rho, u_new[0], u_new[1], u_new[2]).objective;
            if (f_new >= f + 1e-4 * trial * grad_norm2) {
                accepted = true;
                break;
            }
            trial *= 0.5;
            if (trial < 1e-18) break;
        }
        if (!accepted) {
            out.converged = true;  // no measurable ascent: stationary at fp resolution
            break;
        }
        const double gain = f_new - f;
        u = u_new;
        f = f_new;
        if (trace) trace->push_back(f);
        step = std::min(trial * 4.0, 1e6);
        if (gain < cfg.objective_tol * scale && std::sqrt(grad_norm2) < 1e-7 * scale) {
            out.converged = true;
            break;
        }
    }
    out.objective = f;
    out.u = u;
    return out;
}

// Secondary strategy: coordinate sweeps. The center update is exact (top
// eigenvector of tau); the outer updates use the polar heuristic on the
// gradient environment.
inline AscentOutcome polar_sweep(const Eigen::MatrixXcd& rho, std::array<Eigen::Matrix4cd, 3> u,
                                 const GemConfig& cfg) {
    const auto objective = [&](const std::array<Eigen::Matrix4cd, 3>& v) {
        return gem_gradients(rho, v[0], v[1], v[2]).objective;
    };
    AscentOutcome out;
    double best = objective(u);
    for (int it = 0; it < cfg.max_iters; ++it) {
        // Exact center update.
        const Eigen::Matrix4cd tau = trace_boundary(outer_layer(rho, u[0], u[1]));
        std::array<Eigen::Matrix4cd, 3> trial = {u[0], u[1], best_center(tau)};
        double f = objective(trial);
        if (f >= best) {
            u = trial;
            best = f;
        }
        // Polar updates for the outer pair.
        for (int which = 0; which < 2; ++which) {
            const GemGradients g = gem_gradients(rho, u[0], u[1], u[2]);
            const Eigen::Matrix4cd& env = which == 0 ? g.g_left : g.g_right;
            Eigen::JacobiSVD<Eigen::Matrix4cd> svd(env, Eigen::ComputeFullU | Eigen::ComputeFullV);
            trial = u;
            trial[static_cast<std::size_t>(which)] = svd.matrixU() * svd.matrixV().adjoint();
            f = objective(trial);
            if (f >= best + 1e-15) {
                u = trial;
                best = f;
            }
        }
        const GemGradients g = gem_gradients(rho, u[0], u[1], u[2]);
        const double gn = std::sqrt(skew_part(u[0].adjoint() * g.g_left).squaredNorm() +
                                    skew_part(u[1].adjoint() * g.g_right).squaredNorm() +
                                    skew_part(u[2].adjoint() * g.g_center).squaredNorm());
        if (gn < 1e-8 * std::max(1.0, std::abs(best))) {
            out.converged = true;
            break;
        }
    }
    out.objective = best;
    out.u = u;
    return out;
}

}  // namespace detail

// Maximize the channel overlap over the three unitaries: identity start plus
// cfg.restarts Haar-random starts, best objective wins.
inline GemResult local_gem(const DensityMatrix& rho, const GemConfig& cfg) {
    detail::check_gem_inputs(rho.m, Eigen::Matrix4cd::Identity(), Eigen::Matrix4cd::Identity(),
                             Eigen::Matrix4cd::Identity());
    GemResult res;
    double best = -std::numeric_limits<double>::infinity();
    bool best_converged = false;
    const RandomStream base = RandomStream(cfg.seed).fork(kTagGemRestart);
    for (int r = 0; r <= cfg.restarts; ++r) {
        std::array<Eigen::Matrix4cd, 3> u;
        if (r == 0) {
            u = {Eigen::Matrix4cd::Identity(), Eigen::Matrix4cd::Identity(),
                 Eigen::Matrix4cd::Identity()};
        } else {
            RandomStream rr = base.fork(static_cast<std::uint64_t>(r));
            u = {haar_u4(rr), haar_u4(rr), haar_u4(rr)};
        }
        const detail::AscentOutcome got = cfg.polar_sweep
                                              ? detail::polar_sweep(rho.m, u, cfg)
                                              : detail::riemannian_ascent(rho.m, u, cfg);
        if (got.objective > best) {
            best = got.objective;
            best_converged = got.converged;
        }
        res.restarts_used = r;
    }
    res.objective = best;
    res.converged = best_converged;
    if (best > 0.0) {
        res.value = -std::log(best);
    } else {
        res.value = std::numeric_limits<double>::infinity();
        res.objective_nonpositive = true;
    }
    return res;
}

struct GemClassification {
    int label = 0;
    GemResult gem;
};

// Tomographic mean over a 4-site window, then the witness, then a threshold.
// The mean estimate may be non-positive; thresholds can legitimately be
// negative in that regime.
inline GemClassification gem_classify(const ShadowSet& window, const GemConfig& cfg,
                                      double threshold) {
    if (window.patch_length != 4)
        throw ConfigError("gem_classify: window must be exactly 4 sites");
    const std::array<int, 4> sites{0, 1, 2, 3};
    const DensityMatrix rho = mean_snapshot(window, sites);
    GemClassification out;
    out.gem = local_gem(rho, cfg);
    out.label = out.gem.value > threshold ? 1 : 0;
    return out;
}

// Restrict a longer patch to a contiguous sub-window (e.g. the 4 sites the
// witness needs).
inline ShadowSet restrict_window(const ShadowSet& set, int start, int length) {
    if (start < 0 || start + length > set.patch_length)
        throw ConfigError("restrict_window: sub-window does not fit the patch");
    ShadowSet out;
    out.patch_length = length;
    out.source_label = set.source_label;
    out.snapshots.reserve(set.snapshots.size());
    for (const ShadowSnapshot& snap : set.snapshots) {
        ShadowSnapshot s;
        s.basis.assign(snap.basis.begin() + start, snap.basis.begin() + start + length);
        s.outcomes.assign(snap.outcomes.begin() + start, snap.outcomes.begin() + start + length);
        out.snapshots.push_back(std::move(s));
    }
    return out;
}

}  // namespace shadowphase
