#include <catch2/catch_amalgamated.hpp>

#include <complex>

#include "shadowphase/random_unitary.hpp"
#include "shadowphase/statevector.hpp"

using namespace shadowphase;

TEST_CASE("haar_unitary basics") {
    RandomStream rng(1);
    SECTION("unitary to 1e-12") {
        for (int k = 0; k < 100; ++k) {
            const Eigen::Matrix2cd u2 = haar_u2(rng);
            CHECK((u2.adjoint() * u2 - Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff() < 1e-12);
            const Eigen::Matrix4cd u4 = haar_u4(rng);
            CHECK((u4.adjoint() * u4 - Eigen::Matrix4cd::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SECTION("unsupported dim") {
        CHECK_THROWS_AS(haar_unitary(3, rng), ConfigError);
    }
    SECTION("deterministic given the seed") {
        RandomStream a(42), b(42);
        const Eigen::Matrix2cd ua = haar_u2(a);
        const Eigen::Matrix2cd ub = haar_u2(b);
        CHECK((ua - ub).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("haar first moments") {
    // E[U A U^dag] = tr(A)/d * I for Haar U.
    const int n = 100000;
    SECTION("dim 2: mean of U|0><0|U^dag is I/2") {
        RandomStream rng(2);
        Eigen::Matrix2cd acc = Eigen::Matrix2cd::Zero();
        for (int k = 0; k < n; ++k) {
            const Eigen::Matrix2cd u = haar_u2(rng);
            acc += u.col(0) * u.col(0).adjoint();
        }
        acc /= n;
        CHECK((acc - 0.5 * Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff() < 0.01);
    }
    SECTION("dim 4: mean of |<00|U|00>|^2 is 1/4") {
        RandomStream rng(3);
        double acc = 0.0;
        for (int k = 0; k < n; ++k) {
            const Eigen::Matrix4cd u = haar_u4(rng);
            acc += std::norm(u(0, 0));
        }
        acc /= n;
        CHECK(acc == Catch::Approx(0.25).margin(0.01));
    }
}

TEST_CASE("unitary_from_euler") {
    SECTION("zero angles give identity") {
        const Eigen::Matrix2cd u = unitary_from_euler({0.0, 0.0, 0.0});
        CHECK((u - Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff() < 1e-15);
    }
    SECTION("theta = pi gives i X") {
        const Eigen::Matrix2cd u = unitary_from_euler({std::numbers::pi, 0.0, 0.0});
        CHECK(std::abs(u(0, 0)) < 1e-15);
        CHECK(std::abs(u(1, 1)) < 1e-15);
        CHECK(std::abs(u(0, 1) - cplx(0.0, 1.0)) < 1e-15);
        CHECK(std::abs(u(1, 0) - cplx(0.0, 1.0)) < 1e-15);
    }
    SECTION("always unitary") {
        RandomStream rng(4);
        for (int k = 0; k < 200; ++k) {
            EulerAngles a;
            a.theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            a.phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            a.chi = rng.uniform(-2.0 * std::numbers::pi, 2.0 * std::numbers::pi);
            const Eigen::Matrix2cd u = unitary_from_euler(a);
            CHECK((u.adjoint() * u - Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff() < 1e-14);
        }
    }
    SECTION("range validation") {
        CHECK_THROWS_AS(unitary_from_euler({-0.1, 0.0, 0.0}), ConfigError);
        CHECK_THROWS_AS(unitary_from_euler({0.0, 7.0, 0.0}), ConfigError);
        CHECK_THROWS_AS(unitary_from_euler({0.0, 0.0, 7.0}), ConfigError);
    }
}

TEST_CASE("euler_from_unitary") {
    SECTION("identity decomposes to zero") {
        const auto dec = euler_from_unitary(Eigen::Matrix2cd::Identity());
        CHECK(dec.angles.theta == 0.0);
        CHECK(dec.angles.phi == 0.0);
        CHECK(dec.angles.chi == 0.0);
        CHECK(std::abs(dec.global_phase) < 1e-15);
    }
    SECTION("i X reconstructs exactly") {
        Eigen::Matrix2cd ix;
        ix << 0, cplx(0, 1), cplx(0, 1), 0;
        const auto dec = euler_from_unitary(ix);
        CHECK(dec.angles.theta == Catch::Approx(std::numbers::pi).margin(1e-12));
        const Eigen::Matrix2cd back =
            std::exp(cplx(0, dec.global_phase)) * unitary_from_euler(dec.angles);
        CHECK((back - ix).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("round trip over 10^4 Haar samples") {
        RandomStream rng(5);
        double worst = 0.0;
        for (int k = 0; k < 10000; ++k) {
            const Eigen::Matrix2cd u = haar_u2(rng);
            const auto dec = euler_from_unitary(u);
            CHECK(dec.angles.theta >= 0.0);
            CHECK(dec.angles.theta < 2.0 * std::numbers::pi);
            CHECK(dec.angles.phi >= 0.0);
            CHECK(dec.angles.phi < 2.0 * std::numbers::pi);
            CHECK(dec.angles.chi >= -2.0 * std::numbers::pi);
            CHECK(dec.angles.chi <= 2.0 * std::numbers::pi);
            const Eigen::Matrix2cd back =
                std::exp(cplx(0, dec.global_phase)) * unitary_from_euler(dec.angles);
            worst = std::max(worst, (back - u).cwiseAbs().maxCoeff());
        }
        CHECK(worst <= 1e-9);
    }
    SECTION("rejects non-unitary input") {
        Eigen::Matrix2cd bad;
        bad << 1, 0.1, 0, 1;
        CHECK_THROWS_AS(euler_from_unitary(bad), NumericError);
    }
}

TEST_CASE("measurement-distribution equivalence of the phase-stripped basis") {
    // Conjugation by the global phase leaves U rho U^dag invariant, so
    // snapshot statistics from the raw Haar matrix and from U(angles) agree.
    RandomStream rng(6);
    const Statevector one_qubit = []{
        Statevector s;
        s.n_qubits = 1;
        s.amps = {cplx(0.8, 0.0), cplx(0.36, 0.48)};
        return s;
    }();
    Eigen::Matrix2cd mean_raw = Eigen::Matrix2cd::Zero();
    Eigen::Matrix2cd mean_stripped = Eigen::Matrix2cd::Zero();
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
        RandomStream g = rng.fork(static_cast<std::uint64_t>(k));
        const Eigen::Matrix2cd u = haar_u2(g);
        const Eigen::Matrix2cd v = unitary_from_euler(euler_from_unitary(u).angles);
        for (int path = 0; path < 2; ++path) {
            const Eigen::Matrix2cd& basis = path == 0 ? u : v;
            Statevector s = one_qubit;
            apply_1q(s, 0, basis);
            RandomStream outcome = g.fork(1000 + static_cast<std::uint64_t>(path));
            const int b = sample_z(s, 0, 1, outcome)[0];
            const Eigen::Vector2cd col = basis.adjoint().col(b);
            const Eigen::Matrix2cd snap =
                3.0 * (col * col.adjoint()) - Eigen::Matrix2cd::Identity();
            (path == 0 ? mean_raw : mean_stripped) += snap / n;
        }
    }
    CHECK((mean_raw - mean_stripped).cwiseAbs().maxCoeff() < 0.02);
    // Both are unbiased for the state itself.
    Eigen::Matrix2cd rho;
    rho << std::norm(one_qubit.amps[0]), one_qubit.amps[0] * std::conj(one_qubit.amps[1]),
        one_qubit.amps[1] * std::conj(one_qubit.amps[0]), std::norm(one_qubit.amps[1]);
    CHECK((mean_raw - rho).cwiseAbs().maxCoeff() < 0.06);
}
