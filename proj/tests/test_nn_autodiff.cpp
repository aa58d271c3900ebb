#include <catch2/catch_amalgamated.hpp>

#include "shadowphase/nn/graph.hpp"
#include "shadowphase/nn/model.hpp"
#include "shadowphase/nn/params.hpp"
#include "support/gradcheck.hpp"

using namespace shadowphase;
using nn::Graph;
using nn::ParamBinder;
using nn::ParamStore;
using nn::Tensor;
using test::check_gradients;
using test::random_tensor;

namespace {

using DVar = Graph<double>::Var;

// Scalarize an arbitrary output through a fixed random functional so every
// element's gradient is exercised. (Note: node values are fetched by value
// where needed; references into the graph die on the next op push.)
DVar scalarize(Graph<double>& g, DVar y, std::uint64_t seed) {
    const std::int64_t n = g.value(y).numel();
    RandomStream rng(seed);
    Tensor<double> w = random_tensor({n, 1}, rng);
    const auto flat = g.reshaped(y, {1, n});
    return g.matmul(flat, g.constant(std::move(w)));
}

}  // namespace

TEST_CASE("gradients: dense layers and activations") {
    RandomStream rng(1);
    SECTION("linear (matmul + bias rows)") {
        for (int trial = 0; trial < 5; ++trial) {
            const std::int64_t m = 1 + static_cast<std::int64_t>(rng.next_below(5));
            const std::int64_t k = 1 + static_cast<std::int64_t>(rng.next_below(6));
            const std::int64_t n = 1 + static_cast<std::int64_t>(rng.next_below(5));
            const auto report = check_gradients(
                {random_tensor({m, k}, rng), random_tensor({k, n}, rng), random_tensor({n}, rng)},
                [&](Graph<double>& g, const std::vector<DVar>& p) {
                    return scalarize(g, g.add_rows(g.matmul(p[0], p[1]), p[2]), 7);
                });
            INFO(report.worst);
            CHECK(report.max_rel_err <= 1e-4);
        }
    }
    SECTION("relu, sigmoid, tanh, affine chains") {
        for (int trial = 0; trial < 5; ++trial) {
            const std::int64_t m = 2 + static_cast<std::int64_t>(rng.next_below(4));
            const std::int64_t n = 1 + static_cast<std::int64_t>(rng.next_below(6));
            const auto report = check_gradients(
                {random_tensor({m, n}, rng)}, [&](Graph<double>& g, const std::vector<DVar>& p) {
                    const auto a = g.relu(p[0]);
                    const auto b = g.sigmoid(g.affine(p[0], 0.7, -0.2));
                    const auto c = g.tanh_act(g.mul(a, b));
                    return scalarize(g, g.add(c, g.sub(a, b)), 11);
                });
            INFO(report.worst);
            CHECK(report.max_rel_err <= 1e-4);
        }
    }
    SECTION("concat, slice, means, transpose") {
        for (int trial = 0; trial < 5; ++trial) {
            const std::int64_t a = 2 + static_cast<std::int64_t>(rng.next_below(3));
            const std::int64_t m = 2 + static_cast<std::int64_t>(rng.next_below(4));
            const std::int64_t c = 1 + static_cast<std::int64_t>(rng.next_below(4));
            const auto report = check_gradients(
                {random_tensor({a * m * c}, rng), random_tensor({a, 3}, rng)},
                [&](Graph<double>& g, const std::vector<DVar>& p) {
                    const auto sl = g.slice_middle(p[0], a, m, c, m / 2);
                    const auto mm = g.mean_middle(p[0], a, m, c);
                    const auto ml = g.mean_last(p[0], a, m * c);
                    const auto tr = g.transpose_12(p[0], a, m, c);
                    const auto cat = g.concat_cols(g.concat_cols(sl, mm), p[1]);
                    const auto all = g.concat_cols(
                        cat, g.concat_cols(g.reshaped(tr, {a, m * c}), ml));
                    return scalarize(g, all, 13);
                });
            INFO(report.worst);
            CHECK(report.max_rel_err <= 1e-4);
        }
    }
    SECTION("bce against fixed targets") {
        for (int trial = 0; trial < 5; ++trial) {
            const std::int64_t m = 2 + static_cast<std::int64_t>(rng.next_below(6));
            Tensor<double> targets = Tensor<double>::zeros({m, 1});
            for (std::int64_t i = 0; i < m; ++i)
                targets.data[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 0.0 : 1.0;
            const auto report = check_gradients(
                {random_tensor({m, 1}, rng)}, [&](Graph<double>& g, const std::vector<DVar>& p) {
                    return g.bce_mean(g.sigmoid(p[0]), targets);
                });
            INFO(report.worst);
            CHECK(report.max_rel_err <= 1e-4);
        }
    }
}

TEST_CASE("gradients: convolution and batchnorm") {
    RandomStream rng(2);
    SECTION("dilated conv1d") {
        for (int trial = 0; trial < 5; ++trial) {
            const std::int64_t b = 1 + static_cast<std::int64_t>(rng.next_below(3));
            const std::int64_t ci = 1 + static_cast<std::int64_t>(rng.next_below(3));
            const std::int64_t l = 3 + static_cast<std::int64_t>(rng.next_below(6));
            const std::int64_t co = 1 + static_cast<std::int64_t>(rng.next_below(4));
            const int d = 1 << rng.next_below(3);  // 1, 2 or 4
            const auto report = check_gradients(
                {random_tensor({b, ci, l}, rng), random_tensor({co, ci, 3}, rng),
                 random_tensor({co}, rng)},
                [&](Graph<double>& g, const std::vector<DVar>& p) {
                    return scalarize(g, g.conv1d(p[0], p[1], p[2], b, ci, l, co, 3, d, d), 17);
                });
            INFO(report.worst);
            CHECK(report.max_rel_err <= 1e-4);
        }
    }
    SECTION("batchnorm, training statistics") {
        for (int trial = 0; trial < 5; ++trial) {
            const std::int64_t b = 2 + static_cast<std::int64_t>(rng.next_below(3));
            const std::int64_t c = 1 + static_cast<std::int64_t>(rng.next_below(3));
            const std::int64_t l = 2 + static_cast<std::int64_t>(rng.next_below(4));
            Tensor<double> rm = Tensor<double>::zeros({c});
            Tensor<double> rv = Tensor<double>::zeros({c});
            for (double& x : rv.data) x = 1.0;
            const auto report = check_gradients(
                {random_tensor({b, c, l}, rng), random_tensor({c}, rng), random_tensor({c}, rng)},
                [&](Graph<double>& g, const std::vector<DVar>& p) {
                    typename Graph<double>::BatchNormState st;
                    Tensor<double> rm_copy = rm, rv_copy = rv;
                    st.running_mean = &rm_copy;
                    st.running_var = &rv_copy;
                    return scalarize(g, g.batchnorm(p[0], p[1], p[2], b, c, l, st, true), 19);
                });
            INFO(report.worst);
            CHECK(report.max_rel_err <= 1e-4);
        }
    }
    SECTION("batchnorm, eval statistics") {
        const std::int64_t b = 3, c = 2, l = 4;
        RandomStream r2(3);
        Tensor<double> rm = random_tensor({c}, r2, 0.3);
        Tensor<double> rv = Tensor<double>::zeros({c});
        for (double& x : rv.data) x = 0.5 + r2.uniform();
        const auto report = check_gradients(
            {random_tensor({b, c, l}, r2), random_tensor({c}, r2), random_tensor({c}, r2)},
            [&](Graph<double>& g, const std::vector<DVar>& p) {
                typename Graph<double>::BatchNormState st;
                Tensor<double> rm_copy = rm, rv_copy = rv;
                st.running_mean = &rm_copy;
                st.running_var = &rv_copy;
                return scalarize(g, g.batchnorm(p[0], p[1], p[2], b, c, l, st, false), 23);
            });
        INFO(report.worst);
        CHECK(report.max_rel_err <= 1e-4);
    }
}

TEST_CASE("gradients: GRU cell and full tiny models") {
    SECTION("GRU direction, all parameters") {
        // Small bidirectional GRU wired exactly as the model wires it.
        nn::ClassifierConfig cfg;
        cfg.reconstructor_dims = {4, 5};
        cfg.rnn_hidden_per_dir = 3;
        ParamStore<double> ps;
        nn::init_classifier_params(ps, cfg, 99);
        std::vector<Tensor<double>> params;
        std::vector<std::string> names;
        for (const auto& e : ps.entries()) {
            names.push_back(e.name);
            params.push_back(e.value);
        }
        RandomStream rng(5);
        const std::int64_t batch = 2, n_s = 3, l = 3;
        const Tensor<double> input = random_tensor({batch * n_s * l, 4}, rng);
        Tensor<double> targets = Tensor<double>::zeros({batch, 1});
        targets.data[0] = 1.0;
        const auto report = check_gradients(
            params,
            [&](Graph<double>& g, const std::vector<DVar>& p) {
                // Wire the BiRNN pipeline directly against the graph
                // parameters, matching classifier_forward's structure.
                auto var_of = [&](const std::string& n) {
                    for (std::size_t i = 0; i < names.size(); ++i)
                        if (names[i] == n) return p[i];
                    throw ConfigError("missing " + n);
                };
                auto x = g.constant(input);
                auto h = g.add_rows(g.matmul(x, var_of("rec.0.w")), var_of("rec.0.b"));
                auto pooled = g.mean_middle(h, batch, n_s, l * 5);
                auto run_dir = [&](bool forward) {
                    const std::string pre = forward ? "gru.f" : "gru.b";
                    auto hid = g.constant(Tensor<double>::zeros({batch, 3}));
                    for (std::int64_t s = 0; s < l; ++s) {
                        const std::int64_t t = forward ? s : l - 1 - s;
                        auto xt = g.slice_middle(pooled, batch, l, 5, t);
                        auto r = g.sigmoid(g.add(g.add_rows(g.matmul(xt, var_of(pre + ".wr")),
                                                            var_of(pre + ".br")),
                                                 g.matmul(hid, var_of(pre + ".ur"))));
                        auto z = g.sigmoid(g.add(g.add_rows(g.matmul(xt, var_of(pre + ".wz")),
                                                            var_of(pre + ".bz")),
                                                 g.matmul(hid, var_of(pre + ".uz"))));
                        auto n = g.tanh_act(
                            g.add(g.add_rows(g.matmul(xt, var_of(pre + ".wn")), var_of(pre + ".bn_in")),
                                  g.mul(r, g.add_rows(g.matmul(hid, var_of(pre + ".un")),
                                                      var_of(pre + ".bn_hid")))));
                        hid = g.add(g.mul(z, hid), g.mul(g.affine(z, -1.0, 1.0), n));
                    }
                    return hid;
                };
                auto feat = g.concat_cols(run_dir(true), run_dir(false));
                auto f0 = g.relu(g.add_rows(g.matmul(feat, var_of("final.0.w")), var_of("final.0.b")));
                auto f1 = g.relu(g.add_rows(g.matmul(f0, var_of("final.1.w")), var_of("final.1.b")));
                auto out = g.sigmoid(g.add_rows(g.matmul(f1, var_of("final.2.w")), var_of("final.2.b")));
                return g.bce_mean(out, targets);
            },
            1e-5, 24);
        INFO(report.worst);
        CHECK(report.max_rel_err <= 1e-4);
    }
}

TEST_CASE("dropout contract") {
    Graph<float> g;
    RandomStream rng(31);
    Tensor<float> x = Tensor<float>::zeros({64, 8});
    for (float& v : x.data) v = 1.0f;
    const auto p = g.param(x);
    const auto y = g.dropout(p, 0.25f, true, rng);
    const auto& yv = g.value(y);
    std::size_t zeros = 0;
    for (float v : yv.data) {
        REQUIRE((v == 0.0f || v == Catch::Approx(1.0f / 0.75f)));
        zeros += (v == 0.0f);
    }
    CHECK(zeros > 50);
    CHECK(zeros < 250);
    // Backward distributes exactly the forward mask.
    const auto loss = g.matmul(g.reshaped(y, {1, 512}), g.constant([&] {
        Tensor<float> w = Tensor<float>::zeros({512, 1});
        for (float& v : w.data) v = 1.0f;
        return w;
    }()));
    g.backward(loss);
    const auto& gx = g.grad(p);
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
        if (yv.data[i] == 0.0f)
            CHECK(gx.data[i] == 0.0f);
        else
            CHECK(gx.data[i] == Catch::Approx(1.0f / 0.75f));
    }
    // Eval mode passes through unchanged.
    Graph<float> g2;
    const auto p2 = g2.constant(x);
    CHECK(g2.dropout(p2, 0.25f, false, rng) == p2);
}
