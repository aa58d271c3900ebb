#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "shadowphase/errors.hpp"
#include "shadowphase/nn/graph.hpp"
#include "shadowphase/nn/params.hpp"
#include "shadowphase/rng.hpp"
#include "shadowphase/shadows.hpp"

namespace shadowphase::nn {

// The classifier pipeline: per-shadow reconstructor MLP (4 -> 8 wide), mean
// pooling over shadows, a sequence model over the patch (bidirectional GRU
// or a dilated CNN), and a final MLP head ending in a sigmoid.
struct ClassifierConfig {
    enum class Arch { kBiRnn, kCnn };
    Arch arch = Arch::kBiRnn;

    std::vector<int> reconstructor_dims{4, 8, 16, 32, 64, 32, 16, 8};
    int rnn_hidden_per_dir = 256;  // concatenated output width 512
    bool use_gru = true;           // false: vanilla tanh RNN ablation
    int cnn_channels = 128;
    std::vector<int> cnn_dilations{1, 2, 4, 6};
    int cnn_kernel = 3;
    float cnn_dropout = 0.1f;

    int feature_dim() const {
        return arch == Arch::kBiRnn ? 2 * rnn_hidden_per_dir : cnn_channels;
    }
    std::vector<int> final_dims() const { return {feature_dim(), 64, 8, 1}; }

    std::string arch_name() const { return arch == Arch::kBiRnn ? "birnn" : "cnn"; }
    static Arch arch_from_name(const std::string& s) {
        if (s == "birnn") return Arch::kBiRnn;
        if (s == "cnn") return Arch::kCnn;
        throw ConfigError("unknown architecture '" + s + "' (expected birnn or cnn)");
    }
};

namespace detail_nn {

template <class T>
Tensor<T> uniform_fan_in(std::vector<std::int64_t> shape, std::int64_t fan_in, RandomStream& rng) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (T& x : t.data) x = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template <class T>
Tensor<T> orthogonal_square(std::int64_t n, RandomStream& rng) {
    Eigen::MatrixXd m(n, n);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) m(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (std::int64_t j = 0; j < n; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    Tensor<T> t = Tensor<T>::zeros({n, n});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            t.data[static_cast<std::size_t>(i * n + j)] = static_cast<T>(q(i, j));
    return t;
}

template <class T>
void add_linear(ParamStore<T>& ps, const std::string& prefix, std::int64_t in, std::int64_t out,
                RandomStream& rng) {
    RandomStream r = rng.fork(fnv1a_hash(prefix.data(), prefix.size()));
    ps.add(prefix + ".w", uniform_fan_in<T>({in, out}, in, r));
    ps.add(prefix + ".b", Tensor<T>::zeros({out}));
}

template <class T>
void add_conv(ParamStore<T>& ps, const std::string& prefix, std::int64_t c_out, std::int64_t c_in,
              std::int64_t k, RandomStream& rng) {
    RandomStream r = rng.fork(fnv1a_hash(prefix.data(), prefix.size()));
    ps.add(prefix + ".w", uniform_fan_in<T>({c_out, c_in, k}, c_in * k, r));
    ps.add(prefix + ".b", Tensor<T>::zeros({c_out}));
}

template <class T>
void add_batchnorm(ParamStore<T>& ps, const std::string& prefix, std::int64_t c) {
    Tensor<T> ones = Tensor<T>::zeros({c});
    for (T& x : ones.data) x = T(1);
    ps.add(prefix + ".gamma", ones);
    ps.add(prefix + ".beta", Tensor<T>::zeros({c}));
    Tensor<T> rv = Tensor<T>::zeros({c});
    for (T& x : rv.data) x = T(1);
    ps.add(prefix + ".rm", Tensor<T>::zeros({c}), /*trainable=*/false);
    ps.add(prefix + ".rv", rv, /*trainable=*/false);
}

}  // namespace detail_nn

template <class T>
void init_classifier_params(ParamStore<T>& ps, const ClassifierConfig& cfg, std::uint64_t seed) {
    RandomStream rng = RandomStream(seed).fork(kTagInit);
    const auto& rd = cfg.reconstructor_dims;
    for (std::size_t i = 0; i + 1 < rd.size(); ++i)
        detail_nn::add_linear(ps, "rec." + std::to_string(i), rd[i], rd[i + 1], rng);

    if (cfg.arch == ClassifierConfig::Arch::kBiRnn) {
        const std::int64_t in = rd.back();
        const std::int64_t h = cfg.rnn_hidden_per_dir;
        for (const char* dir : {"f", "b"}) {
            const std::string p = std::string("gru.") + dir;
            RandomStream r = rng.fork(fnv1a_hash(p.data(), p.size()));
            if (cfg.use_gru) {
                for (const char* gate : {"r", "z", "n"}) {
                    // Input weights at 1/sqrt(hidden) scale keep the gate
                    // preactivations out of saturation; recurrences are
                    // orthogonal.
                    ps.add(p + ".w" + gate, detail_nn::uniform_fan_in<T>({in, h}, 6 * h, r));
                    ps.add(p + ".u" + gate, detail_nn::orthogonal_square<T>(h, r));
                }
                ps.add(p + ".br", Tensor<T>::zeros({h}));
                ps.add(p + ".bz", Tensor<T>::zeros({h}));
                ps.add(p + ".bn_in", Tensor<T>::zeros({h}));
                ps.add(p + ".bn_hid", Tensor<T>::zeros({h}));
            } else {
                ps.add(p + ".w", detail_nn::uniform_fan_in<T>({in, h}, 6 * h, r));
                ps.add(p + ".u", detail_nn::orthogonal_square<T>(h, r));
                ps.add(p + ".b", Tensor<T>::zeros({h}));
            }
        }
    } else {
        const std::int64_t c = cfg.cnn_channels;
        for (int d : cfg.cnn_dilations) {
            const std::string p = "cnn.br" + std::to_string(d);
            detail_nn::add_conv(ps, p + ".c1", c, rd.back(), cfg.cnn_kernel, rng);
            detail_nn::add_batchnorm(ps, p + ".bn1", c);
            detail_nn::add_conv(ps, p + ".c2", c, c, cfg.cnn_kernel, rng);
            detail_nn::add_batchnorm(ps, p + ".bn2", c);
        }
        detail_nn::add_conv(ps, "cnn.mix", c, c * static_cast<std::int64_t>(cfg.cnn_dilations.size()),
                            1, rng);
        detail_nn::add_batchnorm<T>(ps, "cnn.mixbn", c);
        detail_nn::add_linear(ps, "cnn.fc1", c, c, rng);
        detail_nn::add_linear(ps, "cnn.fc2", c, c, rng);
    }

    const auto fd = cfg.final_dims();
    for (std::size_t i = 0; i + 1 < fd.size(); ++i)
        detail_nn::add_linear(ps, "final." + std::to_string(i), fd[i], fd[i + 1], rng);
}

namespace detail_nn {

template <class T>
typename Graph<T>::Var linear(Graph<T>& g, ParamBinder<T>& pb, const std::string& prefix,
                              typename Graph<T>::Var x) {
    return g.add_rows(g.matmul(x, pb(prefix + ".w")), pb(prefix + ".b"));
}

// One recurrent direction over [B, l, C]; returns the final hidden [B, H].
template <class T>
typename Graph<T>::Var rnn_direction(Graph<T>& g, ParamBinder<T>& pb, const ClassifierConfig& cfg,
                                     typename Graph<T>::Var seq, std::int64_t batch, std::int64_t l,
                                     std::int64_t c, bool forward) {
    const std::string p = std::string("gru.") + (forward ? "f" : "b");
    const std::int64_t h = cfg.rnn_hidden_per_dir;
    auto hidden = g.constant(Tensor<T>::zeros({batch, h}));
    for (std::int64_t step = 0; step < l; ++step) {
        const std::int64_t t = forward ? step : l - 1 - step;
        const auto xt = g.slice_middle(seq, batch, l, c, t);
        if (cfg.use_gru) {
            const auto r = g.sigmoid(g.add(
                g.add_rows(g.matmul(xt, pb(p + ".wr")), pb(p + ".br")), g.matmul(hidden, pb(p + ".ur"))));
            const auto z = g.sigmoid(g.add(
                g.add_rows(g.matmul(xt, pb(p + ".wz")), pb(p + ".bz")), g.matmul(hidden, pb(p + ".uz"))));
            const auto n = g.tanh_act(
                g.add(g.add_rows(g.matmul(xt, pb(p + ".wn")), pb(p + ".bn_in")),
                      g.mul(r, g.add_rows(g.matmul(hidden, pb(p + ".un")), pb(p + ".bn_hid")))));
            hidden = g.add(g.mul(z, hidden), g.mul(g.affine(z, T(-1), T(1)), n));
        } else {
            hidden = g.tanh_act(g.add(g.add_rows(g.matmul(xt, pb(p + ".w")), pb(p + ".b")),
                                      g.matmul(hidden, pb(p + ".u"))));
        }
    }
    return hidden;
}

template <class T>
typename Graph<T>::Var conv_bn_relu(Graph<T>& g, ParamBinder<T>& pb, const std::string& conv_prefix,
                                    const std::string& bn_prefix, typename Graph<T>::Var x,
                                    std::int64_t batch, std::int64_t c_in, std::int64_t l,
                                    std::int64_t c_out, std::int64_t k, int dilation, int padding,
                                    bool training) {
    auto y = g.conv1d(x, pb(conv_prefix + ".w"), pb(conv_prefix + ".b"), batch, c_in, l, c_out, k,
                      dilation, padding);
    typename Graph<T>::BatchNormState st;
    st.running_mean = &pb.raw(bn_prefix + ".rm");
    st.running_var = &pb.raw(bn_prefix + ".rv");
    y = g.batchnorm(y, pb(bn_prefix + ".gamma"), pb(bn_prefix + ".beta"), batch, c_out, l, st,
                    training);
    return g.relu(y);
}

}  // namespace detail_nn

// Shadow reconstructor: the same MLP applied to every (state, shadow, site)
// slice. Input [rows, 4] -> [rows, 8], ReLU after every hidden layer. The
// raw (theta, phi, chi, outcome) coordinates are standardized with fixed
// constants first (uniform-range means and widths); without this the
// pi-centered angles push the downstream recurrences into saturation.
template <class T>
typename Graph<T>::Var shadow_reconstructor_forward(Graph<T>& g, ParamBinder<T>& pb,
                                                    const ClassifierConfig& cfg,
                                                    typename Graph<T>::Var x) {
    const auto& rd = cfg.reconstructor_dims;
    auto h = x;
    if (rd.front() == 4) {
        const T pi = static_cast<T>(std::numbers::pi);
        const T angle_scale = static_cast<T>(2.0 * std::numbers::pi / std::sqrt(12.0));
        Tensor<T> neg_mean({4}, {-pi, -pi, T(0), T(-0.5)});
        Tensor<T> inv_std({4}, {T(1) / angle_scale, T(1) / angle_scale,
                                T(1) / (2 * angle_scale), T(2)});
        h = g.mul_rows(g.add_rows(h, g.constant(std::move(neg_mean))),
                       g.constant(std::move(inv_std)));
    }
    for (std::size_t i = 0; i + 1 < rd.size(); ++i) {
        h = detail_nn::linear(g, pb, "rec." + std::to_string(i), h);
        if (i + 2 < rd.size()) h = g.relu(h);
    }
    return h;
}

// Head MLP with sigmoid output in (0, 1).
template <class T>
typename Graph<T>::Var final_reconstructor_forward(Graph<T>& g, ParamBinder<T>& pb,
                                                   const ClassifierConfig& cfg,
                                                   typename Graph<T>::Var features) {
    const auto fd = cfg.final_dims();
    auto h = features;
    for (std::size_t i = 0; i + 1 < fd.size(); ++i) {
        h = detail_nn::linear(g, pb, "final." + std::to_string(i), h);
        if (i + 2 < fd.size()) h = g.relu(h);
    }
    return g.sigmoid(h);
}

// Full pipeline on a batch: input [batch * n_s * l, 4] -> probabilities
// [batch, 1].
template <class T>
typename Graph<T>::Var classifier_forward(Graph<T>& g, ParamBinder<T>& pb,
                                          const ClassifierConfig& cfg, typename Graph<T>::Var input,
                                          std::int64_t batch, std::int64_t n_s, std::int64_t l,
                                          bool training = false, RandomStream* dropout_rng = nullptr) {
    if (g.value(input).numel() != batch * n_s * l * 4)
        throw ConfigError("classifier_forward: input is not [batch * n_s * l, 4]");
    const std::int64_t c = cfg.reconstructor_dims.back();
    auto h = shadow_reconstructor_forward(g, pb, cfg, input);
    auto pooled = g.mean_middle(h, batch, n_s, l * c);  // [batch, l * c]

    typename Graph<T>::Var features;
    if (cfg.arch == ClassifierConfig::Arch::kBiRnn) {
        const auto fwd = detail_nn::rnn_direction(g, pb, cfg, pooled, batch, l, c, true);
        const auto bwd = detail_nn::rnn_direction(g, pb, cfg, pooled, batch, l, c, false);
        features = g.concat_cols(fwd, bwd);
    } else {
        const std::int64_t ch = cfg.cnn_channels;
        auto x = g.transpose_12(pooled, batch, l, c);  // [batch, c, l]
        std::vector<typename Graph<T>::Var> branches;
        for (int d : cfg.cnn_dilations) {
            const std::string p = "cnn.br" + std::to_string(d);
            auto y = detail_nn::conv_bn_relu(g, pb, p + ".c1", p + ".bn1", x, batch, c, l, ch,
                                             cfg.cnn_kernel, d, d, training);
            y = detail_nn::conv_bn_relu(g, pb, p + ".c2", p + ".bn2", y, batch, ch, l, ch,
                                        cfg.cnn_kernel, d, d, training);
            branches.push_back(y);
        }
        const std::vector<std::int64_t> widths(branches.size(), ch);
        auto cat = g.concat_channels(branches, batch, widths, l);
        auto mixed = detail_nn::conv_bn_relu(g, pb, "cnn.mix", "cnn.mixbn", cat, batch,
                                             ch * static_cast<std::int64_t>(branches.size()), l, ch,
                                             1, 1, 0, training);
        auto pooled_l = g.mean_last(mixed, batch * ch, l);          // [batch * ch, 1]
        auto flat = g.reshaped(pooled_l, {batch, ch});
        auto f1 = g.relu(detail_nn::linear(g, pb, "cnn.fc1", flat));
        if (training && dropout_rng)
            f1 = g.dropout(f1, static_cast<T>(cfg.cnn_dropout), training, *dropout_rng);
        features = detail_nn::linear(g, pb, "cnn.fc2", f1);
    }
    return final_reconstructor_forward(g, pb, cfg, features);
}

}  // namespace shadowphase::nn
