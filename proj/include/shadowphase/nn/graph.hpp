#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "shadowphase/errors.hpp"
#include "shadowphase/nn/tensor.hpp"
#include "shadowphase/rng.hpp"

namespace shadowphase::nn {

// Reverse-mode tape over dense tensors. Nodes are created in topological
// order; backward() walks the tape in reverse, each node pushing its
// gradient into its parents.
template <class T>
class Graph {
  public:
    using Var = int;
    using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const EMat>;
    using MMap = Eigen::Map<EMat>;

    Var constant(Tensor<T> v) { return push(std::move(v), false); }
    Var param(Tensor<T> v) { return push(std::move(v), true); }

    const Tensor<T>& value(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }
    const Tensor<T>& grad(Var v) const {
        const Node& n = nodes_[static_cast<std::size_t>(v)];
        if (!n.has_grad)
            throw ConfigError("Graph: gradient not populated; run backward() first");
        return n.grad;
    }

    // ---- matrix ops ----

    Var matmul(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.shape.size() == 2 && bv.shape.size() == 2 && av.cols() == bv.rows(),
                "matmul", av, bv);
        Tensor<T> out = Tensor<T>::zeros({av.rows(), bv.cols()});
        MMap(out.data.data(), out.rows(), out.cols()).noalias() =
            CMap(av.data.data(), av.rows(), av.cols()) * CMap(bv.data.data(), bv.rows(), bv.cols());
        const Var y = push(std::move(out), needs(a) || needs(b));
        if (needs(y)) {
            backprop(y, [this, a, b, y] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                const Tensor<T>& av2 = value(a);
                const Tensor<T>& bv2 = value(b);
                CMap gm(g.data.data(), g.shape[0], g.shape[1]);
                if (needs(a)) {
                    Tensor<T>& ga = grad_buf(a);
                    MMap(ga.data.data(), av2.rows(), av2.cols()).noalias() +=
                        gm * CMap(bv2.data.data(), bv2.rows(), bv2.cols()).transpose();
                }
                if (needs(b)) {
                    Tensor<T>& gb = grad_buf(b);
                    MMap(gb.data.data(), bv2.rows(), bv2.cols()).noalias() +=
                        CMap(av2.data.data(), av2.rows(), av2.cols()).transpose() * gm;
                }
            });
        }
        return y;
    }

    // [m, n] + broadcast row vector [n]
    Var add_rows(Var a, Var bias) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(bias);
        require(av.shape.size() == 2 && bv.numel() == av.cols(), "add_rows", av, bv);
        Tensor<T> out = av;
        const std::int64_t m = av.rows(), n = av.cols();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                out.data[static_cast<std::size_t>(i * n + j)] += bv.data[static_cast<std::size_t>(j)];
        const Var y = push(std::move(out), needs(a) || needs(bias));
        if (needs(y)) {
            backprop(y, [this, a, bias, y, m, n] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                if (needs(a)) {
                    Tensor<T>& ga = grad_buf(a);
                    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
                }
                if (needs(bias)) {
                    Tensor<T>& gb = grad_buf(bias);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j)
                            gb.data[static_cast<std::size_t>(j)] +=
                                g.data[static_cast<std::size_t>(i * n + j)];
                }
            });
        }
        return y;
    }

    // [m, n] * broadcast row vector [n]
    Var mul_rows(Var a, Var scale) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& sv = value(scale);
        require(av.shape.size() == 2 && sv.numel() == av.cols(), "mul_rows", av, sv);
        Tensor<T> out = av;
        const std::int64_t m = av.rows(), n = av.cols();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                out.data[static_cast<std::size_t>(i * n + j)] *= sv.data[static_cast<std::size_t>(j)];
        const Var y = push(std::move(out), needs(a) || needs(scale));
        if (needs(y)) {
            backprop(y, [this, a, scale, y, m, n] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                const Tensor<T>& av2 = value(a);
                const Tensor<T>& sv2 = value(scale);
                if (needs(a)) {
                    Tensor<T>& ga = grad_buf(a);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j)
                            ga.data[static_cast<std::size_t>(i * n + j)] +=
                                g.data[static_cast<std::size_t>(i * n + j)] *
                                sv2.data[static_cast<std::size_t>(j)];
                }
                if (needs(scale)) {
                    Tensor<T>& gs = grad_buf(scale);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j)
                            gs.data[static_cast<std::size_t>(j)] +=
                                g.data[static_cast<std::size_t>(i * n + j)] *
                                av2.data[static_cast<std::size_t>(i * n + j)];
                }
            });
        }
        return y;
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        return binary(a, b, "add", [](T x, T y) { return x + y; },
                      [](T, T, T g) { return std::pair<T, T>(g, g); });
    }
    Var sub(Var a, Var b) {
        return binary(a, b, "sub", [](T x, T y) { return x - y; },
                      [](T, T, T g) { return std::pair<T, T>(g, -g); });
    }
    Var mul(Var a, Var b) {
        return binary(a, b, "mul", [](T x, T y) { return x * y; },
                      [](T x, T y, T g) { return std::pair<T, T>(g * y, g * x); });
    }

    // y = scale * x + shift
    Var affine(Var a, T scale, T shift) {
        const Tensor<T>& av = value(a);
        Tensor<T> out = av;
        for (T& x : out.data) x = scale * x + shift;
        const Var y = push(std::move(out), needs(a));
        if (needs(y)) {
            backprop(y, [this, a, y, scale] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                Tensor<T>& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += scale * g.data[i];
            });
        }
        return y;
    }

    Var relu(Var a) {
        const Tensor<T>& av = value(a);
        Tensor<T> out = av;
        for (T& x : out.data) x = x > T(0) ? x : T(0);
        const Var y = push(std::move(out), needs(a));
        if (needs(y)) {
            backprop(y, [this, a, y] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                const Tensor<T>& yv = nodes_[static_cast<std::size_t>(y)].value;
                Tensor<T>& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    if (yv.data[i] > T(0)) ga.data[i] += g.data[i];
            });
        }
        return y;
    }

    Var sigmoid(Var a) {
        const Tensor<T>& av = value(a);
        Tensor<T> out = av;
        for (T& x : out.data) x = T(1) / (T(1) + std::exp(-x));
        const Var y = push(std::move(out), needs(a));
        if (needs(y)) {
            backprop(y, [this, a, y] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                const Tensor<T>& yv = nodes_[static_cast<std::size_t>(y)].value;
                Tensor<T>& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * yv.data[i] * (T(1) - yv.data[i]);
            });
        }
        return y;
    }

    Var tanh_act(Var a) {
        const Tensor<T>& av = value(a);
        Tensor<T> out = av;
        for (T& x : out.data) x = std::tanh(x);
        const Var y = push(std::move(out), needs(a));
        if (needs(y)) {
            backprop(y, [this, a, y] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                const Tensor<T>& yv = nodes_[static_cast<std::size_t>(y)].value;
                Tensor<T>& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * (T(1) - yv.data[i] * yv.data[i]);
            });
        }
        return y;
    }

    // ---- shape ops ----

    Var reshaped(Var a, std::vector<std::int64_t> shape) {
        const Tensor<T>& av = value(a);
        if (Tensor<T>::numel_of(shape) != av.numel())
            throw ConfigError("reshaped: element count mismatch");
        Tensor<T> out(std::move(shape), av.data);
        const Var y = push(std::move(out), needs(a));
        if (needs(y)) {
            backprop(y, [this, a, y] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                Tensor<T>& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            });
        }
        return y;
    }

    // Concatenate 2D tensors along columns.
    Var concat_cols(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.shape.size() == 2 && bv.shape.size() == 2 && av.rows() == bv.rows(),
                "concat_cols", av, bv);
        const std::int64_t m = av.rows(), p = av.cols(), q = bv.cols();
        Tensor<T> out = Tensor<T>::zeros({m, p + q});
        for (std::int64_t i = 0; i < m; ++i) {
            std::copy_n(av.data.begin() + i * p, p, out.data.begin() + i * (p + q));
            std::copy_n(bv.data.begin() + i * q, q, out.data.begin() + i * (p + q) + p);
        }
        const Var y = push(std::move(out), needs(a) || needs(b));
        if (needs(y)) {
            backprop(y, [this, a, b, y, m, p, q] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                for (std::int64_t i = 0; i < m; ++i) {
                    if (needs(a)) {
                        Tensor<T>& ga = grad_buf(a);
                        for (std::int64_t j = 0; j < p; ++j)
                            ga.data[static_cast<std::size_t>(i * p + j)] +=
                                g.data[static_cast<std::size_t>(i * (p + q) + j)];
                    }
                    if (needs(b)) {
                        Tensor<T>& gb = grad_buf(b);
                        for (std::int64_t j = 0; j < q; ++j)
                            gb.data[static_cast<std::size_t>(i * q + j)] +=
                                g.data[static_cast<std::size_t>(i * (p + q) + p + j)];
                    }
                }
            });
        }
        return y;
    }

    // x viewed as [A, M, C]; select [:, index, :] -> [A, C].
    Var slice_middle(Var x, std::int64_t a_dim, std::int64_t m_dim, std::int64_t c_dim,
                     std::int64_t index) {
        const Tensor<T>& xv = value(x);
        require(xv.numel() == a_dim * m_dim * c_dim && index >= 0 && index < m_dim,
                "slice_middle", xv, xv);
        Tensor<T> out = Tensor<T>::zeros({a_dim, c_dim});
        for (std::int64_t a = 0; a < a_dim; ++a)
            std::copy_n(xv.data.begin() + (a * m_dim + index) * c_dim, c_dim,
                        out.data.begin() + a * c_dim);
        const Var y = push(std::move(out), needs(x));
        if (needs(y)) {
            backprop(y, [this, x, y, a_dim, m_dim, c_dim, index] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                Tensor<T>& gx = grad_buf(x);
                for (std::int64_t a = 0; a < a_dim; ++a)
                    for (std::int64_t c = 0; c < c_dim; ++c)
                        gx.data[static_cast<std::size_t>((a * m_dim + index) * c_dim + c)] +=
                            g.data[static_cast<std::size_t>(a * c_dim + c)];
            });
        }
        return y;
    }

    // x viewed as [A, M, C]; mean over the middle axis -> [A, C]. The
    // per-coordinate values are sorted before double accumulation, making
    // the result bit-exactly invariant under permutations of the M axis.
    Var mean_middle(Var x, std::int64_t a_dim, std::int64_t m_dim, std::int64_t c_dim) {
        const Tensor<T>& xv = value(x);
        require(xv.numel() == a_dim * m_dim * c_dim && m_dim >= 1, "mean_middle", xv, xv);
        Tensor<T> out = Tensor<T>::zeros({a_dim, c_dim});
        std::vector<T> buf(static_cast<std::size_t>(m_dim));
        for (std::int64_t a = 0; a < a_dim; ++a) {
            for (std::int64_t c = 0; c < c_dim; ++c) {
                for (std::int64_t m = 0; m < m_dim; ++m)
                    buf[static_cast<std::size_t>(m)] =
                        xv.data[static_cast<std::size_t>((a * m_dim + m) * c_dim + c)];
                std::sort(buf.begin(), buf.end());
                double acc = 0.0;
                for (T v : buf) acc += static_cast<double>(v);
                out.data[static_cast<std::size_t>(a * c_dim + c)] =
                    static_cast<T>(acc / static_cast<double>(m_dim));
            }
        }
        const Var y = push(std::move(out), needs(x));
        if (needs(y)) {
            backprop(y, [this, x, y, a_dim, m_dim, c_dim] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                Tensor<T>& gx = grad_buf(x);
                const T inv = T(1) / static_cast<T>(m_dim);
                for (std::int64_t a = 0; a < a_dim; ++a)
                    for (std::int64_t m = 0; m < m_dim; ++m)
                        for (std::int64_t c = 0; c < c_dim; ++c)
                            gx.data[static_cast<std::size_t>((a * m_dim + m) * c_dim + c)] +=
                                inv * g.data[static_cast<std::size_t>(a * c_dim + c)];
            });
        }
        return y;
    }

    // x viewed as [rows, cols]; mean over cols -> [rows, 1].
    Var mean_last(Var x, std::int64_t rows, std::int64_t cols) {
        const Tensor<T>& xv = value(x);
        require(xv.numel() == rows * cols && cols >= 1, "mean_last", xv, xv);
        Tensor<T> out = Tensor<T>::zeros({rows, 1});
        for (std::int64_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::int64_t c = 0; c < cols; ++c)
                acc += static_cast<double>(xv.data[static_cast<std::size_t>(r * cols + c)]);
            out.data[static_cast<std::size_t>(r)] = static_cast<T>(acc / static_cast<double>(cols));
        }
        const Var y = push(std::move(out), needs(x));
        if (needs(y)) {
            backprop(y, [this, x, y, rows, cols] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                Tensor<T>& gx = grad_buf(x);
                const T inv = T(1) / static_cast<T>(cols);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cols; ++c)
                        gx.data[static_cast<std::size_t>(r * cols + c)] +=
                            inv * g.data[static_cast<std::size_t>(r)];
            });
        }
        return y;
    }

    // x viewed as [B, M, C] -> [B, C, M].
    Var transpose_12(Var x, std::int64_t b_dim, std::int64_t m_dim, std::int64_t c_dim) {
        const Tensor<T>& xv = value(x);
        require(xv.numel() == b_dim * m_dim * c_dim, "transpose_12", xv, xv);
        Tensor<T> out = Tensor<T>::zeros({b_dim, c_dim, m_dim});
        for (std::int64_t b = 0; b < b_dim; ++b)
            for (std::int64_t m = 0; m < m_dim; ++m)
                for (std::int64_t c = 0; c < c_dim; ++c)
                    out.data[static_cast<std::size_t>((b * c_dim + c) * m_dim + m)] =
                        xv.data[static_cast<std::size_t>((b * m_dim + m) * c_dim + c)];
        const Var y = push(std::move(out), needs(x));
        if (needs(y)) {
            backprop(y, [this, x, y, b_dim, m_dim, c_dim] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                Tensor<T>& gx = grad_buf(x);
                for (std::int64_t b = 0; b < b_dim; ++b)
                    for (std::int64_t m = 0; m < m_dim; ++m)
                        for (std::int64_t c = 0; c < c_dim; ++c)
                            gx.data[static_cast<std::size_t>((b * m_dim + m) * c_dim + c)] +=
                                g.data[static_cast<std::size_t>((b * c_dim + c) * m_dim + m)];
            });
        }
        return y;
    }

    // Concatenate [B, C_i, L] blocks along the channel axis.
    Var concat_channels(const std::vector<Var>& xs, std::int64_t b_dim,
                        const std::vector<std::int64_t>& channels, std::int64_t l_dim) {
        if (xs.size() != channels.size() || xs.empty())
            throw ConfigError("concat_channels: inputs and channel counts differ");
        std::int64_t total = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Tensor<T>& v = value(xs[i]);
            if (v.numel() != b_dim * channels[i] * l_dim)
                throw ConfigError("concat_channels: block " + std::to_string(i) + " has shape " +
                                  v.shape_str());
            total += channels[i];
        }
        Tensor<T> out = Tensor<T>::zeros({b_dim, total, l_dim});
        bool any = false;
        for (Var v : xs) any = any || needs(v);
        std::int64_t off = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Tensor<T>& v = value(xs[i]);
            for (std::int64_t b = 0; b < b_dim; ++b)
                std::copy_n(v.data.begin() + b * channels[i] * l_dim, channels[i] * l_dim,
                            out.data.begin() + (b * total + off) * l_dim);
            off += channels[i];
        }
        const Var y = push(std::move(out), any);
        if (needs(y)) {
            backprop(y, [this, xs, y, b_dim, channels, l_dim, total] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                std::int64_t offset = 0;
                for (std::size_t i = 0; i < xs.size(); ++i) {
                    if (needs(xs[i])) {
                        Tensor<T>& gx = grad_buf(xs[i]);
                        for (std::int64_t b = 0; b < b_dim; ++b)
                            for (std::int64_t j = 0; j < channels[i] * l_dim; ++j)
                                gx.data[static_cast<std::size_t>(b * channels[i] * l_dim + j)] +=
                                    g.data[static_cast<std::size_t>((b * total + offset) * l_dim + j)];
                    }
                    offset += channels[i];
                }
            });
        }
        return y;
    }

    // ---- structured layers ----

    // 1D convolution on [B, C_in, L] with kernel [C_out, C_in, K]; output
    // length L + 2*padding - dilation*(K-1). im2col + GEMM inside one node.
    Var conv1d(Var x, Var w, Var bias, std::int64_t b_dim, std::int64_t c_in, std::int64_t l_dim,
               std::int64_t c_out, std::int64_t k, int dilation, int padding) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        const Tensor<T>& bv = value(bias);
        require(xv.numel() == b_dim * c_in * l_dim && wv.numel() == c_out * c_in * k &&
                    bv.numel() == c_out,
                "conv1d", xv, wv);
        const std::int64_t l_out = l_dim + 2 * padding - static_cast<std::int64_t>(dilation) * (k - 1);
        if (l_out < 1) throw ConfigError("conv1d: output length would be < 1");

        auto col = std::make_shared<Tensor<T>>(Tensor<T>::zeros({b_dim * l_out, c_in * k}));
        for (std::int64_t b = 0; b < b_dim; ++b)
            for (std::int64_t t = 0; t < l_out; ++t) {
                T* row = col->data.data() + (b * l_out + t) * c_in * k;
                for (std::int64_t ci = 0; ci < c_in; ++ci)
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const std::int64_t src = t - padding + static_cast<std::int64_t>(dilation) * kk;
                        row[ci * k + kk] =
                            (src >= 0 && src < l_dim)
                                ? xv.data[static_cast<std::size_t>((b * c_in + ci) * l_dim + src)]
                                : T(0);
                    }
            }
        // y2[(b t), co] = col . w2^T, then scatter to [B, C_out, L_out].
        Tensor<T> y2 = Tensor<T>::zeros({b_dim * l_out, c_out});
        MMap(y2.data.data(), b_dim * l_out, c_out).noalias() =
            CMap(col->data.data(), b_dim * l_out, c_in * k) *
            CMap(wv.data.data(), c_out, c_in * k).transpose();
        Tensor<T> out = Tensor<T>::zeros({b_dim, c_out, l_out});
        for (std::int64_t b = 0; b < b_dim; ++b)
            for (std::int64_t t = 0; t < l_out; ++t)
                for (std::int64_t co = 0; co < c_out; ++co)
                    out.data[static_cast<std::size_t>((b * c_out + co) * l_out + t)] =
                        y2.data[static_cast<std::size_t>((b * l_out + t) * c_out + co)] +
                        bv.data[static_cast<std::size_t>(co)];

        const Var y = push(std::move(out), needs(x) || needs(w) || needs(bias));
        if (needs(y)) {
            backprop(y, [this, x, w, bias, y, col, b_dim, c_in, l_dim, c_out, k, dilation, padding,
                         l_out] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                Tensor<T> g2 = Tensor<T>::zeros({b_dim * l_out, c_out});
                for (std::int64_t b = 0; b < b_dim; ++b)
                    for (std::int64_t t = 0; t < l_out; ++t)
                        for (std::int64_t co = 0; co < c_out; ++co)
                            g2.data[static_cast<std::size_t>((b * l_out + t) * c_out + co)] =
                                g.data[static_cast<std::size_t>((b * c_out + co) * l_out + t)];
                if (needs(bias)) {
                    Tensor<T>& gb = grad_buf(bias);
                    for (std::int64_t r = 0; r < b_dim * l_out; ++r)
                        for (std::int64_t co = 0; co < c_out; ++co)
                            gb.data[static_cast<std::size_t>(co)] +=
                                g2.data[static_cast<std::size_t>(r * c_out + co)];
                }
                if (needs(w)) {
                    Tensor<T>& gw = grad_buf(w);
                    MMap(gw.data.data(), c_out, c_in * k).noalias() +=
                        CMap(g2.data.data(), b_dim * l_out, c_out).transpose() *
                        CMap(col->data.data(), b_dim * l_out, c_in * k);
                }
                if (needs(x)) {
                    Tensor<T> gcol = Tensor<T>::zeros({b_dim * l_out, c_in * k});
                    const Tensor<T>& wv2 = value(w);
                    MMap(gcol.data.data(), b_dim * l_out, c_in * k).noalias() =
                        CMap(g2.data.data(), b_dim * l_out, c_out) *
                        CMap(wv2.data.data(), c_out, c_in * k);
                    Tensor<T>& gx = grad_buf(x);
                    for (std::int64_t b = 0; b < b_dim; ++b)
                        for (std::int64_t t = 0; t < l_out; ++t) {
                            const T* row = gcol.data.data() + (b * l_out + t) * c_in * k;
                            for (std::int64_t ci = 0; ci < c_in; ++ci)
                                for (std::int64_t kk = 0; kk < k; ++kk) {
                                    const std::int64_t src =
                                        t - padding + static_cast<std::int64_t>(dilation) * kk;
                                    if (src >= 0 && src < l_dim)
                                        gx.data[static_cast<std::size_t>((b * c_in + ci) * l_dim +
                                                                         src)] += row[ci * k + kk];
                                }
                        }
                }
            });
        }
        return y;
    }

    struct BatchNormState {
        Tensor<T>* running_mean = nullptr;
        Tensor<T>* running_var = nullptr;
        T momentum = T(0.1);
        T eps = T(1e-5);
    };

    // Batch normalization on [B, C, L], statistics per channel over B*L.
    // Training mode uses batch statistics and updates the running averages;
    // eval mode is a per-channel affine map from the running statistics.
    Var batchnorm(Var x, Var gamma, Var beta, std::int64_t b_dim, std::int64_t c_dim,
                  std::int64_t l_dim, const BatchNormState& st, bool training) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& gv = value(gamma);
        const Tensor<T>& bv = value(beta);
        require(xv.numel() == b_dim * c_dim * l_dim && gv.numel() == c_dim && bv.numel() == c_dim,
                "batchnorm", xv, gv);
        if (!st.running_mean || !st.running_var)
            throw ConfigError("batchnorm: running statistics not bound");

        const std::int64_t n = b_dim * l_dim;
        auto xhat = std::make_shared<Tensor<T>>(Tensor<T>::zeros({b_dim, c_dim, l_dim}));
        auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c_dim));
        Tensor<T> out = Tensor<T>::zeros({b_dim, c_dim, l_dim});

        for (std::int64_t c = 0; c < c_dim; ++c) {
            T mean, var;
            if (training) {
                double acc = 0.0;
                for (std::int64_t b = 0; b < b_dim; ++b)
                    for (std::int64_t t = 0; t < l_dim; ++t)
                        acc += static_cast<double>(
                            xv.data[static_cast<std::size_t>((b * c_dim + c) * l_dim + t)]);
                mean = static_cast<T>(acc / static_cast<double>(n));
                double vacc = 0.0;
                for (std::int64_t b = 0; b < b_dim; ++b)
                    for (std::int64_t t = 0; t < l_dim; ++t) {
                        const double d = static_cast<double>(xv.data[static_cast<std::size_t>(
                                             (b * c_dim + c) * l_dim + t)]) -
                                         static_cast<double>(mean);
                        vacc += d * d;
                    }
                var = static_cast<T>(vacc / static_cast<double>(n));
                // Running averages: unbiased variance, torch-style momentum.
                const T unbiased = n > 1 ? static_cast<T>(vacc / static_cast<double>(n - 1)) : var;
                st.running_mean->data[static_cast<std::size_t>(c)] =
                    (T(1) - st.momentum) * st.running_mean->data[static_cast<std::size_t>(c)] +
                    st.momentum * mean;
                st.running_var->data[static_cast<std::size_t>(c)] =
                    (T(1) - st.momentum) * st.running_var->data[static_cast<std::size_t>(c)] +
                    st.momentum * unbiased;
            } else {
                mean = st.running_mean->data[static_cast<std::size_t>(c)];
                var = st.running_var->data[static_cast<std::size_t>(c)];
            }
            const T is = T(1) / std::sqrt(var + st.eps);
            (*inv_std)[static_cast<std::size_t>(c)] = is;
            for (std::int64_t b = 0; b < b_dim; ++b)
                for (std::int64_t t = 0; t < l_dim; ++t) {
                    const std::size_t idx = static_cast<std::size_t>((b * c_dim + c) * l_dim + t);
                    const T xh = (xv.data[idx] - mean) * is;
                    xhat->data[idx] = xh;
                    out.data[idx] = gv.data[static_cast<std::size_t>(c)] * xh +
                                    bv.data[static_cast<std::size_t>(c)];
                }
        }

        const Var y = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
        if (needs(y)) {
            backprop(y, [this, x, gamma, beta, y, xhat, inv_std, b_dim, c_dim, l_dim, n,
                         training] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                const Tensor<T>& gv2 = value(gamma);
                for (std::int64_t c = 0; c < c_dim; ++c) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::int64_t b = 0; b < b_dim; ++b)
                        for (std::int64_t t = 0; t < l_dim; ++t) {
                            const std::size_t idx =
                                static_cast<std::size_t>((b * c_dim + c) * l_dim + t);
                            sum_g += static_cast<double>(g.data[idx]);
                            sum_gx += static_cast<double>(g.data[idx]) *
                                      static_cast<double>(xhat->data[idx]);
                        }
                    if (needs(gamma))
                        grad_buf(gamma).data[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx);
                    if (needs(beta))
                        grad_buf(beta).data[static_cast<std::size_t>(c)] += static_cast<T>(sum_g);
                    if (needs(x)) {
                        Tensor<T>& gx = grad_buf(x);
                        const T is = (*inv_std)[static_cast<std::size_t>(c)];
                        const T gam = gv2.data[static_cast<std::size_t>(c)];
                        const T mg = static_cast<T>(sum_g / static_cast<double>(n));
                        const T mgx = static_cast<T>(sum_gx / static_cast<double>(n));
                        for (std::int64_t b = 0; b < b_dim; ++b)
                            for (std::int64_t t = 0; t < l_dim; ++t) {
                                const std::size_t idx =
                                    static_cast<std::size_t>((b * c_dim + c) * l_dim + t);
                                if (training)
                                    gx.data[idx] +=
                                        gam * is * (g.data[idx] - mg - xhat->data[idx] * mgx);
                                else
                                    gx.data[idx] += gam * is * g.data[idx];
                            }
                    }
                }
            });
        }
        return y;
    }

    // Inverted dropout; identity in eval mode or at p = 0.
    Var dropout(Var x, T p, bool training, RandomStream& rng) {
        if (!training || p <= T(0)) return x;
        if (p >= T(1)) throw ConfigError("dropout: p must be < 1");
        const Tensor<T>& xv = value(x);
        auto mask = std::make_shared<std::vector<T>>(xv.data.size());
        const T scale = T(1) / (T(1) - p);
        Tensor<T> out = xv;
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            const T m = rng.uniform() < static_cast<double>(p) ? T(0) : scale;
            (*mask)[i] = m;
            out.data[i] *= m;
        }
        const Var y = push(std::move(out), needs(x));
        if (needs(y)) {
            backprop(y, [this, x, y, mask] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                Tensor<T>& gx = grad_buf(x);
                for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * (*mask)[i];
            });
        }
        return y;
    }

    // Mean binary cross-entropy of probabilities [m, 1] against fixed 0/1
    // targets. Probabilities are clamped away from {0, 1}; the clamp is part
    // of the function (zero gradient outside).
    Var bce_mean(Var probs, const Tensor<T>& targets) {
        const Tensor<T>& pv = value(probs);
        if (pv.numel() != targets.numel())
            throw ConfigError("bce_mean: probabilities and targets disagree: " + pv.shape_str());
        constexpr T clamp = std::is_same_v<T, float> ? T(1e-6) : T(1e-12);
        const std::int64_t m = pv.numel();
        auto tgt = std::make_shared<Tensor<T>>(targets);
        double acc = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
            const T p = std::clamp(pv.data[static_cast<std::size_t>(i)], clamp, T(1) - clamp);
            const T t = targets.data[static_cast<std::size_t>(i)];
            acc -= static_cast<double>(t) * std::log(static_cast<double>(p)) +
                   (1.0 - static_cast<double>(t)) * std::log(1.0 - static_cast<double>(p));
        }
        Tensor<T> out({1}, {static_cast<T>(acc / static_cast<double>(m))});
        const Var y = push(std::move(out), needs(probs));
        if (needs(y)) {
            backprop(y, [this, probs, y, tgt, m, clamp] {
                const T gy = nodes_[static_cast<std::size_t>(y)].grad.data[0];
                const Tensor<T>& pv2 = value(probs);
                Tensor<T>& gp = grad_buf(probs);
                for (std::int64_t i = 0; i < m; ++i) {
                    const T raw = pv2.data[static_cast<std::size_t>(i)];
                    if (raw <= clamp || raw >= T(1) - clamp) continue;  // clamped: zero slope
                    const T t = tgt->data[static_cast<std::size_t>(i)];
                    gp.data[static_cast<std::size_t>(i)] +=
                        gy * (raw - t) / (raw * (T(1) - raw) * static_cast<T>(m));
                }
            });
        }
        return y;
    }

    // Seed d(root)/d(root) = 1 and sweep the tape in reverse.
    void backward(Var root) {
        Node& r = nodes_[static_cast<std::size_t>(root)];
        if (!r.requires_grad) throw ConfigError("backward: root does not require gradients");
        grad_buf(root);
        for (T& g : r.grad.data) g = T(1);
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.has_grad && n.backprop) n.backprop();
        }
    }

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        bool has_grad = false;
        std::function<void()> backprop;
    };
    std::deque<Node> nodes_;  // deque: node references stay valid as the tape grows

    bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v)].requires_grad; }

    Var push(Tensor<T> v, bool requires_grad) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    void backprop(Var v, std::function<void()> fn) {
        nodes_[static_cast<std::size_t>(v)].backprop = std::move(fn);
    }

    Tensor<T>& grad_buf(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v)];
        if (!n.has_grad) {
            n.grad = Tensor<T>::zeros(n.value.shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    void require(bool ok, const char* what, const Tensor<T>& a, const Tensor<T>& b) const {
        if (!ok)
            throw ConfigError(std::string(what) + ": incompatible shapes " + a.shape_str() + " and " +
                              b.shape_str());
    }

    template <class FwdFn, class BwdFn>
    Var binary(Var a, Var b, const char* what, FwdFn fwd, BwdFn bwd) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.same_shape(bv), what, av, bv);
        Tensor<T> out = av;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(av.data[i], bv.data[i]);
        const Var y = push(std::move(out), needs(a) || needs(b));
        if (needs(y)) {
            backprop(y, [this, a, b, y, bwd] {
                const Tensor<T>& g = nodes_[static_cast<std::size_t>(y)].grad;
                const Tensor<T>& av2 = value(a);
                const Tensor<T>& bv2 = value(b);
                Tensor<T>* ga_buf = needs(a) ? &grad_buf(a) : nullptr;
                Tensor<T>* gb_buf = needs(b) ? &grad_buf(b) : nullptr;
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const auto [ga, gb] = bwd(av2.data[i], bv2.data[i], g.data[i]);
                    if (ga_buf) ga_buf->data[i] += ga;
                    if (gb_buf) gb_buf->data[i] += gb;
                }
            });
        }
        return y;
    }
};

}  // namespace shadowphase::nn
