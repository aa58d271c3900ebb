#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "shadowphase/dataset.hpp"
#include "shadowphase/errors.hpp"
#include "shadowphase/nn/checkpoint.hpp"
#include "shadowphase/nn/metrics.hpp"
#include "shadowphase/nn/model.hpp"

namespace shadowphase::nn {

struct TrainConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    int batch_size = 32;
    int max_epochs = 100;
    int patience = 10;          // epochs without val-accuracy improvement
    double val_fraction = 0.2;  // stratified per constituent
    bool restore_best = true;   // return the best-validation weights
    std::uint64_t seed = 0;
    std::string log_csv;        // per-epoch CSV path; empty disables
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_acc = 0.0;
    double best_val_loss = 0.0;
    std::vector<std::vector<int>> train_indices;  // per constituent
    std::vector<std::vector<int>> val_indices;
};

namespace detail_nn {

// Input rows for a batch of states: the first n_s_sub snapshots of each
// state, laid out [B * n_s_sub * l, 4]. Snapshot-major payloads make the
// subsample a contiguous prefix.
inline Tensor<float> batch_input(const Dataset& d, std::span<const int> idx, int n_s_sub) {
    const std::int64_t l = d.patch_length;
    const std::int64_t n = n_s_sub > 0 ? n_s_sub : static_cast<std::int64_t>(d.n_s);
    if (n > static_cast<std::int64_t>(d.n_s))
        throw ConfigError("batch_input: n_s_sub exceeds stored n_s");
    Tensor<float> out = Tensor<float>::zeros({static_cast<std::int64_t>(idx.size()) * n * l, 4});
    const std::size_t per_state = static_cast<std::size_t>(n * l * 4);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& payload = d.states.at(static_cast<std::size_t>(idx[b])).payload;
        std::copy_n(payload.begin(), per_state, out.data.begin() + b * per_state);
    }
    return out;
}

inline Tensor<float> batch_targets(const Dataset& d, std::span<const int> idx) {
    Tensor<float> t = Tensor<float>::zeros({static_cast<std::int64_t>(idx.size()), 1});
    for (std::size_t b = 0; b < idx.size(); ++b)
        t.data[b] = static_cast<float>(d.states.at(static_cast<std::size_t>(idx[b])).label);
    return t;
}

inline void adam_step(ParamStore<float>& ps, Graph<float>& g, const ParamBinder<float>& binder,
                      const TrainConfig& tc) {
    ps.step += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(tc.beta1), static_cast<double>(ps.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(tc.beta2), static_cast<double>(ps.step));
    for (const auto& [name, var] : binder.bound()) {
        auto& e = ps.at(name);
        if (!e.trainable) continue;
        const Tensor<float>& grad = g.grad(var);
        if (e.adam_m.data.empty()) {
            e.adam_m = Tensor<float>::zeros(e.value.shape);
            e.adam_v = Tensor<float>::zeros(e.value.shape);
        }
        for (std::size_t i = 0; i < e.value.data.size(); ++i) {
            const float gi = grad.data[i];
            e.adam_m.data[i] = tc.beta1 * e.adam_m.data[i] + (1.0f - tc.beta1) * gi;
            e.adam_v.data[i] = tc.beta2 * e.adam_v.data[i] + (1.0f - tc.beta2) * gi * gi;
            const double mhat = static_cast<double>(e.adam_m.data[i]) / bc1;
            const double vhat = static_cast<double>(e.adam_v.data[i]) / bc2;
            e.value.data[i] -= static_cast<float>(tc.lr * mhat /
                                                  (std::sqrt(vhat) + static_cast<double>(tc.adam_eps)));
        }
    }
}

inline double bce_of(double prob, int label) {
    const double p = std::clamp(prob, 1e-12, 1.0 - 1e-12);
    return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace detail_nn

// Eval-mode probabilities for selected states of one dataset.
inline std::vector<double> predict_probabilities(ParamStore<float>& store,
                                                 const ClassifierConfig& cfg, const Dataset& d,
                                                 std::span<const int> idx, int n_s_sub = 0,
                                                 int eval_batch = 64) {
    std::vector<double> probs;
    probs.reserve(idx.size());
    const std::int64_t l = d.patch_length;
    const std::int64_t n = n_s_sub > 0 ? n_s_sub : static_cast<std::int64_t>(d.n_s);
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(eval_batch)) {
        const std::size_t count = std::min(static_cast<std::size_t>(eval_batch), idx.size() - start);
        const std::span<const int> chunk(idx.data() + start, count);
        Graph<float> g;
        ParamBinder<float> pb(g, store);
        const auto input = g.constant(detail_nn::batch_input(d, chunk, static_cast<int>(n)));
        const auto out = classifier_forward(g, pb, cfg, input, static_cast<std::int64_t>(count), n,
                                            l, /*training=*/false, nullptr);
        for (std::size_t b = 0; b < count; ++b)
            probs.push_back(static_cast<double>(g.value(out).data[b]));
    }
    return probs;
}

// Accuracy/ROC/AUC of one dataset at a snapshot budget. Subsampling takes
// the first n_s_sub snapshots; the prediction cut is probability > 0.5.
inline Metrics evaluate_classifier(ParamStore<float>& store, const ClassifierConfig& cfg,
                                   const Dataset& d, int n_s_sub = 0) {
    if (n_s_sub > static_cast<int>(d.n_s))
        throw ConfigError("evaluate_classifier: n_s_sub exceeds stored n_s");
    std::vector<int> idx(d.states.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::vector<double> probs = predict_probabilities(store, cfg, d, idx, n_s_sub);
    std::vector<int> labels(d.states.size());
    for (std::size_t i = 0; i < d.states.size(); ++i) labels[i] = d.states[i].label;
    return compute_metrics(labels, probs);
}

// Minimize BCE with Adam over a concatenated corpus. Constituents may have
// different patch lengths; every batch is homogeneous in l, and batches
// rotate across constituents. Stratified per-constituent validation split,
// early stopping on validation accuracy, best-epoch weights restored at the
// end.
inline TrainResult train_classifier(const std::vector<Dataset>& constituents,
                                    const ClassifierConfig& cfg, const TrainConfig& tc,
                                    ParamStore<float>& store) {
    if (constituents.empty()) throw ConfigError("train_classifier: no datasets");
    for (const Dataset& d : constituents)
        if (d.states.empty()) throw ConfigError("train_classifier: empty dataset");
    if (store.entries().empty()) init_classifier_params(store, cfg, tc.seed);

    // Stratified split per constituent.
    struct Split {
        std::vector<int> train, val;
    };
    std::vector<Split> splits;
    RandomStream split_rng = RandomStream(tc.seed).fork(kTagShuffle);
    for (std::size_t c = 0; c < constituents.size(); ++c) {
        const Dataset& d = constituents[c];
        Split s;
        for (int label = 0; label <= 1; ++label) {
            std::vector<int> pool;
            for (std::size_t i = 0; i < d.states.size(); ++i)
                if (d.states[i].label == label) pool.push_back(static_cast<int>(i));
            RandomStream r = split_rng.fork(c, static_cast<std::uint64_t>(label));
            for (std::size_t i = pool.size(); i > 1; --i)
                std::swap(pool[i - 1], pool[r.next_below(i)]);
            const std::size_t n_val = static_cast<std::size_t>(
                std::round(tc.val_fraction * static_cast<double>(pool.size())));
            s.val.insert(s.val.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
            s.train.insert(s.train.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
        }
        if (s.train.empty() || s.val.empty())
            throw ConfigError("train_classifier: split left an empty train or validation set");
        splits.push_back(std::move(s));
    }

    TrainResult result;
    for (const Split& s : splits) {
        result.train_indices.push_back(s.train);
        result.val_indices.push_back(s.val);
    }
    std::vector<Tensor<float>> best_values;
    const RandomStream epoch_rng = RandomStream(tc.seed).fork(kTagShuffle, 0xE0);
    const RandomStream drop_rng = RandomStream(tc.seed).fork(kTagDropout);

    for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
        // Per-constituent shuffled batches, interleaved round robin.
        struct BatchRef {
            std::size_t constituent;
            std::vector<int> idx;
        };
        std::vector<std::vector<BatchRef>> per_const(constituents.size());
        for (std::size_t c = 0; c < constituents.size(); ++c) {
            std::vector<int> order = splits[c].train;
            RandomStream r = epoch_rng.fork(static_cast<std::uint64_t>(epoch), c);
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[r.next_below(i)]);
            for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc.batch_size)) {
                BatchRef ref;
                ref.constituent = c;
                const std::size_t hi = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
                ref.idx.assign(order.begin() + static_cast<std::ptrdiff_t>(b),
                               order.begin() + static_cast<std::ptrdiff_t>(hi));
                per_const[c].push_back(std::move(ref));
            }
        }
        std::vector<BatchRef> batches;
        for (std::size_t b = 0;; ++b) {
            bool any = false;
            for (auto& list : per_const)
                if (b < list.size()) {
                    batches.push_back(std::move(list[b]));
                    any = true;
                }
            if (!any) break;
        }

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Dataset& d = constituents[batches[bi].constituent];
            Graph<float> g;
            ParamBinder<float> pb(g, store);
            const auto input = g.constant(detail_nn::batch_input(d, batches[bi].idx, 0));
            RandomStream dr = drop_rng.fork(static_cast<std::uint64_t>(epoch), bi);
            const auto probs = classifier_forward(
                g, pb, cfg, input, static_cast<std::int64_t>(batches[bi].idx.size()),
                static_cast<std::int64_t>(d.n_s), static_cast<std::int64_t>(d.patch_length),
                /*training=*/true, &dr);
            const auto loss = g.bce_mean(probs, detail_nn::batch_targets(d, batches[bi].idx));
            const double batch_loss = static_cast<double>(g.value(loss).data[0]);
            if (!std::isfinite(batch_loss))
                throw NumericError("train_classifier: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(bi) +
                                   " (diverged; lower the learning rate)");
            loss_sum += batch_loss * static_cast<double>(batches[bi].idx.size());
            loss_count += batches[bi].idx.size();
            g.backward(loss);
            detail_nn::adam_step(store, g, pb, tc);
        }

        // Validation in eval mode.
        double val_loss = 0.0;
        std::size_t val_n = 0, val_correct = 0;
        for (std::size_t c = 0; c < constituents.size(); ++c) {
            const Dataset& d = constituents[c];
            const std::vector<double> probs =
                predict_probabilities(store, cfg, d, splits[c].val, 0);
            for (std::size_t i = 0; i < probs.size(); ++i) {
                const int label = d.states[static_cast<std::size_t>(splits[c].val[i])].label;
                val_loss += detail_nn::bce_of(probs[i], label);
                val_correct += ((probs[i] > 0.5 ? 1 : 0) == label);
                ++val_n;
            }
        }
        val_loss /= static_cast<double>(val_n);
        const double val_acc = static_cast<double>(val_correct) / static_cast<double>(val_n);

        result.log.push_back(EpochLog{epoch, loss_sum / static_cast<double>(loss_count), val_loss,
                                      val_acc});
        if (result.best_epoch < 0 || val_acc > result.best_val_acc) {
            result.best_epoch = epoch;
            result.best_val_acc = val_acc;
            result.best_val_loss = val_loss;
            best_values.clear();
            for (const auto& e : store.entries()) best_values.push_back(e.value);
        }
        if (epoch - result.best_epoch >= tc.patience) break;
    }

    // Restore the best-validation weights (including batchnorm statistics).
    if (tc.restore_best)
        for (std::size_t i = 0; i < best_values.size(); ++i)
            store.entries()[i].value = std::move(best_values[i]);

    if (!tc.log_csv.empty()) {
        std::ofstream out(tc.log_csv, std::ios::trunc);
        if (!out) throw FormatError("train_classifier: cannot open log " + tc.log_csv);
        out << "epoch,train_loss,val_loss,val_acc\n";
        for (const EpochLog& e : result.log)
            out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_acc << '\n';
    }
    return result;
}

}  // namespace shadowphase::nn
