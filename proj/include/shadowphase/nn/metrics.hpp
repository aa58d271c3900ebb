#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "shadowphase/errors.hpp"

namespace shadowphase::nn {

struct Metrics {
    double accuracy = 0.0;
    double auc = 0.0;
    std::vector<std::pair<double, double>> roc;  // (false positive rate, true positive rate)
    std::vector<double> probabilities;
};

// Accuracy at the 0.5 cut, ROC from a descending threshold sweep over the
// distinct scores, and trapezoidal AUC (ties grouped, so the AUC equals the
// rank statistic). Degenerate single-class inputs get AUC 0.5 by convention.
inline Metrics compute_metrics(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size() || labels.empty())
        throw ConfigError("compute_metrics: labels and scores must align and be non-empty");
    Metrics m;
    m.probabilities = scores;

    std::size_t correct = 0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int pred = scores[i] > 0.5 ? 1 : 0;
        correct += (pred == labels[i]);
        positives += (labels[i] == 1);
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) {
        m.auc = 0.5;
        m.roc = {{0.0, 0.0}, {1.0, 1.0}};
        return m;
    }

    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    m.roc.emplace_back(0.0, 0.0);
    std::size_t tp = 0, fp = 0;
    double auc = 0.0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            if (labels[order[i]] == 1)
                ++tp;
            else
                ++fp;
            ++i;
        }
        const double fpr = static_cast<double>(fp) / static_cast<double>(negatives);
        const double tpr = static_cast<double>(tp) / static_cast<double>(positives);
        auc += 0.5 * (fpr - prev_fpr) * (tpr + prev_tpr);
        m.roc.emplace_back(fpr, tpr);
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    m.auc = auc;
    return m;
}

// Best achievable accuracy over all thresholds, with the threshold that
// attains it (midpoint between adjacent scores). Used by the non-ML
// baselines, which tune the cut on the evaluation set itself.
inline std::pair<double, double> best_threshold_accuracy(const std::vector<int>& labels,
                                                         const std::vector<double>& scores) {
    if (labels.size() != scores.size() || labels.empty())
        throw ConfigError("best_threshold_accuracy: labels and scores must align");
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::size_t positives = 0;
    for (int l : labels) positives += (l == 1);
    // Threshold below the minimum: everything is labeled 1.
    std::size_t correct = positives;
    double best_acc = static_cast<double>(correct) / static_cast<double>(labels.size());
    double best_thr = scores[order[0]] - 1.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        // Move the cut just above scores[order[i]].
        correct += (labels[order[i]] == 0) ? 1 : 0;
        correct -= (labels[order[i]] == 1) ? 1 : 0;
        if (i + 1 < order.size() && scores[order[i + 1]] == scores[order[i]]) continue;
        const double acc = static_cast<double>(correct) / static_cast<double>(labels.size());
        if (acc > best_acc) {
            best_acc = acc;
            best_thr = (i + 1 < order.size())
                           ? 0.5 * (scores[order[i]] + scores[order[i + 1]])
                           : scores[order[i]] + 1.0;
        }
    }
    return {best_acc, best_thr};
}

}  // namespace shadowphase::nn
