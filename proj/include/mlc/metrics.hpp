#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mlc/error.hpp"

// Thresholded average precision. Scores are swept against a fixed grid of
// decision thresholds (default: 500 points equally spaced on [0, 1]); an
// instance is predicted positive when score >= threshold. Walking the grid
// from the highest threshold down,
//
//   AP = sum_n (R_n - R_{n-1}) * P_n,   R_0 = 0,
//
// where P_n and R_n are precision and recall at the n-th threshold and
// precision is defined as 1 when nothing is predicted.

namespace mlc {

struct ThresholdGrid {
    std::vector<double> thresholds;  // ascending

    static ThresholdGrid uniform(std::size_t count = 500) {
        if (count < 2) throw OutOfRange("threshold grid needs at least 2 points");
        ThresholdGrid g;
        g.thresholds.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            g.thresholds[i] = static_cast<double>(i) / static_cast<double>(count - 1);
        return g;
    }
};

struct PrecisionRecall {
    double precision = 1.0;
    double recall = 0.0;
};

namespace detail {

inline void validate_binary(const std::vector<std::uint8_t>& targets) {
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (targets[i] > 1)
            throw NonBinaryTarget("target " + std::to_string(targets[i]) + " at index " +
                                  std::to_string(i));
}

}  // namespace detail

/// Precision and recall with predicted-positive = (score >= threshold).
/// Precision is 1 when no instance is predicted positive. Throws NoPositives
/// when targets contain no positive instance.
inline PrecisionRecall precision_recall_at(const std::vector<double>& scores,
                                           const std::vector<std::uint8_t>& targets,
                                           double threshold) {
    if (scores.empty()) throw EmptyInput("precision_recall_at: no instances");
    if (scores.size() != targets.size())
        throw ShapeMismatch("precision_recall_at: " + std::to_string(scores.size()) +
                            " scores vs " + std::to_string(targets.size()) + " targets");
    detail::validate_binary(targets);
    std::size_t tp = 0, predicted = 0, positives = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        positives += targets[i];
        if (scores[i] >= threshold) {
            ++predicted;
            tp += targets[i];
        }
    }
    if (positives == 0) throw NoPositives("precision_recall_at: no positive targets");
    PrecisionRecall pr;
    pr.precision = predicted == 0
                       ? 1.0
                       : static_cast<double>(tp) / static_cast<double>(predicted);
    pr.recall = static_cast<double>(tp) / static_cast<double>(positives);
    return pr;
}

/// Average precision of one score/target list over the grid.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<std::uint8_t>& targets,
                                const ThresholdGrid& grid = ThresholdGrid::uniform()) {
    if (scores.empty()) throw EmptyInput("average_precision: no instances");
    if (scores.size() != targets.size())
        throw ShapeMismatch("average_precision: " + std::to_string(scores.size()) +
                            " scores vs " + std::to_string(targets.size()) + " targets");
    detail::validate_binary(targets);
    const std::size_t positives =
        static_cast<std::size_t>(std::accumulate(targets.begin(), targets.end(), std::size_t{0}));
    if (positives == 0) throw NoPositives("average_precision: no positive targets");

    // Sort scores descending, carrying targets, and build a prefix count of
    // positives so each threshold needs only a binary search.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });
    std::vector<double> sorted(scores.size());
    std::vector<std::size_t> prefix_pos(scores.size() + 1, 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
        sorted[i] = scores[order[i]];
        prefix_pos[i + 1] = prefix_pos[i] + targets[order[i]];
    }

    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t n = grid.thresholds.size(); n-- > 0;) {
        const double t = grid.thresholds[n];
        // number of scores >= t in the descending array
        const std::size_t predicted = static_cast<std::size_t>(
            std::lower_bound(sorted.begin(), sorted.end(), t,
                             [](double s, double thr) { return s >= thr; }) -
            sorted.begin());
        const std::size_t tp = prefix_pos[predicted];
        const double precision =
            predicted == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(predicted);
        const double recall = static_cast<double>(tp) / static_cast<double>(positives);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

enum class MapMode { micro, macro };

/// Mean average precision over a (B, K) score matrix, row-major.
/// micro: every (instance, label) pair joins one flat AP computation.
/// macro: per-label AP over columns, averaged; labels without a positive
/// instance are skipped. Throws NoPositives when nothing remains.
inline double mean_average_precision(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& targets,
                                     std::size_t num_labels, MapMode mode = MapMode::macro,
                                     const ThresholdGrid& grid = ThresholdGrid::uniform()) {
    if (num_labels == 0) throw EmptyInput("mean_average_precision: num_labels is 0");
    if (scores.empty()) throw EmptyInput("mean_average_precision: no instances");
    if (scores.size() != targets.size() || scores.size() % num_labels != 0)
        throw ShapeMismatch("mean_average_precision: sizes " + std::to_string(scores.size()) +
                            "/" + std::to_string(targets.size()) + " do not form (B," +
                            std::to_string(num_labels) + ")");
    if (mode == MapMode::micro) return average_precision(scores, targets, grid);

    const std::size_t batch = scores.size() / num_labels;
    std::vector<double> col_scores(batch);
    std::vector<std::uint8_t> col_targets(batch);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < num_labels; ++k) {
        std::size_t positives = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            col_scores[b] = scores[b * num_labels + k];
            col_targets[b] = targets[b * num_labels + k];
            positives += col_targets[b];
        }
        if (positives == 0) continue;
        total += average_precision(col_scores, col_targets, grid);
        ++counted;
    }
    if (counted == 0)
        throw NoPositives("mean_average_precision: no label has a positive instance");
    return total / static_cast<double>(counted);
}

/// Per-label APs for reporting; labels without positives yield -1.
inline std::vector<double> per_label_average_precision(
    const std::vector<double>& scores, const std::vector<std::uint8_t>& targets,
    std::size_t num_labels, const ThresholdGrid& grid = ThresholdGrid::uniform()) {
    if (num_labels == 0) throw EmptyInput("per_label_average_precision: num_labels is 0");
    if (scores.size() != targets.size() || scores.size() % num_labels != 0)
        throw ShapeMismatch("per_label_average_precision: bad extents");
    const std::size_t batch = scores.size() / num_labels;
    std::vector<double> out(num_labels, -1.0);
    std::vector<double> col_scores(batch);
    std::vector<std::uint8_t> col_targets(batch);
    for (std::size_t k = 0; k < num_labels; ++k) {
        std::size_t positives = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            col_scores[b] = scores[b * num_labels + k];
            col_targets[b] = targets[b * num_labels + k];
            positives += col_targets[b];
        }
        if (positives == 0) continue;
        out[k] = average_precision(col_scores, col_targets, grid);
    }
    return out;
}

}  // namespace mlc
