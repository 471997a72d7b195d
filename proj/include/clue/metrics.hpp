#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "clue/error.hpp"

namespace clue {

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
  bool precision_undefined = false;  // no predictions for this class
  bool recall_undefined = false;     // no true instances of this class
};

struct MetricsReport {
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> counts;      // [true][pred]
  std::vector<std::vector<double>> confusion;        // row-normalized
  std::vector<bool> zero_support_rows;
  std::vector<ClassMetrics> per_class;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  double accuracy = 0;
  std::size_t total = 0;
  double train_seconds = 0, test_seconds = 0;
};

/// Builds per-class and support-weighted metrics from label pairs.
/// Undefined precision or recall is reported as 0 and flagged.
inline MetricsReport compute_metrics(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred,
                                     std::size_t K) {
  if (truth.size() != pred.size()) throw DimensionError("truth and prediction counts differ");
  if (truth.empty()) throw InputError("cannot evaluate an empty test set");
  MetricsReport r;
  r.num_classes = K;
  r.total = truth.size();
  r.counts.assign(K, std::vector<std::size_t>(K, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= K || pred[i] >= K) throw IndexError("class index out of range");
    ++r.counts[truth[i]][pred[i]];
  }
  r.confusion.assign(K, std::vector<double>(K, 0.0));
  r.zero_support_rows.assign(K, false);
  r.per_class.resize(K);
  std::size_t correct = 0;
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < K; ++j) {
      row += r.counts[c][j];
      col += r.counts[j][c];
    }
    const std::size_t tp = r.counts[c][c];
    correct += tp;
    auto& m = r.per_class[c];
    m.support = row;
    if (row == 0) {
      r.zero_support_rows[c] = true;
      m.recall_undefined = true;
    } else {
      for (std::size_t j = 0; j < K; ++j) r.confusion[c][j] = static_cast<double>(r.counts[c][j]) / static_cast<double>(row);
      m.recall = static_cast<double>(tp) / static_cast<double>(row);
    }
    if (col == 0) {
      m.precision_undefined = true;
    } else {
      m.precision = static_cast<double>(tp) / static_cast<double>(col);
    }
    m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  const double N = static_cast<double>(r.total);
  for (const auto& m : r.per_class) {
    const double w = static_cast<double>(m.support) / N;
    r.weighted_precision += w * m.precision;
    r.weighted_recall += w * m.recall;
    r.weighted_f1 += w * m.f1;
  }
  r.accuracy = static_cast<double>(correct) / N;
  return r;
}

struct MeanStd {
  double mean = 0, std = 0;
};

/// Mean and population standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw InputError("cannot aggregate zero values");
  // Sorted so the result does not depend on seed order.
  std::vector<double> s(v);
  std::sort(s.begin(), s.end());
  MeanStd r;
  for (double x : s) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : s) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

}  // namespace clue
