#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mtl::metrics {

enum class MetricKind { mse, rmse, logrmse, miou };

MetricKind metric_from_string(const std::string& s);
std::string to_string(MetricKind k);
bool higher_is_better(MetricKind k);

// Regression metrics take raw values; miou interprets both sides as class
// indices (values must be whole numbers). Length mismatch or empty input is
// a usage error.
double compute_metric(MetricKind kind, std::span<const double> predictions,
                      std::span<const double> ground_truth);

// Mean over classes present in prediction or GT of |intersection|/|union|.
double mean_iou(std::span<const int64_t> predictions, std::span<const int64_t> ground_truth);

// Relative improvement of candidate over baseline; positive means better.
double improvement_ratio(double baseline, double candidate, bool higher_is_better);

struct MetricsReport {
  struct Entry {
    int task = 0;
    MetricKind kind = MetricKind::mse;
    double value = 0.0;
  };
  std::vector<Entry> entries;
  int64_t sample_count = 0;

  double get(int task, MetricKind kind) const;  // UsageError when absent
  bool has(int task, MetricKind kind) const;
};

}  // namespace mtl::metrics
