#include "mtl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mtl/errors.hpp"

namespace mtl::metrics {

MetricKind metric_from_string(const std::string& s) {
  if (s == "mse") return MetricKind::mse;
  if (s == "rmse") return MetricKind::rmse;
  if (s == "logrmse") return MetricKind::logrmse;
  if (s == "miou") return MetricKind::miou;
  throw ConfigError("unknown metric: " + s);
}

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::mse: return "mse";
    case MetricKind::rmse: return "rmse";
    case MetricKind::logrmse: return "logrmse";
    case MetricKind::miou: return "miou";
  }
  return "?";
}

bool higher_is_better(MetricKind k) { return k == MetricKind::miou; }

namespace {

void check_lengths(size_t p, size_t g) {
  if (p != g)
    throw UsageError("metric inputs differ in length: " + std::to_string(p) + " vs " +
                     std::to_string(g));
  if (p == 0) throw UsageError("metric inputs are empty");
}

double mse(std::span<const double> p, std::span<const double> g) {
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double r = p[i] - g[i];
    acc += r * r;
  }
  return acc / static_cast<double>(p.size());
}

int64_t as_class(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) > 1e-9)
    throw UsageError("miou needs whole-number class indices, got " + std::to_string(x));
  return static_cast<int64_t>(r);
}

}  // namespace

double mean_iou(std::span<const int64_t> predictions, std::span<const int64_t> ground_truth) {
  check_lengths(predictions.size(), ground_truth.size());
  std::map<int64_t, std::pair<int64_t, int64_t>> per_class;  // class -> (intersection, union)
  for (size_t i = 0; i < predictions.size(); ++i) {
    const int64_t p = predictions[i], g = ground_truth[i];
    if (p == g) {
      auto& e = per_class[p];
      ++e.first;
      ++e.second;
    } else {
      ++per_class[p].second;
      ++per_class[g].second;
    }
  }
  double acc = 0.0;
  for (const auto& [cls, iu] : per_class)
    acc += static_cast<double>(iu.first) / static_cast<double>(iu.second);
  return acc / static_cast<double>(per_class.size());
}

double compute_metric(MetricKind kind, std::span<const double> predictions,
                      std::span<const double> ground_truth) {
  check_lengths(predictions.size(), ground_truth.size());
  switch (kind) {
    case MetricKind::mse:
      return mse(predictions, ground_truth);
    case MetricKind::rmse:
      return std::sqrt(mse(predictions, ground_truth));
    case MetricKind::logrmse: {
      double acc = 0.0;
      for (size_t i = 0; i < predictions.size(); ++i) {
        const double r = std::log(std::max(predictions[i], 1e-6)) -
                         std::log(std::max(ground_truth[i], 1e-6));
        acc += r * r;
      }
      return std::sqrt(acc / static_cast<double>(predictions.size()));
    }
    case MetricKind::miou: {
      std::vector<int64_t> p(predictions.size()), g(ground_truth.size());
      for (size_t i = 0; i < predictions.size(); ++i) p[i] = as_class(predictions[i]);
      for (size_t i = 0; i < ground_truth.size(); ++i) g[i] = as_class(ground_truth[i]);
      return mean_iou(p, g);
    }
  }
  throw UsageError("unknown metric kind");
}

double improvement_ratio(double baseline, double candidate, bool higher_is_better) {
  if (baseline == 0.0) throw UsageError("improvement_ratio: zero baseline");
  return higher_is_better ? (candidate - baseline) / baseline
                          : (baseline - candidate) / baseline;
}

double MetricsReport::get(int task, MetricKind kind) const {
  for (const Entry& e : entries)
    if (e.task == task && e.kind == kind) return e.value;
  throw UsageError("report has no entry for task " + std::to_string(task) + " metric " +
                   to_string(kind));
}

bool MetricsReport::has(int task, MetricKind kind) const {
  for (const Entry& e : entries)
    if (e.task == task && e.kind == kind) return true;
  return false;
}

}  // namespace mtl::metrics
