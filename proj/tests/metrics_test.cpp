#include <cmath>
#include <vector>

#include "doctest.h"
#include "mtl/errors.hpp"
#include "mtl/metrics.hpp"

using namespace mtl;
using metrics::MetricKind;

TEST_CASE("perfect predictions score the ideal value of every metric") {
  std::vector<double> p{0.5, 1.25, 3.0, 2.0};
  CHECK(metrics::compute_metric(MetricKind::mse, p, p) == 0.0);
  CHECK(metrics::compute_metric(MetricKind::rmse, p, p) == 0.0);
  CHECK(metrics::compute_metric(MetricKind::logrmse, p, p) == 0.0);
  std::vector<double> cls{0, 1, 2, 1};
  CHECK(metrics::compute_metric(MetricKind::miou, cls, cls) == 1.0);
}

TEST_CASE("rmse of [0,0] vs [3,4]") {
  std::vector<double> p{0.0, 0.0}, g{3.0, 4.0};
  CHECK(metrics::compute_metric(MetricKind::rmse, p, g) ==
        doctest::Approx(3.535533905932737622004).epsilon(1e-15));
  CHECK(metrics::compute_metric(MetricKind::mse, p, g) == 12.5);
}

TEST_CASE("rmse squared equals mse") {
  std::vector<double> p{0.3, -1.2, 2.2, 0.0, 9.5};
  std::vector<double> g{0.1, -1.0, 2.0, 0.5, 9.0};
  const double rmse = metrics::compute_metric(MetricKind::rmse, p, g);
  const double mse = metrics::compute_metric(MetricKind::mse, p, g);
  CHECK(rmse * rmse == doctest::Approx(mse).epsilon(1e-12));
}

TEST_CASE("miou counts intersection over union per class") {
  // class 0: intersection 2, union 4 -> 0.5; class 1: intersection 0, union 2
  std::vector<double> p{0, 0, 0, 0}, g{0, 0, 1, 1};
  CHECK(metrics::compute_metric(MetricKind::miou, p, g) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("miou ignores classes absent from both sides") {
  std::vector<int64_t> p{0, 0, 5, 5}, g{0, 0, 5, 5};
  CHECK(metrics::mean_iou(p, g) == 1.0);  // classes 1..4 never dilute the mean
}

TEST_CASE("miou is invariant under joint sample reordering") {
  std::vector<int64_t> p{0, 1, 2, 1, 0, 2, 2}, g{0, 2, 2, 1, 1, 0, 2};
  std::vector<int64_t> p2{2, 1, 0, 2, 1, 0, 2}, g2{2, 1, 0, 0, 2, 1, 2};  // same pairs shuffled
  CHECK(metrics::mean_iou(p, g) == metrics::mean_iou(p2, g2));
}

TEST_CASE("miou rejects fractional class indices") {
  std::vector<double> p{0.5, 1.0}, g{0.0, 1.0};
  CHECK_THROWS_AS(metrics::compute_metric(MetricKind::miou, p, g), UsageError);
}

TEST_CASE("logrmse is scale invariant above the clamp") {
  std::vector<double> p{1.0, 2.0, 3.0}, g{1.5, 1.8, 3.3};
  std::vector<double> p7(p), g7(g);
  for (double& x : p7) x *= 7.0;
  for (double& x : g7) x *= 7.0;
  CHECK(metrics::compute_metric(MetricKind::logrmse, p, g) ==
        doctest::Approx(metrics::compute_metric(MetricKind::logrmse, p7, g7)).epsilon(1e-12));
}

TEST_CASE("logrmse clamps non-positive values instead of blowing up") {
  std::vector<double> p{-1.0}, g{1e-6};
  // both sides clamp to 1e-6 -> zero error
  CHECK(metrics::compute_metric(MetricKind::logrmse, p, g) == 0.0);
}

TEST_CASE("length mismatch and empty input are usage errors") {
  std::vector<double> p{1.0, 2.0}, g{1.0};
  CHECK_THROWS_AS(metrics::compute_metric(MetricKind::mse, p, g), UsageError);
  std::vector<double> e;
  CHECK_THROWS_AS(metrics::compute_metric(MetricKind::mse, e, e), UsageError);
}

TEST_CASE("improvement ratio matches the reported numbers") {
  CHECK(metrics::improvement_ratio(0.0101, 0.0072, false) ==
        doctest::Approx(0.2871287128712871).epsilon(1e-15));
  CHECK(metrics::improvement_ratio(20.7, 25.3, true) ==
        doctest::Approx(0.2222222222222222).epsilon(1e-15));
  CHECK(metrics::improvement_ratio(3.5, 3.5, false) == 0.0);
  CHECK(metrics::improvement_ratio(3.5, 3.5, true) == 0.0);
  CHECK_THROWS_AS(metrics::improvement_ratio(0.0, 1.0, false), UsageError);
}

TEST_CASE("worse candidates come out negative") {
  CHECK(metrics::improvement_ratio(1.0, 2.0, false) < 0.0);
  CHECK(metrics::improvement_ratio(1.0, 0.5, true) < 0.0);
}

TEST_CASE("report lookup by task and kind") {
  metrics::MetricsReport r;
  r.entries.push_back({1, MetricKind::mse, 0.25});
  r.entries.push_back({2, MetricKind::miou, 0.75});
  CHECK(r.get(1, MetricKind::mse) == 0.25);
  CHECK(r.get(2, MetricKind::miou) == 0.75);
  CHECK(r.has(1, MetricKind::mse));
  CHECK(!r.has(1, MetricKind::rmse));
  CHECK_THROWS_AS(r.get(2, MetricKind::mse), UsageError);
}

TEST_CASE("metric names round-trip") {
  for (MetricKind k : {MetricKind::mse, MetricKind::rmse, MetricKind::logrmse, MetricKind::miou})
    CHECK(metrics::metric_from_string(metrics::to_string(k)) == k);
  CHECK_THROWS_AS(metrics::metric_from_string("psnr"), ConfigError);
  CHECK(metrics::higher_is_better(MetricKind::miou));
  CHECK(!metrics::higher_is_better(MetricKind::mse));
  CHECK(!metrics::higher_is_better(MetricKind::rmse));
  CHECK(!metrics::higher_is_better(MetricKind::logrmse));
}
