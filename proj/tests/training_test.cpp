#include <cmath>
#include <cstdio>
#include <unistd.h>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtl/errors.hpp"
#include "mtl/model.hpp"
#include "mtl/tasks.hpp"
#include "mtl/training.hpp"

using namespace mtl;
using model::NetworkConfig;
using model::TaskHeadSpec;
using model::TaskKind;
using train::TrainingConfig;

namespace {

NetworkConfig toy_net(uint64_t init_seed) {
  NetworkConfig c;
  c.input_dims = {1};
  c.backbone = {16, 16};
  c.heads = {{"f1", TaskKind::regression, 1}, {"f2", TaskKind::regression, 1}};
  c.init_seed = init_seed;
  return c;
}

TrainingConfig quick_config(uint64_t seed, int64_t epochs = 20) {
  TrainingConfig c;
  c.learning_rate = 1e-2;
  c.batch_size = 16;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("training config validation") {
  TrainingConfig c;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0.0;  // a zero step size is a legal no-op optimizer
  CHECK_NOTHROW(c.validate());
  c.learning_rate = -1e-3;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = TrainingConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig{};
  c.alpha = -0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero learning rate leaves every parameter untouched") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(32, 16, 3);
  model::MultiTaskNet net = model::build_student(toy_net(1));
  const uint64_t before = model::fingerprint(net);
  TrainingConfig cfg = quick_config(4, 3);
  cfg.learning_rate = 0.0;
  train::train_student(net, ds, cfg);
  CHECK(model::fingerprint(net) == before);
}

TEST_CASE("a task with no labels anywhere never moves its head") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(48, 0, 5);  // nothing for task 2
  model::MultiTaskNet net = model::build_student(toy_net(2));
  std::vector<double> head2_w = net.params.find("head/f2/w")->value.v;
  std::vector<double> head2_b = net.params.find("head/f2/b")->value.v;
  std::vector<double> head1_w = net.params.find("head/f1/w")->value.v;

  train::train_student(net, ds, quick_config(6, 10));

  CHECK(net.params.find("head/f2/w")->value.v == head2_w);  // bitwise frozen
  CHECK(net.params.find("head/f2/b")->value.v == head2_b);
  CHECK(net.params.find("head/f1/w")->value.v != head1_w);  // the live head moved
}

TEST_CASE("training is deterministic in (seed, data, config)") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(64, 16, 9);
  model::MultiTaskNet a = model::build_student(toy_net(7));
  model::MultiTaskNet b = model::build_student(toy_net(7));
  train::train_student(a, ds, quick_config(8, 5));
  train::train_student(b, ds, quick_config(8, 5));
  CHECK(model::fingerprint(a) == model::fingerprint(b));

  model::MultiTaskNet c = model::build_student(toy_net(7));
  train::train_student(c, ds, quick_config(9, 5));
  CHECK(model::fingerprint(a) != model::fingerprint(c));
}

TEST_CASE("loss history has one entry per epoch and trends down") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(128, 64, 13);
  model::MultiTaskNet net = model::build_student(toy_net(3));
  train::TrainingHistory h = train::train_student(net, ds, quick_config(10, 40));
  REQUIRE(h.total.size() == 40);
  REQUIRE(h.task1.size() == 40);
  REQUIRE(h.task2.size() == 40);
  CHECK(h.total.back() < h.total.front());
  CHECK(h.task1.back() > 0.0);
  CHECK(h.task2.back() > 0.0);
}

TEST_CASE("history csv export") {
  train::TrainingHistory h;
  h.total = {1.5, 0.75};
  h.task1 = {1.0, 0.5};
  h.task2 = {0.5, 0.25};
  const std::string path = "/tmp/mtlab_test_history_" + std::to_string(getpid()) + ".csv";
  train::export_history_csv(h, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,total,task1,task2");
  std::getline(in, line);
  CHECK(line == "0,1.5,1,0.5");
  std::remove(path.c_str());
}

TEST_CASE("head plans police task bindings") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(16, 8, 1);
  model::MultiTaskNet net = model::build_student(toy_net(4));
  TrainingConfig cfg = quick_config(2, 1);

  CHECK_THROWS_AS(train::train_student(net, ds, cfg, {1}), ConfigError);        // wrong count
  CHECK_THROWS_AS(train::train_student(net, ds, cfg, {1, 1}), ConfigError);     // duplicate
  CHECK_THROWS_AS(train::train_student(net, ds, cfg, {1, 3}), ConfigError);     // no task 3
  cfg.losses = {ad::LossKind::mse};                                             // wrong length
  CHECK_THROWS_AS(train::train_student(net, ds, cfg), ConfigError);
  cfg.losses = {ad::LossKind::mse, ad::LossKind::cross_entropy};                // CE on regression
  CHECK_THROWS_AS(train::train_student(net, ds, cfg), ConfigError);
  cfg.losses = {ad::LossKind::mse, ad::LossKind::mae};
  CHECK_NOTHROW(train::train_student(net, ds, cfg));
}

TEST_CASE("classification heads must match the class count") {
  tasks::ImbalancedDataset ds = tasks::build_synth_segmentation(3, 32, 16, 2);
  NetworkConfig c;
  c.input_dims = {2};
  c.backbone = {8};
  c.heads = {{"depth", TaskKind::regression, 1}, {"seg", TaskKind::classification, 5}};
  model::MultiTaskNet net = model::build_student(c);
  CHECK_THROWS_WITH_AS(train::train_student(net, ds, quick_config(1, 1)),
                       doctest::Contains("classes"), ConfigError);

  c.heads[1].output_dim = 3;
  model::MultiTaskNet ok = model::build_student(c);
  CHECK_NOTHROW(train::train_student(ok, ds, quick_config(1, 1)));
}

TEST_CASE("kind mismatches between head and labels are caught") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(16, 8, 1);  // both regression
  NetworkConfig c;
  c.input_dims = {1};
  c.backbone = {8};
  c.heads = {{"f1", TaskKind::regression, 1}, {"f2", TaskKind::classification, 3}};
  model::MultiTaskNet net = model::build_student(c);
  CHECK_THROWS_AS(train::train_student(net, ds, quick_config(1, 1)), ConfigError);
}

TEST_CASE("one-hot label modality") {
  std::vector<tasks::Sample> samples(3);
  samples[0].z = {0.1};
  samples[0].label2 = 2.0;
  samples[1].z = {0.2};
  samples[1].label2 = 0.0;
  samples[2].z = {0.3};
  samples[2].label2 = 1.0;
  std::vector<int64_t> rows{0, 1, 2};
  Tensor m = train::gather_label_modality(samples, rows, 2, TaskKind::classification, 3);
  CHECK(m.shape == std::vector<int64_t>{3, 3});
  CHECK(m.v == std::vector<double>{0, 0, 1, 1, 0, 0, 0, 1, 0});

  samples[1].label2.reset();
  CHECK_THROWS_AS(train::gather_label_modality(samples, rows, 2, TaskKind::classification, 3),
                  UsageError);
  samples[1].label2 = 7.0;  // outside [0,3)
  CHECK_THROWS_AS(train::gather_label_modality(samples, rows, 2, TaskKind::classification, 3),
                  IntegrityError);
}

TEST_CASE("teacher training demands fully labeled samples") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(32, 16, 21);
  NetworkConfig c = toy_net(5);
  c.input_dims = {1, 1};
  model::MultiModalTeacher teacher = model::build_teacher(c);
  CHECK_THROWS_AS(
      train::train_teacher_net(teacher, ds.samples, ds, quick_config(3, 2), 1),
      ConfigError);

  std::vector<tasks::Sample> both;
  for (const auto& s : ds.samples)
    if (s.label1 && s.label2) both.push_back(s);
  train::TrainingHistory h = train::train_teacher_net(teacher, both, ds, quick_config(3, 30), 1);
  CHECK(h.total.back() < h.total.front());

  CHECK_THROWS_AS(train::train_teacher_net(teacher, both, ds, quick_config(3, 1), 3),
                  ConfigError);
}

TEST_CASE("an all-zero network scores the signal power of the target") {
  // every parameter zero => prediction identically zero => eval MSE equals
  // the mean square of the target over the fixed grid
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(8, 8, 2);
  model::MultiTaskNet net = model::build_student(toy_net(6));
  for (auto& p : net.params) p.value.fill(0.0);
  metrics::MetricsReport r = train::evaluate(net, ds.eval_set, {1, 2},
                                             {{metrics::MetricKind::mse},
                                              {metrics::MetricKind::mse}});
  CHECK(r.sample_count == 1000);
  CHECK(r.get(2, metrics::MetricKind::mse) ==
        doctest::Approx(5.000460046511766378285).epsilon(1e-12));
}

TEST_CASE("evaluate rejects empty eval sets and mismatched bindings") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(8, 8, 2);
  model::MultiTaskNet net = model::build_student(toy_net(6));
  CHECK_THROWS_AS(train::evaluate(net, {}, {1, 2}, {{}, {}}), UsageError);
  CHECK_THROWS_AS(train::evaluate(net, ds.eval_set, {1}, {{}}), UsageError);
}

TEST_CASE("teacher evaluation feeds the source labels and reports both tasks") {
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(32, 32, 23);
  NetworkConfig c = toy_net(8);
  c.input_dims = {1, 1};
  model::MultiModalTeacher teacher = model::build_teacher(c);
  train::train_teacher_net(teacher, ds.samples, ds, quick_config(11, 20), 1);
  metrics::MetricsReport r = train::evaluate_teacher(teacher, ds.eval_set, 1, {1, 2},
                                                     {{metrics::MetricKind::mse},
                                                      {metrics::MetricKind::mse}});
  CHECK(r.has(1, metrics::MetricKind::mse));
  CHECK(r.has(2, metrics::MetricKind::mse));
  CHECK(r.get(2, metrics::MetricKind::mse) < 5.0);  // better than predicting zero
}

TEST_CASE("alpha zero reduces multitask training to the first task") {
  // with the second task's weight at zero, gradients for its head vanish
  tasks::ImbalancedDataset ds = tasks::sample_toy_dataset(32, 32, 29);
  model::MultiTaskNet net = model::build_student(toy_net(9));
  std::vector<double> head2_w = net.params.find("head/f2/w")->value.v;
  TrainingConfig cfg = quick_config(12, 5);
  cfg.alpha = 0.0;
  train::train_student(net, ds, cfg);
  CHECK(net.params.find("head/f2/w")->value.v == head2_w);
}
