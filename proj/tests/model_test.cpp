#include <cmath>
#include <cstdio>
#include <unistd.h>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtl/errors.hpp"
#include "mtl/gradcheck.hpp"
#include "mtl/model.hpp"
#include "mtl/rng.hpp"
#include "mtl/tape.hpp"

using namespace mtl;
using model::NetworkConfig;
using model::TaskHeadSpec;
using model::TaskKind;

namespace {

NetworkConfig small_student() {
  NetworkConfig c;
  c.input_dims = {3};
  c.backbone = {8, 8};
  c.heads = {{"reg", TaskKind::regression, 1}, {"cls", TaskKind::classification, 4}};
  c.init_seed = 11;
  return c;
}

Tensor random_batch(int64_t n, int64_t dim, uint64_t seed) {
  Rng rng(seed);
  Tensor x = Tensor::zeros({n, dim});
  for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
  return x;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/mtlab_test_") + name + "_" + std::to_string(getpid());
}

}  // namespace

TEST_CASE("config validation rejects malformed nets") {
  NetworkConfig c = small_student();
  c.backbone.clear();
  CHECK_THROWS_AS(model::build_student(c), ConfigError);

  c = small_student();
  c.heads.clear();
  CHECK_THROWS_AS(model::build_student(c), ConfigError);

  c = small_student();
  c.heads[1].name = "reg";
  CHECK_THROWS_WITH_AS(model::build_student(c), doctest::Contains("duplicate"), ConfigError);

  c = small_student();
  c.heads[1].output_dim = 1;  // classification over one class is no decision
  CHECK_THROWS_AS(model::build_student(c), ConfigError);

  c = small_student();
  c.backbone[0] = 0;
  CHECK_THROWS_AS(model::build_student(c), ConfigError);

  c = small_student();
  c.input_dims = {3, 2};  // students are uni-modal
  CHECK_THROWS_AS(model::build_student(c), ConfigError);

  c = small_student();
  CHECK_THROWS_AS(model::build_teacher(c), ConfigError);  // teachers need >= 2 modalities
}

TEST_CASE("initialization is fan-in bounded with zero biases") {
  model::MultiTaskNet net = model::build_student(small_student());
  // layout: backbone/0, backbone/1, head/reg, head/cls
  REQUIRE(net.params.size() == 8);
  const ad::Parameter* w0 = net.params.find("backbone/0/w");
  REQUIRE(w0 != nullptr);
  CHECK(w0->value.shape == std::vector<int64_t>{3, 8});
  const double bound0 = std::sqrt(1.0 / 3.0);
  for (double v : w0->value.v) {
    CHECK(v >= -bound0);
    CHECK(v <= bound0);
  }
  const ad::Parameter* b0 = net.params.find("backbone/0/b");
  REQUIRE(b0 != nullptr);
  for (double v : b0->value.v) CHECK(v == 0.0);

  const ad::Parameter* hw = net.params.find("head/cls/w");
  REQUIRE(hw != nullptr);
  CHECK(hw->value.shape == std::vector<int64_t>{8, 4});

  // same seed, same weights; different seed, different weights
  model::MultiTaskNet again = model::build_student(small_student());
  CHECK(model::fingerprint(net) == model::fingerprint(again));
  NetworkConfig other = small_student();
  other.init_seed = 12;
  CHECK(model::fingerprint(net) != model::fingerprint(model::build_student(other)));
}

TEST_CASE("taped forward and plain predict agree bitwise") {
  model::MultiTaskNet net = model::build_student(small_student());
  Tensor x = random_batch(5, 3, 21);

  ad::Tape tape;
  std::vector<ad::Value> taped = model::student_forward(tape, net, x);
  std::vector<Tensor> plain = model::predict(net, x);
  REQUIRE(taped.size() == plain.size());
  for (size_t h = 0; h < plain.size(); ++h) CHECK(tape.value(taped[h]).v == plain[h].v);

  CHECK(plain[0].shape == std::vector<int64_t>{5, 1});
  CHECK(plain[1].shape == std::vector<int64_t>{5, 4});
}

TEST_CASE("predict handles an empty batch") {
  model::MultiTaskNet net = model::build_student(small_student());
  std::vector<Tensor> outs = model::predict(net, Tensor::zeros({0, 3}));
  CHECK(outs[0].shape == std::vector<int64_t>{0, 1});
  CHECK(outs[1].shape == std::vector<int64_t>{0, 4});
}

TEST_CASE("input width mismatches are dimension errors") {
  model::MultiTaskNet net = model::build_student(small_student());
  CHECK_THROWS_AS(model::predict(net, Tensor::zeros({4, 2})), DimensionError);
  ad::Tape tape;
  CHECK_THROWS_AS(model::student_forward(tape, net, Tensor::zeros({4, 7})), DimensionError);
}

TEST_CASE("teacher fuses modalities by addition before the trunk") {
  NetworkConfig c = small_student();
  c.input_dims = {3, 2};
  model::MultiModalTeacher net = model::build_teacher(c);
  REQUIRE(net.encoders.size() == 2);
  REQUIRE(net.trunk.size() == 2);

  Tensor x1 = random_batch(6, 3, 31);
  Tensor x2 = random_batch(6, 2, 32);
  std::vector<Tensor> out = model::predict(net, {x1, x2});
  CHECK(out[0].shape == std::vector<int64_t>{6, 1});
  CHECK(out[1].shape == std::vector<int64_t>{6, 4});

  ad::Tape tape;
  std::vector<ad::Value> taped = model::teacher_forward(tape, net, {x1, x2});
  for (size_t h = 0; h < out.size(); ++h) CHECK(tape.value(taped[h]).v == out[h].v);

  CHECK_THROWS_AS(model::predict(net, {x1}), UsageError);
  CHECK_THROWS_AS(model::predict(net, {x1, Tensor::zeros({6, 5})}), DimensionError);
}

TEST_CASE("swapping encoder branches together with their inputs changes nothing") {
  NetworkConfig c;
  c.input_dims = {3, 3};  // equal widths so parameters can be exchanged
  c.backbone = {8};
  c.heads = {{"reg", TaskKind::regression, 1}};
  c.init_seed = 5;
  model::MultiModalTeacher net = model::build_teacher(c);

  Tensor x1 = random_batch(4, 3, 41);
  Tensor x2 = random_batch(4, 3, 42);
  std::vector<Tensor> before = model::predict(net, {x1, x2});

  auto swap_params = [&net](const char* a, const char* b) {
    std::swap(net.params.find(a)->value, net.params.find(b)->value);
  };
  swap_params("encoder/0/w", "encoder/1/w");
  swap_params("encoder/0/b", "encoder/1/b");
  std::vector<Tensor> after = model::predict(net, {x2, x1});
  CHECK(before[0].v == after[0].v);
}

TEST_CASE("an all-zero second modality contributes nothing at init") {
  // encoder biases start at zero, so encoder(0) = 0 and the fusion sum
  // degenerates to the first branch
  NetworkConfig c;
  c.input_dims = {3, 2};
  c.backbone = {8, 8};
  c.heads = {{"reg", TaskKind::regression, 1}};
  c.init_seed = 17;
  model::MultiModalTeacher net = model::build_teacher(c);

  Tensor x1 = random_batch(5, 3, 51);
  Tensor zeros = Tensor::zeros({5, 2});
  std::vector<Tensor> fused = model::predict(net, {x1, zeros});

  // reference: run the first encoder + trunk + head by hand through a tape
  ad::Tape tape;
  ad::Value h = tape.linear(tape.input(x1), tape.param(*net.params.find("encoder/0/w")),
                            tape.param(*net.params.find("encoder/0/b")));
  h = tape.activate(h, c.activation);
  for (size_t l = 0; l < net.trunk.size(); ++l) {
    h = tape.linear(h, tape.param(*net.params.find("trunk/" + std::to_string(l) + "/w")),
                    tape.param(*net.params.find("trunk/" + std::to_string(l) + "/b")));
    h = tape.activate(h, c.activation);
  }
  h = tape.linear(h, tape.param(*net.params.find("head/reg/w")),
                  tape.param(*net.params.find("head/reg/b")));
  CHECK(fused[0].v == tape.value(h).v);
}

TEST_CASE("teacher gradients pass the numeric check") {
  NetworkConfig c;
  c.input_dims = {2, 3};
  c.backbone = {6, 6};
  c.heads = {{"reg", TaskKind::regression, 1}, {"cls", TaskKind::classification, 3}};
  c.init_seed = 3;
  model::MultiModalTeacher net = model::build_teacher(c);

  Tensor x1 = random_batch(4, 2, 61);
  Tensor x2 = random_batch(4, 3, 62);
  Tensor target = random_batch(4, 1, 63);
  std::vector<int> classes{0, 2, 1, 1};
  std::vector<uint8_t> mask{1, 1, 1, 1};

  auto loss_fn = [&](ad::ParameterSet&) {
    ad::Tape tape;
    std::vector<ad::Value> outs = model::teacher_forward(tape, net, {x1, x2});
    ad::Value l1 = tape.mse_loss(outs[0], target, mask);
    ad::Value l2 = tape.cross_entropy_loss(outs[1], classes, mask);
    ad::Value total = tape.axpy(l1, 1.0, l2);
    tape.backward(total);
    return tape.scalar(total);
  };
  ad::GradCheckResult r = ad::gradient_check(net.params, loss_fn);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("checkpoints restore the exact parameters") {
  NetworkConfig c = small_student();
  model::MultiTaskNet net = model::build_student(c);
  // move off the init values so the round trip is not trivially zeros
  Rng rng(77);
  for (auto& p : net.params)
    for (double& v : p.value.v) v = rng.uniform(-3.0, 3.0);

  const std::string path = temp_path("student.ckpt");
  model::save_checkpoint(net, path);
  model::MultiTaskNet back = model::load_student_checkpoint(path);
  CHECK(model::fingerprint(back) == model::fingerprint(net));

  Tensor x = random_batch(3, 3, 71);
  CHECK(model::predict(back, x)[0].v == model::predict(net, x)[0].v);
  std::remove(path.c_str());
}

TEST_CASE("teacher checkpoints round-trip and kinds are not interchangeable") {
  NetworkConfig c;
  c.input_dims = {2, 2};
  c.backbone = {4};
  c.heads = {{"reg", TaskKind::regression, 1}};
  c.init_seed = 23;
  model::MultiModalTeacher net = model::build_teacher(c);

  const std::string path = temp_path("teacher.ckpt");
  model::save_checkpoint(net, path);
  model::MultiModalTeacher back = model::load_teacher_checkpoint(path);
  CHECK(model::fingerprint(back) == model::fingerprint(net));
  CHECK_THROWS_AS(model::load_student_checkpoint(path), ConfigError);
  std::remove(path.c_str());

  CHECK_THROWS_AS(model::load_teacher_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST_CASE("task kind names round-trip") {
  CHECK(model::task_kind_from_string("regression") == TaskKind::regression);
  CHECK(model::task_kind_from_string("classification") == TaskKind::classification);
  CHECK(model::to_string(TaskKind::classification) == "classification");
  CHECK_THROWS_AS(model::task_kind_from_string("ranking"), ConfigError);
}
