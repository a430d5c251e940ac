#include <cmath>
#include <vector>

#include "doctest.h"
#include "mtl/adam.hpp"
#include "mtl/errors.hpp"
#include "mtl/gradcheck.hpp"
#include "mtl/kernels.hpp"
#include "mtl/rng.hpp"
#include "mtl/tape.hpp"

using namespace mtl;
using namespace mtl::ad;

namespace {

ParameterSet single_layer(double w, double b) {
  ParameterSet p;
  p.add("w", Tensor::matrix(1, 1, {w}));
  p.add("b", Tensor::matrix(1, 1, {b}));
  return p;
}

// Random dense stack with the given widths, all weights in U(-0.5, 0.5).
ParameterSet random_net(const std::vector<int64_t>& widths, uint64_t seed) {
  Rng rng(seed);
  ParameterSet p;
  for (size_t l = 0; l + 1 < widths.size(); ++l) {
    Tensor w = Tensor::zeros({widths[l], widths[l + 1]});
    for (double& x : w.v) x = rng.uniform(-0.5, 0.5);
    Tensor b = Tensor::zeros({1, widths[l + 1]});
    for (double& x : b.v) x = rng.uniform(-0.5, 0.5);
    p.add("w" + std::to_string(l), std::move(w));
    p.add("b" + std::to_string(l), std::move(b));
  }
  return p;
}

Tensor random_matrix(int64_t r, int64_t c, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({r, c});
  for (double& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("linear map through a single identity layer") {
  ParameterSet p = single_layer(2.0, 0.0);
  Tape tape;
  Value y = forward_dense(tape, p, Tensor::matrix(1, 1, {3.0}), Activation::identity);
  CHECK(tape.value(y).v[0] == 6.0);
}

TEST_CASE("non-finite input is rejected") {
  Tape tape;
  Tensor bad = Tensor::matrix(1, 2, {1.0, std::nan("")});
  CHECK_THROWS_AS((void)tape.input(bad), UsageError);
}

TEST_CASE("zero net maps everything to tanh(0)=0") {
  ParameterSet p = single_layer(0.0, 0.0);
  Tape tape;
  Value y = forward_dense(tape, p, Tensor::matrix(1, 1, {5.0}), Activation::tanh);
  CHECK(tape.value(y).v[0] == 0.0);
}

TEST_CASE("d(y^2)/dw with y = w*x, w=2, x=3 is exactly 36") {
  ParameterSet p = single_layer(2.0, 0.0);
  Tape tape;
  Value y = forward_dense(tape, p, Tensor::matrix(1, 1, {3.0}), Activation::identity);
  std::vector<uint8_t> mask{1};
  Value loss = tape.mse_loss(y, Tensor::matrix(1, 1, {0.0}), mask);
  CHECK(tape.scalar(loss) == 36.0);
  tape.backward(loss);
  CHECK(p.find("w")->grad.v[0] == 36.0);
  CHECK(p.find("b")->grad.v[0] == 12.0);
}

TEST_CASE("loss constant in a parameter leaves its gradient exactly zero") {
  ParameterSet p = single_layer(2.0, 0.0);
  Parameter& unused = p.add("unused", Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Tape tape;
  (void)tape.param(unused);
  Value y = tape.linear(tape.input(Tensor::matrix(1, 1, {3.0})), tape.param(*p.find("w")),
                        tape.param(*p.find("b")));
  std::vector<uint8_t> mask{1};
  Value loss = tape.mse_loss(y, Tensor::matrix(1, 1, {0.0}), mask);
  tape.backward(loss);
  for (double g : unused.grad.v) CHECK(g == 0.0);
}

TEST_CASE("gradients accumulate additively across rounds; a tape is single-use") {
  ParameterSet p = single_layer(2.0, 0.0);
  const Tensor x = Tensor::matrix(1, 1, {3.0});
  const Tensor t = Tensor::matrix(1, 1, {0.0});
  std::vector<uint8_t> mask{1};

  Tape first;
  Value y1 = forward_dense(first, p, x, Activation::identity);
  first.backward(first.mse_loss(y1, t, mask));
  const double once = p.find("w")->grad.v[0];

  Tape second;
  Value y2 = forward_dense(second, p, x, Activation::identity);
  Value l2 = second.mse_loss(y2, t, mask);
  second.backward(l2);
  CHECK(p.find("w")->grad.v[0] == 2.0 * once);

  CHECK(second.consumed());
  CHECK_THROWS_AS(second.backward(l2), UsageError);
}

TEST_CASE("softmax: symmetry, shift invariance, closed form") {
  Tensor two = softmax(Tensor::matrix(1, 2, {0.0, 0.0}));
  CHECK(two.v[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(two.v[1] == doctest::Approx(0.5).epsilon(1e-12));

  Tensor big = softmax(Tensor::matrix(1, 2, {1000.0, 1000.0}));
  CHECK(big.all_finite());
  CHECK(big.v[0] == doctest::Approx(0.5).epsilon(1e-12));

  // e^{ln 9} / (e^{ln 9} + 1) = 0.9
  const double ln9 = 2.1972245773362193828;
  Tensor nine = softmax(Tensor::matrix(1, 2, {ln9, 0.0}));
  CHECK(nine.v[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(nine.v[1] == doctest::Approx(0.1).epsilon(1e-12));

  Tensor r = random_matrix(5, 7, 42, -3.0, 3.0);
  Tensor s = softmax(r);
  Tensor shifted = r;
  for (int64_t b = 0; b < r.rows(); ++b)
    for (int64_t j = 0; j < r.cols(); ++j) shifted.at(b, j) += 17.25;
  Tensor s2 = softmax(shifted);
  for (int64_t b = 0; b < r.rows(); ++b) {
    double sum = 0.0;
    for (int64_t j = 0; j < r.cols(); ++j) {
      sum += s.at(b, j);
      CHECK(s.at(b, j) > 0.0);
      CHECK(s.at(b, j) < 1.0);
      CHECK(std::abs(s.at(b, j) - s2.at(b, j)) < 1e-9);
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("gradient check: random two-layer net with MSE stays under 1e-4") {
  ParameterSet p = random_net({3, 8, 2}, 7);
  const Tensor x = random_matrix(4, 3, 11);
  const Tensor t = random_matrix(4, 2, 13);
  std::vector<uint8_t> mask{1, 1, 1, 1};
  auto loss_fn = [&](ParameterSet& ps) {
    Tape tape;
    Value y = forward_dense(tape, ps, x, Activation::tanh);
    Value l = tape.mse_loss(y, t, mask);
    tape.backward(l);
    return tape.scalar(l);
  };
  GradCheckResult res = gradient_check(p, loss_fn, 1e-5);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("gradient check: exact in the linear one-parameter case") {
  ParameterSet p = single_layer(2.0, 0.0);
  std::vector<uint8_t> mask{1};
  auto loss_fn = [&](ParameterSet& ps) {
    Tape tape;
    Value y = forward_dense(tape, ps, Tensor::matrix(1, 1, {3.0}), Activation::identity);
    Value l = tape.mse_loss(y, Tensor::matrix(1, 1, {0.0}), mask);
    tape.backward(l);
    return tape.scalar(l);
  };
  GradCheckResult res = gradient_check(p, loss_fn, 1e-5);
  CHECK(res.max_rel_error < 1e-9);
}

TEST_CASE("gradient check: zero-gradient loss reports exactly zero error") {
  ParameterSet p = single_layer(2.0, 0.0);
  auto loss_fn = [&](ParameterSet&) { return 1.25; };
  GradCheckResult res = gradient_check(p, loss_fn, 1e-5);
  CHECK(res.max_rel_error == 0.0);
}

TEST_CASE("gradient check covers every implemented loss at widths up to 16") {
  const Tensor x = random_matrix(6, 5, 21);
  std::vector<uint8_t> mask{1, 0, 1, 1, 0, 1};

  SUBCASE("mse") {
    ParameterSet p = random_net({5, 16, 3}, 31);
    const Tensor t = random_matrix(6, 3, 41);
    auto loss_fn = [&](ParameterSet& ps) {
      Tape tape;
      Value l = tape.mse_loss(forward_dense(tape, ps, x, Activation::tanh), t, mask);
      tape.backward(l);
      return tape.scalar(l);
    };
    CHECK(gradient_check(p, loss_fn, 1e-5).max_rel_error < 1e-4);
  }
  SUBCASE("mae") {
    ParameterSet p = random_net({5, 16, 3}, 33);
    const Tensor t = random_matrix(6, 3, 43);
    auto loss_fn = [&](ParameterSet& ps) {
      Tape tape;
      Value l = tape.mae_loss(forward_dense(tape, ps, x, Activation::tanh), t, mask);
      tape.backward(l);
      return tape.scalar(l);
    };
    CHECK(gradient_check(p, loss_fn, 1e-5).max_rel_error < 1e-4);
  }
  SUBCASE("cross entropy") {
    ParameterSet p = random_net({5, 16, 4}, 35);
    std::vector<int> classes{0, 3, 1, 2, 0, 3};
    auto loss_fn = [&](ParameterSet& ps) {
      Tape tape;
      Value l = tape.cross_entropy_loss(forward_dense(tape, ps, x, Activation::tanh),
                                        classes, mask);
      tape.backward(l);
      return tape.scalar(l);
    };
    CHECK(gradient_check(p, loss_fn, 1e-5).max_rel_error < 1e-4);
  }
  SUBCASE("relu stack with mse") {
    ParameterSet p = random_net({5, 12, 12, 2}, 37);
    const Tensor t = random_matrix(6, 2, 47);
    auto loss_fn = [&](ParameterSet& ps) {
      Tape tape;
      Value l = tape.mse_loss(forward_dense(tape, ps, x, Activation::relu), t, mask);
      tape.backward(l);
      return tape.scalar(l);
    };
    CHECK(gradient_check(p, loss_fn, 1e-5).max_rel_error < 1e-4);
  }
}

TEST_CASE("combined loss skips a fully masked task, loss and gradient") {
  ParameterSet trunk = random_net({2, 4}, 51);
  ParameterSet head1 = random_net({4, 1}, 53);
  ParameterSet head2 = random_net({4, 1}, 55);
  const Tensor x = random_matrix(3, 2, 57);
  const Tensor t1 = random_matrix(3, 1, 59);
  const Tensor t2 = random_matrix(3, 1, 61);

  auto run = [&](std::vector<uint8_t> m2, double alpha) {
    trunk.zero_grads();
    head1.zero_grads();
    head2.zero_grads();
    Tape tape;
    Value h = forward_dense(tape, trunk, x, Activation::tanh);
    Value y1 = tape.linear(h, tape.param(head1[0]), tape.param(head1[1]), "head1");
    Value y2 = tape.linear(h, tape.param(head2[0]), tape.param(head2[1]), "head2");
    std::vector<TaskLossTerm> terms(2);
    terms[0] = {LossKind::mse, y1, t1, {}, {1, 1, 1}};
    terms[1] = {LossKind::mse, y2, t2, {}, std::move(m2)};
    Value l = masked_multitask_loss(tape, terms, alpha);
    double lv = tape.scalar(l);
    tape.backward(l);
    return lv;
  };

  const double joint = run({1, 1, 1}, 1.0);
  const double solo = run({0, 0, 0}, 1.0);
  // task-2 head untouched when its mask is all-false
  for (const Parameter& p : head2)
    for (double g : p.grad.v) CHECK(g == 0.0);
  CHECK(solo < joint);

  // alpha = 0 removes task 2 from the value entirely
  const double a0 = run({1, 1, 1}, 0.0);
  CHECK(a0 == solo);

  // every task fully masked -> degenerate batch
  trunk.zero_grads();
  Tape tape;
  Value h = forward_dense(tape, trunk, x, Activation::tanh);
  std::vector<TaskLossTerm> terms(1);
  terms[0] = {LossKind::mse, h, random_matrix(3, 4, 63), {}, {0, 0, 0}};
  CHECK_THROWS_AS((void)masked_multitask_loss(tape, terms, 1.0), UsageError);
}

TEST_CASE("perfect predictions give exactly zero combined loss") {
  ParameterSet p = single_layer(1.0, 0.0);
  Tape tape;
  Value y = forward_dense(tape, p, Tensor::matrix(2, 1, {1.5, -2.0}), Activation::identity);
  std::vector<TaskLossTerm> terms(2);
  terms[0] = {LossKind::mse, y, Tensor::matrix(2, 1, {1.5, -2.0}), {}, {1, 1}};
  terms[1] = {LossKind::mae, y, Tensor::matrix(2, 1, {1.5, -2.0}), {}, {1, 1}};
  CHECK(tape.scalar(masked_multitask_loss(tape, terms, 1.0)) == 0.0);
}

TEST_CASE("masked rows are invisible: changing their data never leaks into gradients") {
  ParameterSet p = random_net({3, 6, 2}, 71);
  std::vector<uint8_t> mask{1, 0, 1, 0};

  auto grads = [&](const Tensor& x, const Tensor& t) {
    p.zero_grads();
    Tape tape;
    Value l = tape.mse_loss(forward_dense(tape, p, x, Activation::tanh), t, mask);
    tape.backward(l);
    std::vector<double> flat;
    for (const Parameter& q : p) flat.insert(flat.end(), q.grad.v.begin(), q.grad.v.end());
    return flat;
  };

  Tensor xa = random_matrix(4, 3, 73);
  Tensor ta = random_matrix(4, 2, 75);
  Tensor xb = xa;
  Tensor tb = ta;
  // rewrite the masked rows only
  for (int64_t j = 0; j < 3; ++j) {
    xb.at(1, j) = 1e6;
    xb.at(3, j) = -42.0;
  }
  for (int64_t j = 0; j < 2; ++j) {
    tb.at(1, j) = 9e9;
    tb.at(3, j) = 0.0;
  }
  // Masked target rows never matter; masked input rows still pass through the
  // forward but their loss rows are dropped, so gradients match bitwise.
  std::vector<double> ga = grads(xa, ta);
  std::vector<double> gb = grads(xa, tb);
  REQUIRE(ga.size() == gb.size());
  for (size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == gb[i]);

  std::vector<double> gc = grads(xb, tb);
  for (size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == gc[i]);
}

TEST_CASE("mean over unmasked rows matches per-sample averaging") {
  ParameterSet p = random_net({3, 5, 1}, 81);
  Tensor x = random_matrix(4, 3, 83);
  Tensor t = random_matrix(4, 1, 85);

  auto grad_with_mask = [&](std::vector<uint8_t> m) {
    p.zero_grads();
    Tape tape;
    Value l = tape.mse_loss(forward_dense(tape, p, x, Activation::tanh), t, m);
    tape.backward(l);
    std::vector<double> flat;
    for (const Parameter& q : p) flat.insert(flat.end(), q.grad.v.begin(), q.grad.v.end());
    return flat;
  };

  std::vector<std::vector<double>> single(4);
  for (int i = 0; i < 4; ++i) {
    std::vector<uint8_t> m(4, 0);
    m[static_cast<size_t>(i)] = 1;
    single[static_cast<size_t>(i)] = grad_with_mask(m);
  }
  std::vector<double> full = grad_with_mask({1, 1, 1, 1});
  for (size_t k = 0; k < full.size(); ++k) {
    double mean = (single[0][k] + single[1][k] + single[2][k] + single[3][k]) / 4.0;
    CHECK(full[k] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParameterSet p = random_net({2, 3}, 91);
  std::vector<double> before = p[0].value.v;
  p.zero_grads();
  opt::AdamState adam({.learning_rate = 0.01});
  adam.step(p);
  CHECK(p[0].value.v == before);
}

TEST_CASE("adam: first-step magnitude is lr*|g|/(|g|+eps)") {
  ParameterSet p;
  p.add("w", Tensor::matrix(1, 2, {1.0, -1.0}));
  p.zero_grads();
  p[0].grad.v = {0.4, -3.0};
  opt::AdamConfig cfg{.learning_rate = 1e-3};
  opt::AdamState adam(cfg);
  adam.step(p);
  for (size_t j = 0; j < 2; ++j) {
    const double g = (j == 0) ? 0.4 : -3.0;
    const double expect = cfg.learning_rate * g / (std::abs(g) + cfg.epsilon);
    const double before = (j == 0) ? 1.0 : -1.0;
    CHECK(p[0].value.v[j] == doctest::Approx(before - expect).epsilon(1e-12));
  }
}

TEST_CASE("adam: step counter and convergence on a quadratic") {
  ParameterSet p;
  p.add("w", Tensor::matrix(1, 1, {4.0}));
  opt::AdamState adam({.learning_rate = 0.1});
  for (int i = 0; i < 2; ++i) {
    p.zero_grads();
    p[0].grad.v[0] = 2.0 * p[0].value.v[0];  // d/dw of w^2
    adam.step(p);
  }
  CHECK(adam.steps_taken() == 2);
  for (int i = 0; i < 500; ++i) {
    p.zero_grads();
    p[0].grad.v[0] = 2.0 * p[0].value.v[0];
    adam.step(p);
  }
  CHECK(std::abs(p[0].value.v[0]) < 1e-3);
}

TEST_CASE("determinism: identical seeds give bitwise identical nets and gradients") {
  auto build_and_grad = [] {
    ParameterSet p = random_net({4, 16, 16, 2}, 1234);
    Tensor x = random_matrix(8, 4, 777);
    Tensor t = random_matrix(8, 2, 888);
    std::vector<uint8_t> mask(8, 1);
    Tape tape;
    Value l = tape.mse_loss(forward_dense(tape, p, x, Activation::tanh), t, mask);
    tape.backward(l);
    std::vector<double> flat;
    for (const Parameter& q : p) {
      flat.insert(flat.end(), q.value.v.begin(), q.value.v.end());
      flat.insert(flat.end(), q.grad.v.begin(), q.grad.v.end());
    }
    return flat;
  };
  CHECK(build_and_grad() == build_and_grad());
}

TEST_CASE("serial and dispatching kernels agree bitwise") {
  const int64_t n = 64, in = 48, out = 33;
  Tensor x = random_matrix(n, in, 3001);
  Tensor w = random_matrix(in, out, 3002);
  Tensor b = random_matrix(1, out, 3003);
  Tensor dy = random_matrix(n, out, 3004);

  Tensor y1 = Tensor::zeros({n, out}), y2 = Tensor::zeros({n, out});
  kernels::linear_forward_serial(x.v.data(), w.v.data(), b.v.data(), y1.v.data(), n, in, out);
  kernels::linear_forward(x.v.data(), w.v.data(), b.v.data(), y2.v.data(), n, in, out);
  CHECK(y1.v == y2.v);

  Tensor dx1 = Tensor::zeros({n, in}), dx2 = Tensor::zeros({n, in});
  kernels::linear_backward_input_serial(dy.v.data(), w.v.data(), dx1.v.data(), n, in, out);
  kernels::linear_backward_input(dy.v.data(), w.v.data(), dx2.v.data(), n, in, out);
  CHECK(dx1.v == dx2.v);

  Tensor dw1 = Tensor::zeros({in, out}), dw2 = Tensor::zeros({in, out});
  Tensor db1 = Tensor::zeros({1, out}), db2 = Tensor::zeros({1, out});
  kernels::linear_backward_params_serial(x.v.data(), dy.v.data(), dw1.v.data(), db1.v.data(),
                                         n, in, out);
  kernels::linear_backward_params(x.v.data(), dy.v.data(), dw2.v.data(), db2.v.data(),
                                  n, in, out);
  CHECK(dw1.v == dw2.v);
  CHECK(db1.v == db2.v);

  // force the dispatcher across its size threshold too
  const int64_t big = 1 << 9;
  Tensor bx = random_matrix(big, 64, 3005);
  Tensor bw = random_matrix(64, 64, 3006);
  Tensor by1 = Tensor::zeros({big, 64}), by2 = Tensor::zeros({big, 64});
  kernels::linear_forward_serial(bx.v.data(), bw.v.data(), nullptr, by1.v.data(), big, 64, 64);
  kernels::linear_forward(bx.v.data(), bw.v.data(), nullptr, by2.v.data(), big, 64, 64);
  CHECK(by1.v == by2.v);
}

TEST_CASE("dimension errors name the offending layer") {
  ParameterSet p;
  p.add("w0", Tensor::zeros({3, 4}));
  p.add("b0", Tensor::zeros({1, 4}));
  Tape tape;
  try {
    (void)forward_dense(tape, p, Tensor::zeros({2, 5}), Activation::tanh);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("rng streams are stable across runs and labels") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(1, "init") != derive_seed(1, "shuffle"));
  CHECK(derive_seed(1, "init") == derive_seed(1, "init"));
  CHECK(derive_seed(1, "init", 0) != derive_seed(1, "init", 1));
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  // shuffle must be a permutation
  auto perm = c.permutation(20);
  std::vector<bool> seen(20, false);
  for (int64_t v : perm) {
    CHECK(!seen[static_cast<size_t>(v)]);
    seen[static_cast<size_t>(v)] = true;
  }
}
