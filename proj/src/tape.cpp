#include "mtl/tape.hpp"

#include <cmath>
#include <cstdint>

#include "mtl/errors.hpp"
#include "mtl/kernels.hpp"

namespace mtl::ad {

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation: " + s);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "mae") return LossKind::mae;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss kind: " + s);
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::mae: return "mae";
    case LossKind::cross_entropy: return "cross_entropy";
  }
  return "?";
}

Tensor softmax(const Tensor& logits) {
  const int64_t n = logits.rows(), k = logits.cols();
  Tensor out = Tensor::zeros(logits.shape);
  for (int64_t b = 0; b < n; ++b) {
    double m = logits.at(b, 0);
    for (int64_t j = 1; j < k; ++j) m = std::max(m, logits.at(b, j));
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      double e = std::exp(logits.at(b, j) - m);
      out.at(b, j) = e;
      sum += e;
    }
    for (int64_t j = 0; j < k; ++j) out.at(b, j) /= sum;
  }
  return out;
}

Value Tape::push(Tensor val, bool needs_grad, std::function<void(Tape&, int32_t)> back,
                 Parameter* bound) {
  Node n;
  n.val = std::move(val);
  n.back = std::move(back);
  n.bound = bound;
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Value{static_cast<int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Value v) {
  if (!v.valid() || static_cast<size_t>(v.idx) >= nodes_.size())
    throw UsageError("invalid tape value handle");
  return nodes_[static_cast<size_t>(v.idx)];
}

const Tape::Node& Tape::node(Value v) const {
  if (!v.valid() || static_cast<size_t>(v.idx) >= nodes_.size())
    throw UsageError("invalid tape value handle");
  return nodes_[static_cast<size_t>(v.idx)];
}

Tensor& Tape::grad(Value v) { return node(v).grad; }

Value Tape::input(Tensor t) {
  if (!t.all_finite()) throw UsageError("non-finite input tensor");
  return push(std::move(t), false, nullptr);
}

Value Tape::param(Parameter& p) {
  Tensor copy = p.value;
  return push(std::move(copy), true, nullptr, &p);
}

Value Tape::linear(Value x, Value w, Value b, const std::string& label) {
  const Tensor& xv = node(x).val;
  const Tensor& wv = node(w).val;
  const Tensor& bv = node(b).val;
  if (xv.shape.size() != 2 || wv.shape.size() != 2)
    throw DimensionError(label + ": linear expects 2-d input and weight");
  const int64_t n = xv.shape[0], in = xv.shape[1];
  const int64_t win = wv.shape[0], out = wv.shape[1];
  if (in != win)
    throw DimensionError(label + ": input width " + std::to_string(in) +
                         " does not match weight rows " + std::to_string(win));
  if (bv.size() != out)
    throw DimensionError(label + ": bias size " + std::to_string(bv.size()) +
                         " does not match weight cols " + std::to_string(out));

  Tensor y = Tensor::zeros({n, out});
  kernels::linear_forward(xv.v.data(), wv.v.data(), bv.v.data(), y.v.data(), n, in, out);

  bool needs = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
  auto back = [x, w, b, n, in, out](Tape& t, int32_t self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Tensor& xv2 = t.node(x).val;
    const Tensor& wv2 = t.node(w).val;
    if (t.node(x).needs_grad)
      kernels::linear_backward_input(g.v.data(), wv2.v.data(), t.grad(x).v.data(), n, in, out);
    if (t.node(w).needs_grad || t.node(b).needs_grad) {
      double* dw = t.node(w).needs_grad ? t.grad(w).v.data() : nullptr;
      double* db = t.node(b).needs_grad ? t.grad(b).v.data() : nullptr;
      kernels::linear_backward_params(xv2.v.data(), g.v.data(), dw, db, n, in, out);
    }
  };
  return push(std::move(y), needs, needs ? std::function<void(Tape&, int32_t)>(back) : nullptr);
}

Value Tape::add(Value a, Value b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  if (!av.same_shape(bv))
    throw DimensionError("add: shape " + av.shape_str() + " vs " + bv.shape_str());
  Tensor y = av;
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += bv.v[i];
  bool needs = node(a).needs_grad || node(b).needs_grad;
  auto back = [a, b](Tape& t, int32_t self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.node(a).needs_grad) {
      Tensor& ga = t.grad(a);
      for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
    }
    if (t.node(b).needs_grad) {
      Tensor& gb = t.grad(b);
      for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i];
    }
  };
  return push(std::move(y), needs, needs ? std::function<void(Tape&, int32_t)>(back) : nullptr);
}

Value Tape::activate(Value x, Activation act) {
  if (act == Activation::identity) return x;
  const Tensor& xv = node(x).val;
  Tensor y = xv;
  if (act == Activation::tanh) {
    for (double& e : y.v) e = std::tanh(e);
  } else {
    for (double& e : y.v) e = e > 0.0 ? e : 0.0;
  }
  bool needs = node(x).needs_grad;
  auto back = [x, act](Tape& t, int32_t self) {
    const Node& me = t.nodes_[static_cast<size_t>(self)];
    Tensor& gx = t.grad(x);
    if (act == Activation::tanh) {
      for (size_t i = 0; i < gx.v.size(); ++i) {
        const double y2 = me.val.v[i] * me.val.v[i];
        gx.v[i] += me.grad.v[i] * (1.0 - y2);
      }
    } else {
      const Tensor& xv2 = t.node(x).val;
      for (size_t i = 0; i < gx.v.size(); ++i)
        if (xv2.v[i] > 0.0) gx.v[i] += me.grad.v[i];
    }
  };
  return push(std::move(y), needs, needs ? std::function<void(Tape&, int32_t)>(back) : nullptr);
}

namespace {

int64_t unmasked_count(std::span<const uint8_t> mask) {
  int64_t n = 0;
  for (uint8_t m : mask) n += (m != 0);
  return n;
}

}  // namespace

Value Tape::mse_loss(Value pred, const Tensor& target, std::span<const uint8_t> mask) {
  const Tensor& pv = node(pred).val;
  if (!pv.same_shape(target))
    throw DimensionError("mse_loss: prediction " + pv.shape_str() + " vs target " +
                         target.shape_str());
  const int64_t n = pv.rows(), d = pv.cols();
  if (static_cast<int64_t>(mask.size()) != n)
    throw DimensionError("mse_loss: mask size does not match batch");
  const int64_t cnt = unmasked_count(mask);
  if (cnt == 0) throw UsageError("mse_loss: every sample is masked");

  double acc = 0.0;
  for (int64_t b = 0; b < n; ++b) {
    if (!mask[static_cast<size_t>(b)]) continue;
    for (int64_t j = 0; j < d; ++j) {
      const double r = pv.at(b, j) - target.at(b, j);
      acc += r * r;
    }
  }
  Tensor targ = target;
  std::vector<uint8_t> m(mask.begin(), mask.end());
  auto back = [pred, targ = std::move(targ), m = std::move(m), n, d, cnt](Tape& t, int32_t self) {
    const double g = t.nodes_[static_cast<size_t>(self)].grad.v[0];
    const Tensor& pv2 = t.node(pred).val;
    Tensor& gp = t.grad(pred);
    const double scale = 2.0 * g / static_cast<double>(cnt);
    for (int64_t b = 0; b < n; ++b) {
      if (!m[static_cast<size_t>(b)]) continue;
      for (int64_t j = 0; j < d; ++j)
        gp.at(b, j) += scale * (pv2.at(b, j) - targ.at(b, j));
    }
  };
  bool needs = node(pred).needs_grad;
  return push(Tensor::scalar(acc / static_cast<double>(cnt)), needs,
              needs ? std::function<void(Tape&, int32_t)>(back) : nullptr);
}

Value Tape::mae_loss(Value pred, const Tensor& target, std::span<const uint8_t> mask) {
  const Tensor& pv = node(pred).val;
  if (!pv.same_shape(target))
    throw DimensionError("mae_loss: prediction " + pv.shape_str() + " vs target " +
                         target.shape_str());
  const int64_t n = pv.rows(), d = pv.cols();
  if (static_cast<int64_t>(mask.size()) != n)
    throw DimensionError("mae_loss: mask size does not match batch");
  const int64_t cnt = unmasked_count(mask);
  if (cnt == 0) throw UsageError("mae_loss: every sample is masked");

  double acc = 0.0;
  for (int64_t b = 0; b < n; ++b) {
    if (!mask[static_cast<size_t>(b)]) continue;
    for (int64_t j = 0; j < d; ++j) acc += std::abs(pv.at(b, j) - target.at(b, j));
  }
  Tensor targ = target;
  std::vector<uint8_t> m(mask.begin(), mask.end());
  auto back = [pred, targ = std::move(targ), m = std::move(m), n, d, cnt](Tape& t, int32_t self) {
    const double g = t.nodes_[static_cast<size_t>(self)].grad.v[0];
    const Tensor& pv2 = t.node(pred).val;
    Tensor& gp = t.grad(pred);
    const double scale = g / static_cast<double>(cnt);
    for (int64_t b = 0; b < n; ++b) {
      if (!m[static_cast<size_t>(b)]) continue;
      for (int64_t j = 0; j < d; ++j) {
        const double r = pv2.at(b, j) - targ.at(b, j);
        if (r > 0.0)
          gp.at(b, j) += scale;
        else if (r < 0.0)
          gp.at(b, j) -= scale;
      }
    }
  };
  bool needs = node(pred).needs_grad;
  return push(Tensor::scalar(acc / static_cast<double>(cnt)), needs,
              needs ? std::function<void(Tape&, int32_t)>(back) : nullptr);
}

Value Tape::cross_entropy_loss(Value logits, std::span<const int> classes,
                               std::span<const uint8_t> mask) {
  const Tensor& lv = node(logits).val;
  const int64_t n = lv.rows(), k = lv.cols();
  if (static_cast<int64_t>(classes.size()) != n || static_cast<int64_t>(mask.size()) != n)
    throw DimensionError("cross_entropy_loss: classes/mask size does not match batch");
  const int64_t cnt = unmasked_count(mask);
  if (cnt == 0) throw UsageError("cross_entropy_loss: every sample is masked");

  // Stabilized log-softmax; keep the probabilities for the backward sweep.
  Tensor probs = softmax(lv);
  double acc = 0.0;
  for (int64_t b = 0; b < n; ++b) {
    if (!mask[static_cast<size_t>(b)]) continue;
    const int y = classes[static_cast<size_t>(b)];
    if (y < 0 || y >= k)
      throw UsageError("cross_entropy_loss: class index " + std::to_string(y) +
                       " outside [0," + std::to_string(k) + ")");
    double m = lv.at(b, 0);
    for (int64_t j = 1; j < k; ++j) m = std::max(m, lv.at(b, j));
    double lse = 0.0;
    for (int64_t j = 0; j < k; ++j) lse += std::exp(lv.at(b, j) - m);
    acc += m + std::log(lse) - lv.at(b, y);
  }
  std::vector<int> cls(classes.begin(), classes.end());
  std::vector<uint8_t> m(mask.begin(), mask.end());
  auto back = [logits, probs = std::move(probs), cls = std::move(cls), m = std::move(m), n, k,
               cnt](Tape& t, int32_t self) {
    const double g = t.nodes_[static_cast<size_t>(self)].grad.v[0];
    Tensor& gl = t.grad(logits);
    const double scale = g / static_cast<double>(cnt);
    for (int64_t b = 0; b < n; ++b) {
      if (!m[static_cast<size_t>(b)]) continue;
      const int y = cls[static_cast<size_t>(b)];
      for (int64_t j = 0; j < k; ++j) {
        double p = probs.at(b, j);
        if (j == y) p -= 1.0;
        gl.at(b, j) += scale * p;
      }
    }
  };
  bool needs = node(logits).needs_grad;
  return push(Tensor::scalar(acc / static_cast<double>(cnt)), needs,
              needs ? std::function<void(Tape&, int32_t)>(back) : nullptr);
}

Value Tape::loss(LossKind kind, Value pred, const Tensor& target,
                 std::span<const uint8_t> mask) {
  switch (kind) {
    case LossKind::mse: return mse_loss(pred, target, mask);
    case LossKind::mae: return mae_loss(pred, target, mask);
    case LossKind::cross_entropy:
      throw UsageError("cross_entropy loss needs class indices; use cross_entropy_loss");
  }
  throw UsageError("unknown loss kind");
}

Value Tape::axpy(Value a, double alpha, Value b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  if (av.size() != 1 || bv.size() != 1) throw DimensionError("axpy expects scalar nodes");
  bool needs = node(a).needs_grad || node(b).needs_grad;
  auto back = [a, b, alpha](Tape& t, int32_t self) {
    const double g = t.nodes_[static_cast<size_t>(self)].grad.v[0];
    if (t.node(a).needs_grad) t.grad(a).v[0] += g;
    if (t.node(b).needs_grad) t.grad(b).v[0] += alpha * g;
  };
  return push(Tensor::scalar(av.v[0] + alpha * bv.v[0]), needs,
              needs ? std::function<void(Tape&, int32_t)>(back) : nullptr);
}

const Tensor& Tape::value(Value v) const { return node(v).val; }

double Tape::scalar(Value v) const {
  const Tensor& t = node(v).val;
  if (t.size() != 1) throw UsageError("scalar() on non-scalar node " + t.shape_str());
  return t.v[0];
}

void Tape::backward(Value loss) {
  if (consumed_) throw UsageError("tape already consumed by a previous backward()");
  Node& ln = node(loss);
  if (ln.val.size() != 1)
    throw UsageError("backward() expects a scalar loss, got " + ln.val.shape_str());
  consumed_ = true;

  for (auto& n : nodes_)
    if (n.needs_grad) n.grad = Tensor::zeros(n.val.shape);
  if (!ln.needs_grad) return;  // loss constant in every parameter
  ln.grad.v[0] = 1.0;

  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.back) n.back(*this, static_cast<int32_t>(i));
  }
  for (auto& n : nodes_) {
    if (!n.bound) continue;
    Tensor& pg = n.bound->grad;
    for (size_t i = 0; i < pg.v.size(); ++i) pg.v[i] += n.grad.v[i];
  }
}

Value masked_multitask_loss(Tape& tape, const std::vector<TaskLossTerm>& terms, double alpha) {
  if (terms.empty()) throw UsageError("masked_multitask_loss: no tasks");
  Value acc = tape.input(Tensor::scalar(0.0));
  bool any = false;
  for (size_t i = 0; i < terms.size(); ++i) {
    const TaskLossTerm& term = terms[i];
    bool empty = true;
    for (uint8_t m : term.mask)
      if (m) { empty = false; break; }
    if (empty) continue;  // contributes exactly zero loss and zero gradient
    any = true;
    Value li = term.kind == LossKind::cross_entropy
                   ? tape.cross_entropy_loss(term.pred, term.classes, term.mask)
                   : tape.loss(term.kind, term.pred, term.target, term.mask);
    acc = tape.axpy(acc, i == 0 ? 1.0 : alpha, li);
  }
  if (!any) throw UsageError("degenerate batch: every sample is masked for every task");
  return acc;
}

Value forward_dense(Tape& tape, ParameterSet& params, const Tensor& input, Activation act) {
  if (params.size() == 0 || params.size() % 2 != 0)
    throw ConfigError("forward_dense expects an even, non-empty (weight, bias) parameter list");
  Value h = tape.input(input);
  for (size_t i = 0; i + 1 < params.size(); i += 2) {
    const std::string label = "layer " + std::to_string(i / 2);
    Value w = tape.param(params[i]);
    Value b = tape.param(params[i + 1]);
    h = tape.activate(tape.linear(h, w, b, label), act);
  }
  return h;
}

}  // namespace mtl::ad
