#include "mtl/model.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "mtl/errors.hpp"
#include "mtl/kernels.hpp"
#include "mtl/rng.hpp"

namespace mtl::model {

using nlohmann::json;

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "regression") return TaskKind::regression;
  if (s == "classification") return TaskKind::classification;
  throw ConfigError("unknown task kind: " + s);
}

std::string to_string(TaskKind k) {
  return k == TaskKind::regression ? "regression" : "classification";
}

namespace {

void validate_common(const NetworkConfig& c) {
  if (c.backbone.empty()) throw ConfigError("backbone must have at least one layer");
  for (int64_t w : c.backbone)
    if (w < 1) throw ConfigError("backbone widths must be positive");
  if (c.heads.empty()) throw ConfigError("at least one task head required");
  std::set<std::string> names;
  for (const TaskHeadSpec& h : c.heads) {
    if (h.name.empty()) throw ConfigError("head names must be non-empty");
    if (!names.insert(h.name).second) throw ConfigError("duplicate head name: " + h.name);
    if (h.output_dim < 1) throw ConfigError("head '" + h.name + "' output_dim must be positive");
    if (h.kind == TaskKind::classification && h.output_dim < 2)
      throw ConfigError("classification head '" + h.name + "' needs output_dim >= 2");
  }
  for (int64_t d : c.input_dims)
    if (d < 1) throw ConfigError("modality input dims must be positive");
}

// Scaled-uniform fan-in init: weights U(+-sqrt(1/fan_in)), biases zero.
Tensor init_weight(Rng& rng, int64_t fan_in, int64_t fan_out) {
  Tensor w = Tensor::zeros({fan_in, fan_out});
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& x : w.v) x = rng.uniform(-bound, bound);
  return w;
}

MultiTaskNet::Layer add_layer(ad::ParameterSet& params, Rng& rng, const std::string& prefix,
                              int64_t fan_in, int64_t fan_out) {
  MultiTaskNet::Layer l;
  params.add(prefix + "/w", init_weight(rng, fan_in, fan_out));
  l.w = params.size() - 1;
  params.add(prefix + "/b", Tensor::zeros({1, fan_out}));
  l.b = params.size() - 1;
  return l;
}

std::vector<MultiTaskNet::Head> add_heads(ad::ParameterSet& params, Rng& rng,
                                          const NetworkConfig& c, int64_t feature_width) {
  std::vector<MultiTaskNet::Head> heads;
  for (const TaskHeadSpec& spec : c.heads) {
    MultiTaskNet::Layer l = add_layer(params, rng, "head/" + spec.name, feature_width,
                                      spec.output_dim);
    heads.push_back({spec.name, spec.kind, spec.output_dim, l.w, l.b});
  }
  return heads;
}

}  // namespace

MultiTaskNet build_student(const NetworkConfig& config) {
  validate_common(config);
  if (config.input_dims.size() != 1)
    throw ConfigError("student networks are uni-modal: expected exactly 1 modality, got " +
                      std::to_string(config.input_dims.size()));
  MultiTaskNet net;
  net.config = config;
  Rng rng(config.init_seed);
  int64_t width = config.input_dims[0];
  for (size_t l = 0; l < config.backbone.size(); ++l) {
    net.backbone.push_back(add_layer(net.params, rng, "backbone/" + std::to_string(l), width,
                                     config.backbone[l]));
    width = config.backbone[l];
  }
  net.heads = add_heads(net.params, rng, config, width);
  return net;
}

MultiModalTeacher build_teacher(const NetworkConfig& config) {
  validate_common(config);
  if (config.input_dims.size() < 2)
    throw ConfigError("teacher networks are multi-modal: expected >= 2 modalities, got " +
                      std::to_string(config.input_dims.size()));
  MultiModalTeacher net;
  net.config = config;
  Rng rng(config.init_seed);
  const int64_t fusion = config.backbone[0];
  for (size_t m = 0; m < config.input_dims.size(); ++m)
    net.encoders.push_back(add_layer(net.params, rng, "encoder/" + std::to_string(m),
                                     config.input_dims[m], fusion));
  int64_t width = fusion;
  for (size_t l = 0; l < config.backbone.size(); ++l) {
    net.trunk.push_back(add_layer(net.params, rng, "trunk/" + std::to_string(l), width,
                                  config.backbone[l]));
    width = config.backbone[l];
  }
  net.heads = add_heads(net.params, rng, config, width);
  return net;
}

std::vector<ad::Value> student_forward(ad::Tape& tape, MultiTaskNet& net, const Tensor& x) {
  if (x.shape.size() != 2 || x.shape[1] != net.config.input_dims[0])
    throw DimensionError("student input must be [n," +
                         std::to_string(net.config.input_dims[0]) + "], got " + x.shape_str());
  ad::Value h = tape.input(x);
  for (size_t l = 0; l < net.backbone.size(); ++l) {
    const MultiTaskNet::Layer& layer = net.backbone[l];
    h = tape.activate(tape.linear(h, tape.param(net.params[layer.w]),
                                  tape.param(net.params[layer.b]),
                                  "backbone layer " + std::to_string(l)),
                      net.config.activation);
  }
  std::vector<ad::Value> outs;
  for (const MultiTaskNet::Head& head : net.heads)
    outs.push_back(tape.linear(h, tape.param(net.params[head.w]),
                               tape.param(net.params[head.b]), "head " + head.name));
  return outs;
}

std::vector<ad::Value> teacher_forward(ad::Tape& tape, MultiModalTeacher& net,
                                       const std::vector<Tensor>& inputs) {
  if (inputs.size() != net.encoders.size())
    throw UsageError("teacher expects " + std::to_string(net.encoders.size()) +
                     " modalities, got " + std::to_string(inputs.size()));
  ad::Value fused;
  for (size_t m = 0; m < inputs.size(); ++m) {
    if (inputs[m].shape.size() != 2 || inputs[m].shape[1] != net.config.input_dims[m])
      throw DimensionError("modality " + std::to_string(m) + " must be [n," +
                           std::to_string(net.config.input_dims[m]) + "], got " +
                           inputs[m].shape_str());
    const MultiTaskNet::Layer& enc = net.encoders[m];
    ad::Value e = tape.linear(tape.input(inputs[m]), tape.param(net.params[enc.w]),
                              tape.param(net.params[enc.b]),
                              "encoder " + std::to_string(m));
    fused = m == 0 ? e : tape.add(fused, e);
  }
  ad::Value h = tape.activate(fused, net.config.activation);
  for (size_t l = 0; l < net.trunk.size(); ++l) {
    const MultiTaskNet::Layer& layer = net.trunk[l];
    h = tape.activate(tape.linear(h, tape.param(net.params[layer.w]),
                                  tape.param(net.params[layer.b]),
                                  "trunk layer " + std::to_string(l)),
                      net.config.activation);
  }
  std::vector<ad::Value> outs;
  for (const MultiTaskNet::Head& head : net.heads)
    outs.push_back(tape.linear(h, tape.param(net.params[head.w]),
                               tape.param(net.params[head.b]), "head " + head.name));
  return outs;
}

namespace {

// Forward one dense layer outside any tape.
Tensor apply_layer(const Tensor& x, const ad::Parameter& w, const ad::Parameter& b) {
  const int64_t n = x.shape[0], in = x.shape[1], out = w.value.shape[1];
  if (w.value.shape[0] != in)
    throw DimensionError("layer '" + w.name + "': input width " + std::to_string(in) +
                         " does not match weight rows " + std::to_string(w.value.shape[0]));
  Tensor y = Tensor::zeros({n, out});
  kernels::linear_forward(x.v.data(), w.value.v.data(), b.value.v.data(), y.v.data(), n, in,
                          out);
  return y;
}

void apply_activation(Tensor& t, ad::Activation act) {
  if (act == ad::Activation::tanh)
    for (double& x : t.v) x = std::tanh(x);
  else if (act == ad::Activation::relu)
    for (double& x : t.v) x = x > 0.0 ? x : 0.0;
}

std::vector<Tensor> head_outputs(const Tensor& h, const ad::ParameterSet& params,
                                 const std::vector<MultiTaskNet::Head>& heads) {
  std::vector<Tensor> outs;
  for (const MultiTaskNet::Head& head : heads)
    outs.push_back(apply_layer(h, params[head.w], params[head.b]));
  return outs;
}

}  // namespace

std::vector<Tensor> predict(const MultiTaskNet& net, const Tensor& x) {
  if (x.shape.size() != 2 || x.shape[1] != net.config.input_dims[0])
    throw DimensionError("student input must be [n," +
                         std::to_string(net.config.input_dims[0]) + "], got " + x.shape_str());
  Tensor h = x;
  for (const MultiTaskNet::Layer& layer : net.backbone) {
    h = apply_layer(h, net.params[layer.w], net.params[layer.b]);
    apply_activation(h, net.config.activation);
  }
  return head_outputs(h, net.params, net.heads);
}

std::vector<Tensor> predict(const MultiModalTeacher& net, const std::vector<Tensor>& inputs) {
  if (inputs.size() != net.encoders.size())
    throw UsageError("teacher expects " + std::to_string(net.encoders.size()) +
                     " modalities, got " + std::to_string(inputs.size()));
  Tensor fused;
  for (size_t m = 0; m < inputs.size(); ++m) {
    if (inputs[m].shape.size() != 2 || inputs[m].shape[1] != net.config.input_dims[m])
      throw DimensionError("modality " + std::to_string(m) + " must be [n," +
                           std::to_string(net.config.input_dims[m]) + "], got " +
                           inputs[m].shape_str());
    Tensor e = apply_layer(inputs[m], net.params[net.encoders[m].w],
                           net.params[net.encoders[m].b]);
    if (m == 0) {
      fused = std::move(e);
    } else {
      if (!fused.same_shape(e)) throw DimensionError("modality batch sizes disagree");
      for (size_t i = 0; i < fused.v.size(); ++i) fused.v[i] += e.v[i];
    }
  }
  apply_activation(fused, net.config.activation);
  Tensor h = std::move(fused);
  for (const MultiTaskNet::Layer& layer : net.trunk) {
    h = apply_layer(h, net.params[layer.w], net.params[layer.b]);
    apply_activation(h, net.config.activation);
  }
  return head_outputs(h, net.params, net.heads);
}

uint64_t fingerprint(const MultiTaskNet& net) { return ad::fingerprint(net.params); }
uint64_t fingerprint(const MultiModalTeacher& net) { return ad::fingerprint(net.params); }

namespace {

json config_to_json(const NetworkConfig& c) {
  json heads = json::array();
  for (const TaskHeadSpec& h : c.heads)
    heads.push_back({{"name", h.name}, {"kind", to_string(h.kind)}, {"output_dim", h.output_dim}});
  return {{"input_dims", c.input_dims},
          {"backbone", c.backbone},
          {"heads", heads},
          {"activation", ad::to_string(c.activation)},
          {"init_seed", c.init_seed}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.input_dims = j.at("input_dims").get<std::vector<int64_t>>();
  c.backbone = j.at("backbone").get<std::vector<int64_t>>();
  for (const json& h : j.at("heads"))
    c.heads.push_back({h.at("name").get<std::string>(),
                       task_kind_from_string(h.at("kind").get<std::string>()),
                       h.at("output_dim").get<int64_t>()});
  c.activation = ad::activation_from_string(j.at("activation").get<std::string>());
  c.init_seed = j.at("init_seed").get<uint64_t>();
  return c;
}

void save_params(const ad::ParameterSet& params, const NetworkConfig& config,
                 const std::string& kind, const std::string& path) {
  json doc;
  doc["format_version"] = 1;
  doc["kind"] = kind;
  doc["config"] = config_to_json(config);
  json arr = json::array();
  for (const ad::Parameter& p : params)
    arr.push_back({{"name", p.name}, {"shape", p.value.shape}, {"values", p.value.v}});
  doc["params"] = std::move(arr);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << doc.dump(2) << "\n";
}

json load_doc(const std::string& path, const std::string& expected_kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  json doc = json::parse(in);
  if (doc.at("format_version").get<int>() != 1)
    throw ConfigError("unsupported checkpoint format_version");
  if (doc.at("kind").get<std::string>() != expected_kind)
    throw ConfigError("checkpoint holds a " + doc.at("kind").get<std::string>() + ", expected " +
                      expected_kind);
  return doc;
}

void restore_params(ad::ParameterSet& params, const json& doc) {
  const json& arr = doc.at("params");
  if (arr.size() != params.size()) throw IntegrityError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const json& e = arr[i];
    if (e.at("name").get<std::string>() != params[i].name)
      throw IntegrityError("checkpoint parameter order mismatch at '" + params[i].name + "'");
    auto shape = e.at("shape").get<std::vector<int64_t>>();
    if (shape != params[i].value.shape)
      throw IntegrityError("checkpoint shape mismatch for '" + params[i].name + "'");
    params[i].value.v = e.at("values").get<std::vector<double>>();
  }
}

}  // namespace

void save_checkpoint(const MultiTaskNet& net, const std::string& path) {
  save_params(net.params, net.config, "student", path);
}

void save_checkpoint(const MultiModalTeacher& net, const std::string& path) {
  save_params(net.params, net.config, "teacher", path);
}

MultiTaskNet load_student_checkpoint(const std::string& path) {
  json doc = load_doc(path, "student");
  MultiTaskNet net = build_student(config_from_json(doc.at("config")));
  restore_params(net.params, doc);
  return net;
}

MultiModalTeacher load_teacher_checkpoint(const std::string& path) {
  json doc = load_doc(path, "teacher");
  MultiModalTeacher net = build_teacher(config_from_json(doc.at("config")));
  restore_params(net.params, doc);
  return net;
}

}  // namespace mtl::model
