#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtl/params.hpp"
#include "mtl/tape.hpp"
#include "mtl/tensor.hpp"

namespace mtl::model {

enum class TaskKind { regression, classification };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);

struct TaskHeadSpec {
  std::string name;
  TaskKind kind = TaskKind::regression;
  int64_t output_dim = 1;  // 1 for scalar regression, K classes otherwise
};

struct NetworkConfig {
  std::vector<int64_t> input_dims;  // one entry per modality
  std::vector<int64_t> backbone;    // hidden layer widths
  std::vector<TaskHeadSpec> heads;
  ad::Activation activation = ad::Activation::tanh;
  uint64_t init_seed = 0;
};

// Shared-backbone net over a single modality: input -> backbone stack
// (activation after every layer) -> one linear output layer per head.
// Regression heads emit raw values, classification heads emit logits.
struct MultiTaskNet {
  NetworkConfig config;
  ad::ParameterSet params;

  struct Layer {
    size_t w, b;  // indices into params
  };
  std::vector<Layer> backbone;
  struct Head {
    std::string name;
    TaskKind kind;
    int64_t dim;
    size_t w, b;
  };
  std::vector<Head> heads;
};

// Multi-modal variant: one single-layer encoder per modality, all emitting
// the fusion width; fused by elementwise addition, then activation, then a
// trunk shaped like the student backbone, then heads.
struct MultiModalTeacher {
  NetworkConfig config;
  ad::ParameterSet params;
  std::vector<MultiTaskNet::Layer> encoders;  // one per modality
  std::vector<MultiTaskNet::Layer> trunk;
  std::vector<MultiTaskNet::Head> heads;
};

MultiTaskNet build_student(const NetworkConfig& config);
MultiModalTeacher build_teacher(const NetworkConfig& config);

// Graph-building forward passes (for training).
std::vector<ad::Value> student_forward(ad::Tape& tape, MultiTaskNet& net, const Tensor& x);
std::vector<ad::Value> teacher_forward(ad::Tape& tape, MultiModalTeacher& net,
                                       const std::vector<Tensor>& inputs);

// Plain forward passes (no graph) for inference/evaluation.
std::vector<Tensor> predict(const MultiTaskNet& net, const Tensor& x);
std::vector<Tensor> predict(const MultiModalTeacher& net, const std::vector<Tensor>& inputs);

// Every parameter in the net, as one fingerprint (init + training state).
uint64_t fingerprint(const MultiTaskNet& net);
uint64_t fingerprint(const MultiModalTeacher& net);

// Checkpoints: structured text (JSON) holding the config and every named
// parameter array with exact value round-trip.
void save_checkpoint(const MultiTaskNet& net, const std::string& path);
void save_checkpoint(const MultiModalTeacher& net, const std::string& path);
MultiTaskNet load_student_checkpoint(const std::string& path);
MultiModalTeacher load_teacher_checkpoint(const std::string& path);

}  // namespace mtl::model
