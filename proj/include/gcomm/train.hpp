#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gcomm/engine.hpp"
#include "gcomm/model.hpp"

namespace gcomm::train {

enum class TaskKind { linreg, logreg, mlp };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind kind);

// A synthetic training task: Gaussian class blobs for the classifiers, a
// random linear teacher for regression.  Everything is derived from the two
// seeds, so a task spec fully determines the run.
struct TaskSpec {
  TaskKind kind = TaskKind::logreg;
  std::size_t features = 2048;
  std::size_t classes = 2;   // classifiers only
  std::size_t hidden = 128;  // mlp only
  std::size_t train_examples = 4096;
  std::size_t test_examples = 1024;
  double noise = 1.0;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch = 256;  // global; split evenly across nodes
  std::size_t steps = 600;
  std::uint64_t data_seed = 1;
  std::uint64_t init_seed = 2;

  void validate(std::size_t nodes) const;
  model::ModelSpec model_spec() const;

  static TaskSpec from_json(const std::string& text);
  std::string to_json() const;
};

struct Dataset {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::vector<float> x;        // examples * features, row major
  std::vector<int> labels;     // classifiers
  std::vector<float> targets;  // regression

  std::size_t size() const { return features ? x.size() / features : 0; }
};

// `example_seed` separates draws (train vs. test); the class centers and the
// regression teacher come from task.data_seed and are shared by both splits.
Dataset make_dataset(const TaskSpec& task, std::size_t examples,
                     std::uint64_t example_seed);

using TensorList = std::vector<model::GradientTensor>;

TensorList init_parameters(const TaskSpec& task);

struct ShardResult {
  TensorList gradients;  // mean over the shard, one tensor per model layer
  double loss = 0.0;
};

// Gradient of the mean loss over the given examples.  Both the data-parallel
// driver and the single-process reference call this, so their shard algebra
// is identical by construction.
ShardResult shard_gradients(const TaskSpec& task, const Dataset& data,
                            const TensorList& params,
                            std::span<const std::size_t> examples);

// The step's global batch; node n owns the contiguous slice of batch/N.
std::vector<std::size_t> batch_indices(const TaskSpec& task, std::uint64_t step);

void apply_update(TensorList& params, TensorList& velocity,
                  const TensorList& gradients, const TaskSpec& task);

// Classification: test accuracy in [0, 1].  Regression: negative mean squared
// error, so bigger is better for every kind.
double evaluate(const TaskSpec& task, const Dataset& data, const TensorList& params);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> series;
  double final_loss = 0.0;
  double final_metric = 0.0;
  bool diverged = false;
  std::size_t divergence_step = 0;
  TensorList parameters;
  simnet::StepTrace trace;  // zero for the single-process reference
  std::vector<engine::PlanSwap> plan_history;
  std::string events;  // engine event log, json lines
};

// Synchronous data-parallel SGD through the engine: every node grinds its
// shard, gradients reduce under the engine's plan, and the shared update is
// applied to one replica (the barrier keeps all replicas identical, which the
// driver checks every step).
TrainResult train_data_parallel(const TaskSpec& task,
                                const engine::EngineConfig& engine_config,
                                const simnet::SimNetConfig& net_config);

// The same schedule without an engine: shard gradients folded in ascending
// node order and divided by the node count, matching the lossless collective
// arithmetic exactly.
TrainResult train_single_process(const TaskSpec& task, std::size_t nodes);

}  // namespace gcomm::train
