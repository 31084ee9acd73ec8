#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "gcomm/train.hpp"
#include "gcomm/util.hpp"

using namespace gcomm;
using namespace gcomm::train;

namespace {

simnet::SimNetConfig net_for(std::size_t nodes) {
  simnet::SimNetConfig net;
  net.nodes = nodes;
  return net;
}

engine::EngineConfig lossless_engine(std::size_t nodes) {
  engine::EngineConfig cfg;
  cfg.nodes = nodes;
  cfg.plan.defaults.mode = model::CodecMode::uncompressed;
  return cfg;
}

TaskSpec tiny_task(TaskKind kind) {
  TaskSpec task;
  task.kind = kind;
  task.features = 5;
  task.classes = 3;
  task.hidden = 6;
  task.train_examples = 12;
  task.test_examples = 8;
  task.batch = 4;
  task.steps = 3;
  task.noise = 0.5;
  return task;
}

// loss as a function of one nudged parameter, for finite differences
double loss_at(const TaskSpec& task, const Dataset& data, TensorList params,
               const std::vector<std::size_t>& examples, std::size_t tensor,
               std::size_t index, float delta) {
  params[tensor].values[index] += delta;
  return shard_gradients(task, data, params, examples).loss;
}

void check_gradients(TaskKind kind) {
  const TaskSpec task = tiny_task(kind);
  const Dataset data = make_dataset(task, task.train_examples, 99);
  TensorList params = init_parameters(task);
  // move off the all-zeros saddle so every gradient path is exercised
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t].values.size(); ++i)
      params[t].values[i] += 0.3f * normal01(1234 + t, i);

  std::vector<std::size_t> examples(task.train_examples);
  std::iota(examples.begin(), examples.end(), 0);
  const ShardResult result = shard_gradients(task, data, params, examples);

  const float h = 1e-2f;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const std::size_t count = params[t].values.size();
    for (std::size_t probe = 0; probe < 5; ++probe) {
      const std::size_t i = (probe * 37) % count;
      const double up = loss_at(task, data, params, examples, t, i, h);
      const double down = loss_at(task, data, params, examples, t, i, -h);
      const double numeric = (up - down) / (2.0 * double(h));
      const double analytic = result.gradients[t].values[i];
      CHECK(std::abs(numeric - analytic) <=
            5e-3 * std::max(1.0, std::abs(analytic)));
    }
  }
}

}  // namespace

TEST_CASE("analytic gradients match finite differences") {
  check_gradients(TaskKind::linreg);
  check_gradients(TaskKind::logreg);
  check_gradients(TaskKind::mlp);
}

TEST_CASE("datasets are deterministic and structurally sound") {
  TaskSpec task;
  task.features = 16;
  task.classes = 4;
  const Dataset a = make_dataset(task, 64, 7);
  const Dataset b = make_dataset(task, 64, 7);
  const Dataset c = make_dataset(task, 64, 8);
  CHECK(a.x == b.x);
  CHECK(a.labels == b.labels);
  CHECK(a.x != c.x);
  CHECK(a.size() == 64);
  for (int label : a.labels) {
    CHECK(label >= 0);
    CHECK(label < 4);
  }

  task.kind = TaskKind::linreg;
  const Dataset r = make_dataset(task, 32, 7);
  CHECK(r.targets.size() == 32);
  for (float t : r.targets) CHECK(std::isfinite(t));
  // same teacher, fresh draws: test split differs but stays on the same task
  const Dataset r2 = make_dataset(task, 32, 8);
  CHECK(r.x != r2.x);
}

TEST_CASE("batch indices are deterministic, in range, and shardable") {
  TaskSpec task;
  task.batch = 32;
  task.train_examples = 100;
  const auto a = batch_indices(task, 5);
  const auto b = batch_indices(task, 5);
  const auto c = batch_indices(task, 6);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 32);
  for (std::size_t idx : a) CHECK(idx < 100);

  CHECK_THROWS_AS(task.validate(5), std::invalid_argument);  // 32 % 5 != 0
  CHECK_NOTHROW(task.validate(4));
}

TEST_CASE("task specs round trip through json and reject bad values") {
  TaskSpec task;
  task.kind = TaskKind::mlp;
  task.features = 40;
  task.hidden = 20;
  task.classes = 5;
  task.lr = 0.01;
  task.momentum = 0.8;
  const TaskSpec back = TaskSpec::from_json(task.to_json());
  CHECK(back.kind == TaskKind::mlp);
  CHECK(back.features == 40);
  CHECK(back.hidden == 20);
  CHECK(back.lr == doctest::Approx(0.01));
  CHECK(back.momentum == doctest::Approx(0.8));

  CHECK_THROWS_AS(TaskSpec::from_json("{\"kind\":\"resnet\"}"),
                  std::invalid_argument);
  TaskSpec bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(1), std::invalid_argument);
  bad = TaskSpec{};
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(1), std::invalid_argument);
  bad = TaskSpec{};
  bad.classes = 1;
  CHECK_THROWS_AS(bad.validate(1), std::invalid_argument);
}

TEST_CASE("the lossless engine walks the exact single-process trajectory") {
  TaskSpec task;
  task.features = 64;
  task.classes = 2;
  task.train_examples = 256;
  task.test_examples = 128;
  task.batch = 64;
  task.steps = 30;
  task.lr = 0.1;

  const TrainResult parallel =
      train_data_parallel(task, lossless_engine(4), net_for(4));
  const TrainResult reference = train_single_process(task, 4);

  REQUIRE(parallel.parameters.size() == reference.parameters.size());
  for (std::size_t t = 0; t < parallel.parameters.size(); ++t)
    CHECK(parallel.parameters[t].values == reference.parameters[t].values);
  REQUIRE(parallel.series.size() == reference.series.size());
  for (std::size_t s = 0; s < parallel.series.size(); ++s)
    CHECK(parallel.series[s].loss == reference.series[s].loss);
  CHECK(parallel.final_metric == reference.final_metric);
  CHECK(parallel.trace.total_bytes_sent() > 0);
  CHECK(reference.trace.total_bytes_sent() == 0);
}

TEST_CASE("quantized training lands near the lossless run") {
  TaskSpec task;
  task.features = 2048;
  task.classes = 2;
  task.train_examples = 512;
  task.test_examples = 256;
  task.batch = 64;
  task.steps = 60;
  task.lr = 0.1;

  engine::EngineConfig lossy;
  lossy.nodes = 4;  // quantize 4/128 defaults
  const TrainResult compressed =
      train_data_parallel(task, lossy, net_for(4));
  const TrainResult baseline = train_single_process(task, 4);

  CHECK_FALSE(compressed.diverged);
  CHECK(compressed.final_metric > 0.8);  // solidly above chance
  CHECK(std::abs(compressed.final_metric - baseline.final_metric) < 0.05);
  // 4-bit payloads plus uncompressed bias: far below the raw f32 volume
  CHECK(compressed.trace.total_bytes_sent() <
        baseline.parameters[0].values.size() * 4 * 4 * 2 * task.steps);
}

TEST_CASE("blown-up learning rates are reported as divergence") {
  TaskSpec task;
  task.kind = TaskKind::linreg;
  task.features = 32;
  task.train_examples = 64;
  task.test_examples = 16;
  task.batch = 16;
  task.steps = 50;
  task.lr = 1e12;

  const TrainResult result = train_single_process(task, 2);
  CHECK(result.diverged);
  CHECK(result.divergence_step < 50);
  CHECK(result.series.size() == result.divergence_step + 1);
}

TEST_CASE("training runs are reproducible and seed-sensitive") {
  TaskSpec task;
  task.features = 48;
  task.classes = 3;
  task.train_examples = 128;
  task.test_examples = 64;
  task.batch = 32;
  task.steps = 20;

  const TrainResult a = train_single_process(task, 2);
  const TrainResult b = train_single_process(task, 2);
  task.data_seed = 77;
  const TrainResult c = train_single_process(task, 2);
  for (std::size_t t = 0; t < a.parameters.size(); ++t)
    CHECK(a.parameters[t].values == b.parameters[t].values);
  CHECK(a.parameters[0].values != c.parameters[0].values);
}

TEST_CASE("adaptive training cuts traffic against the static reference") {
  TaskSpec task;
  task.kind = TaskKind::mlp;
  task.features = 64;
  task.hidden = 64;
  task.classes = 4;
  task.train_examples = 512;
  task.test_examples = 128;
  task.batch = 64;
  task.steps = 25;
  task.lr = 0.05;

  engine::EngineConfig fixed;
  fixed.nodes = 4;
  fixed.filters.min_elements = 256;

  engine::EngineConfig adapt = fixed;
  adapt.plan_source = engine::PlanSource::adaptive;
  adapt.adaptive.method = "linear";
  adapt.adaptive.palette = {2, 8};
  adapt.adaptive.alpha = 1e9;  // accept whatever the ranking proposes
  adapt.adaptive.stats_period = 10;
  adapt.adaptive.stats_window = 2;

  const TrainResult fixed_run = train_data_parallel(task, fixed, net_for(4));
  const TrainResult adaptive_run = train_data_parallel(task, adapt, net_for(4));

  CHECK_FALSE(adaptive_run.diverged);
  REQUIRE_FALSE(adaptive_run.plan_history.empty());
  // the wide fc1 kernel is the low-information layer: it should take the
  // narrow width, and overall traffic should drop
  CHECK(adaptive_run.plan_history[0].decision.bits.at("fc1.w") == 2);
  CHECK(adaptive_run.trace.total_bytes_sent() <
        fixed_run.trace.total_bytes_sent());
  CHECK(std::isfinite(adaptive_run.final_metric));
}
