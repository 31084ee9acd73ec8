#include "gcomm/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "gcomm/util.hpp"

namespace gcomm::train {

using json = nlohmann::json;

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "linreg") return TaskKind::linreg;
  if (s == "logreg") return TaskKind::logreg;
  if (s == "mlp") return TaskKind::mlp;
  throw std::invalid_argument("unknown task kind: " + s);
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::linreg: return "linreg";
    case TaskKind::logreg: return "logreg";
    case TaskKind::mlp: return "mlp";
  }
  return "logreg";
}

void TaskSpec::validate(std::size_t nodes) const {
  if (nodes < 1) throw std::invalid_argument("task needs at least one node");
  if (features < 1) throw std::invalid_argument("task needs at least one feature");
  if (kind != TaskKind::linreg && classes < 2)
    throw std::invalid_argument("classification needs at least two classes");
  if (kind == TaskKind::mlp && hidden < 1)
    throw std::invalid_argument("perceptron needs a hidden width");
  if (train_examples < 1 || test_examples < 1)
    throw std::invalid_argument("datasets must not be empty");
  if (batch < 1) throw std::invalid_argument("batch must be positive");
  if (batch % nodes != 0)
    throw std::invalid_argument("global batch must split evenly across nodes");
  if (steps < 1) throw std::invalid_argument("need at least one step");
  if (!(noise >= 0.0) || !std::isfinite(noise))
    throw std::invalid_argument("noise must be finite and >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0) || momentum >= 1.0)
    throw std::invalid_argument("momentum must lie in [0, 1)");
}

model::ModelSpec TaskSpec::model_spec() const {
  model::ModelSpec spec;
  auto add = [&spec](const std::string& name, std::size_t elements,
                     model::LayerKind kind) {
    spec.layers.push_back({name, elements, kind});
  };
  switch (kind) {
    case TaskKind::linreg:
      add("linear.w", features, model::LayerKind::weight);
      add("linear.b", 1, model::LayerKind::bias);
      break;
    case TaskKind::logreg:
      add("linear.w", features * classes, model::LayerKind::weight);
      add("linear.b", classes, model::LayerKind::bias);
      break;
    case TaskKind::mlp:
      add("fc1.w", features * hidden, model::LayerKind::weight);
      add("fc1.b", hidden, model::LayerKind::bias);
      add("fc2.w", hidden * classes, model::LayerKind::weight);
      add("fc2.b", classes, model::LayerKind::bias);
      break;
  }
  spec.validate();
  return spec;
}

TaskSpec TaskSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  TaskSpec task;
  if (j.contains("kind")) task.kind = task_kind_from_string(j.at("kind"));
  task.features = j.value("features", task.features);
  task.classes = j.value("classes", task.classes);
  task.hidden = j.value("hidden", task.hidden);
  task.train_examples = j.value("train_examples", task.train_examples);
  task.test_examples = j.value("test_examples", task.test_examples);
  task.noise = j.value("noise", task.noise);
  task.lr = j.value("lr", task.lr);
  task.momentum = j.value("momentum", task.momentum);
  task.batch = j.value("batch", task.batch);
  task.steps = j.value("steps", task.steps);
  task.data_seed = j.value("data_seed", task.data_seed);
  task.init_seed = j.value("init_seed", task.init_seed);
  return task;
}

std::string TaskSpec::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["features"] = features;
  j["classes"] = classes;
  j["hidden"] = hidden;
  j["train_examples"] = train_examples;
  j["test_examples"] = test_examples;
  j["noise"] = noise;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["batch"] = batch;
  j["steps"] = steps;
  j["data_seed"] = data_seed;
  j["init_seed"] = init_seed;
  return j.dump();
}

Dataset make_dataset(const TaskSpec& task, std::size_t examples,
                     std::uint64_t example_seed) {
  Dataset data;
  data.features = task.features;
  const std::size_t F = task.features;
  data.x.resize(examples * F);

  if (task.kind == TaskKind::linreg) {
    // random linear teacher with unit-variance targets plus noise
    data.classes = 1;
    data.targets.resize(examples);
    const std::uint64_t teacher_seed = hash_combine(task.data_seed, 0x7e);
    const std::uint64_t x_seed = hash_combine(example_seed, 0x3c);
    const std::uint64_t noise_seed = hash_combine(example_seed, 0x2b);
    const float scale = 1.0f / std::sqrt(float(F));
    for (std::size_t i = 0; i < examples; ++i) {
      double acc = 0.0;
      for (std::size_t f = 0; f < F; ++f) {
        const float v = normal01(x_seed, i * F + f);
        data.x[i * F + f] = v;
        acc += double(v) * double(normal01(teacher_seed, f) * scale);
      }
      data.targets[i] = static_cast<float>(
          acc + task.noise * normal01(noise_seed, i));
    }
    return data;
  }

  // Gaussian blobs: one standard-normal center per class, examples scattered
  // around their center
  data.classes = task.classes;
  data.labels.resize(examples);
  const std::uint64_t centers_seed = hash_combine(task.data_seed, 0xc0);
  const std::uint64_t label_seed = hash_combine(example_seed, 0x1a);
  const std::uint64_t noise_seed = hash_combine(example_seed, 0x2b);
  for (std::size_t i = 0; i < examples; ++i) {
    const std::size_t label = std::min<std::size_t>(
        task.classes - 1,
        static_cast<std::size_t>(uniform01(label_seed, i, 0) * task.classes));
    data.labels[i] = static_cast<int>(label);
    for (std::size_t f = 0; f < F; ++f)
      data.x[i * F + f] =
          normal01(centers_seed, label * F + f) +
          float(task.noise) * normal01(noise_seed, i * F + f);
  }
  return data;
}

TensorList init_parameters(const TaskSpec& task) {
  const model::ModelSpec spec = task.model_spec();
  TensorList params;
  for (const auto& layer : spec.layers)
    params.push_back({layer, std::vector<float>(layer.elements, 0.0f)});

  if (task.kind == TaskKind::mlp) {
    // zero init keeps a perceptron stuck; scaled-normal weights break the tie
    const float s1 = std::sqrt(2.0f / float(task.features));
    const float s2 = std::sqrt(2.0f / float(task.hidden));
    for (std::size_t i = 0; i < params[0].values.size(); ++i)
      params[0].values[i] = normal01(hash_combine(task.init_seed, 1), i) * s1;
    for (std::size_t i = 0; i < params[2].values.size(); ++i)
      params[2].values[i] = normal01(hash_combine(task.init_seed, 2), i) * s2;
  }
  return params;
}

namespace {

// softmax cross-entropy on logits z, dz overwritten in place
double softmax_loss_grad(std::vector<float>& z, int label) {
  float m = z[0];
  for (float v : z) m = std::max(m, v);
  float total = 0.0f;
  for (float& v : z) {
    v = std::exp(v - m);
    total += v;
  }
  const double loss = std::log(double(total)) - std::log(double(z[label]));
  for (std::size_t k = 0; k < z.size(); ++k)
    z[k] = z[k] / total - (int(k) == label ? 1.0f : 0.0f);
  return loss;
}

}  // namespace

ShardResult shard_gradients(const TaskSpec& task, const Dataset& data,
                            const TensorList& params,
                            std::span<const std::size_t> examples) {
  if (examples.empty()) throw std::invalid_argument("empty gradient shard");
  const std::size_t F = task.features;

  ShardResult result;
  result.gradients.reserve(params.size());
  for (const auto& p : params)
    result.gradients.push_back({p.layer, std::vector<float>(p.values.size(), 0.0f)});

  double loss_sum = 0.0;

  if (task.kind == TaskKind::linreg) {
    const auto& w = params[0].values;
    const float b = params[1].values[0];
    auto& gw = result.gradients[0].values;
    auto& gb = result.gradients[1].values;
    for (std::size_t idx : examples) {
      const float* x = data.x.data() + idx * F;
      float pred = b;
      for (std::size_t f = 0; f < F; ++f) pred += x[f] * w[f];
      const float err = pred - data.targets[idx];
      loss_sum += 0.5 * double(err) * double(err);
      for (std::size_t f = 0; f < F; ++f) gw[f] += err * x[f];
      gb[0] += err;
    }
  } else if (task.kind == TaskKind::logreg) {
    const std::size_t K = task.classes;
    const auto& w = params[0].values;
    const auto& b = params[1].values;
    auto& gw = result.gradients[0].values;
    auto& gb = result.gradients[1].values;
    std::vector<float> z(K);
    for (std::size_t idx : examples) {
      const float* x = data.x.data() + idx * F;
      for (std::size_t k = 0; k < K; ++k) z[k] = b[k];
      for (std::size_t f = 0; f < F; ++f) {
        const float xv = x[f];
        const float* row = w.data() + f * K;
        for (std::size_t k = 0; k < K; ++k) z[k] += xv * row[k];
      }
      loss_sum += softmax_loss_grad(z, data.labels[idx]);
      for (std::size_t f = 0; f < F; ++f) {
        const float xv = x[f];
        float* row = gw.data() + f * K;
        for (std::size_t k = 0; k < K; ++k) row[k] += xv * z[k];
      }
      for (std::size_t k = 0; k < K; ++k) gb[k] += z[k];
    }
  } else {
    const std::size_t H = task.hidden, K = task.classes;
    const auto& w1 = params[0].values;
    const auto& b1 = params[1].values;
    const auto& w2 = params[2].values;
    const auto& b2 = params[3].values;
    auto& gw1 = result.gradients[0].values;
    auto& gb1 = result.gradients[1].values;
    auto& gw2 = result.gradients[2].values;
    auto& gb2 = result.gradients[3].values;
    std::vector<float> pre(H), h(H), z(K), dh(H);
    for (std::size_t idx : examples) {
      const float* x = data.x.data() + idx * F;
      for (std::size_t j = 0; j < H; ++j) pre[j] = b1[j];
      for (std::size_t f = 0; f < F; ++f) {
        const float xv = x[f];
        const float* row = w1.data() + f * H;
        for (std::size_t j = 0; j < H; ++j) pre[j] += xv * row[j];
      }
      for (std::size_t j = 0; j < H; ++j) h[j] = pre[j] > 0.0f ? pre[j] : 0.0f;
      for (std::size_t k = 0; k < K; ++k) z[k] = b2[k];
      for (std::size_t j = 0; j < H; ++j) {
        const float hv = h[j];
        if (hv == 0.0f) continue;
        const float* row = w2.data() + j * K;
        for (std::size_t k = 0; k < K; ++k) z[k] += hv * row[k];
      }
      loss_sum += softmax_loss_grad(z, data.labels[idx]);
      for (std::size_t j = 0; j < H; ++j) {
        const float hv = h[j];
        float* row = gw2.data() + j * K;
        const float* w2row = w2.data() + j * K;
        float d = 0.0f;
        for (std::size_t k = 0; k < K; ++k) {
          row[k] += hv * z[k];
          d += w2row[k] * z[k];
        }
        dh[j] = pre[j] > 0.0f ? d : 0.0f;
      }
      for (std::size_t k = 0; k < K; ++k) gb2[k] += z[k];
      for (std::size_t f = 0; f < F; ++f) {
        const float xv = x[f];
        float* row = gw1.data() + f * H;
        for (std::size_t j = 0; j < H; ++j) row[j] += xv * dh[j];
      }
      for (std::size_t j = 0; j < H; ++j) gb1[j] += dh[j];
    }
  }

  const float m = float(examples.size());
  for (auto& g : result.gradients)
    for (float& v : g.values) v /= m;
  result.loss = loss_sum / double(examples.size());
  return result;
}

std::vector<std::size_t> batch_indices(const TaskSpec& task, std::uint64_t step) {
  const std::uint64_t seed = hash_combine(task.data_seed, 0xba);
  std::vector<std::size_t> indices(task.batch);
  for (std::size_t j = 0; j < task.batch; ++j)
    indices[j] = std::min<std::size_t>(
        task.train_examples - 1,
        static_cast<std::size_t>(uniform01(seed, step, j) *
                                 double(task.train_examples)));
  return indices;
}

void apply_update(TensorList& params, TensorList& velocity,
                  const TensorList& gradients, const TaskSpec& task) {
  const float mu = float(task.momentum), lr = float(task.lr);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].values;
    auto& v = velocity[t].values;
    const auto& g = gradients[t].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

double evaluate(const TaskSpec& task, const Dataset& data, const TensorList& params) {
  const std::size_t n = data.size();
  const std::size_t F = task.features;
  if (task.kind == TaskKind::linreg) {
    const auto& w = params[0].values;
    const float b = params[1].values[0];
    double err2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* x = data.x.data() + i * F;
      float pred = b;
      for (std::size_t f = 0; f < F; ++f) pred += x[f] * w[f];
      const double e = double(pred) - double(data.targets[i]);
      err2 += e * e;
    }
    return -err2 / double(n);
  }

  const std::size_t K = task.classes;
  std::vector<float> z(K), h;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* x = data.x.data() + i * F;
    if (task.kind == TaskKind::logreg) {
      const auto& w = params[0].values;
      const auto& b = params[1].values;
      for (std::size_t k = 0; k < K; ++k) z[k] = b[k];
      for (std::size_t f = 0; f < F; ++f) {
        const float xv = x[f];
        const float* row = w.data() + f * K;
        for (std::size_t k = 0; k < K; ++k) z[k] += xv * row[k];
      }
    } else {
      const std::size_t H = task.hidden;
      h.assign(H, 0.0f);
      const auto& w1 = params[0].values;
      const auto& b1 = params[1].values;
      const auto& w2 = params[2].values;
      const auto& b2 = params[3].values;
      for (std::size_t j = 0; j < H; ++j) h[j] = b1[j];
      for (std::size_t f = 0; f < F; ++f) {
        const float xv = x[f];
        const float* row = w1.data() + f * H;
        for (std::size_t j = 0; j < H; ++j) h[j] += xv * row[j];
      }
      for (std::size_t k = 0; k < K; ++k) z[k] = b2[k];
      for (std::size_t j = 0; j < H; ++j) {
        const float hv = h[j] > 0.0f ? h[j] : 0.0f;
        if (hv == 0.0f) continue;
        const float* row = w2.data() + j * K;
        for (std::size_t k = 0; k < K; ++k) z[k] += hv * row[k];
      }
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (z[k] > z[best]) best = k;
    if (int(best) == data.labels[i]) correct += 1;
  }
  return double(correct) / double(n);
}

namespace {

void finish(TrainResult& result, const TaskSpec& task, const Dataset& test,
            TensorList params) {
  result.final_loss = result.series.empty() ? 0.0 : result.series.back().loss;
  result.final_metric = evaluate(task, test, params);
  result.parameters = std::move(params);
}

}  // namespace

TrainResult train_data_parallel(const TaskSpec& task,
                                const engine::EngineConfig& engine_config,
                                const simnet::SimNetConfig& net_config) {
  const std::size_t nodes = engine_config.nodes;
  task.validate(nodes);
  engine::Engine eng(engine_config, net_config);

  const Dataset train_set =
      make_dataset(task, task.train_examples, hash_combine(task.data_seed, 1));
  const Dataset test_set =
      make_dataset(task, task.test_examples, hash_combine(task.data_seed, 2));

  TensorList params = init_parameters(task);
  TensorList velocity;
  for (const auto& p : params)
    velocity.push_back({p.layer, std::vector<float>(p.values.size(), 0.0f)});

  TrainResult result;
  const std::size_t per_node = task.batch / nodes;

  for (std::size_t step = 0; step < task.steps; ++step) {
    const auto indices = batch_indices(task, step);
    std::vector<double> losses(nodes);
    for (std::size_t n = 0; n < nodes; ++n) {
      ShardResult shard = shard_gradients(
          task, train_set, params,
          std::span<const std::size_t>(indices).subspan(n * per_node, per_node));
      losses[n] = shard.loss;
      for (auto& g : shard.gradients) eng.submit(n, std::move(g));
    }

    TensorList averaged = eng.flush(0);
    for (std::size_t n = 1; n < nodes; ++n) {
      const TensorList other = eng.flush(n);
      for (std::size_t t = 0; t < averaged.size(); ++t)
        if (other[t].values != averaged[t].values)
          throw engine::ProtocolError("replicas diverged after the step barrier");
    }

    double loss = losses[0];
    for (std::size_t n = 1; n < nodes; ++n) loss += losses[n];
    loss /= double(nodes);
    result.series.push_back({step, loss});
    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.divergence_step = step;
      break;
    }
    apply_update(params, velocity, averaged, task);
  }

  result.trace = eng.total_trace();
  result.plan_history = eng.plan_history();
  result.events = eng.events_json();
  finish(result, task, test_set, std::move(params));
  return result;
}

TrainResult train_single_process(const TaskSpec& task, std::size_t nodes) {
  task.validate(nodes);

  const Dataset train_set =
      make_dataset(task, task.train_examples, hash_combine(task.data_seed, 1));
  const Dataset test_set =
      make_dataset(task, task.test_examples, hash_combine(task.data_seed, 2));

  TensorList params = init_parameters(task);
  TensorList velocity;
  for (const auto& p : params)
    velocity.push_back({p.layer, std::vector<float>(p.values.size(), 0.0f)});

  TrainResult result;
  const std::size_t per_node = task.batch / nodes;

  for (std::size_t step = 0; step < task.steps; ++step) {
    const auto indices = batch_indices(task, step);
    TensorList averaged;
    double loss = 0.0;
    for (std::size_t n = 0; n < nodes; ++n) {
      ShardResult shard = shard_gradients(
          task, train_set, params,
          std::span<const std::size_t>(indices).subspan(n * per_node, per_node));
      loss += shard.loss;
      if (n == 0) {
        averaged = std::move(shard.gradients);
      } else {
        for (std::size_t t = 0; t < averaged.size(); ++t) {
          const auto& values = shard.gradients[t].values;
          auto& acc = averaged[t].values;
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += values[i];
        }
      }
    }
    for (auto& g : averaged)
      for (float& v : g.values) v /= float(nodes);
    loss /= double(nodes);

    result.series.push_back({step, loss});
    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.divergence_step = step;
      break;
    }
    apply_update(params, velocity, averaged, task);
  }

  finish(result, task, test_set, std::move(params));
  return result;
}

}  // namespace gcomm::train
