#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include <json.hpp>

#include "gcomm/codec.hpp"
#include "gcomm/engine.hpp"
#include "gcomm/util.hpp"

using namespace gcomm;
using namespace gcomm::engine;

namespace {

model::LayerSpec layer(const std::string& name, std::size_t elements,
                       model::LayerKind kind = model::LayerKind::weight) {
  return {name, elements, kind};
}

// integer-valued so float sums are exact in any association
std::vector<float> integer_values(std::size_t n, std::uint64_t seed) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = std::round(8.0f * normal01(seed, i));
  return v;
}

std::vector<float> smooth_values(std::size_t n, std::uint64_t seed) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = normal01(seed, i);
  return v;
}

// ascending fold then divide, the collective's exact arithmetic
std::vector<float> ordered_average(const std::vector<std::vector<float>>& inputs) {
  std::vector<float> acc = inputs[0];
  for (std::size_t n = 1; n < inputs.size(); ++n)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += inputs[n][i];
  for (float& v : acc) v /= float(inputs.size());
  return acc;
}

EngineConfig lossless_config(std::size_t nodes) {
  EngineConfig cfg;
  cfg.nodes = nodes;
  cfg.plan.defaults.mode = model::CodecMode::uncompressed;
  return cfg;
}

simnet::SimNetConfig net_for(std::size_t nodes) {
  simnet::SimNetConfig net;
  net.nodes = nodes;
  return net;
}

}  // namespace

TEST_CASE("one node passes gradients through untouched") {
  Engine eng(lossless_config(1), net_for(1));
  const auto a = smooth_values(100, 1);
  const auto b = smooth_values(9, 2);
  eng.submit(0, {layer("w", 100), a});
  eng.submit(0, {layer("b", 9, model::LayerKind::bias), b});
  const auto out = eng.flush(0);
  REQUIRE(out.size() == 2);
  CHECK(out[0].values == a);
  CHECK(out[1].values == b);
  CHECK(out[0].layer.name == "w");
  CHECK(eng.steps_completed() == 1);
  CHECK(eng.last_trace().total_bytes_sent() == 0);
}

TEST_CASE("identical lossless gradients average to themselves") {
  const std::size_t nodes = 4;
  Engine eng(lossless_config(nodes), net_for(nodes));
  const auto g = smooth_values(600, 7);
  for (std::size_t n = 0; n < nodes; ++n) eng.submit(n, {layer("w", 600), g});
  for (std::size_t n = 0; n < nodes; ++n) {
    const auto out = eng.flush(n);
    CHECK(out[0].values == g);
  }
  CHECK(eng.steps_completed() == 1);
}

TEST_CASE("filtered layers reduce exactly even under a lossy plan") {
  const std::size_t nodes = 4;
  EngineConfig cfg;
  cfg.nodes = nodes;  // plan defaults: quantize 4/128
  Engine eng(cfg, net_for(nodes));

  std::vector<std::vector<float>> weights, biases;
  for (std::size_t n = 0; n < nodes; ++n) {
    weights.push_back(smooth_values(8192, 100 + n));
    biases.push_back(smooth_values(32, 200 + n));
    eng.submit(n, {layer("w", 8192), weights.back()});
    eng.submit(n, {layer("b", 32, model::LayerKind::bias), biases.back()});
  }
  const auto exact_bias = ordered_average(biases);
  const auto exact_weight = ordered_average(weights);

  std::vector<std::vector<model::GradientTensor>> outs;
  for (std::size_t n = 0; n < nodes; ++n) outs.push_back(eng.flush(n));
  for (std::size_t n = 0; n < nodes; ++n) {
    CHECK(outs[n][1].values == exact_bias);   // bias bypasses compression
    CHECK(outs[n][0].values == outs[0][0].values);  // barrier: all replicas agree
  }
  // the weight went over the wire quantized: close but not exact
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < exact_weight.size(); ++i) {
    err += std::pow(double(outs[0][0].values[i]) - double(exact_weight[i]), 2);
    ref += std::pow(double(exact_weight[i]), 2);
  }
  CHECK(std::sqrt(err / ref) > 1e-6);
  CHECK(std::sqrt(err / ref) < 0.5);
  CHECK(eng.last_trace().compress_calls > 0);
}

TEST_CASE("quantized averaging stays inside the composed codec bound") {
  const std::size_t nodes = 8, d = 4096, bucket = 128;
  const double s = 15.0;  // 4-bit levels
  EngineConfig cfg;
  cfg.nodes = nodes;
  Engine eng(cfg, net_for(nodes));

  std::vector<std::vector<float>> inputs;
  for (std::size_t n = 0; n < nodes; ++n) {
    inputs.push_back(smooth_values(d, 900 + n));
    eng.submit(n, {layer("w", d), inputs.back()});
  }
  const auto mean = ordered_average(inputs);

  std::vector<std::vector<model::GradientTensor>> outs;
  for (std::size_t n = 0; n < nodes; ++n) outs.push_back(eng.flush(n));
  for (std::size_t n = 1; n < nodes; ++n)
    CHECK(outs[n][0].values == outs[0][0].values);

  // stage-1 norms come straight from the inputs; the folded stage-2 vector is
  // the exact sum plus at most (N-1) per-element decode errors, which bounds
  // its bucket norms without peeking at the transcript
  double max1 = 0.0;
  std::vector<double> sum_norm(d / bucket, 0.0);
  for (std::size_t b = 0; b < d / bucket; ++b) {
    double exact2 = 0.0;
    for (std::size_t n = 0; n < nodes; ++n) {
      double norm2 = 0.0;
      for (std::size_t i = b * bucket; i < (b + 1) * bucket; ++i)
        norm2 += double(inputs[n][i]) * double(inputs[n][i]);
      max1 = std::max(max1, std::sqrt(norm2));
    }
    double acc = 0.0;
    for (std::size_t i = b * bucket; i < (b + 1) * bucket; ++i) {
      double e = 0.0;
      for (std::size_t n = 0; n < nodes; ++n) e += double(inputs[n][i]);
      acc += e * e;
    }
    sum_norm[b] = std::sqrt(acc);
  }
  double max2 = 0.0;
  for (double v : sum_norm)
    max2 = std::max(max2, v + double(nodes - 1) * std::sqrt(double(bucket)) * max1 / s);
  const double bound = (2.0 / s) * std::max(max1, max2);

  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    worst = std::max(worst,
                     std::abs(double(outs[0][0].values[i]) - double(mean[i])));
  CHECK(worst <= bound);
  CHECK(worst > 0.0);
}

TEST_CASE("barrier misuse and layout drift are rejected") {
  Engine eng(lossless_config(2), net_for(2));
  CHECK_THROWS_AS(eng.submit(2, {layer("w", 4), {1, 2, 3, 4}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(eng.submit(0, {layer("w", 4), {1, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(eng.submit(0, {layer("", 2), {1, 2}}), std::invalid_argument);

  eng.submit(0, {layer("w", 4), {1, 2, 3, 4}});
  CHECK_THROWS_AS(eng.submit(0, {layer("w", 4), {1, 2, 3, 4}}), ProtocolError);

  // the other node never submitted: the layouts cannot agree
  CHECK_THROWS_AS(eng.flush(0), ProtocolError);

  eng.submit(1, {layer("x", 4), {1, 2, 3, 4}});
  CHECK_THROWS_AS(eng.flush(0), ProtocolError);  // names disagree

  Engine ok(lossless_config(2), net_for(2));
  ok.submit(0, {layer("w", 4), {1, 2, 3, 4}});
  ok.submit(1, {layer("w", 4), {5, 6, 7, 8}});
  ok.flush(0);
  CHECK_THROWS_AS(ok.flush(0), OrderingError);  // flushed twice
  CHECK_THROWS_AS(ok.submit(1, {layer("w", 4), {0, 0, 0, 0}}),
                  OrderingError);  // submission while the step is mid-flush
  ok.flush(1);
  CHECK(ok.steps_completed() == 1);

  // second step must reuse the established layout
  CHECK_THROWS_AS(ok.submit(0, {layer("v", 4), {1, 2, 3, 4}}), ProtocolError);
  CHECK_THROWS_AS(ok.submit(0, {layer("w", 8), smooth_values(8, 1)}),
                  ProtocolError);
  ok.submit(0, {layer("w", 4), {1, 2, 3, 4}});
}

TEST_CASE("fused buffers split and the step trace adds up") {
  const std::size_t nodes = 4;
  EngineConfig cfg = lossless_config(nodes);
  cfg.fuse_limit_bytes = 512;  // 128 elements per buffer
  Engine eng(cfg, net_for(nodes));

  std::vector<std::vector<std::vector<float>>> grads(nodes);
  const std::vector<std::pair<std::string, std::size_t>> shape = {
      {"w1", 200}, {"w2", 50}, {"w3", 6}};
  for (std::size_t n = 0; n < nodes; ++n)
    for (std::size_t t = 0; t < shape.size(); ++t) {
      grads[n].push_back(integer_values(shape[t].second, 10 * n + t));
      eng.submit(n, {layer(shape[t].first, shape[t].second), grads[n].back()});
    }

  std::vector<std::vector<model::GradientTensor>> outs;
  for (std::size_t n = 0; n < nodes; ++n) outs.push_back(eng.flush(n));
  for (std::size_t t = 0; t < shape.size(); ++t) {
    std::vector<std::vector<float>> per_node;
    for (std::size_t n = 0; n < nodes; ++n) per_node.push_back(grads[n][t]);
    const auto expected = ordered_average(per_node);
    for (std::size_t n = 0; n < nodes; ++n)
      CHECK(outs[n][t].values == expected);  // integers: exact in any order
  }

  // 200 + 50 + 6 elements pack into two full 128-element buffers
  CHECK(eng.last_trace().rounds == 4);  // two buffers, two rounds each
  // raw f32 per node and buffer: (3 + 3) chunks of 32 elements
  CHECK(eng.last_trace().bytes_sent[0] == 2 * 2 * 3 * 32 * 4);
  CHECK(eng.total_trace().total_bytes_sent() ==
        eng.last_trace().total_bytes_sent());
}

TEST_CASE("sparse layers flow through selection with per-node feedback") {
  const std::size_t nodes = 4, d = 256, k = 16;
  EngineConfig cfg;
  cfg.nodes = nodes;
  cfg.plan.defaults.mode = model::CodecMode::topk;
  cfg.plan.defaults.k = k;
  cfg.filters.min_elements = 1;  // let a small layer through
  Engine eng(cfg, net_for(nodes));

  std::vector<codec::ErrorFeedbackState> mirror(nodes,
                                                codec::ErrorFeedbackState(d));
  for (std::uint64_t step = 0; step < 3; ++step) {
    std::vector<std::vector<float>> grads;
    std::vector<codec::SparseChunk> chunks;
    for (std::size_t n = 0; n < nodes; ++n) {
      grads.push_back(smooth_values(d, 40 * (step + 1) + n));
      chunks.push_back(codec::topk_compress(grads.back(), k, mirror[n]));
      eng.submit(n, {layer("w", d), grads.back()});
    }
    std::vector<float> expected(d, 0.0f);
    bool first = true;
    for (std::size_t n = 0; n < nodes; ++n) {
      const auto dense = codec::topk_decompress(chunks[n]);
      if (first) {
        expected = dense;
        first = false;
      } else {
        for (std::size_t i = 0; i < d; ++i) expected[i] += dense[i];
      }
    }
    for (float& v : expected) v /= float(nodes);

    for (std::size_t n = 0; n < nodes; ++n) {
      const auto out = eng.flush(n);
      CHECK(out[0].values == expected);
    }
    // wire: each node ships its chunk to the three peers
    CHECK(eng.last_trace().bytes_sent[0] == 3 * (8 + 8 * k));
    CHECK(eng.last_trace().rounds == 1);
  }
  CHECK(eng.steps_completed() == 3);
}

TEST_CASE("a singleton palette makes adaptive equal to the static plan") {
  const std::size_t nodes = 2, d = 4096;
  EngineConfig fixed;
  fixed.nodes = nodes;  // static quantize 4/128

  EngineConfig adapt;
  adapt.nodes = nodes;
  adapt.plan_source = PlanSource::adaptive;
  adapt.adaptive.palette = {4};
  adapt.adaptive.stats_period = 4;
  adapt.adaptive.stats_window = 2;

  Engine a(fixed, net_for(nodes));
  Engine b(adapt, net_for(nodes));
  for (std::uint64_t step = 0; step < 6; ++step) {
    for (std::size_t n = 0; n < nodes; ++n) {
      const auto w = smooth_values(d, 7000 + 10 * step + n);
      const auto bias = smooth_values(16, 8000 + 10 * step + n);
      a.submit(n, {layer("w", d), w});
      a.submit(n, {layer("b", 16, model::LayerKind::bias), bias});
      b.submit(n, {layer("w", d), w});
      b.submit(n, {layer("b", 16, model::LayerKind::bias), bias});
    }
    for (std::size_t n = 0; n < nodes; ++n) {
      const auto out_a = a.flush(n);
      const auto out_b = b.flush(n);
      CHECK(out_a[0].values == out_b[0].values);
      CHECK(out_a[1].values == out_b[1].values);
    }
    CHECK(a.last_trace().total_bytes_sent() == b.last_trace().total_bytes_sent());
  }
  // windows end after steps 1 and 5; both swaps pin the single width
  REQUIRE(b.plan_history().size() == 2);
  CHECK(b.plan_history()[0].step == 1);
  CHECK(b.plan_history()[1].step == 5);
  CHECK(b.plan_history()[0].decision.bits.at("w") == 4);
  CHECK(b.plan_history()[0].decision.within_budget);
  CHECK(a.plan_history().empty());
}

TEST_CASE("an over-budget plan is rejected with a warning") {
  const std::size_t nodes = 2, d = 4096;
  EngineConfig cfg;
  cfg.nodes = nodes;
  cfg.plan_source = PlanSource::adaptive;
  cfg.adaptive.palette = {2};
  cfg.adaptive.alpha = 1e-9;  // nothing can fit this budget
  cfg.adaptive.stats_period = 3;
  cfg.adaptive.stats_window = 1;
  Engine eng(cfg, net_for(nodes));

  std::vector<std::uint64_t> step_bytes;
  for (std::uint64_t step = 0; step < 3; ++step) {
    for (std::size_t n = 0; n < nodes; ++n)
      eng.submit(n, {layer("w", d), smooth_values(d, 60 * (step + 1) + n)});
    for (std::size_t n = 0; n < nodes; ++n) eng.flush(n);
    step_bytes.push_back(eng.last_trace().total_bytes_sent());
  }
  CHECK(eng.plan_history().empty());
  // the reference width keeps flowing, so every step costs the same
  CHECK(step_bytes[1] == step_bytes[0]);
  CHECK(step_bytes[2] == step_bytes[0]);
  bool warned = false;
  for (const auto& e : eng.events()) warned |= e.event == "planner_warning";
  CHECK(warned);
}

TEST_CASE("a plan swap changes the wire format at the step boundary") {
  const std::size_t nodes = 2, d = 8192;
  EngineConfig cfg;
  cfg.nodes = nodes;
  cfg.plan_source = PlanSource::adaptive;
  cfg.adaptive.palette = {2};
  cfg.adaptive.alpha = 1e9;  // any plan is acceptable
  cfg.adaptive.stats_period = 100;
  cfg.adaptive.stats_window = 1;
  Engine eng(cfg, net_for(nodes));

  std::vector<std::uint64_t> step_bytes;
  for (std::uint64_t step = 0; step < 3; ++step) {
    for (std::size_t n = 0; n < nodes; ++n)
      eng.submit(n, {layer("w", d), smooth_values(d, 90 * (step + 1) + n)});
    for (std::size_t n = 0; n < nodes; ++n) eng.flush(n);
    step_bytes.push_back(eng.last_trace().total_bytes_sent());
  }
  REQUIRE(eng.plan_history().size() == 1);
  CHECK(eng.plan_history()[0].step == 0);
  CHECK(eng.plan_history()[0].decision.bits.at("w") == 2);
  CHECK(eng.active_plan().resolve("w").bits == 2);

  // per node: one 4096-element chunk out, one back; 17-byte headers + norms
  const std::uint64_t four_bit = 2 * 2 * (17 + 4096 * 5 / 8 + 32 * 4);
  const std::uint64_t two_bit = 2 * 2 * (17 + 4096 * 3 / 8 + 32 * 4);
  CHECK(step_bytes[0] == four_bit);  // observation window at the reference width
  CHECK(step_bytes[1] == two_bit);   // swapped plan, no mixing within a step
  CHECK(step_bytes[2] == two_bit);
}

TEST_CASE("event log lines parse and cover the step lifecycle") {
  Engine eng(lossless_config(2), net_for(2));
  for (std::size_t n = 0; n < 2; ++n)
    eng.submit(n, {layer("w", 64), smooth_values(64, n)});
  eng.flush(0);
  eng.flush(1);

  const std::string log = eng.events_json();
  std::size_t lines = 0;
  std::size_t at = 0;
  bool saw_step = false;
  while (at < log.size()) {
    const std::size_t end = log.find('\n', at);
    const auto line = nlohmann::json::parse(log.substr(at, end - at));
    CHECK(line.contains("step"));
    CHECK(line.contains("event"));
    CHECK(line.contains("payload"));
    if (line.at("event") == "step_complete") {
      saw_step = true;
      CHECK(line.at("step") == 0);
      CHECK(line.at("payload").at("bytes").get<std::uint64_t>() > 0);
    }
    lines += 1;
    at = end + 1;
  }
  CHECK(lines == eng.events().size());
  CHECK(saw_step);
}

TEST_CASE("engine runs are a pure function of config and submissions") {
  auto run = [](std::uint64_t step_seed) {
    EngineConfig cfg;
    cfg.nodes = 4;
    cfg.step_seed = step_seed;
    Engine eng(cfg, net_for(4));
    std::vector<float> out;
    for (std::uint64_t step = 0; step < 2; ++step) {
      for (std::size_t n = 0; n < 4; ++n)
        eng.submit(n, {layer("w", 4096), smooth_values(4096, 5 * step + n)});
      out = eng.flush(0)[0].values;
      for (std::size_t n = 1; n < 4; ++n) eng.flush(n);
    }
    return out;
  };
  CHECK(run(11) == run(11));
  CHECK(run(11) != run(12));
}

TEST_CASE("engine configuration is validated up front") {
  EngineConfig cfg;
  cfg.nodes = 0;
  CHECK_THROWS_AS(Engine(cfg, net_for(0)), std::invalid_argument);
  cfg.nodes = 2;
  CHECK_THROWS_AS(Engine(cfg, net_for(3)), std::invalid_argument);
  cfg.fuse_limit_bytes = 0;
  CHECK_THROWS_AS(Engine(cfg, net_for(2)), std::invalid_argument);
  cfg.fuse_limit_bytes = 1 << 20;
  cfg.cycle_time_s = 0.0;
  CHECK_THROWS_AS(Engine(cfg, net_for(2)), std::invalid_argument);
  cfg.cycle_time_s = 0.005;
  cfg.plan_source = PlanSource::adaptive;
  cfg.adaptive.palette.clear();
  CHECK_THROWS_AS(Engine(cfg, net_for(2)), std::invalid_argument);
}
