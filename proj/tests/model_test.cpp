#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "gcomm/model.hpp"
#include "gcomm/util.hpp"

using namespace gcomm;
using namespace gcomm::model;

namespace {
constexpr std::size_t MiB = 1024 * 1024;
constexpr std::size_t elems(std::size_t mib) { return mib * MiB / sizeof(float); }
}  // namespace

TEST_CASE("model spec json roundtrip and validation") {
  const char* text = R"([
    {"name": "embed.tok", "elements": 1048576, "kind": "embedding"},
    {"name": "block.0.w", "elements": 65536},
    {"name": "block.0.b", "elements": 256, "kind": "bias"}
  ])";
  ModelSpec spec = ModelSpec::from_json(text);
  REQUIRE(spec.layers.size() == 3);
  CHECK(spec.layers[0].kind == LayerKind::embedding);
  CHECK(spec.layers[1].kind == LayerKind::weight);  // default
  CHECK(spec.total_elements() == 1048576 + 65536 + 256);
  CHECK(spec.find("block.0.b") != nullptr);
  CHECK(spec.find("missing") == nullptr);

  ModelSpec back = ModelSpec::from_json(spec.to_json());
  CHECK(back.layers.size() == 3);
  CHECK(back.layers[2].kind == LayerKind::bias);

  spec.layers.push_back({"block.0.w", 10, LayerKind::weight});
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  CHECK_THROWS_AS(ModelSpec::from_json(R"([{"name":"x","elements":0}])"),
                  std::invalid_argument);
  CHECK_THROWS_AS(ModelSpec::from_json(R"([{"name":"x","elements":4,"kind":"conv"}])"),
                  std::invalid_argument);
}

TEST_CASE("default filter excludes bias, norm, and small layers") {
  ModelSpec spec;
  spec.layers = {
      {"w", 8192, LayerKind::weight},
      {"b", 8192, LayerKind::bias},        // excluded by kind despite its size
      {"small_w", 1000, LayerKind::weight},  // excluded by size
      {"ln", 512, LayerKind::norm},
      {"e", 4096, LayerKind::embedding},   // exactly at the threshold: kept
  };
  FilterRules rules;
  rules.compile();
  LayerPartition part = filter_layers(spec, rules);
  REQUIRE(part.compressed.size() == 2);
  CHECK(part.compressed[0].name == "w");
  CHECK(part.compressed[1].name == "e");
  REQUIRE(part.uncompressed.size() == 3);
  CHECK(part.uncompressed[0].name == "b");
}

TEST_CASE("name patterns extend the filter and bad patterns are rejected") {
  ModelSpec spec;
  spec.layers = {{"encoder.attn.w", 8192, LayerKind::weight},
                 {"decoder.attn.w", 8192, LayerKind::weight}};
  FilterRules rules;
  rules.exclude_patterns = {"^decoder\\."};
  rules.compile();
  LayerPartition part = filter_layers(spec, rules);
  REQUIRE(part.compressed.size() == 1);
  CHECK(part.compressed[0].name == "encoder.attn.w");
  CHECK(part.uncompressed[0].name == "decoder.attn.w");

  FilterRules bad;
  bad.exclude_patterns = {"([unterminated"};
  CHECK_THROWS_AS(bad.compile(), std::invalid_argument);
}

TEST_CASE("every layer lands on exactly one side of the partition") {
  ModelSpec spec;
  for (int i = 0; i < 40; ++i) {
    LayerKind kind = static_cast<LayerKind>(i % 5);
    spec.layers.push_back({"l" + std::to_string(i),
                           static_cast<std::size_t>(1 + 100000 * uniform01(9, i, 0)),
                           kind});
  }
  FilterRules rules;
  rules.compile();
  LayerPartition part = filter_layers(spec, rules);
  CHECK(part.compressed.size() + part.uncompressed.size() == spec.layers.size());
  for (const auto& layer : part.compressed) {
    CHECK(layer.elements >= rules.min_elements);
    CHECK(layer.kind != LayerKind::bias);
    CHECK(layer.kind != LayerKind::norm);
  }
}

TEST_CASE("plan json roundtrip, resolution, and validation") {
  const char* text = R"({
    "defaults": {"bits": 4, "bucket": 128},
    "layers": {
      "w1": {"bits": 2},
      "w2": {"mode": "topk", "k": 64},
      "w3": {"mode": "uncompressed"}
    }
  })";
  CompressionPlan plan = CompressionPlan::from_json(text);
  CHECK(plan.resolve("w1").bits == 2);
  CHECK(plan.resolve("w1").bucket_size == 128);
  CHECK(plan.resolve("w2").mode == CodecMode::topk);
  CHECK(plan.resolve("w2").k == 64);
  CHECK(plan.resolve("w3").mode == CodecMode::uncompressed);
  CHECK(plan.resolve("other").bits == 4);
  CHECK(plan.resolve("other").mode == CodecMode::quantize);

  CompressionPlan back = CompressionPlan::from_json(plan.to_json());
  CHECK(back.resolve("w2").k == 64);
  CHECK(back.resolve("w1").bits == 2);

  CHECK_THROWS_AS(CompressionPlan::from_json(R"({"defaults": {"bits": 12}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(CompressionPlan::from_json(R"({"layers": {"w": {"mode": "topk"}}})"),
                  std::invalid_argument);
}

TEST_CASE("three 24 MiB tensors pack as two buffers") {
  auto buffers = pack_fused_buffers({elems(24), elems(24), elems(24)}, 64 * MiB);
  REQUIRE(buffers.size() == 2);
  REQUIRE(buffers[0].segments.size() == 2);
  CHECK(buffers[0].segments[0].buffer_offset == 0);
  CHECK(buffers[0].segments[1].buffer_offset == elems(24));
  CHECK(buffers[0].total_elements == elems(48));
  REQUIRE(buffers[1].segments.size() == 1);
  CHECK(buffers[1].segments[0].tensor_index == 2);
}

TEST_CASE("an oversized tensor splits at the capacity boundary") {
  auto buffers = pack_fused_buffers({elems(80)}, 64 * MiB);
  REQUIRE(buffers.size() == 2);
  CHECK(buffers[0].segments[0].length == elems(64));
  CHECK(buffers[0].segments[0].layer_offset == 0);
  CHECK(buffers[1].segments[0].length == elems(16));
  CHECK(buffers[1].segments[0].layer_offset == elems(64));

  // the split tail keeps accepting later tensors
  auto more = pack_fused_buffers({elems(80), elems(4)}, 64 * MiB);
  REQUIRE(more.size() == 2);
  REQUIRE(more[1].segments.size() == 2);
  CHECK(more[1].segments[1].tensor_index == 1);
  CHECK(more[1].segments[1].buffer_offset == elems(16));
}

TEST_CASE("small tensors share one buffer") {
  auto buffers = pack_fused_buffers({100, 200, 300}, 64 * MiB);
  REQUIRE(buffers.size() == 1);
  CHECK(buffers[0].total_elements == 600);
  CHECK(buffers[0].segments.size() == 3);
}

TEST_CASE("concatenating segments reconstructs every tensor") {
  std::vector<std::size_t> sizes;
  std::vector<std::vector<float>> tensors;
  for (int t = 0; t < 25; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform01(17, t, 0) * 5000);
    sizes.push_back(n);
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = normal01(t, i);
    tensors.push_back(std::move(v));
  }
  const std::size_t capacity = 6000 * sizeof(float);
  auto buffers = pack_fused_buffers(sizes, capacity);

  // fill buffers from tensors, then scatter back and compare
  std::vector<std::vector<float>> assembled;
  for (const auto& b : buffers) {
    CHECK(b.total_elements * sizeof(float) <= capacity);
    std::vector<float> data(b.total_elements);
    std::size_t expected_offset = 0;
    for (const auto& seg : b.segments) {
      CHECK(seg.buffer_offset == expected_offset);  // contiguous, no overlap
      expected_offset += seg.length;
      for (std::size_t i = 0; i < seg.length; ++i)
        data[seg.buffer_offset + i] = tensors[seg.tensor_index][seg.layer_offset + i];
    }
    assembled.push_back(std::move(data));
  }

  std::vector<std::vector<float>> rebuilt(tensors.size());
  for (auto& v : rebuilt) v.clear();
  for (std::size_t t = 0; t < tensors.size(); ++t) rebuilt[t].resize(sizes[t], -1e30f);
  for (std::size_t bi = 0; bi < buffers.size(); ++bi)
    for (const auto& seg : buffers[bi].segments)
      for (std::size_t i = 0; i < seg.length; ++i)
        rebuilt[seg.tensor_index][seg.layer_offset + i] = assembled[bi][seg.buffer_offset + i];
  for (std::size_t t = 0; t < tensors.size(); ++t) CHECK(rebuilt[t] == tensors[t]);
}

TEST_CASE("packing rejects degenerate inputs") {
  CHECK_THROWS_AS(pack_fused_buffers({0}, 64 * MiB), std::invalid_argument);
  CHECK_THROWS_AS(pack_fused_buffers({10}, 2), std::invalid_argument);
}
