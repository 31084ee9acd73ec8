#pragma once

#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "gcomm/codec.hpp"

namespace gcomm::model {

enum class LayerKind { weight, bias, norm, embedding, other };

LayerKind layer_kind_from_string(const std::string& s);
std::string to_string(LayerKind kind);

struct LayerSpec {
  std::string name;
  std::size_t elements = 0;
  LayerKind kind = LayerKind::weight;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;

  void validate() const;  // unique non-empty names, positive sizes
  const LayerSpec* find(const std::string& name) const;
  std::size_t total_elements() const;

  static ModelSpec from_json(const std::string& text);
  std::string to_json() const;
};

struct GradientTensor {
  LayerSpec layer;
  std::vector<float> values;
};

enum class CodecMode { quantize, topk, uncompressed };

// Fully resolved per-layer codec choice.
struct LayerCodec {
  CodecMode mode = CodecMode::quantize;
  int bits = 4;
  std::size_t bucket_size = 128;
  std::size_t k = 0;  // topk only
};

struct CompressionPlan {
  LayerCodec defaults;  // mode quantize unless overridden
  std::vector<std::pair<std::string, LayerCodec>> overrides;  // ordered by name

  LayerCodec resolve(const std::string& layer_name) const;
  void set(const std::string& layer_name, const LayerCodec& codec);
  void validate() const;

  static CompressionPlan from_json(const std::string& text);
  std::string to_json() const;
};

// Which layers bypass compression entirely.  A layer is uncompressed when its
// kind is excluded, it is smaller than min_elements, or its name matches any
// pattern (ECMAScript regex, validated at construction).
struct FilterRules {
  std::vector<LayerKind> exclude_kinds{LayerKind::bias, LayerKind::norm};
  std::size_t min_elements = 4096;
  std::vector<std::string> exclude_patterns;

  FilterRules() = default;
  void compile();  // throws std::invalid_argument on a malformed pattern
  bool excluded(const LayerSpec& layer) const;

 private:
  std::vector<std::regex> compiled_;
  bool compiled_ready_ = false;
};

struct LayerPartition {
  std::vector<LayerSpec> compressed;
  std::vector<LayerSpec> uncompressed;
};

LayerPartition filter_layers(const ModelSpec& model, const FilterRules& rules);

// One contiguous piece of a layer placed inside a fused buffer.
struct BufferSegment {
  std::size_t tensor_index = 0;  // position in the packed tensor list
  std::size_t layer_offset = 0;  // first covered element of the layer
  std::size_t buffer_offset = 0; // element offset inside the fused buffer
  std::size_t length = 0;        // elements
};

struct FusedBuffer {
  std::vector<BufferSegment> segments;
  std::size_t total_elements = 0;
  std::size_t capacity_bytes = 0;
};

// Greedy packing in submission order.  A tensor that no longer fits the open
// buffer starts a new one; only tensors larger than the capacity are split.
std::vector<FusedBuffer> pack_fused_buffers(const std::vector<std::size_t>& tensor_elements,
                                            std::size_t capacity_bytes);

}  // namespace gcomm::model
