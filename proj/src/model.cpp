#include "gcomm/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace gcomm::model {

using nlohmann::json;

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "weight") return LayerKind::weight;
  if (s == "bias") return LayerKind::bias;
  if (s == "norm") return LayerKind::norm;
  if (s == "embedding") return LayerKind::embedding;
  if (s == "other") return LayerKind::other;
  throw std::invalid_argument("unknown layer kind: " + s);
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::weight: return "weight";
    case LayerKind::bias: return "bias";
    case LayerKind::norm: return "norm";
    case LayerKind::embedding: return "embedding";
    case LayerKind::other: return "other";
  }
  return "other";
}

void ModelSpec::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& layer : layers) {
    if (layer.name.empty()) throw std::invalid_argument("layer with empty name");
    if (layer.elements == 0)
      throw std::invalid_argument("layer " + layer.name + " has zero elements");
    if (!seen.insert(layer.name).second)
      throw std::invalid_argument("duplicate layer name: " + layer.name);
  }
}

const LayerSpec* ModelSpec::find(const std::string& name) const {
  for (const auto& layer : layers)
    if (layer.name == name) return &layer;
  return nullptr;
}

std::size_t ModelSpec::total_elements() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += layer.elements;
  return total;
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_array()) throw std::invalid_argument("model spec must be a JSON array");
  ModelSpec spec;
  for (const auto& item : j) {
    LayerSpec layer;
    layer.name = item.at("name").get<std::string>();
    layer.elements = item.at("elements").get<std::size_t>();
    layer.kind = layer_kind_from_string(item.value("kind", std::string("weight")));
    spec.layers.push_back(std::move(layer));
  }
  spec.validate();
  return spec;
}

std::string ModelSpec::to_json() const {
  json j = json::array();
  for (const auto& layer : layers)
    j.push_back({{"name", layer.name},
                 {"elements", layer.elements},
                 {"kind", to_string(layer.kind)}});
  return j.dump(2);
}

static void validate_codec(const LayerCodec& c, const std::string& where) {
  if (c.mode == CodecMode::quantize) {
    codec::QuantParams p;
    p.bits = c.bits;
    p.bucket_size = c.bucket_size;
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
  } else if (c.mode == CodecMode::topk && c.k == 0) {
    throw std::invalid_argument(where + ": topk mode requires k >= 1");
  }
}

LayerCodec CompressionPlan::resolve(const std::string& layer_name) const {
  for (const auto& [name, codec] : overrides)
    if (name == layer_name) return codec;
  return defaults;
}

void CompressionPlan::set(const std::string& layer_name, const LayerCodec& codec) {
  for (auto& [name, existing] : overrides) {
    if (name == layer_name) {
      existing = codec;
      return;
    }
  }
  overrides.emplace_back(layer_name, codec);
}

void CompressionPlan::validate() const {
  validate_codec(defaults, "plan defaults");
  for (const auto& [name, codec] : overrides) validate_codec(codec, "layer " + name);
}

static std::string mode_name(CodecMode mode) {
  switch (mode) {
    case CodecMode::quantize: return "quantize";
    case CodecMode::topk: return "topk";
    case CodecMode::uncompressed: return "uncompressed";
  }
  return "quantize";
}

static CodecMode mode_from_name(const std::string& s) {
  if (s == "quantize") return CodecMode::quantize;
  if (s == "topk") return CodecMode::topk;
  if (s == "uncompressed") return CodecMode::uncompressed;
  throw std::invalid_argument("unknown codec mode: " + s);
}

static LayerCodec codec_from_json(const json& j, const LayerCodec& base) {
  LayerCodec c = base;
  if (j.contains("mode")) c.mode = mode_from_name(j.at("mode").get<std::string>());
  if (j.contains("bits")) c.bits = j.at("bits").get<int>();
  if (j.contains("bucket")) c.bucket_size = j.at("bucket").get<std::size_t>();
  if (j.contains("k")) c.k = j.at("k").get<std::size_t>();
  return c;
}

CompressionPlan CompressionPlan::from_json(const std::string& text) {
  json j = json::parse(text);
  CompressionPlan plan;
  if (j.contains("defaults")) plan.defaults = codec_from_json(j.at("defaults"), LayerCodec{});
  if (j.contains("layers")) {
    // iterate in sorted key order so file loading is order-stable
    const auto& layers = j.at("layers");
    std::vector<std::string> names;
    for (auto it = layers.begin(); it != layers.end(); ++it) names.push_back(it.key());
    std::sort(names.begin(), names.end());
    for (const auto& name : names)
      plan.overrides.emplace_back(name, codec_from_json(layers.at(name), plan.defaults));
  }
  plan.validate();
  return plan;
}

std::string CompressionPlan::to_json() const {
  json layers = json::object();
  for (const auto& [name, c] : overrides) {
    json entry{{"mode", mode_name(c.mode)}};
    if (c.mode == CodecMode::quantize) {
      entry["bits"] = c.bits;
      entry["bucket"] = c.bucket_size;
    } else if (c.mode == CodecMode::topk) {
      entry["k"] = c.k;
    }
    layers[name] = entry;
  }
  json j{{"defaults",
          {{"mode", mode_name(defaults.mode)},
           {"bits", defaults.bits},
           {"bucket", defaults.bucket_size}}},
         {"layers", layers}};
  return j.dump(2);
}

void FilterRules::compile() {
  compiled_.clear();
  for (const auto& pattern : exclude_patterns) {
    try {
      compiled_.emplace_back(pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw std::invalid_argument("bad layer filter pattern '" + pattern +
                                  "': " + e.what());
    }
  }
  compiled_ready_ = true;
}

bool FilterRules::excluded(const LayerSpec& layer) const {
  if (!compiled_ready_ && !exclude_patterns.empty())
    throw std::logic_error("filter rules used before compile()");
  for (LayerKind kind : exclude_kinds)
    if (layer.kind == kind) return true;
  if (layer.elements < min_elements) return true;
  for (const auto& re : compiled_)
    if (std::regex_search(layer.name, re)) return true;
  return false;
}

LayerPartition filter_layers(const ModelSpec& model, const FilterRules& rules) {
  model.validate();
  LayerPartition out;
  for (const auto& layer : model.layers) {
    if (rules.excluded(layer))
      out.uncompressed.push_back(layer);
    else
      out.compressed.push_back(layer);
  }
  return out;
}

std::vector<FusedBuffer> pack_fused_buffers(const std::vector<std::size_t>& tensor_elements,
                                            std::size_t capacity_bytes) {
  if (capacity_bytes < sizeof(float))
    throw std::invalid_argument("fused buffer capacity below one element");
  const std::size_t capacity_elems = capacity_bytes / sizeof(float);

  std::vector<FusedBuffer> buffers;
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  auto open = [&]() {
    buffers.push_back(FusedBuffer{{}, 0, capacity_bytes});
    return buffers.size() - 1;
  };

  std::size_t cur = kNone;  // index of the buffer still accepting tensors
  for (std::size_t t = 0; t < tensor_elements.size(); ++t) {
    std::size_t remaining = tensor_elements[t];
    if (remaining == 0)
      throw std::invalid_argument("empty tensor cannot be packed");
    std::size_t layer_offset = 0;

    if (remaining > capacity_elems) {
      // oversized tensor: close the open buffer and split across fresh ones
      cur = kNone;
      while (remaining > 0) {
        const std::size_t b = open();
        const std::size_t take = std::min(remaining, capacity_elems);
        buffers[b].segments.push_back({t, layer_offset, buffers[b].total_elements, take});
        buffers[b].total_elements += take;
        layer_offset += take;
        remaining -= take;
        if (buffers[b].total_elements < capacity_elems) cur = b;  // tail stays open
      }
      continue;
    }

    if (cur == kNone || capacity_elems - buffers[cur].total_elements < remaining)
      cur = open();
    buffers[cur].segments.push_back({t, layer_offset, buffers[cur].total_elements, remaining});
    buffers[cur].total_elements += remaining;
    if (buffers[cur].total_elements == capacity_elems) cur = kNone;
  }
  return buffers;
}

}  // namespace gcomm::model
