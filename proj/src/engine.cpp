#include "gcomm/engine.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

#include "gcomm/util.hpp"

namespace gcomm::engine {

using json = nlohmann::json;

void EngineConfig::validate() const {
  if (nodes < 1) throw std::invalid_argument("engine needs at least one node");
  if (nodes > 64) throw std::invalid_argument("engine supports at most 64 nodes");
  if (fuse_limit_bytes < 4)
    throw std::invalid_argument("fuse limit must hold at least one element");
  if (!(cycle_time_s > 0.0))
    throw std::invalid_argument("cycle time must be positive");
  if (plan_source == PlanSource::static_plan)
    plan.validate();
  else
    adaptive.validate();
}

namespace {

EngineConfig validated(EngineConfig config) {
  config.validate();
  config.filters.compile();
  return config;
}

simnet::SimNetConfig matched(simnet::SimNetConfig net, std::size_t nodes) {
  if (net.nodes != nodes)
    throw std::invalid_argument("network node count does not match the engine");
  return net;
}

bool same_layer(const model::LayerSpec& a, const model::LayerSpec& b) {
  return a.name == b.name && a.elements == b.elements && a.kind == b.kind;
}

}  // namespace

Engine::Engine(EngineConfig config, simnet::SimNetConfig net_config)
    : config_(validated(std::move(config))),
      net_(matched(std::move(net_config), config_.nodes)),
      states_(config_.nodes),
      collector_(config_.plan_source == PlanSource::adaptive
                     ? config_.adaptive.top_fraction
                     : 0.01),
      feedback_(config_.nodes) {
  if (config_.plan_source == PlanSource::adaptive) {
    // until the first observation window completes, everything runs at the
    // uniform reference width
    model::LayerCodec reference;
    reference.mode = model::CodecMode::quantize;
    reference.bits = config_.adaptive.reference_bits;
    reference.bucket_size = config_.adaptive.bucket_size;
    active_plan_.defaults = reference;
  } else {
    active_plan_ = config_.plan;
  }
}

void Engine::record(const std::string& event, const std::string& payload) {
  events_.push_back({steps_, event, payload});
}

std::string Engine::events_json() const {
  std::string out;
  for (const EngineEvent& e : events_) {
    json line;
    line["step"] = e.step;
    line["event"] = e.event;
    line["payload"] = e.payload.empty() ? json::object() : json::parse(e.payload);
    out += line.dump();
    out += '\n';
  }
  return out;
}

void Engine::submit(std::size_t node, model::GradientTensor gradient) {
  if (node >= config_.nodes)
    throw std::invalid_argument("unknown node " + std::to_string(node));
  if (exchanged_)
    throw OrderingError("submission while the step is mid-flush");
  if (gradient.layer.name.empty())
    throw std::invalid_argument("gradient needs a layer name");
  if (gradient.layer.elements == 0 ||
      gradient.values.size() != gradient.layer.elements)
    throw std::invalid_argument("gradient size does not match its layer");

  NodeState& state = states_[node];
  const std::size_t position = state.pending.size();
  for (const auto& earlier : state.pending)
    if (earlier.layer.name == gradient.layer.name)
      throw ProtocolError("layer " + gradient.layer.name +
                          " submitted twice in one step");
  if (!layout_.empty()) {
    if (position >= layout_.size())
      throw ProtocolError("more layers than the established layout");
    if (!same_layer(layout_[position], gradient.layer))
      throw ProtocolError("layer " + gradient.layer.name +
                          " does not match the established layout");
  }
  state.pending.push_back(std::move(gradient));
}

std::vector<model::GradientTensor> Engine::flush(std::size_t node) {
  if (node >= config_.nodes)
    throw std::invalid_argument("unknown node " + std::to_string(node));
  NodeState& state = states_[node];
  if (state.flushed) throw OrderingError("node flushed twice in one step");
  if (!exchanged_) exchange();
  state.flushed = true;
  std::vector<model::GradientTensor> out = std::move(state.results);
  state.results.clear();

  const bool last = std::all_of(states_.begin(), states_.end(),
                                [](const NodeState& s) { return s.flushed; });
  if (last) {
    json payload;
    payload["bytes"] = last_trace_.total_bytes_sent();
    payload["virtual_time_s"] = last_trace_.virtual_time_s;
    payload["rounds"] = last_trace_.rounds;
    record("step_complete", payload.dump());

    const std::uint64_t completed = steps_;
    if (config_.plan_source == PlanSource::adaptive &&
        completed % config_.adaptive.stats_period ==
            config_.adaptive.stats_window - 1)
      observe_and_replan();

    for (NodeState& s : states_) {
      s.pending.clear();
      s.flushed = false;
    }
    exchanged_ = false;
    steps_ += 1;
  }
  return out;
}

void Engine::exchange() {
  const std::size_t nodes = config_.nodes;
  const auto& first = states_[0].pending;
  for (std::size_t n = 1; n < nodes; ++n) {
    const auto& other = states_[n].pending;
    if (other.size() != first.size())
      throw ProtocolError("nodes disagree on the number of layers");
    for (std::size_t t = 0; t < first.size(); ++t)
      if (!same_layer(first[t].layer, other[t].layer))
        throw ProtocolError("nodes disagree on layer " + first[t].layer.name);
  }
  if (layout_.empty()) {
    for (const auto& g : first) layout_.push_back(g.layer);
  } else if (first.size() != layout_.size()) {
    throw ProtocolError("step layout does not match the established layout");
  }

  const std::size_t count = first.size();
  for (NodeState& s : states_) {
    s.results.resize(count);
    for (std::size_t t = 0; t < count; ++t) {
      s.results[t].layer = s.pending[t].layer;
      s.results[t].values.assign(s.pending[t].values.size(), 0.0f);
    }
  }

  const bool adaptive_source = config_.plan_source == PlanSource::adaptive;
  const bool observing =
      adaptive_source &&
      steps_ % config_.adaptive.stats_period < config_.adaptive.stats_window;

  // resolve each tensor's effective codec for this step
  std::vector<model::LayerCodec> codecs(count);
  for (std::size_t t = 0; t < count; ++t) {
    if (config_.filters.excluded(first[t].layer)) {
      codecs[t].mode = model::CodecMode::uncompressed;
    } else if (observing) {
      codecs[t].mode = model::CodecMode::quantize;
      codecs[t].bits = config_.adaptive.reference_bits;
      codecs[t].bucket_size = config_.adaptive.bucket_size;
    } else {
      codecs[t] = active_plan_.resolve(first[t].layer.name);
    }
  }

  last_trace_ = simnet::StepTrace{};

  std::vector<std::size_t> dense;  // tensor indices reduced through buffers
  for (std::size_t t = 0; t < count; ++t)
    if (codecs[t].mode != model::CodecMode::topk) dense.push_back(t);

  std::vector<std::size_t> dense_elements;
  for (std::size_t t : dense) dense_elements.push_back(first[t].layer.elements);
  const auto buffers =
      model::pack_fused_buffers(dense_elements, config_.fuse_limit_bytes);

  for (std::size_t b = 0; b < buffers.size(); ++b) {
    const model::FusedBuffer& buffer = buffers[b];
    collectives::ReduceRequest request;
    request.topology = config_.topology;
    request.op = collectives::ReduceOp::average;
    request.step_seed =
        hash_combine(hash_combine(config_.step_seed, steps_), b);
    request.inputs.assign(nodes, std::vector<float>(buffer.total_elements));
    for (std::size_t n = 0; n < nodes; ++n)
      for (const model::BufferSegment& seg : buffer.segments) {
        const auto& values = states_[n].pending[dense[seg.tensor_index]].values;
        std::copy(values.begin() + seg.layer_offset,
                  values.begin() + seg.layer_offset + seg.length,
                  request.inputs[n].begin() + seg.buffer_offset);
      }
    for (const model::BufferSegment& seg : buffer.segments) {
      const model::LayerCodec& codec = codecs[dense[seg.tensor_index]];
      collectives::Segment piece;
      piece.offset = seg.buffer_offset;
      piece.length = seg.length;
      piece.mode = codec.mode;
      piece.bits = codec.bits;
      piece.bucket_size = codec.bucket_size;
      request.segments.push_back(piece);
    }

    collectives::ReduceResult reduced = collectives::allreduce(request, net_);
    last_trace_.accumulate(reduced.trace);
    for (std::size_t n = 0; n < nodes; ++n)
      for (const model::BufferSegment& seg : buffer.segments) {
        auto& values = states_[n].results[dense[seg.tensor_index]].values;
        std::copy(reduced.outputs[n].begin() + seg.buffer_offset,
                  reduced.outputs[n].begin() + seg.buffer_offset + seg.length,
                  values.begin() + seg.layer_offset);
      }
  }

  for (std::size_t t = 0; t < count; ++t) {
    if (codecs[t].mode != model::CodecMode::topk) continue;
    const std::size_t elements = first[t].layer.elements;
    const std::size_t k =
        std::min(std::max<std::size_t>(1, codecs[t].k), elements);
    if (nodes == 1) {
      // a single node exchanges nothing, so nothing is compressed
      states_[0].results[t].values = states_[0].pending[t].values;
      continue;
    }
    std::vector<codec::SparseChunk> chunks(nodes);
    for (std::size_t n = 0; n < nodes; ++n) {
      auto state = feedback_[n].find(first[t].layer.name);
      if (state == feedback_[n].end())
        state = feedback_[n]
                    .emplace(first[t].layer.name,
                             codec::ErrorFeedbackState(elements))
                    .first;
      chunks[n] =
          codec::topk_compress(states_[n].pending[t].values, k, state->second);
    }
    collectives::ReduceResult reduced = collectives::sparse_allreduce(
        chunks, collectives::ReduceOp::average, net_);
    last_trace_.accumulate(reduced.trace);
    for (std::size_t n = 0; n < nodes; ++n)
      states_[n].results[t].values = std::move(reduced.outputs[n]);
  }

  if (observing) {
    // feed the planner the exact mean gradient of every planned layer
    std::size_t fed = 0;
    for (std::size_t t = 0; t < count; ++t) {
      if (config_.filters.excluded(first[t].layer)) continue;
      std::vector<float> mean = states_[0].pending[t].values;
      for (std::size_t n = 1; n < nodes; ++n) {
        const auto& values = states_[n].pending[t].values;
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += values[i];
      }
      for (float& v : mean) v /= float(nodes);
      collector_.add(first[t].layer.name, mean);
      fed += 1;
    }
    if (fed > 0) collector_.finish_step();
  }

  total_trace_.accumulate(last_trace_);
  exchanged_ = true;
}

void Engine::observe_and_replan() {
  try {
    const auto stats = collector_.stats();
    const auto snapshots = collector_.snapshots();
    adaptive::PlanDecision decision =
        adaptive::build_plan(stats, snapshots, config_.adaptive);
    if (decision.within_budget) {
      active_plan_ = decision.to_compression_plan();
      plan_history_.push_back({steps_, decision});
      record("plan_swap", decision.to_json());
    } else {
      json payload;
      payload["message"] = "plan exceeds the error budget; keeping the previous plan";
      payload["decision"] = json::parse(decision.to_json());
      record("planner_warning", payload.dump());
    }
  } catch (const std::exception& e) {
    json payload;
    payload["message"] = e.what();
    record("planner_warning", payload.dump());
  }
  collector_.clear();
}

}  // namespace gcomm::engine
