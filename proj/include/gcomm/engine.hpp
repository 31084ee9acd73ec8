#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcomm/adaptive.hpp"
#include "gcomm/collectives.hpp"
#include "gcomm/model.hpp"
#include "gcomm/simnet.hpp"

namespace gcomm::engine {

// Layouts disagree across nodes or with the first step.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Submission or flush out of phase with the step barrier.
struct OrderingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PlanSource { static_plan, adaptive };

struct EngineConfig {
  std::size_t nodes = 0;
  std::size_t fuse_limit_bytes = 64ull << 20;  // aggregation cut size
  double cycle_time_s = 0.005;  // aggregation cut time; a full step's
                                // submissions share one virtual instant, so
                                // only the size cut ever triggers
  collectives::Topology topology = collectives::Topology::sra;
  PlanSource plan_source = PlanSource::static_plan;
  model::CompressionPlan plan;               // static source
  adaptive::AdaptiveConfig adaptive;         // adaptive source
  model::FilterRules filters;
  std::uint64_t step_seed = 1;

  void validate() const;
};

struct EngineEvent {
  std::uint64_t step = 0;
  std::string event;
  std::string payload;  // serialized json object
};

struct PlanSwap {
  std::uint64_t step = 0;  // step whose completion installed the plan
  adaptive::PlanDecision decision;
};

// Per-node gradient aggregation and exchange with a synchronous step barrier.
//
// All nodes submit their layers (identical layout), then every node flushes.
// The first flush of a step runs the exchange: tensors are packed into fused
// buffers up to the size cut, each layer region carries the codec chosen by
// the filter rules and the active plan, and the buffers are all-reduced over
// the simulated network.  Every flush hands back that node's averaged
// gradients in submission order; the step completes when the last node has
// flushed.  Submitting while a step is mid-flush is an ordering error.
class Engine {
 public:
  Engine(EngineConfig config, simnet::SimNetConfig net_config);

  void submit(std::size_t node, model::GradientTensor gradient);
  std::vector<model::GradientTensor> flush(std::size_t node);

  std::uint64_t steps_completed() const { return steps_; }
  const simnet::StepTrace& last_trace() const { return last_trace_; }
  const simnet::StepTrace& total_trace() const { return total_trace_; }
  const model::CompressionPlan& active_plan() const { return active_plan_; }
  const std::vector<EngineEvent>& events() const { return events_; }
  std::string events_json() const;  // one {step, event, payload} object per line
  const std::vector<PlanSwap>& plan_history() const { return plan_history_; }
  const EngineConfig& config() const { return config_; }

 private:
  struct NodeState {
    std::vector<model::GradientTensor> pending;
    std::vector<model::GradientTensor> results;
    bool flushed = false;
  };

  void exchange();
  void observe_and_replan();
  void record(const std::string& event, const std::string& payload);

  EngineConfig config_;
  simnet::SimNet net_;
  std::vector<NodeState> states_;
  std::vector<model::LayerSpec> layout_;  // canonical layout from the first step
  bool exchanged_ = false;               // current step already reduced
  std::uint64_t steps_ = 0;
  simnet::StepTrace last_trace_;
  simnet::StepTrace total_trace_;
  model::CompressionPlan active_plan_;
  std::vector<EngineEvent> events_;
  std::vector<PlanSwap> plan_history_;
  adaptive::StatsCollector collector_;
  std::vector<std::map<std::string, codec::ErrorFeedbackState>> feedback_;
};

}  // namespace gcomm::engine
