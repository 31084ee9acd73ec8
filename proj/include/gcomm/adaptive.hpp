#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gcomm/model.hpp"

namespace gcomm::adaptive {

// Per-layer summary of the gradients accumulated elementwise over one
// observation window.  Norms describe the accumulated vector, not any single
// step, so a window of identical gradients g over w steps reports w*|g|.
struct LayerStats {
  std::string name;
  std::size_t elements = 0;
  double l2_norm = 0.0;            // l2 norm of the accumulated snapshot
  double top_fraction_norm = 0.0;  // l2 norm of its largest-magnitude coords
};

// Accumulates per-coordinate gradient sums between plan rebuilds.  The
// accumulated snapshot doubles as the probe vector that plan errors are
// measured on.  Every known layer must be fed exactly once per step.
class StatsCollector {
 public:
  explicit StatsCollector(double top_fraction = 0.01);

  void add(const std::string& layer, std::span<const float> values);
  void finish_step();  // validates that no known layer was skipped
  std::size_t steps() const { return steps_; }

  std::vector<LayerStats> stats() const;  // first-seen layer order
  std::map<std::string, std::vector<float>> snapshots() const;
  void clear();

 private:
  struct Entry {
    std::vector<double> sum;
    bool touched = false;
  };
  double top_fraction_;
  std::size_t steps_ = 0;
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
};

struct AdaptiveConfig {
  std::string method = "kmeans";              // "linear" or "kmeans"
  std::vector<int> palette = {2, 3, 4, 5, 6, 8};  // ascending candidate widths
  double alpha = 1.0;          // budget: plan error <= alpha * uniform-4 error
  double top_fraction = 0.01;  // coordinate share for the top-norm statistic
  std::size_t bucket_size = 128;
  int reference_bits = 4;      // uniform width the budget is measured against
  std::size_t clusters = 0;    // 0 = palette size (capped at the layer count)
  std::size_t stats_period = 1000;  // steps between plan rebuilds
  std::size_t stats_window = 50;    // observation steps per rebuild
  bool pair_buckets = false;   // low widths get wider buckets (1024 down to 128)
  std::uint64_t seed = 1;      // cluster seeding
  std::uint64_t probe_seed = 0x9e3779b97f4a7c15ULL;

  void validate() const;
  static AdaptiveConfig from_json(const std::string& text);
  std::string to_json() const;
};

struct PlanDecision {
  std::map<std::string, int> bits;
  std::map<std::string, std::size_t> buckets;
  bool within_budget = true;
  double plan_error = 0.0;      // l2 error of the probes under the plan
  double baseline_error = 0.0;  // same measure at uniform reference bits
  double compression_ratio = 1.0;  // payload bytes at reference vs under plan

  model::CompressionPlan to_compression_plan() const;
  std::string to_json() const;
};

// Raw width assignment, before any budget repair.
std::map<std::string, int> assign_bits_linear(const std::vector<LayerStats>& stats,
                                              const AdaptiveConfig& config);
std::map<std::string, int> assign_bits_kmeans(const std::vector<LayerStats>& stats,
                                              const AdaptiveConfig& config);

// Total quantization error of the snapshots under the given widths: the root
// of the summed squared elementwise errors across all layers (fixed seed per
// layer name).  Buckets fall back to the config default when absent.
double plan_error(const std::map<std::string, std::vector<float>>& snapshots,
                  const std::map<std::string, int>& bits,
                  const std::map<std::string, std::size_t>& buckets,
                  const AdaptiveConfig& config);

// Assigns widths, measures the error budget against uniform reference bits,
// and promotes every layer one palette step at a time until the plan fits (or
// everything is at the top width, reported as a budget miss).
PlanDecision build_plan(const std::vector<LayerStats>& stats,
                        const std::map<std::string, std::vector<float>>& snapshots,
                        const AdaptiveConfig& config);

}  // namespace gcomm::adaptive
