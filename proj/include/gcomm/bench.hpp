#pragma once

// Benchmark fixtures and table generators: compression-ratio sweeps with a
// truncation pseudo-codec, per-topology reduce timing tables, and a canned
// transformer-shaped layer population for bit-width planning experiments.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gcomm/adaptive.hpp"
#include "gcomm/collectives.hpp"
#include "gcomm/simnet.hpp"

#include "json.hpp"

namespace gcomm::bench {

// --- compression-ratio sweep -------------------------------------------------
//
// The sweep sends the first elements/ratio values of a gradient untouched and
// drops the rest.  That isolates wire-volume scaling from codec math: step
// time should fall with ratio until the latency floor takes over.

struct SweepConfig {
  std::size_t elements = 1u << 21;          // model gradient size, f32 each
  std::vector<std::uint32_t> ratios = {1, 2, 4, 8, 16, 32};
  collectives::Topology topology = collectives::Topology::sra;
  std::uint32_t nodes = 8;
  double compute_floor_s = 0.0005;          // per-step compute time, no overlap
  simnet::SimNetConfig net = simnet::SimNetConfig::preset("commodity", 8);

  void validate() const;

  static SweepConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SweepRow {
  std::uint32_t ratio = 1;
  std::size_t payload_bytes = 0;   // wire payload per node for one step
  double predicted_s = 0.0;        // compute floor + closed-form comm estimate
  double simulated_s = 0.0;        // compute floor + simulated comm time
};

std::vector<SweepRow> run_sweep(const SweepConfig& config);

// CSV with a versioned header comment; byte-identical for identical configs.
std::string sweep_csv(const SweepConfig& config, const std::vector<SweepRow>& rows);

// --- per-topology reduce table ----------------------------------------------

struct ReduceBenchConfig {
  std::vector<std::size_t> payload_bytes = {1u << 20, 64u << 20};
  std::vector<collectives::Topology> topologies = {
      collectives::Topology::sra, collectives::Topology::ring,
      collectives::Topology::tree};
  std::uint32_t nodes = 8;
  simnet::SimNetConfig net = simnet::SimNetConfig::preset("commodity", 8);

  void validate() const;

  static ReduceBenchConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ReduceBenchRow {
  collectives::Topology topology = collectives::Topology::sra;
  std::size_t payload_bytes = 0;
  double predicted_s = 0.0;
  double simulated_s = 0.0;
};

std::vector<ReduceBenchRow> run_reduce_bench(const ReduceBenchConfig& config);

std::string reduce_bench_csv(const ReduceBenchConfig& config,
                             const std::vector<ReduceBenchRow>& rows);

// --- canned layer population -------------------------------------------------
//
// A transformer-shaped model in miniature: one huge low-magnitude embedding,
// a block of mid-sized attention/mlp matrices, and two small high-magnitude
// layers (positional table, output head).  Gradient snapshots are synthetic
// gaussians scaled per layer; stats come from the same collector the planner
// uses in training.

struct LayerPopulation {
  std::vector<adaptive::LayerStats> stats;
  std::map<std::string, std::vector<float>> snapshots;
};

LayerPopulation transformer_like_population(std::uint64_t seed);

// --- stats files -------------------------------------------------------------
//
// On disk: <path> is a JSON manifest naming a sibling binary blob with every
// layer's snapshot concatenated as little-endian f32, in manifest order.
// Per-layer digests detect manifest/blob mismatches on load.

void save_stats_file(const std::string& json_path, const LayerPopulation& pop);
LayerPopulation load_stats_file(const std::string& json_path);

}  // namespace gcomm::bench
