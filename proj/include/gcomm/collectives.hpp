#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcomm/codec.hpp"
#include "gcomm/model.hpp"
#include "gcomm/simnet.hpp"

namespace gcomm::collectives {

enum class Topology { sra, ring, tree };

Topology topology_from_string(const std::string& s);
std::string to_string(Topology topology);

enum class ReduceOp { sum, average };

// Codec assignment for one contiguous element range of the reduced buffer.
// Bucket grids anchor at segment start; chunk boundaries are aligned down so
// no bucket ever spans two owners.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
  model::CodecMode mode = model::CodecMode::quantize;  // quantize or uncompressed
  int bits = 4;
  std::size_t bucket_size = 128;
};

struct ReduceRequest {
  std::vector<std::vector<float>> inputs;  // one buffer per node, equal lengths
  std::vector<Segment> segments;           // contiguous cover of [0, length)
  Topology topology = Topology::sra;
  ReduceOp op = ReduceOp::sum;
  std::uint64_t step_seed = 0;
};

struct ReduceResult {
  std::vector<std::vector<float>> outputs;  // identical across nodes
  simnet::StepTrace trace;
};

// All-reduce over the simulated network.  Aggregation sums float32 values in
// each algorithm's fixed deterministic order (ascending node id at every
// point where one node folds multiple contributions), so repeated runs are
// bitwise identical.  Quantized traffic re-encodes with a fresh seed per
// (step, hop, sender).
ReduceResult allreduce(const ReduceRequest& request, simnet::SimNet& net);

// The exact vector a lossless run of `allreduce` returns: the same fold each
// algorithm performs, computed directly on the inputs with no simulated
// traffic.  sra folds all nodes in ascending id order per chunk; ring folds
// each chunk along its traversal (owner last); tree folds pairwise toward
// node 0.  Compressed segments are ignored — callers use this as the
// uncompressed reference.
std::vector<float> lossless_reference(const ReduceRequest& request);

// Closed-form step time under uniform links for a payload of the given size:
// alpha times the latency rounds plus beta times the per-node critical-path
// bytes.  Matches the simulated virtual time for power-of-two node counts.
double estimate_step_time(std::size_t payload_bytes, std::size_t nodes,
                          Topology topology, const simnet::SimNetConfig& config);

std::uint64_t latency_rounds(Topology topology, std::size_t nodes);

// Seed handed to the quantizer for traffic encoded by `node` at `hop`.
std::uint64_t hop_seed(std::uint64_t step_seed, std::uint64_t hop, std::uint64_t node);

// Sparse path for topk-compressed layers: every node broadcasts its sparse
// chunk, and each node sums the scattered contributions in ascending node
// order.  One latency round.
ReduceResult sparse_allreduce(const std::vector<codec::SparseChunk>& chunks,
                              ReduceOp op, simnet::SimNet& net);

}  // namespace gcomm::collectives
