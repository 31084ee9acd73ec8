#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace gcomm::simnet {

struct LinkParams {
  double alpha_s = 0.0;         // per-message latency, seconds
  double beta_s_per_byte = 0.0; // inverse bandwidth, seconds per byte
};

struct SimNetConfig {
  std::size_t nodes = 0;
  double alpha_s = 10e-6;
  double beta_s_per_byte = 1.0 / 15e9;
  // directed (from, to) -> parameters for that link only
  std::map<std::pair<std::size_t, std::size_t>, LinkParams> link_overrides;

  void validate() const;
  LinkParams link(std::size_t from, std::size_t to) const;

  // "commodity" (15 GB/s), "overprovisioned" (100 GB/s), "cloud" (5 GB/s);
  // all with 10 us message latency
  static SimNetConfig preset(const std::string& name, std::size_t nodes);
  static SimNetConfig from_json(const std::string& text);
  std::string to_json() const;
};

struct Message {
  std::vector<std::uint8_t> bytes;
  // out-of-band annotation for bookkeeping (e.g. requantization depth);
  // carries no cost and does not count toward transferred bytes
  std::uint64_t note = 0;
};

// Accounting for one simulated step.  Collective algorithms fill in `rounds`
// and the compression counters; the simulator owns the rest.
struct StepTrace {
  std::vector<std::uint64_t> bytes_sent;      // per node
  std::vector<std::uint64_t> bytes_received;  // per node
  std::uint64_t message_count = 0;
  std::uint64_t rounds = 0;
  double virtual_time_s = 0.0;
  std::uint64_t compress_calls = 0;
  std::uint64_t decompress_calls = 0;
  std::uint64_t max_compress_depth = 0;  // re-encodes on the worst value path

  std::uint64_t total_bytes_sent() const;
  std::uint64_t total_bytes_received() const;
  // sequential composition: bytes and rounds add, virtual time adds
  void accumulate(const StepTrace& other);
};

class SimNet;

// Per-node façade handed to node programs.  send() is asynchronous: the
// sending node's egress port serializes payload bytes at beta per byte, and
// the wire adds alpha before the message becomes receivable.  recv() blocks
// until the next message on that directed link arrives (FIFO order).
class NodeHandle {
 public:
  void send(std::size_t to, std::vector<std::uint8_t> bytes, std::uint64_t note = 0);
  Message recv(std::size_t from);
  std::size_t id() const { return id_; }
  std::size_t node_count() const;

 private:
  friend class SimNet;
  NodeHandle(SimNet* net, std::size_t id) : net_(net), id_(id) {}
  SimNet* net_;
  std::size_t id_;
};

using NodeProgram = std::function<void(NodeHandle&)>;

class SimNet {
 public:
  explicit SimNet(SimNetConfig config);
  ~SimNet();

  // Runs one program per node to completion and returns the step accounting.
  // Virtual time is computed from the event log, so the result is identical
  // no matter how the underlying threads interleave.  Throws on deadlock
  // (every unfinished node blocked in recv) and on unmatched sends.
  StepTrace run_step(const std::vector<NodeProgram>& programs);

  const SimNetConfig& config() const { return config_; }

 private:
  friend class NodeHandle;
  struct State;
  void do_send(std::size_t from, std::size_t to, std::vector<std::uint8_t> bytes,
               std::uint64_t note);
  Message do_recv(std::size_t at, std::size_t from);

  SimNetConfig config_;
  std::unique_ptr<State> state_;
};

}  // namespace gcomm::simnet
