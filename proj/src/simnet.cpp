#include "gcomm/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace gcomm::simnet {

using nlohmann::json;

void SimNetConfig::validate() const {
  if (nodes < 1) throw std::invalid_argument("simnet needs at least one node");
  if (nodes > 64) throw std::invalid_argument("simnet supports at most 64 nodes");
  auto check = [](double alpha, double beta, const std::string& where) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
      throw std::invalid_argument(where + ": alpha must be finite and >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta))
      throw std::invalid_argument(where + ": beta must be finite and >= 0");
  };
  check(alpha_s, beta_s_per_byte, "simnet defaults");
  for (const auto& [key, params] : link_overrides) {
    if (key.first >= nodes || key.second >= nodes)
      throw std::invalid_argument("link override references unknown node");
    check(params.alpha_s, params.beta_s_per_byte,
          "link " + std::to_string(key.first) + "->" + std::to_string(key.second));
  }
}

LinkParams SimNetConfig::link(std::size_t from, std::size_t to) const {
  auto it = link_overrides.find({from, to});
  if (it != link_overrides.end()) return it->second;
  return {alpha_s, beta_s_per_byte};
}

SimNetConfig SimNetConfig::preset(const std::string& name, std::size_t nodes) {
  SimNetConfig cfg;
  cfg.nodes = nodes;
  cfg.alpha_s = 10e-6;
  if (name == "commodity") {
    cfg.beta_s_per_byte = 1.0 / 15e9;
  } else if (name == "overprovisioned") {
    cfg.beta_s_per_byte = 1.0 / 100e9;
  } else if (name == "cloud") {
    cfg.beta_s_per_byte = 1.0 / 5e9;
  } else {
    throw std::invalid_argument("unknown simnet preset: " + name);
  }
  cfg.validate();
  return cfg;
}

SimNetConfig SimNetConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  SimNetConfig cfg;
  cfg.nodes = j.at("nodes").get<std::size_t>();
  cfg.alpha_s = j.value("alpha_s", cfg.alpha_s);
  cfg.beta_s_per_byte = j.value("beta_s_per_byte", cfg.beta_s_per_byte);
  if (j.contains("links")) {
    for (const auto& item : j.at("links")) {
      LinkParams params{item.value("alpha_s", cfg.alpha_s),
                        item.value("beta_s_per_byte", cfg.beta_s_per_byte)};
      cfg.link_overrides[{item.at("i").get<std::size_t>(),
                          item.at("j").get<std::size_t>()}] = params;
    }
  }
  cfg.validate();
  return cfg;
}

std::string SimNetConfig::to_json() const {
  json links = json::array();
  for (const auto& [key, params] : link_overrides)
    links.push_back({{"i", key.first},
                     {"j", key.second},
                     {"alpha_s", params.alpha_s},
                     {"beta_s_per_byte", params.beta_s_per_byte}});
  json j{{"nodes", nodes},
         {"alpha_s", alpha_s},
         {"beta_s_per_byte", beta_s_per_byte}};
  if (!links.empty()) j["links"] = links;
  return j.dump(2);
}

std::uint64_t StepTrace::total_bytes_sent() const {
  std::uint64_t total = 0;
  for (auto b : bytes_sent) total += b;
  return total;
}

std::uint64_t StepTrace::total_bytes_received() const {
  std::uint64_t total = 0;
  for (auto b : bytes_received) total += b;
  return total;
}

void StepTrace::accumulate(const StepTrace& other) {
  if (bytes_sent.size() < other.bytes_sent.size()) {
    bytes_sent.resize(other.bytes_sent.size(), 0);
    bytes_received.resize(other.bytes_received.size(), 0);
  }
  for (std::size_t i = 0; i < other.bytes_sent.size(); ++i) {
    bytes_sent[i] += other.bytes_sent[i];
    bytes_received[i] += other.bytes_received[i];
  }
  message_count += other.message_count;
  rounds += other.rounds;
  virtual_time_s += other.virtual_time_s;
  compress_calls += other.compress_calls;
  decompress_calls += other.decompress_calls;
  max_compress_depth = std::max(max_compress_depth, other.max_compress_depth);
}

namespace {

struct InFlight {
  Message msg;
  double arrival_s = 0.0;
};

// thrown into node programs when the step is being torn down after a failure
struct SimAbort {};

}  // namespace

struct SimNet::State {
  std::mutex mu;
  std::condition_variable cv;

  std::vector<double> clock_s;      // per-node program time (advanced by recv)
  std::vector<double> port_free_s;  // when the node's egress port drains
  std::map<std::pair<std::size_t, std::size_t>, std::deque<InFlight>> links;

  std::vector<std::uint64_t> bytes_sent;
  std::vector<std::uint64_t> bytes_received;
  std::uint64_t message_count = 0;

  std::size_t unfinished = 0;
  std::size_t waiting = 0;
  // source node each receiver is currently blocked on, or npos
  std::vector<std::size_t> waiting_on;
  bool failed = false;
  std::exception_ptr first_error;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  void fail(std::exception_ptr err) {
    if (!failed) {
      failed = true;
      first_error = err;
    }
    cv.notify_all();
  }

  // True when no unfinished node can ever make progress: all of them are
  // blocked in recv and every awaited queue is empty.  Call with mu held.
  bool deadlocked() {
    if (unfinished == 0 || waiting != unfinished) return false;
    for (std::size_t at = 0; at < waiting_on.size(); ++at) {
      if (waiting_on[at] == npos) continue;
      auto it = links.find({waiting_on[at], at});
      if (it != links.end() && !it->second.empty()) return false;
    }
    return true;
  }
};

SimNet::SimNet(SimNetConfig config) : config_(std::move(config)) {
  config_.validate();
}

SimNet::~SimNet() = default;

void SimNet::do_send(std::size_t from, std::size_t to,
                     std::vector<std::uint8_t> bytes, std::uint64_t note) {
  if (to >= config_.nodes)
    throw std::invalid_argument("send to unknown node " + std::to_string(to));
  if (to == from) throw std::invalid_argument("self messages are not routed");
  const LinkParams link = config_.link(from, to);

  std::unique_lock<std::mutex> lock(state_->mu);
  if (state_->failed) throw SimAbort{};
  State& st = *state_;
  // The egress port serializes payload bytes; wire latency alpha overlaps
  // with other transfers, so back-to-back sends pay alpha only once each on
  // top of their queued bandwidth time.
  const double start = std::max(st.clock_s[from], st.port_free_s[from]);
  const double port_done = start + link.beta_s_per_byte * double(bytes.size());
  const double arrival = port_done + link.alpha_s;
  st.port_free_s[from] = port_done;
  st.bytes_sent[from] += bytes.size();
  st.message_count += 1;
  st.links[{from, to}].push_back({Message{std::move(bytes), note}, arrival});
  st.cv.notify_all();
}

Message SimNet::do_recv(std::size_t at, std::size_t from) {
  if (from >= config_.nodes)
    throw std::invalid_argument("recv from unknown node " + std::to_string(from));
  if (from == at) throw std::invalid_argument("self messages are not routed");

  std::unique_lock<std::mutex> lock(state_->mu);
  State& st = *state_;
  auto& queue = st.links[{from, at}];
  if (queue.empty()) {
    ++st.waiting;
    st.waiting_on[at] = from;
    while (queue.empty() && !st.failed) {
      if (st.deadlocked()) {
        st.fail(std::make_exception_ptr(std::runtime_error(
            "deadlock: node " + std::to_string(at) + " waiting on link " +
            std::to_string(from) + "->" + std::to_string(at) +
            " with no pending sends")));
        break;
      }
      st.cv.wait(lock);
    }
    --st.waiting;
    st.waiting_on[at] = State::npos;
  }
  if (st.failed) throw SimAbort{};

  InFlight in = std::move(queue.front());
  queue.pop_front();
  st.clock_s[at] = std::max(st.clock_s[at], in.arrival_s);
  st.bytes_received[at] += in.msg.bytes.size();
  return std::move(in.msg);
}

void NodeHandle::send(std::size_t to, std::vector<std::uint8_t> bytes,
                      std::uint64_t note) {
  net_->do_send(id_, to, std::move(bytes), note);
}

Message NodeHandle::recv(std::size_t from) { return net_->do_recv(id_, from); }

std::size_t NodeHandle::node_count() const { return net_->config().nodes; }

StepTrace SimNet::run_step(const std::vector<NodeProgram>& programs) {
  if (programs.size() != config_.nodes)
    throw std::invalid_argument("expected one program per node, got " +
                                std::to_string(programs.size()));

  state_ = std::make_unique<State>();
  State& st = *state_;
  st.clock_s.assign(config_.nodes, 0.0);
  st.port_free_s.assign(config_.nodes, 0.0);
  st.bytes_sent.assign(config_.nodes, 0);
  st.bytes_received.assign(config_.nodes, 0);
  st.waiting_on.assign(config_.nodes, State::npos);
  st.unfinished = config_.nodes;

  std::vector<std::thread> workers;
  workers.reserve(config_.nodes);
  for (std::size_t i = 0; i < config_.nodes; ++i) {
    workers.emplace_back([this, i, &programs]() {
      NodeHandle handle(this, i);
      try {
        if (programs[i]) programs[i](handle);
      } catch (const SimAbort&) {
        // tear-down path after another node already failed
      } catch (...) {
        std::lock_guard<std::mutex> lock(state_->mu);
        state_->fail(std::current_exception());
      }
      std::lock_guard<std::mutex> lock(state_->mu);
      --state_->unfinished;
      // a finished node can no longer unblock anyone; re-check for deadlock
      if (!state_->failed && state_->deadlocked())
        state_->fail(std::make_exception_ptr(std::runtime_error(
            "deadlock: all remaining nodes blocked in recv")));
      state_->cv.notify_all();
    });
  }
  for (auto& w : workers) w.join();

  if (st.failed) {
    auto err = st.first_error;
    state_.reset();
    std::rethrow_exception(err);
  }

  for (const auto& [key, queue] : st.links) {
    if (!queue.empty()) {
      auto msg = "unmatched send: " + std::to_string(queue.size()) +
                 " message(s) on link " + std::to_string(key.first) + "->" +
                 std::to_string(key.second) + " never received";
      state_.reset();
      throw std::runtime_error(msg);
    }
  }

  StepTrace trace;
  trace.bytes_sent = st.bytes_sent;
  trace.bytes_received = st.bytes_received;
  trace.message_count = st.message_count;
  for (std::size_t i = 0; i < config_.nodes; ++i)
    trace.virtual_time_s =
        std::max({trace.virtual_time_s, st.clock_s[i], st.port_free_s[i]});
  state_.reset();
  return trace;
}

}  // namespace gcomm::simnet
