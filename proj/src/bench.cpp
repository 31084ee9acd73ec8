#include "gcomm/bench.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "gcomm/util.hpp"

namespace gcomm::bench {

using nlohmann::json;

namespace {

// fixed-precision so CSV bytes never depend on locale or formatting drift
std::string fmt_time(double s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9e", s);
  return buf;
}

simnet::SimNetConfig net_from_json(const json& j, std::uint32_t nodes) {
  if (j.contains("net")) return simnet::SimNetConfig::from_json(j.at("net").dump());
  std::string preset = j.value("preset", std::string("commodity"));
  return simnet::SimNetConfig::preset(preset, nodes);
}

std::vector<std::vector<float>> zero_inputs(std::size_t nodes, std::size_t elements) {
  return std::vector<std::vector<float>>(nodes, std::vector<float>(elements, 0.0f));
}

collectives::ReduceResult time_uncompressed(std::size_t elements, std::size_t nodes,
                                            collectives::Topology topology,
                                            const simnet::SimNetConfig& net_config) {
  collectives::ReduceRequest request;
  request.inputs = zero_inputs(nodes, elements);
  collectives::Segment seg;
  seg.offset = 0;
  seg.length = elements;
  seg.mode = model::CodecMode::uncompressed;
  request.segments = {seg};
  request.topology = topology;
  request.op = collectives::ReduceOp::sum;
  request.step_seed = 0;
  simnet::SimNet net(net_config);
  return collectives::allreduce(request, net);
}

}  // namespace

// --- sweep -------------------------------------------------------------------

void SweepConfig::validate() const {
  if (elements == 0) throw std::invalid_argument("sweep: elements must be positive");
  if (ratios.empty()) throw std::invalid_argument("sweep: ratios must be nonempty");
  for (auto r : ratios) {
    if (r == 0) throw std::invalid_argument("sweep: ratio must be >= 1");
    if (r > elements) throw std::invalid_argument("sweep: ratio exceeds element count");
  }
  if (nodes == 0) throw std::invalid_argument("sweep: nodes must be positive");
  if (compute_floor_s < 0) throw std::invalid_argument("sweep: negative compute floor");
  net.validate();
  if (net.nodes != nodes) throw std::invalid_argument("sweep: nodes != net.nodes");
}

SweepConfig SweepConfig::from_json(const json& j) {
  SweepConfig c;
  c.elements = j.value("elements", c.elements);
  if (j.contains("ratios")) c.ratios = j.at("ratios").get<std::vector<std::uint32_t>>();
  if (j.contains("topology"))
    c.topology = collectives::topology_from_string(j.at("topology").get<std::string>());
  c.nodes = j.value("nodes", c.nodes);
  c.compute_floor_s = j.value("compute_floor_s", c.compute_floor_s);
  c.net = net_from_json(j, c.nodes);
  c.validate();
  return c;
}

json SweepConfig::to_json() const {
  return json{{"elements", elements},
              {"ratios", ratios},
              {"topology", collectives::to_string(topology)},
              {"nodes", nodes},
              {"compute_floor_s", compute_floor_s},
              {"net", json::parse(net.to_json())}};
}

std::vector<SweepRow> run_sweep(const SweepConfig& config) {
  config.validate();
  std::vector<SweepRow> rows;
  rows.reserve(config.ratios.size());
  for (auto ratio : config.ratios) {
    std::size_t kept = config.elements / ratio;  // transmit the head, drop the rest
    if (kept == 0) kept = 1;
    SweepRow row;
    row.ratio = ratio;
    row.payload_bytes = kept * sizeof(float);
    row.predicted_s =
        config.compute_floor_s + collectives::estimate_step_time(row.payload_bytes, config.nodes,
                                                                 config.topology, config.net);
    auto result = time_uncompressed(kept, config.nodes, config.topology, config.net);
    row.simulated_s = config.compute_floor_s + result.trace.virtual_time_s;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const SweepConfig& config, const std::vector<SweepRow>& rows) {
  std::string out;
  out += "# schema: sweep-v1\n";
  out += "# compute_floor_s=" + fmt_time(config.compute_floor_s) + "\n";
  out += "# topology=" + collectives::to_string(config.topology) +
         " nodes=" + std::to_string(config.nodes) +
         " elements=" + std::to_string(config.elements) + "\n";
  out += "ratio,payload_bytes,predicted_step_s,simulated_step_s\n";
  for (const auto& row : rows) {
    out += std::to_string(row.ratio) + "," + std::to_string(row.payload_bytes) + "," +
           fmt_time(row.predicted_s) + "," + fmt_time(row.simulated_s) + "\n";
  }
  return out;
}

// --- reduce table ------------------------------------------------------------

void ReduceBenchConfig::validate() const {
  if (payload_bytes.empty()) throw std::invalid_argument("reduce-bench: no payload sizes");
  for (auto p : payload_bytes) {
    if (p == 0 || p % sizeof(float) != 0)
      throw std::invalid_argument("reduce-bench: payload bytes must be a positive multiple of 4");
  }
  if (topologies.empty()) throw std::invalid_argument("reduce-bench: no topologies");
  if (nodes == 0) throw std::invalid_argument("reduce-bench: nodes must be positive");
  net.validate();
  if (net.nodes != nodes) throw std::invalid_argument("reduce-bench: nodes != net.nodes");
}

ReduceBenchConfig ReduceBenchConfig::from_json(const json& j) {
  ReduceBenchConfig c;
  if (j.contains("payload_bytes"))
    c.payload_bytes = j.at("payload_bytes").get<std::vector<std::size_t>>();
  if (j.contains("topologies")) {
    c.topologies.clear();
    for (const auto& name : j.at("topologies"))
      c.topologies.push_back(collectives::topology_from_string(name.get<std::string>()));
  }
  c.nodes = j.value("nodes", c.nodes);
  c.net = net_from_json(j, c.nodes);
  c.validate();
  return c;
}

json ReduceBenchConfig::to_json() const {
  json topo = json::array();
  for (auto t : topologies) topo.push_back(collectives::to_string(t));
  return json{{"payload_bytes", payload_bytes},
              {"topologies", topo},
              {"nodes", nodes},
              {"net", json::parse(net.to_json())}};
}

std::vector<ReduceBenchRow> run_reduce_bench(const ReduceBenchConfig& config) {
  config.validate();
  std::vector<ReduceBenchRow> rows;
  for (auto payload : config.payload_bytes) {
    for (auto topology : config.topologies) {
      ReduceBenchRow row;
      row.topology = topology;
      row.payload_bytes = payload;
      row.predicted_s =
          collectives::estimate_step_time(payload, config.nodes, topology, config.net);
      auto result =
          time_uncompressed(payload / sizeof(float), config.nodes, topology, config.net);
      row.simulated_s = result.trace.virtual_time_s;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string reduce_bench_csv(const ReduceBenchConfig& config,
                             const std::vector<ReduceBenchRow>& rows) {
  std::string out;
  out += "# schema: reduce-bench-v1\n";
  out += "# nodes=" + std::to_string(config.nodes) + "\n";
  out += "topology,payload_bytes,predicted_s,simulated_s\n";
  for (const auto& row : rows) {
    out += collectives::to_string(row.topology) + "," + std::to_string(row.payload_bytes) +
           "," + fmt_time(row.predicted_s) + "," + fmt_time(row.simulated_s) + "\n";
  }
  return out;
}

// --- canned population -------------------------------------------------------

LayerPopulation transformer_like_population(std::uint64_t seed) {
  struct Shape {
    const char* name;
    std::size_t elements;
    float scale;
  };
  // one wide low-magnitude table, eight mid blocks, two small hot layers
  const Shape shapes[] = {
      {"embed.tok", 8u << 20, 0.001f},
      {"layer0.attn.w", 1u << 19, 0.01f},
      {"layer0.mlp.w", 1u << 19, 0.012f},
      {"layer1.attn.w", 1u << 19, 0.01f},
      {"layer1.mlp.w", 1u << 19, 0.012f},
      {"layer2.attn.w", 1u << 19, 0.01f},
      {"layer2.mlp.w", 1u << 19, 0.012f},
      {"layer3.attn.w", 1u << 19, 0.01f},
      {"layer3.mlp.w", 1u << 19, 0.012f},
      {"embed.pos", 1u << 17, 0.3f},
      {"head.w", 1u << 17, 0.35f},
  };
  adaptive::StatsCollector collector(0.01);
  for (const auto& shape : shapes) {
    std::uint64_t layer_seed = hash_combine(seed, fnv1a64(shape.name));
    std::vector<float> values(shape.elements);
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = shape.scale * normal01(layer_seed, i);
    collector.add(shape.name, values);
  }
  collector.finish_step();
  return LayerPopulation{collector.stats(), collector.snapshots()};
}

// --- stats files -------------------------------------------------------------

namespace {

std::string digest_hex(std::span<const std::uint8_t> bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(bytes));
  return buf;
}

std::string sibling_bin_path(const std::string& json_path) {
  if (json_path.size() >= 5 && json_path.ends_with(".json"))
    return json_path.substr(0, json_path.size() - 5) + ".bin";
  return json_path + ".bin";
}

std::string basename_of(const std::string& path) {
  auto pos = path.find_last_of('/');
  return pos == std::string::npos ? path : path.substr(pos + 1);
}

std::string dirname_of(const std::string& path) {
  auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string() : path.substr(0, pos + 1);
}

}  // namespace

void save_stats_file(const std::string& json_path, const LayerPopulation& pop) {
  const std::string bin_path = sibling_bin_path(json_path);
  std::vector<std::uint8_t> blob;
  json layers = json::array();
  for (const auto& stat : pop.stats) {
    auto it = pop.snapshots.find(stat.name);
    if (it == pop.snapshots.end())
      throw std::invalid_argument("stats save: missing snapshot for " + stat.name);
    if (it->second.size() != stat.elements)
      throw std::invalid_argument("stats save: snapshot size mismatch for " + stat.name);
    std::vector<std::uint8_t> bytes;
    bytes.reserve(it->second.size() * 4);
    for (float v : it->second) le_put_f32(bytes, v);
    layers.push_back(json{{"name", stat.name},
                          {"elements", stat.elements},
                          {"l2_norm", stat.l2_norm},
                          {"top_fraction_norm", stat.top_fraction_norm},
                          {"snapshot_digest", digest_hex(bytes)}});
    blob.insert(blob.end(), bytes.begin(), bytes.end());
  }
  json manifest{{"format", "gcomm-stats-v1"},
                {"snapshot_file", basename_of(bin_path)},
                {"layers", layers}};

  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("stats save: cannot open " + bin_path);
  bin.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size()));
  if (!bin) throw std::runtime_error("stats save: write failed for " + bin_path);
  bin.close();

  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw std::runtime_error("stats save: cannot open " + json_path);
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("stats save: write failed for " + json_path);
}

LayerPopulation load_stats_file(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("stats load: cannot open " + json_path);
  json manifest = json::parse(in, nullptr, true);
  if (manifest.value("format", std::string()) != "gcomm-stats-v1")
    throw std::runtime_error("stats load: unknown format in " + json_path);

  const std::string bin_path =
      dirname_of(json_path) + manifest.at("snapshot_file").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("stats load: cannot open " + bin_path);
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bin)),
                                 std::istreambuf_iterator<char>());

  LayerPopulation pop;
  std::size_t offset = 0;
  for (const auto& entry : manifest.at("layers")) {
    adaptive::LayerStats stat;
    stat.name = entry.at("name").get<std::string>();
    stat.elements = entry.at("elements").get<std::size_t>();
    stat.l2_norm = entry.at("l2_norm").get<double>();
    stat.top_fraction_norm = entry.at("top_fraction_norm").get<double>();
    const std::size_t bytes = stat.elements * 4;
    if (offset + bytes > blob.size())
      throw std::runtime_error("stats load: snapshot blob truncated at " + stat.name);
    std::span<const std::uint8_t> slice(blob.data() + offset, bytes);
    if (digest_hex(slice) != entry.at("snapshot_digest").get<std::string>())
      throw std::runtime_error("stats load: digest mismatch for " + stat.name);
    std::vector<float> values(stat.elements);
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = le_get_f32(slice.data() + i * 4);
    pop.snapshots.emplace(stat.name, std::move(values));
    pop.stats.push_back(std::move(stat));
    offset += bytes;
  }
  if (offset != blob.size())
    throw std::runtime_error("stats load: trailing bytes in " + bin_path);
  return pop;
}

}  // namespace gcomm::bench
