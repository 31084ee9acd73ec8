#include "gcomm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gcomm/adaptive.hpp"
#include "gcomm/bench.hpp"
#include "gcomm/collectives.hpp"
#include "gcomm/engine.hpp"
#include "gcomm/model.hpp"
#include "gcomm/simnet.hpp"
#include "gcomm/train.hpp"
#include "gcomm/util.hpp"

namespace gcomm::cli {

using nlohmann::json;

namespace {

std::string fmt_time(double s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9e", s);
  return buf;
}

void emit_error(std::ostream& err, int code, const std::string& message) {
  err << json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw std::invalid_argument("config file is not a JSON object: " + path);
  return j;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

model::CodecMode mode_from_name(const std::string& s) {
  if (s == "quantize") return model::CodecMode::quantize;
  if (s == "topk") return model::CodecMode::topk;
  if (s == "uncompressed") return model::CodecMode::uncompressed;
  throw std::invalid_argument("unknown codec mode: " + s);
}

// --- sweep -------------------------------------------------------------------

struct SweepCmd {
  CLI::App* cmd = nullptr;
  std::size_t elements = 0;
  std::vector<std::uint32_t> ratios;
  std::string topology;
  std::uint32_t nodes = 0;
  std::string preset;
  double floor_s = 0.0;
  CLI::Option *o_elements, *o_ratios, *o_topology, *o_nodes, *o_preset, *o_floor;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand(
        "sweep", "step time vs. compression ratio (truncation pseudo-codec)");
    cmd->fallthrough();
    o_elements = cmd->add_option("--elements", elements, "model gradient element count");
    o_ratios = cmd->add_option("--ratios", ratios, "compression ratios to test")
                   ->delimiter(',');
    o_topology = cmd->add_option("--topology", topology, "sra|ring|tree");
    o_nodes = cmd->add_option("--nodes", nodes, "node count");
    o_preset = cmd->add_option("--preset", preset,
                               "network preset: commodity|overprovisioned|cloud");
    o_floor = cmd->add_option("--floor-s", floor_s, "per-step compute floor, seconds");
  }

  int execute(const json& cfg, const std::string& out_dir, std::ostream& out) const {
    json j = cfg;
    if (o_elements->count()) j["elements"] = elements;
    if (o_ratios->count()) j["ratios"] = ratios;
    if (o_topology->count()) j["topology"] = topology;
    if (o_floor->count()) j["compute_floor_s"] = floor_s;
    if (o_nodes->count() || o_preset->count()) {
      j.erase("net");  // explicit preset/nodes replaces any configured network
      if (o_nodes->count()) j["nodes"] = nodes;
      if (o_preset->count()) j["preset"] = preset;
    }
    auto config = bench::SweepConfig::from_json(j);
    auto rows = bench::run_sweep(config);
    const std::string csv_path = out_dir + "/sweep.csv";
    write_file(csv_path, bench::sweep_csv(config, rows));
    out << json{{"command", "sweep"}, {"rows", rows.size()}, {"csv", csv_path}}.dump()
        << "\n";
    return 0;
  }
};

// --- reduce-bench ------------------------------------------------------------

struct ReduceBenchCmd {
  CLI::App* cmd = nullptr;
  std::vector<std::size_t> payloads;
  std::vector<std::string> topologies;
  std::uint32_t nodes = 0;
  std::string preset;
  double alpha_s = 0.0;
  double beta = 0.0;
  CLI::Option *o_payloads, *o_topologies, *o_nodes, *o_preset, *o_alpha, *o_beta;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("reduce-bench",
                             "simulated reduction time per topology and payload");
    cmd->fallthrough();
    o_payloads = cmd->add_option("--payload-bytes", payloads, "payload sizes in bytes")
                     ->delimiter(',');
    o_topologies =
        cmd->add_option("--topologies", topologies, "subset of sra,ring,tree")
            ->delimiter(',');
    o_nodes = cmd->add_option("--nodes", nodes, "node count");
    o_preset = cmd->add_option("--preset", preset,
                               "network preset: commodity|overprovisioned|cloud");
    o_alpha = cmd->add_option("--alpha-s", alpha_s, "override per-message latency");
    o_beta = cmd->add_option("--beta-s-per-byte", beta, "override inverse bandwidth");
  }

  int execute(const json& cfg, const std::string& out_dir, std::ostream& out) const {
    json j = cfg;
    if (o_payloads->count()) j["payload_bytes"] = payloads;
    if (o_topologies->count()) j["topologies"] = topologies;
    if (o_nodes->count() || o_preset->count()) {
      j.erase("net");
      if (o_nodes->count()) j["nodes"] = nodes;
      if (o_preset->count()) j["preset"] = preset;
    }
    auto config = bench::ReduceBenchConfig::from_json(j);
    bool custom_net = j.contains("net") || o_alpha->count() || o_beta->count();
    if (o_alpha->count()) config.net.alpha_s = alpha_s;
    if (o_beta->count()) config.net.beta_s_per_byte = beta;
    config.net.validate();

    auto rows = bench::run_reduce_bench(config);
    const std::string csv_path = out_dir + "/reduce_bench.csv";
    write_file(csv_path, bench::reduce_bench_csv(config, rows));

    // stock commodity 8-node runs must honor the expected ranking
    const std::string preset_used =
        o_preset->count() ? preset : j.value("preset", std::string("commodity"));
    bool all_three =
        config.topologies == std::vector<collectives::Topology>{
                                 collectives::Topology::sra, collectives::Topology::ring,
                                 collectives::Topology::tree};
    bool check = !custom_net && preset_used == "commodity" && config.nodes == 8 &&
                 all_three;
    if (check) {
      for (std::size_t p = 0; p < config.payload_bytes.size(); ++p) {
        double sra = rows[p * 3 + 0].simulated_s;
        double ring = rows[p * 3 + 1].simulated_s;
        double tree = rows[p * 3 + 2].simulated_s;
        if (!(sra <= ring && ring <= tree))
          throw std::runtime_error(
              "reduction time ordering violated at payload " +
              std::to_string(config.payload_bytes[p]) + ": expected sra <= ring <= tree");
      }
    }
    out << json{{"command", "reduce-bench"},
                {"rows", rows.size()},
                {"ordering_checked", check},
                {"csv", csv_path}}
            .dump()
        << "\n";
    return 0;
  }
};

// --- train -------------------------------------------------------------------

struct TrainCmd {
  CLI::App* cmd = nullptr;
  std::string kind;
  std::size_t features = 0, classes = 0, hidden = 0;
  std::size_t train_examples = 0, test_examples = 0;
  double noise = 0.0, lr = 0.0, momentum = 0.0;
  std::size_t batch = 0, steps = 0;
  std::uint32_t nodes = 4;
  std::string topology;
  std::string mode;
  int bits = 0;
  std::size_t bucket = 0, topk_k = 0;
  std::string preset;
  std::size_t filter_min = 0;
  CLI::Option *o_kind, *o_features, *o_classes, *o_hidden, *o_train_ex, *o_test_ex,
      *o_noise, *o_lr, *o_momentum, *o_batch, *o_steps, *o_nodes, *o_topology, *o_mode,
      *o_bits, *o_bucket, *o_topk, *o_preset, *o_filter_min;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("train",
                             "data-parallel SGD: lossless baseline vs. compressed");
    cmd->fallthrough();
    o_kind = cmd->add_option("--task-kind", kind, "linreg|logreg|mlp");
    o_features = cmd->add_option("--features", features, "input dimension");
    o_classes = cmd->add_option("--classes", classes, "class count (classifiers)");
    o_hidden = cmd->add_option("--hidden", hidden, "hidden width (mlp)");
    o_train_ex = cmd->add_option("--train-examples", train_examples, "train set size");
    o_test_ex = cmd->add_option("--test-examples", test_examples, "test set size");
    o_noise = cmd->add_option("--noise", noise, "label/observation noise scale");
    o_lr = cmd->add_option("--lr", lr, "learning rate");
    o_momentum = cmd->add_option("--momentum", momentum, "momentum coefficient");
    o_batch = cmd->add_option("--batch", batch, "global batch size");
    o_steps = cmd->add_option("--steps", steps, "training steps");
    o_nodes = cmd->add_option("--nodes", nodes, "node count");
    o_topology = cmd->add_option("--topology", topology, "sra|ring|tree");
    o_mode = cmd->add_option("--mode", mode, "compressed run codec: quantize|topk");
    o_bits = cmd->add_option("--bits", bits, "quantization width");
    o_bucket = cmd->add_option("--bucket", bucket, "quantization bucket size");
    o_topk = cmd->add_option("--topk-k", topk_k, "kept coordinates per layer (topk)");
    o_preset = cmd->add_option("--preset", preset, "network preset");
    o_filter_min = cmd->add_option("--filter-min-elements", filter_min,
                                   "layers smaller than this stay uncompressed");
  }

  int execute(std::uint64_t seed, const json& cfg, const std::string& out_dir,
              std::ostream& out) const {
    train::TaskSpec task = cfg.contains("task")
                               ? train::TaskSpec::from_json(cfg.at("task").dump())
                               : train::TaskSpec{};
    if (o_kind->count()) task.kind = train::task_kind_from_string(kind);
    if (o_features->count()) task.features = features;
    if (o_classes->count()) task.classes = classes;
    if (o_hidden->count()) task.hidden = hidden;
    if (o_train_ex->count()) task.train_examples = train_examples;
    if (o_test_ex->count()) task.test_examples = test_examples;
    if (o_noise->count()) task.noise = noise;
    if (o_lr->count()) task.lr = lr;
    if (o_momentum->count()) task.momentum = momentum;
    if (o_batch->count()) task.batch = batch;
    if (o_steps->count()) task.steps = steps;
    // the global seed pins the data; config-file seeds are ignored on purpose
    task.data_seed = hash_combine(seed, 0xda7a);
    task.init_seed = hash_combine(seed, 0x1417);

    std::size_t node_count = o_nodes->count() ? nodes : cfg.value("nodes", 4u);
    engine::EngineConfig base;
    base.nodes = node_count;
    base.step_seed = hash_combine(seed, 0x57e9);
    std::string topo = o_topology->count()
                           ? topology
                           : cfg.value("topology", std::string("sra"));
    base.topology = collectives::topology_from_string(topo);
    if (cfg.contains("filters")) {
      const auto& f = cfg.at("filters");
      base.filters.min_elements = f.value("min_elements", base.filters.min_elements);
      if (f.contains("exclude_kinds")) {
        base.filters.exclude_kinds.clear();
        for (const auto& k : f.at("exclude_kinds"))
          base.filters.exclude_kinds.push_back(
              model::layer_kind_from_string(k.get<std::string>()));
      }
      if (f.contains("exclude_patterns"))
        base.filters.exclude_patterns =
            f.at("exclude_patterns").get<std::vector<std::string>>();
    }
    if (o_filter_min->count()) base.filters.min_elements = filter_min;

    model::LayerCodec codec;
    if (cfg.contains("codec")) {
      const auto& c = cfg.at("codec");
      codec.mode = mode_from_name(c.value("mode", std::string("quantize")));
      codec.bits = c.value("bits", codec.bits);
      codec.bucket_size = c.value("bucket_size", codec.bucket_size);
      codec.k = c.value("k", codec.k);
    }
    if (o_mode->count()) codec.mode = mode_from_name(mode);
    if (o_bits->count()) codec.bits = bits;
    if (o_bucket->count()) codec.bucket_size = bucket;
    if (o_topk->count()) codec.k = topk_k;
    // mode=uncompressed is allowed: the "compressed" run then mirrors the
    // baseline and the reported gap must be exactly zero

    engine::EngineConfig baseline = base;
    baseline.plan.defaults.mode = model::CodecMode::uncompressed;
    engine::EngineConfig compressed = base;
    compressed.plan.defaults = codec;

    std::string preset_name =
        o_preset->count() ? preset : cfg.value("preset", std::string("commodity"));
    auto net = simnet::SimNetConfig::preset(preset_name, node_count);

    auto base_res = train::train_data_parallel(task, baseline, net);
    auto comp_res = train::train_data_parallel(task, compressed, net);

    std::string csv = "# schema: train-v1\n";
    const char* mode_name = codec.mode == model::CodecMode::topk ? "topk"
                            : codec.mode == model::CodecMode::uncompressed
                                ? "uncompressed"
                                : "quantize";
    csv += "# task=" + train::to_string(task.kind) + " nodes=" +
           std::to_string(node_count) + " topology=" + topo + " mode=" +
           std::string(mode_name) + " bits=" + std::to_string(codec.bits) +
           " bucket=" + std::to_string(codec.bucket_size) + "\n";
    csv += "step,baseline_loss,compressed_loss\n";
    std::size_t n = std::min(base_res.series.size(), comp_res.series.size());
    for (std::size_t i = 0; i < n; ++i) {
      csv += std::to_string(base_res.series[i].step) + "," +
             fmt_time(base_res.series[i].loss) + "," + fmt_time(comp_res.series[i].loss) +
             "\n";
    }
    const std::string csv_path = out_dir + "/train_curves.csv";
    write_file(csv_path, csv);

    auto run_json = [](const train::TrainResult& r) {
      return json{{"final_loss", r.final_loss},
                  {"final_metric", r.final_metric},
                  {"diverged", r.diverged},
                  {"divergence_step", r.divergence_step},
                  {"total_bytes_sent", r.trace.total_bytes_sent()},
                  {"virtual_time_s", r.trace.virtual_time_s},
                  {"rounds", r.trace.rounds}};
    };
    double gap = base_res.final_metric - comp_res.final_metric;
    json summary{{"task", json::parse(task.to_json())},
                 {"nodes", node_count},
                 {"topology", topo},
                 {"baseline", run_json(base_res)},
                 {"compressed", run_json(comp_res)},
                 {"metric_gap", gap}};
    const std::string summary_path = out_dir + "/train_summary.json";
    write_file(summary_path, summary.dump(2) + "\n");

    out << json{{"command", "train"},
                {"metric_gap", gap},
                {"baseline_metric", base_res.final_metric},
                {"compressed_metric", comp_res.final_metric},
                {"csv", csv_path},
                {"summary", summary_path}}
            .dump()
        << "\n";
    return 0;
  }
};

// --- adapt -------------------------------------------------------------------

struct AdaptCmd {
  CLI::App* cmd = nullptr;
  std::string stats_path;
  std::string fixture = "transformer-like";
  bool live = false;
  std::size_t live_steps = 8;
  std::string algo;
  double alpha = 0.0;
  std::vector<int> palette;
  std::size_t bucket = 0, clusters = 0;
  double top_fraction = 0.0;
  bool pair_buckets = false;
  CLI::Option *o_stats, *o_fixture, *o_live, *o_live_steps, *o_algo, *o_alpha,
      *o_palette, *o_bucket, *o_clusters, *o_top_fraction, *o_pair;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("adapt",
                             "build a bit-width plan from layer stats and report "
                             "error/size vs. the uniform reference");
    cmd->fallthrough();
    o_stats = cmd->add_option("--stats", stats_path, "stats manifest produced earlier");
    o_fixture = cmd->add_option("--fixture", fixture, "canned population name");
    o_live = cmd->add_flag("--live", live, "collect stats from a fresh training run");
    o_live_steps = cmd->add_option("--live-steps", live_steps, "observation steps");
    o_algo = cmd->add_option("--algo", algo, "kmeans|linear");
    o_alpha = cmd->add_option("--alpha", alpha, "error budget multiplier");
    o_palette = cmd->add_option("--palette", palette, "candidate widths")->delimiter(',');
    o_bucket = cmd->add_option("--bucket", bucket, "quantization bucket size");
    o_clusters = cmd->add_option("--clusters", clusters, "cluster count (kmeans)");
    o_top_fraction = cmd->add_option("--top-fraction", top_fraction,
                                     "fraction for the top-coordinate norm");
    o_pair = cmd->add_flag("--pair-buckets", pair_buckets,
                           "wider buckets for lower widths");
  }

  bench::LayerPopulation collect_live(std::uint64_t seed, const json& cfg,
                                      double fraction) const {
    train::TaskSpec task = cfg.contains("task")
                               ? train::TaskSpec::from_json(cfg.at("task").dump())
                               : train::TaskSpec{};
    task.data_seed = hash_combine(seed, 0xda7a);
    task.init_seed = hash_combine(seed, 0x1417);
    task.validate(1);
    auto data =
        train::make_dataset(task, task.train_examples, hash_combine(task.data_seed, 1));
    auto params = train::init_parameters(task);
    train::TensorList velocity = params;
    for (auto& tensor : velocity) std::fill(tensor.values.begin(), tensor.values.end(), 0.0f);
    adaptive::StatsCollector collector(fraction);
    for (std::size_t step = 0; step < live_steps; ++step) {
      auto idx = train::batch_indices(task, step);
      auto shard = train::shard_gradients(task, data, params,
                                          std::span<const std::size_t>(idx));
      for (const auto& g : shard.gradients) collector.add(g.layer.name, g.values);
      collector.finish_step();
      train::apply_update(params, velocity, shard.gradients, task);
    }
    return bench::LayerPopulation{collector.stats(), collector.snapshots()};
  }

  int execute(std::uint64_t seed, const json& cfg, const std::string& out_dir,
              std::ostream& out) const {
    adaptive::AdaptiveConfig config =
        cfg.contains("adaptive")
            ? adaptive::AdaptiveConfig::from_json(cfg.at("adaptive").dump())
            : adaptive::AdaptiveConfig{};
    if (o_algo->count()) config.method = algo;
    if (o_alpha->count()) config.alpha = alpha;
    if (o_palette->count()) config.palette = palette;
    if (o_bucket->count()) config.bucket_size = bucket;
    if (o_clusters->count()) config.clusters = clusters;
    if (o_top_fraction->count()) config.top_fraction = top_fraction;
    if (o_pair->count()) config.pair_buckets = pair_buckets;
    config.seed = hash_combine(seed, 0xc1);
    config.validate();

    if (o_stats->count() + o_live->count() > 1)
      throw std::invalid_argument("adapt: pick one of --stats / --live");

    std::string source;
    bench::LayerPopulation pop;
    if (o_stats->count()) {
      source = "stats:" + stats_path;
      pop = bench::load_stats_file(stats_path);
    } else if (live) {
      source = "live";
      pop = collect_live(seed, cfg, config.top_fraction);
    } else {
      if (fixture != "transformer-like")
        throw std::invalid_argument("unknown fixture: " + fixture);
      source = "fixture:transformer-like";
      pop = bench::transformer_like_population(seed);
    }

    auto decision = adaptive::build_plan(pop.stats, pop.snapshots, config);
    const std::string plan_path = out_dir + "/plan.json";
    write_file(plan_path, decision.to_json() + "\n");

    json report{{"source", source},
                {"method", config.method},
                {"alpha", config.alpha},
                {"reference_bits", config.reference_bits},
                {"baseline_error", decision.baseline_error},
                {"error_budget", config.alpha * decision.baseline_error},
                {"plan_error", decision.plan_error},
                {"within_budget", decision.within_budget},
                {"compression_ratio", decision.compression_ratio},
                {"layers", pop.stats.size()}};
    const std::string report_path = out_dir + "/adapt_report.json";
    write_file(report_path, report.dump(2) + "\n");

    out << json{{"command", "adapt"},
                {"within_budget", decision.within_budget},
                {"compression_ratio", decision.compression_ratio},
                {"plan", plan_path},
                {"report", report_path}}
            .dump()
        << "\n";
    return 0;
  }
};

// --- allreduce-test ----------------------------------------------------------

struct AllreduceTestCmd {
  CLI::App* cmd = nullptr;
  std::uint32_t nodes = 4;
  std::size_t elements = 4096;
  std::string topology = "sra";
  std::string mode = "quantize";
  int bits = 4;
  std::size_t bucket = 128;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("allreduce-test",
                             "one simulated all-reduce with invariant checks");
    cmd->fallthrough();
    cmd->add_option("--nodes", nodes, "node count");
    cmd->add_option("--elements", elements, "vector length");
    cmd->add_option("--topology", topology, "sra|ring|tree");
    cmd->add_option("--mode", mode, "quantize|uncompressed");
    cmd->add_option("--bits", bits, "quantization width");
    cmd->add_option("--bucket", bucket, "quantization bucket size");
  }

  int execute(std::uint64_t seed, const std::string& out_dir, std::ostream& out) const {
    if (nodes == 0) throw std::invalid_argument("allreduce-test: nodes must be positive");
    if (elements == 0)
      throw std::invalid_argument("allreduce-test: elements must be positive");
    collectives::ReduceRequest request;
    request.inputs.resize(nodes);
    for (std::uint32_t node = 0; node < nodes; ++node) {
      std::uint64_t node_seed = hash_combine(hash_combine(seed, 0xa11), node);
      auto& values = request.inputs[node];
      values.resize(elements);
      for (std::size_t i = 0; i < elements; ++i) values[i] = normal01(node_seed, i);
    }
    collectives::Segment seg;
    seg.offset = 0;
    seg.length = elements;
    seg.mode = mode_from_name(mode);
    if (seg.mode == model::CodecMode::topk)
      throw std::invalid_argument("allreduce-test: mode must be quantize|uncompressed");
    seg.bits = bits;
    seg.bucket_size = bucket;
    request.segments = {seg};
    request.topology = collectives::topology_from_string(topology);
    request.op = collectives::ReduceOp::sum;
    request.step_seed = hash_combine(seed, 0x51e9);

    simnet::SimNet net(simnet::SimNetConfig::preset("commodity", nodes));
    auto result = collectives::allreduce(request, net);

    // exact reference: the topology's own deterministic float32 fold
    std::vector<float> exact = collectives::lossless_reference(request);

    bool identical = true;
    for (std::uint32_t node = 1; node < nodes && identical; ++node)
      identical = result.outputs[node] == result.outputs[0];
    bool finite = true;
    double err2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < elements; ++i) {
      if (!std::isfinite(result.outputs[0][i])) finite = false;
      double d = double(result.outputs[0][i]) - double(exact[i]);
      err2 += d * d;
      ref2 += double(exact[i]) * double(exact[i]);
    }
    double rel_error = ref2 > 0 ? std::sqrt(err2 / ref2) : std::sqrt(err2);
    bool exact_required = seg.mode == model::CodecMode::uncompressed;
    bool ok = identical && finite && (!exact_required || result.outputs[0] == exact);

    json report{{"command", "allreduce-test"},
                {"ok", ok},
                {"mode", mode},
                {"topology", topology},
                {"nodes", nodes},
                {"elements", elements},
                {"identical_across_nodes", identical},
                {"rel_error", rel_error},
                {"total_bytes_sent", result.trace.total_bytes_sent()},
                {"virtual_time_s", result.trace.virtual_time_s},
                {"rounds", result.trace.rounds}};
    write_file(out_dir + "/allreduce_test.json", report.dump(2) + "\n");
    out << report.dump() << "\n";
    if (!ok) throw std::runtime_error("allreduce-test invariants violated");
    return 0;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"compressed-communication benchmark toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out_dir = ".";
  app.add_option("--seed", seed, "master seed; every output is a function of it");
  app.add_option("--config", config_path, "JSON config file for the subcommand");
  app.add_option("--out", out_dir, "output directory (created if missing)");

  SweepCmd sweep;
  ReduceBenchCmd reduce_bench;
  TrainCmd train_cmd;
  AdaptCmd adapt;
  AllreduceTestCmd allreduce_test;
  sweep.attach(app);
  reduce_bench.attach(app);
  train_cmd.attach(app);
  adapt.attach(app);
  allreduce_test.attach(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    emit_error(err, 2, e.what());
    return 2;
  }

  try {
    json cfg = load_config(config_path);
    std::filesystem::create_directories(out_dir);
    if (sweep.cmd->parsed()) return sweep.execute(cfg, out_dir, out);
    if (reduce_bench.cmd->parsed()) return reduce_bench.execute(cfg, out_dir, out);
    if (train_cmd.cmd->parsed()) return train_cmd.execute(seed, cfg, out_dir, out);
    if (adapt.cmd->parsed()) return adapt.execute(seed, cfg, out_dir, out);
    if (allreduce_test.cmd->parsed()) return allreduce_test.execute(seed, out_dir, out);
    emit_error(err, 2, "no subcommand given");
    return 2;
  } catch (const std::invalid_argument& e) {
    emit_error(err, 2, e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error(err, 1, e.what());
    return 1;
  }
}

}  // namespace gcomm::cli
