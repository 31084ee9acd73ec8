#include "gcomm/adaptive.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "gcomm/codec.hpp"
#include "gcomm/util.hpp"

namespace gcomm::adaptive {

StatsCollector::StatsCollector(double top_fraction) : top_fraction_(top_fraction) {
  if (!(top_fraction > 0.0) || top_fraction > 1.0)
    throw std::invalid_argument("top fraction must lie in (0, 1]");
}

void StatsCollector::add(const std::string& layer, std::span<const float> values) {
  if (layer.empty()) throw std::invalid_argument("layer name must not be empty");
  if (values.empty()) throw std::invalid_argument("layer snapshot must not be empty");
  auto it = entries_.find(layer);
  if (it == entries_.end()) {
    if (steps_ > 0)
      throw std::invalid_argument("layer " + layer + " appeared after the first step");
    order_.push_back(layer);
    it = entries_.emplace(layer, Entry{}).first;
    it->second.sum.assign(values.size(), 0.0);
  }
  Entry& entry = it->second;
  if (entry.sum.size() != values.size())
    throw std::invalid_argument("layer " + layer + " changed size between steps");
  if (entry.touched)
    throw std::invalid_argument("layer " + layer + " fed twice in one step");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v))
      throw std::invalid_argument("layer " + layer + " has a non-finite entry");
    entry.sum[i] += v;
  }
  entry.touched = true;
}

void StatsCollector::finish_step() {
  if (entries_.empty()) throw std::invalid_argument("no layers fed this step");
  for (auto& [name, entry] : entries_) {
    if (!entry.touched)
      throw std::invalid_argument("layer " + name + " missing from this step");
    entry.touched = false;
  }
  steps_ += 1;
}

std::vector<LayerStats> StatsCollector::stats() const {
  if (steps_ == 0) throw std::invalid_argument("no completed observation steps");
  std::vector<LayerStats> out;
  out.reserve(order_.size());
  for (const std::string& name : order_) {
    const Entry& entry = entries_.at(name);
    LayerStats s;
    s.name = name;
    s.elements = entry.sum.size();
    std::vector<double> squared(entry.sum.size());
    double total = 0.0;
    for (std::size_t i = 0; i < entry.sum.size(); ++i) {
      squared[i] = entry.sum[i] * entry.sum[i];
      total += squared[i];
    }
    s.l2_norm = std::sqrt(total);
    if (total > 0.0) {
      const std::size_t keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(
                 std::ceil(top_fraction_ * double(squared.size()))));
      std::nth_element(squared.begin(), squared.begin() + (keep - 1), squared.end(),
                       std::greater<double>());
      double top = 0.0;
      for (std::size_t i = 0; i < keep; ++i) top += squared[i];
      s.top_fraction_norm = std::sqrt(top);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::map<std::string, std::vector<float>> StatsCollector::snapshots() const {
  if (steps_ == 0) throw std::invalid_argument("no completed observation steps");
  std::map<std::string, std::vector<float>> out;
  for (const auto& [name, entry] : entries_) {
    std::vector<float>& v = out[name];
    v.resize(entry.sum.size());
    for (std::size_t i = 0; i < entry.sum.size(); ++i)
      v[i] = static_cast<float>(entry.sum[i]);
  }
  return out;
}

void StatsCollector::clear() {
  steps_ = 0;
  order_.clear();
  entries_.clear();
}

void AdaptiveConfig::validate() const {
  if (method != "linear" && method != "kmeans")
    throw std::invalid_argument("unknown plan method: " + method);
  if (palette.empty()) throw std::invalid_argument("palette must not be empty");
  for (std::size_t i = 0; i < palette.size(); ++i) {
    if (palette[i] < 1 || palette[i] > 8)
      throw std::invalid_argument("palette widths must lie in [1, 8]");
    if (i > 0 && palette[i] <= palette[i - 1])
      throw std::invalid_argument("palette must be strictly increasing");
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (!(top_fraction > 0.0) || top_fraction > 1.0)
    throw std::invalid_argument("top fraction must lie in (0, 1]");
  if (bucket_size == 0) throw std::invalid_argument("bucket size must be positive");
  if (reference_bits < 1 || reference_bits > 8)
    throw std::invalid_argument("reference bits must lie in [1, 8]");
  if (clusters > palette.size())
    throw std::invalid_argument("cluster count cannot exceed the palette size");
  if (stats_window == 0) throw std::invalid_argument("stats window must be positive");
  if (stats_period < stats_window)
    throw std::invalid_argument("stats period must cover the stats window");
}

AdaptiveConfig AdaptiveConfig::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  AdaptiveConfig config;
  config.method = j.value("method", config.method);
  if (j.contains("palette")) config.palette = j.at("palette").get<std::vector<int>>();
  config.alpha = j.value("alpha", config.alpha);
  config.top_fraction = j.value("top_fraction", config.top_fraction);
  config.bucket_size = j.value("bucket_size", config.bucket_size);
  config.reference_bits = j.value("reference_bits", config.reference_bits);
  config.clusters = j.value("clusters", config.clusters);
  config.stats_period = j.value("stats_period", config.stats_period);
  config.stats_window = j.value("stats_window", config.stats_window);
  config.pair_buckets = j.value("pair_buckets", config.pair_buckets);
  config.seed = j.value("seed", config.seed);
  config.probe_seed = j.value("probe_seed", config.probe_seed);
  config.validate();
  return config;
}

std::string AdaptiveConfig::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["palette"] = palette;
  j["alpha"] = alpha;
  j["top_fraction"] = top_fraction;
  j["bucket_size"] = bucket_size;
  j["reference_bits"] = reference_bits;
  j["clusters"] = clusters;
  j["stats_period"] = stats_period;
  j["stats_window"] = stats_window;
  j["pair_buckets"] = pair_buckets;
  j["seed"] = seed;
  j["probe_seed"] = probe_seed;
  return j.dump();
}

model::CompressionPlan PlanDecision::to_compression_plan() const {
  model::CompressionPlan plan;
  for (const auto& [name, width] : bits) {
    model::LayerCodec codec;
    codec.mode = model::CodecMode::quantize;
    codec.bits = width;
    codec.bucket_size = buckets.at(name);
    plan.set(name, codec);
  }
  return plan;
}

std::string PlanDecision::to_json() const {
  nlohmann::json j;
  j["bits"] = bits;
  j["buckets"] = buckets;
  j["within_budget"] = within_budget;
  j["plan_error"] = plan_error;
  j["baseline_error"] = baseline_error;
  j["compression_ratio"] = compression_ratio;
  return j.dump();
}

namespace {

void check_stats(const std::vector<LayerStats>& stats) {
  if (stats.empty()) throw std::invalid_argument("no layer stats to plan from");
  std::set<std::string> seen;
  for (const LayerStats& s : stats) {
    if (s.name.empty() || s.elements == 0)
      throw std::invalid_argument("layer stats need a name and a size");
    if (!seen.insert(s.name).second)
      throw std::invalid_argument("duplicate layer in stats: " + s.name);
  }
}

std::size_t middle_index(std::size_t palette_size) { return (palette_size - 1) / 2; }

// rank 0..count-1 onto palette indices, end to end; half ties go to the even
// index (nearbyint under the default rounding mode)
std::size_t palette_index_for_rank(std::size_t rank, std::size_t count,
                                   std::size_t palette_size) {
  if (count <= 1) return middle_index(palette_size);
  const double pos = double(rank) * double(palette_size - 1) / double(count - 1);
  return static_cast<std::size_t>(std::nearbyint(pos));
}

// wider buckets for the narrow end of the palette: 1024 at index 0, halving
// down to a 128 floor
std::size_t paired_bucket(std::size_t palette_index, const AdaptiveConfig& config) {
  if (!config.pair_buckets) return config.bucket_size;
  const std::size_t wide = std::size_t{1024} >> std::min<std::size_t>(palette_index, 10);
  return std::max<std::size_t>(config.bucket_size, std::max<std::size_t>(wide, 128));
}

struct Feature {
  double size_z = 0.0;
  double norm_z = 0.0;
};

// z-scored (log2 size, log2 top norm); a feature with no spread collapses to 0
std::vector<Feature> layer_features(const std::vector<LayerStats>& stats) {
  const std::size_t n = stats.size();
  std::vector<double> f1(n), f2(n);
  for (std::size_t i = 0; i < n; ++i) {
    f1[i] = std::log2(double(stats[i].elements));
    f2[i] = std::log2(std::max(stats[i].top_fraction_norm, 1e-12));
  }
  auto zscore = [n](std::vector<double>& f) {
    double mean = 0.0;
    for (double v : f) mean += v;
    mean /= double(n);
    double var = 0.0;
    for (double v : f) var += (v - mean) * (v - mean);
    var /= double(n);
    const double sd = std::sqrt(var);
    for (double& v : f) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  };
  zscore(f1);
  zscore(f2);
  std::vector<Feature> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {f1[i], f2[i]};
  return out;
}

double sq_dist(const Feature& a, const Feature& b) {
  const double dx = a.size_z - b.size_z, dy = a.norm_z - b.norm_z;
  return dx * dx + dy * dy;
}

// returns each layer's palette index rather than the width so bucket pairing
// can reuse the same rank
std::vector<std::size_t> kmeans_palette_indices(const std::vector<LayerStats>& stats,
                                                const AdaptiveConfig& config) {
  const std::size_t n = stats.size();
  const auto points = layer_features(stats);
  const std::size_t want = config.clusters > 0 ? config.clusters : config.palette.size();
  const std::size_t k_max = std::min(want, n);

  // seeded spread-out start: each next center is sampled with probability
  // proportional to its squared distance from the chosen set
  std::vector<Feature> centers;
  centers.push_back(points[std::min<std::size_t>(
      n - 1, std::size_t(uniform01(config.seed, 0, 0) * double(n)))]);
  std::vector<double> d2(n);
  while (centers.size() < k_max) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = sq_dist(points[i], centers[0]);
      for (std::size_t c = 1; c < centers.size(); ++c)
        d2[i] = std::min(d2[i], sq_dist(points[i], centers[c]));
      total += d2[i];
    }
    if (total <= 0.0) break;  // every point already coincides with a center
    const double r = uniform01(config.seed, centers.size(), 0) * total;
    double acc = 0.0;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > r) {
        pick = i;
        break;
      }
    }
    centers.push_back(points[pick]);
  }
  const std::size_t k = centers.size();

  std::vector<std::size_t> assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(points[i], centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[i] = best;
    }
    std::vector<std::array<double, 2>> sum(k, {0.0, 0.0});
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[assign[i]][0] += points[i].size_z;
      sum[assign[i]][1] += points[i].norm_z;
      count[assign[i]] += 1;
    }
    double moved = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) continue;  // empty cluster keeps its center
      const Feature next{sum[c][0] / double(count[c]), sum[c][1] / double(count[c])};
      moved = std::max({moved, std::abs(next.size_z - centers[c].size_z),
                        std::abs(next.norm_z - centers[c].norm_z)});
      centers[c] = next;
    }
    if (moved < 1e-6) break;
  }

  // small high-norm clusters deserve width, huge low-norm clusters do not
  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < k; ++c) order[c] = c;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ka = centers[a].norm_z - centers[a].size_z;
    const double kb = centers[b].norm_z - centers[b].size_z;
    return ka != kb ? ka < kb : a < b;
  });
  std::vector<std::size_t> rank(k);
  for (std::size_t pos = 0; pos < k; ++pos) rank[order[pos]] = pos;

  std::vector<std::size_t> indices(n);
  for (std::size_t i = 0; i < n; ++i)
    indices[i] = palette_index_for_rank(rank[assign[i]], k, config.palette.size());
  return indices;
}

std::vector<std::size_t> linear_palette_indices(const std::vector<LayerStats>& stats,
                                                const AdaptiveConfig& config) {
  std::vector<double> ratios;
  ratios.reserve(stats.size());
  for (const LayerStats& s : stats) ratios.push_back(s.l2_norm / double(s.elements));
  std::vector<double> distinct = ratios;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<std::size_t> indices(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const std::size_t rank =
        std::lower_bound(distinct.begin(), distinct.end(), ratios[i]) -
        distinct.begin();
    indices[i] = palette_index_for_rank(rank, distinct.size(), config.palette.size());
  }
  return indices;
}

std::vector<std::size_t> palette_indices(const std::vector<LayerStats>& stats,
                                         const AdaptiveConfig& config) {
  return config.method == "linear" ? linear_palette_indices(stats, config)
                                   : kmeans_palette_indices(stats, config);
}

}  // namespace

std::map<std::string, int> assign_bits_linear(const std::vector<LayerStats>& stats,
                                              const AdaptiveConfig& config) {
  config.validate();
  check_stats(stats);
  const auto indices = linear_palette_indices(stats, config);
  std::map<std::string, int> bits;
  for (std::size_t i = 0; i < stats.size(); ++i)
    bits[stats[i].name] = config.palette[indices[i]];
  return bits;
}

std::map<std::string, int> assign_bits_kmeans(const std::vector<LayerStats>& stats,
                                              const AdaptiveConfig& config) {
  config.validate();
  check_stats(stats);
  const auto indices = kmeans_palette_indices(stats, config);
  std::map<std::string, int> bits;
  for (std::size_t i = 0; i < stats.size(); ++i)
    bits[stats[i].name] = config.palette[indices[i]];
  return bits;
}

double plan_error(const std::map<std::string, std::vector<float>>& snapshots,
                  const std::map<std::string, int>& bits,
                  const std::map<std::string, std::size_t>& buckets,
                  const AdaptiveConfig& config) {
  double err2 = 0.0;
  for (const auto& [name, width] : bits) {
    const auto snap_it = snapshots.find(name);
    if (snap_it == snapshots.end())
      throw std::invalid_argument("no snapshot for layer " + name);
    const std::vector<float>& snap = snap_it->second;
    if (snap.empty()) continue;

    codec::QuantParams params;
    params.bits = width;
    const auto bucket_it = buckets.find(name);
    params.bucket_size = bucket_it != buckets.end() ? bucket_it->second
                                                    : config.bucket_size;
    params.seed = hash_combine(config.probe_seed, fnv1a64(name));
    const auto decoded = codec::dequantize(codec::quantize(snap, params));
    for (std::size_t i = 0; i < snap.size(); ++i) {
      const double e = double(snap[i]) - double(decoded[i]);
      err2 += e * e;
    }
  }
  return std::sqrt(err2);
}

PlanDecision build_plan(const std::vector<LayerStats>& stats,
                        const std::map<std::string, std::vector<float>>& snapshots,
                        const AdaptiveConfig& config) {
  config.validate();
  check_stats(stats);

  PlanDecision decision;
  std::map<std::string, std::size_t> indices;
  {
    const auto idx = palette_indices(stats, config);
    for (std::size_t i = 0; i < stats.size(); ++i) {
      indices[stats[i].name] = idx[i];
      decision.bits[stats[i].name] = config.palette[idx[i]];
      decision.buckets[stats[i].name] = paired_bucket(idx[i], config);
    }
  }

  std::map<std::string, int> uniform;
  std::map<std::string, std::size_t> uniform_buckets;
  for (const LayerStats& s : stats) {
    uniform[s.name] = config.reference_bits;
    uniform_buckets[s.name] = config.bucket_size;
  }
  decision.baseline_error = plan_error(snapshots, uniform, uniform_buckets, config);
  decision.plan_error = plan_error(snapshots, decision.bits, decision.buckets, config);

  const double budget = config.alpha * decision.baseline_error + 1e-12;
  for (std::size_t round = 0; round < config.palette.size(); ++round) {
    if (decision.plan_error <= budget) break;
    bool changed = false;
    for (auto& [name, index] : indices) {
      if (index + 1 < config.palette.size()) {
        index += 1;
        decision.bits[name] = config.palette[index];
        decision.buckets[name] = paired_bucket(index, config);
        changed = true;
      }
    }
    if (!changed) break;
    decision.plan_error = plan_error(snapshots, decision.bits, decision.buckets, config);
  }
  decision.within_budget = decision.plan_error <= budget;

  std::size_t plan_bytes = 0, reference_bytes = 0;
  for (const LayerStats& s : stats) {
    codec::QuantParams chosen;
    chosen.bits = decision.bits.at(s.name);
    chosen.bucket_size = decision.buckets.at(s.name);
    codec::QuantParams reference;
    reference.bits = config.reference_bits;
    reference.bucket_size = config.bucket_size;
    plan_bytes += codec::compressed_size_bytes(s.elements, chosen);
    reference_bytes += codec::compressed_size_bytes(s.elements, reference);
  }
  decision.compression_ratio =
      plan_bytes > 0 ? double(reference_bytes) / double(plan_bytes) : 1.0;
  return decision;
}

}  // namespace gcomm::adaptive
