#include "gcomm/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "gcomm/util.hpp"

namespace gcomm::codec {

void QuantParams::validate() const {
  if (bits < 1 || bits > 8)
    throw std::invalid_argument("quantization bits must be in [1, 8], got " +
                                std::to_string(bits));
  if (bucket_size == 0) throw std::invalid_argument("bucket size must be positive");
}

static std::size_t bucket_count(std::size_t n, std::size_t bucket) {
  return (n + bucket - 1) / bucket;
}

CompressedChunk quantize(std::span<const float> values, const QuantParams& params) {
  params.validate();
  const std::size_t n = values.size();
  const int s = params.levels();

  std::vector<std::uint32_t> levels(n, 0);
  std::vector<std::uint8_t> signs(n, 0);

  CompressedChunk chunk;
  chunk.element_count = n;
  chunk.params = params;
  chunk.bucket_norms.reserve(bucket_count(n, params.bucket_size));

  for (std::size_t b = 0; b * params.bucket_size < n; ++b) {
    const std::size_t lo = b * params.bucket_size;
    const std::size_t hi = std::min(n, lo + params.bucket_size);

    double sq = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      if (!std::isfinite(values[i]))
        throw std::invalid_argument("non-finite gradient value at index " +
                                    std::to_string(i));
      sq += static_cast<double>(values[i]) * static_cast<double>(values[i]);
    }
    const float norm = static_cast<float>(std::sqrt(sq));
    chunk.bucket_norms.push_back(norm);
    if (norm == 0.0f) continue;  // all-zero bucket: levels stay 0

    for (std::size_t i = lo; i < hi; ++i) {
      const double a = static_cast<double>(std::fabs(values[i])) / norm;
      const double x = a * s;
      std::uint32_t level = static_cast<std::uint32_t>(x);
      if (level >= static_cast<std::uint32_t>(s)) {
        level = static_cast<std::uint32_t>(s);  // |v| at (or fp-above) the norm
      } else {
        const double p = x - level;  // round up with probability a*s - floor
        if (uniform01(params.seed, b, i) < p) ++level;
      }
      levels[i] = level;
      signs[i] = std::signbit(values[i]) ? 1 : 0;
    }
  }

  chunk.packed_levels = pack_levels(levels, signs, params.bits);
  return chunk;
}

std::vector<float> dequantize(const CompressedChunk& chunk) {
  chunk.params.validate();
  const std::size_t n = chunk.element_count;
  const std::size_t bucket = chunk.params.bucket_size;
  if (chunk.bucket_norms.size() != bucket_count(n, bucket))
    throw std::runtime_error("bucket norm count does not match element count");

  const int s = chunk.params.levels();
  std::vector<std::uint32_t> levels;
  std::vector<std::uint8_t> signs;
  unpack_levels(chunk.packed_levels, n, chunk.params.bits, levels, signs);

  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t level = levels[i];
    if (level == 0) {
      out[i] = 0.0f;  // avoids manufacturing -0.0 for negative inputs
      continue;
    }
    const double norm = chunk.bucket_norms[i / bucket];
    const float mag = static_cast<float>(norm * level / s);
    out[i] = signs[i] ? -mag : mag;
  }
  return out;
}

std::vector<std::uint8_t> pack_levels(std::span<const std::uint32_t> levels,
                                      std::span<const std::uint8_t> signs, int bits) {
  if (bits < 1 || bits > 8) throw std::invalid_argument("pack width out of range");
  if (levels.size() != signs.size())
    throw std::invalid_argument("levels/signs length mismatch");
  const int width = bits + 1;
  const std::uint32_t max_level = (1u << bits) - 1;

  std::vector<std::uint8_t> out;
  out.reserve((levels.size() * width + 7) / 8);
  std::uint64_t acc = 0;
  int filled = 0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] > max_level)
      throw std::invalid_argument("level exceeds representable range");
    const std::uint64_t field =
        levels[i] | (static_cast<std::uint64_t>(signs[i] ? 1 : 0) << bits);
    acc |= field << filled;
    filled += width;
    while (filled >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc & 0xff));
      acc >>= 8;
      filled -= 8;
    }
  }
  if (filled > 0) out.push_back(static_cast<std::uint8_t>(acc & 0xff));
  return out;
}

void unpack_levels(std::span<const std::uint8_t> packed, std::size_t count, int bits,
                   std::vector<std::uint32_t>& levels, std::vector<std::uint8_t>& signs) {
  if (bits < 1 || bits > 8) throw std::invalid_argument("pack width out of range");
  const int width = bits + 1;
  if (packed.size() < (count * width + 7) / 8)
    throw std::runtime_error("packed payload shorter than element count requires");

  levels.assign(count, 0);
  signs.assign(count, 0);
  std::uint64_t acc = 0;
  int filled = 0;
  std::size_t next_byte = 0;
  const std::uint64_t level_mask = (1u << bits) - 1;
  for (std::size_t i = 0; i < count; ++i) {
    while (filled < width) {
      acc |= static_cast<std::uint64_t>(packed[next_byte++]) << filled;
      filled += 8;
    }
    levels[i] = static_cast<std::uint32_t>(acc & level_mask);
    signs[i] = static_cast<std::uint8_t>((acc >> bits) & 1);
    acc >>= width;
    filled -= width;
  }
}

std::size_t compressed_size_bytes(std::size_t element_count, const QuantParams& params) {
  params.validate();
  if (element_count == 0) return 0;
  const std::size_t packed = (element_count * (params.bits + 1) + 7) / 8;
  return packed + 4 * bucket_count(element_count, params.bucket_size);
}

SparseChunk topk_compress(std::span<const float> values, std::size_t k,
                          ErrorFeedbackState& state) {
  const std::size_t n = values.size();
  if (k < 1 || k > n)
    throw std::invalid_argument("topk k must be in [1, length], got " +
                                std::to_string(k));
  if (state.residual.size() != n)
    throw std::invalid_argument("error feedback state length does not match input");

  // Accumulate first so selection and residual update see the same values;
  // that makes transmitted + residual == input + old residual hold exactly.
  std::vector<float> acc(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(values[i]))
      throw std::invalid_argument("non-finite gradient value at index " +
                                  std::to_string(i));
    acc[i] = values[i] + state.residual[i];
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto larger = [&](std::size_t a, std::size_t b) {
    const float ma = std::fabs(acc[a]);
    const float mb = std::fabs(acc[b]);
    if (ma != mb) return ma > mb;
    return a < b;  // ties go to the lower index
  };
  std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), larger);
  order.resize(k);
  std::sort(order.begin(), order.end());

  SparseChunk chunk;
  chunk.original_length = n;
  chunk.k = k;
  chunk.indices = std::move(order);
  chunk.values.reserve(k);
  state.residual = acc;
  for (std::size_t idx : chunk.indices) {
    chunk.values.push_back(acc[idx]);
    state.residual[idx] = 0.0f;
  }
  return chunk;
}

std::vector<float> topk_decompress(const SparseChunk& chunk) {
  if (chunk.indices.size() != chunk.values.size() || chunk.indices.size() != chunk.k)
    throw std::runtime_error("sparse chunk index/value arity mismatch");
  std::vector<float> out(chunk.original_length, 0.0f);
  for (std::size_t i = 0; i < chunk.k; ++i) {
    if (chunk.indices[i] >= chunk.original_length)
      throw std::runtime_error("sparse index out of range");
    if (i > 0 && chunk.indices[i] <= chunk.indices[i - 1])
      throw std::runtime_error("sparse indices must be strictly increasing");
    out[chunk.indices[i]] = chunk.values[i];
  }
  return out;
}

std::vector<std::uint8_t> serialize(const CompressedChunk& chunk) {
  std::vector<std::uint8_t> out;
  out.reserve(serialized_size_bytes(chunk.element_count, chunk.params));
  le_put_u32(out, static_cast<std::uint32_t>(chunk.element_count));
  out.push_back(static_cast<std::uint8_t>(chunk.params.bits));
  le_put_u32(out, static_cast<std::uint32_t>(chunk.params.bucket_size));
  le_put_u64(out, chunk.params.seed);
  for (float norm : chunk.bucket_norms) le_put_f32(out, norm);
  out.insert(out.end(), chunk.packed_levels.begin(), chunk.packed_levels.end());
  return out;
}

static constexpr std::size_t kHeaderBytes = 4 + 1 + 4 + 8;

CompressedChunk parse_chunk(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes)
    throw std::runtime_error("compressed chunk truncated: header incomplete");
  CompressedChunk chunk;
  chunk.element_count = le_get_u32(bytes.data());
  chunk.params.bits = bytes[4];
  chunk.params.bucket_size = le_get_u32(bytes.data() + 5);
  chunk.params.seed = le_get_u64(bytes.data() + 9);
  chunk.params.validate();

  const std::size_t buckets = chunk.element_count == 0
                                  ? 0
                                  : bucket_count(chunk.element_count,
                                                 chunk.params.bucket_size);
  const std::size_t packed =
      (chunk.element_count * (chunk.params.bits + 1) + 7) / 8;
  if (bytes.size() < kHeaderBytes + 4 * buckets + packed)
    throw std::runtime_error("compressed chunk truncated: payload incomplete");

  chunk.bucket_norms.reserve(buckets);
  for (std::size_t b = 0; b < buckets; ++b)
    chunk.bucket_norms.push_back(le_get_f32(bytes.data() + kHeaderBytes + 4 * b));
  const auto* body = bytes.data() + kHeaderBytes + 4 * buckets;
  chunk.packed_levels.assign(body, body + packed);
  return chunk;
}

std::size_t serialized_size_bytes(std::size_t element_count, const QuantParams& params) {
  return kHeaderBytes + compressed_size_bytes(element_count, params);
}

}  // namespace gcomm::codec
