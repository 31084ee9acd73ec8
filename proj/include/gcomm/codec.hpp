#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace gcomm::codec {

// Stochastic uniform quantization with bucket-local scaling.  `bits` counts
// magnitude bits only; every element additionally carries a sign bit, so the
// packed width per element is bits + 1.
struct QuantParams {
  int bits = 4;
  std::size_t bucket_size = 128;
  std::uint64_t seed = 0;

  int levels() const { return (1 << bits) - 1; }
  void validate() const;  // throws std::invalid_argument on bad settings
};

struct CompressedChunk {
  std::size_t element_count = 0;
  QuantParams params;
  std::vector<float> bucket_norms;          // one l2 norm per bucket
  std::vector<std::uint8_t> packed_levels;  // (bits+1)-bit fields, LSB-first
};

// TopK selection output.  Indices are strictly increasing; values are the
// untouched accumulator entries, not quantized.
struct SparseChunk {
  std::size_t original_length = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;
  std::vector<float> values;
};

struct ErrorFeedbackState {
  std::vector<float> residual;

  ErrorFeedbackState() = default;
  explicit ErrorFeedbackState(std::size_t length) : residual(length, 0.0f) {}
};

CompressedChunk quantize(std::span<const float> values, const QuantParams& params);
std::vector<float> dequantize(const CompressedChunk& chunk);

// Raw bit packing of (sign, level) pairs; exposed separately so the packing
// identity can be checked without going through the quantizer.
std::vector<std::uint8_t> pack_levels(std::span<const std::uint32_t> levels,
                                      std::span<const std::uint8_t> signs, int bits);
void unpack_levels(std::span<const std::uint8_t> packed, std::size_t count, int bits,
                   std::vector<std::uint32_t>& levels, std::vector<std::uint8_t>& signs);

// Payload bytes for a quantized vector: packed levels plus per-bucket norms.
std::size_t compressed_size_bytes(std::size_t element_count, const QuantParams& params);

// TopK with error feedback: selects the k largest |v + residual|, ties broken
// toward the lower index, and leaves everything unselected in the residual.
SparseChunk topk_compress(std::span<const float> values, std::size_t k,
                          ErrorFeedbackState& state);
std::vector<float> topk_decompress(const SparseChunk& chunk);

// Little-endian wire form: header (count u32, bits u8, bucket u32, seed u64),
// then bucket norms as f32, then the packed level bytes.
std::vector<std::uint8_t> serialize(const CompressedChunk& chunk);
CompressedChunk parse_chunk(std::span<const std::uint8_t> bytes);
std::size_t serialized_size_bytes(std::size_t element_count, const QuantParams& params);

}  // namespace gcomm::codec
