#include "gcomm/collectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <stdexcept>

#include "gcomm/util.hpp"

namespace gcomm::collectives {

Topology topology_from_string(const std::string& s) {
  if (s == "sra") return Topology::sra;
  if (s == "ring") return Topology::ring;
  if (s == "tree") return Topology::tree;
  throw std::invalid_argument("unknown topology: " + s);
}

std::string to_string(Topology topology) {
  switch (topology) {
    case Topology::sra: return "sra";
    case Topology::ring: return "ring";
    case Topology::tree: return "tree";
  }
  return "sra";
}

std::uint64_t hop_seed(std::uint64_t step_seed, std::uint64_t hop, std::uint64_t node) {
  return hash_combine(step_seed, hash_combine(hop, node));
}

std::uint64_t latency_rounds(Topology topology, std::size_t nodes) {
  if (nodes <= 1) return 0;
  switch (topology) {
    case Topology::sra: return 2;
    case Topology::ring: return 2 * (nodes - 1);
    case Topology::tree: {
      std::size_t levels = 0;
      while ((std::size_t{1} << levels) < nodes) ++levels;
      return 2 * levels;
    }
  }
  return 0;
}

double estimate_step_time(std::size_t payload_bytes, std::size_t nodes,
                          Topology topology, const simnet::SimNetConfig& config) {
  if (nodes <= 1) return 0.0;
  const double alpha = config.alpha_s;
  const double beta = config.beta_s_per_byte;
  const double d = static_cast<double>(payload_bytes);
  const double rounds = static_cast<double>(latency_rounds(topology, nodes));
  double critical_bytes = 0.0;
  switch (topology) {
    case Topology::sra:
    case Topology::ring:
      critical_bytes = 2.0 * double(nodes - 1) / double(nodes) * d;
      break;
    case Topology::tree:
      critical_bytes = (rounds / 2.0) * 2.0 * d;  // full payload up and down
      break;
  }
  return alpha * rounds + beta * critical_bytes;
}

namespace {

// One maximal run of a chunk range that shares a single codec assignment.
struct Piece {
  std::size_t lo = 0;  // absolute element offset
  std::size_t len = 0;
  bool quantized = false;
  codec::QuantParams params;  // seed filled at encode time
};

void validate_request(const ReduceRequest& req, std::size_t nodes) {
  if (req.inputs.size() != nodes)
    throw std::invalid_argument("expected one input buffer per node");
  const std::size_t d = req.inputs.empty() ? 0 : req.inputs[0].size();
  for (const auto& in : req.inputs)
    if (in.size() != d)
      throw std::invalid_argument("input buffers must have equal lengths");
  std::size_t cursor = 0;
  for (const auto& seg : req.segments) {
    if (seg.offset != cursor)
      throw std::invalid_argument("segments must cover the buffer contiguously");
    if (seg.length == 0) throw std::invalid_argument("zero-length segment");
    if (seg.mode == model::CodecMode::topk)
      throw std::invalid_argument("topk segments use the sparse path");
    if (seg.mode == model::CodecMode::quantize) {
      codec::QuantParams p;
      p.bits = seg.bits;
      p.bucket_size = seg.bucket_size;
      p.validate();
    }
    cursor += seg.length;
  }
  if (cursor != d)
    throw std::invalid_argument("segments cover " + std::to_string(cursor) +
                                " elements but buffers hold " + std::to_string(d));
}

// Owner boundaries: an even split, nudged down onto the bucket grid of the
// quantized segment the ideal point lands in.
std::vector<std::size_t> chunk_boundaries(std::size_t d, std::size_t nodes,
                                          const std::vector<Segment>& segments) {
  std::vector<std::size_t> bounds(nodes + 1, 0);
  bounds[nodes] = d;
  for (std::size_t k = 1; k < nodes; ++k) {
    std::size_t p = d * k / nodes;
    for (const auto& seg : segments) {
      if (p >= seg.offset && p < seg.offset + seg.length) {
        if (seg.mode == model::CodecMode::quantize)
          p = seg.offset + ((p - seg.offset) / seg.bucket_size) * seg.bucket_size;
        break;
      }
    }
    bounds[k] = std::max(bounds[k - 1], p);
  }
  return bounds;
}

std::vector<Piece> pieces_for(std::size_t lo, std::size_t hi,
                              const std::vector<Segment>& segments) {
  std::vector<Piece> pieces;
  for (const auto& seg : segments) {
    const std::size_t a = std::max(lo, seg.offset);
    const std::size_t b = std::min(hi, seg.offset + seg.length);
    if (a >= b) continue;
    Piece piece;
    piece.lo = a;
    piece.len = b - a;
    piece.quantized = seg.mode == model::CodecMode::quantize;
    piece.params.bits = seg.bits;
    piece.params.bucket_size = seg.bucket_size;
    pieces.push_back(piece);
  }
  return pieces;
}

// values spans the whole buffer; the encoded range is described by pieces.
std::vector<std::uint8_t> encode_pieces(std::span<const float> values,
                                        const std::vector<Piece>& pieces,
                                        std::uint64_t seed,
                                        std::uint64_t& compress_calls) {
  std::vector<std::uint8_t> out;
  for (const auto& piece : pieces) {
    std::span<const float> part = values.subspan(piece.lo, piece.len);
    if (piece.quantized) {
      codec::QuantParams p = piece.params;
      p.seed = seed;
      auto bytes = codec::serialize(codec::quantize(part, p));
      out.insert(out.end(), bytes.begin(), bytes.end());
      ++compress_calls;
    } else {
      const std::size_t at = out.size();
      out.resize(at + 4 * piece.len);
      std::memcpy(out.data() + at, part.data(), 4 * piece.len);
    }
  }
  return out;
}

std::vector<float> decode_pieces(std::span<const std::uint8_t> bytes,
                                 const std::vector<Piece>& pieces,
                                 std::uint64_t& decompress_calls) {
  std::vector<float> out;
  std::size_t cursor = 0;
  for (const auto& piece : pieces) {
    if (piece.quantized) {
      const std::size_t need = codec::serialized_size_bytes(piece.len, piece.params);
      if (cursor + need > bytes.size())
        throw std::runtime_error("chunk payload shorter than its piece layout");
      auto chunk = codec::parse_chunk(bytes.subspan(cursor, need));
      if (chunk.element_count != piece.len)
        throw std::runtime_error("chunk payload does not match piece layout");
      auto vals = codec::dequantize(chunk);
      out.insert(out.end(), vals.begin(), vals.end());
      cursor += need;
      ++decompress_calls;
    } else {
      if (cursor + 4 * piece.len > bytes.size())
        throw std::runtime_error("chunk payload shorter than its piece layout");
      const std::size_t at = out.size();
      out.resize(at + piece.len);
      std::memcpy(out.data() + at, bytes.data() + cursor, 4 * piece.len);
      cursor += 4 * piece.len;
    }
  }
  if (cursor != bytes.size())
    throw std::runtime_error("chunk payload has trailing bytes");
  return out;
}

bool any_quantized(const std::vector<Piece>& pieces) {
  for (const auto& piece : pieces) if (piece.quantized) return true;
  return false;
}

// Rebase piece offsets so they index a chunk-local vector.
std::vector<Piece> shift_pieces(std::vector<Piece> pieces, std::size_t base) {
  for (auto& piece : pieces) piece.lo -= base;
  return pieces;
}

struct NodeCounters {
  std::uint64_t compress_calls = 0;
  std::uint64_t decompress_calls = 0;
  std::uint64_t max_depth = 0;
};

void finalize(ReduceResult& result, const ReduceRequest& req,
              const std::vector<NodeCounters>& counters, Topology topology,
              std::size_t nodes) {
  result.trace.rounds = latency_rounds(topology, nodes);
  for (const auto& c : counters) {
    result.trace.compress_calls += c.compress_calls;
    result.trace.decompress_calls += c.decompress_calls;
    result.trace.max_compress_depth =
        std::max(result.trace.max_compress_depth, c.max_depth);
  }
  if (req.op == ReduceOp::average) {
    const float n = static_cast<float>(nodes);
    for (auto& out : result.outputs)
      for (float& v : out) v /= n;
  }
}

ReduceResult run_sra(const ReduceRequest& req, simnet::SimNet& net) {
  const std::size_t nodes = net.config().nodes;
  const std::size_t d = req.inputs[0].size();
  const auto bounds = chunk_boundaries(d, nodes, req.segments);

  std::vector<std::vector<Piece>> chunk_pieces(nodes);
  for (std::size_t c = 0; c < nodes; ++c)
    chunk_pieces[c] = pieces_for(bounds[c], bounds[c + 1], req.segments);

  ReduceResult result;
  result.outputs.assign(nodes, std::vector<float>(d, 0.0f));
  std::vector<NodeCounters> counters(nodes);

  std::vector<simnet::NodeProgram> programs(nodes);
  for (std::size_t me = 0; me < nodes; ++me) {
    programs[me] = [&, me](simnet::NodeHandle& node) {
      NodeCounters& ctr = counters[me];
      const std::vector<float>& mine = req.inputs[me];

      // scatter: ship my share of every other owner's chunk
      for (std::size_t j = 1; j < nodes; ++j) {
        const std::size_t peer = (me + j) % nodes;
        auto bytes = encode_pieces(mine, chunk_pieces[peer],
                                   hop_seed(req.step_seed, 0, me), ctr.compress_calls);
        const std::uint64_t depth = any_quantized(chunk_pieces[peer]) ? 1 : 0;
        node.send(peer, std::move(bytes), depth);
      }

      // gather contributions for my own chunk and fold in ascending id order
      const std::size_t lo = bounds[me], hi = bounds[me + 1];
      std::vector<std::vector<float>> contrib(nodes);
      std::uint64_t agg_depth = 0;
      for (std::size_t src = 0; src < nodes; ++src) {
        if (src == me) continue;
        simnet::Message msg = node.recv(src);
        agg_depth = std::max(agg_depth, msg.note);
        contrib[src] = decode_pieces(msg.bytes, chunk_pieces[me], ctr.decompress_calls);
      }
      std::vector<float> agg(hi - lo, 0.0f);
      bool first = true;
      for (std::size_t id = 0; id < nodes; ++id) {
        const float* vals = id == me ? mine.data() + lo
                                     : (hi > lo ? contrib[id].data() : nullptr);
        if (first) {
          for (std::size_t i = 0; i < hi - lo; ++i) agg[i] = vals[i];
          first = false;
        } else {
          for (std::size_t i = 0; i < hi - lo; ++i) agg[i] += vals[i];
        }
      }

      // broadcast the aggregated chunk; everyone (me included) decodes the
      // same bytes so results agree bitwise
      auto bytes = encode_pieces(agg, shift_pieces(chunk_pieces[me], lo),
                                 hop_seed(req.step_seed, 1, me), ctr.compress_calls);
      const std::uint64_t out_depth =
          agg_depth + (any_quantized(chunk_pieces[me]) ? 1 : 0);
      ctr.max_depth = std::max(ctr.max_depth, out_depth);
      for (std::size_t j = 1; j < nodes; ++j)
        node.send((me + j) % nodes, bytes, out_depth);
      auto own = decode_pieces(bytes, shift_pieces(chunk_pieces[me], lo),
                               ctr.decompress_calls);
      std::copy(own.begin(), own.end(), result.outputs[me].begin() + lo);

      // collect every other owner's finished chunk
      for (std::size_t src = 0; src < nodes; ++src) {
        if (src == me) continue;
        simnet::Message msg = node.recv(src);
        ctr.max_depth = std::max(ctr.max_depth, msg.note);
        auto vals = decode_pieces(
            msg.bytes, shift_pieces(chunk_pieces[src], bounds[src]),
            ctr.decompress_calls);
        std::copy(vals.begin(), vals.end(), result.outputs[me].begin() + bounds[src]);
      }
    };
  }

  result.trace = net.run_step(programs);
  finalize(result, req, counters, Topology::sra, nodes);
  return result;
}

ReduceResult run_ring(const ReduceRequest& req, simnet::SimNet& net) {
  const std::size_t nodes = net.config().nodes;
  const std::size_t d = req.inputs[0].size();
  const auto bounds = chunk_boundaries(d, nodes, req.segments);

  std::vector<std::vector<Piece>> local_pieces(nodes);  // chunk-local offsets
  for (std::size_t c = 0; c < nodes; ++c)
    local_pieces[c] =
        shift_pieces(pieces_for(bounds[c], bounds[c + 1], req.segments), bounds[c]);

  ReduceResult result;
  result.outputs.assign(nodes, std::vector<float>(d, 0.0f));
  std::vector<NodeCounters> counters(nodes);

  auto chunk_at = [nodes](std::size_t j, std::size_t back) {
    return (j + nodes - back % nodes) % nodes;
  };

  std::vector<simnet::NodeProgram> programs(nodes);
  for (std::size_t me = 0; me < nodes; ++me) {
    programs[me] = [&, me](simnet::NodeHandle& node) {
      NodeCounters& ctr = counters[me];
      const std::vector<float>& mine = req.inputs[me];
      const std::size_t right = (me + 1) % nodes;
      const std::size_t left = (me + nodes - 1) % nodes;

      auto own_chunk = [&](std::size_t c) {
        return std::vector<float>(mine.begin() + bounds[c], mine.begin() + bounds[c + 1]);
      };

      // reduce-scatter: a chunk travels the ring once, each stop folds in the
      // local values and re-encodes, so quantized chunks requantize per hop
      std::vector<float> carry = own_chunk(chunk_at(me, 1));
      std::uint64_t carry_depth = 0;
      for (std::size_t t = 0; t + 1 < nodes; ++t) {
        const std::size_t send_c = chunk_at(me, 1 + t);
        const std::uint64_t depth =
            carry_depth + (any_quantized(local_pieces[send_c]) ? 1 : 0);
        auto bytes = encode_pieces(carry, local_pieces[send_c],
                                   hop_seed(req.step_seed, t, me), ctr.compress_calls);
        node.send(right, std::move(bytes), depth);

        const std::size_t recv_c = chunk_at(me, 2 + t);
        simnet::Message msg = node.recv(left);
        auto partial = decode_pieces(msg.bytes, local_pieces[recv_c],
                                     ctr.decompress_calls);
        carry = std::move(partial);
        const auto local = own_chunk(recv_c);
        for (std::size_t i = 0; i < carry.size(); ++i) carry[i] += local[i];
        carry_depth = msg.note;
      }
      // after N-1 hops the carried chunk is my own, fully reduced
      const std::size_t owned = me;
      ctr.max_depth = std::max(ctr.max_depth, carry_depth);

      // allgather: the owner encodes its finished chunk once; the bytes are
      // forwarded verbatim so every node decodes an identical payload
      auto gather_bytes =
          encode_pieces(carry, local_pieces[owned],
                        hop_seed(req.step_seed, nodes - 1, me), ctr.compress_calls);
      const std::uint64_t gather_depth =
          carry_depth + (any_quantized(local_pieces[owned]) ? 1 : 0);
      ctr.max_depth = std::max(ctr.max_depth, gather_depth);
      {
        auto own = decode_pieces(gather_bytes, local_pieces[owned],
                                 ctr.decompress_calls);
        std::copy(own.begin(), own.end(), result.outputs[me].begin() + bounds[owned]);
      }
      std::vector<std::uint8_t> forward = gather_bytes;
      std::uint64_t forward_depth = gather_depth;
      for (std::size_t t = 0; t + 1 < nodes; ++t) {
        node.send(right, forward, forward_depth);
        const std::size_t recv_c = chunk_at(me, 1 + t);
        simnet::Message msg = node.recv(left);
        auto vals = decode_pieces(msg.bytes, local_pieces[recv_c],
                                  ctr.decompress_calls);
        ctr.max_depth = std::max(ctr.max_depth, msg.note);
        std::copy(vals.begin(), vals.end(),
                  result.outputs[me].begin() + bounds[recv_c]);
        forward = std::move(msg.bytes);
        forward_depth = msg.note;
      }
    };
  }

  result.trace = net.run_step(programs);
  finalize(result, req, counters, Topology::ring, nodes);
  return result;
}

ReduceResult run_tree(const ReduceRequest& req, simnet::SimNet& net) {
  const std::size_t nodes = net.config().nodes;
  const std::size_t d = req.inputs[0].size();
  const auto full_pieces = pieces_for(0, d, req.segments);
  std::size_t levels = 0;
  while ((std::size_t{1} << levels) < nodes) ++levels;

  ReduceResult result;
  result.outputs.assign(nodes, std::vector<float>(d, 0.0f));
  std::vector<NodeCounters> counters(nodes);

  std::vector<simnet::NodeProgram> programs(nodes);
  for (std::size_t me = 0; me < nodes; ++me) {
    programs[me] = [&, me](simnet::NodeHandle& node) {
      NodeCounters& ctr = counters[me];
      std::vector<float> acc = req.inputs[me];
      std::uint64_t depth = 0;

      // reduce toward node 0: at level l, nodes offset by 2^l fold upward;
      // absent partners (non-power-of-two counts) contribute nothing
      for (std::size_t l = 0; l < levels; ++l) {
        const std::size_t stride = std::size_t{1} << l;
        const std::size_t group = stride << 1;
        if (me % group == stride) {
          const std::uint64_t note = depth + (any_quantized(full_pieces) ? 1 : 0);
          ctr.max_depth = std::max(ctr.max_depth, note);
          node.send(me - stride,
                    encode_pieces(acc, full_pieces, hop_seed(req.step_seed, l, me),
                                  ctr.compress_calls),
                    note);
          break;  // sent upward; wait for the broadcast
        }
        if (me % group == 0 && me + stride < nodes) {
          simnet::Message msg = node.recv(me + stride);
          auto vals = decode_pieces(msg.bytes, full_pieces, ctr.decompress_calls);
          // acc holds the lower id block, so this add keeps ascending order
          for (std::size_t i = 0; i < d; ++i) acc[i] += vals[i];
          depth = std::max(depth, msg.note);
        }
      }

      // broadcast down: the root encodes once and the bytes travel unchanged
      std::vector<std::uint8_t> bytes;
      std::uint64_t note = 0;
      if (me == 0) {
        note = depth + (any_quantized(full_pieces) ? 1 : 0);
        ctr.max_depth = std::max(ctr.max_depth, note);
        bytes = encode_pieces(acc, full_pieces, hop_seed(req.step_seed, levels, 0),
                              ctr.compress_calls);
      } else {
        // my parent is me with its lowest set bit cleared
        const std::size_t parent = me & (me - 1);
        simnet::Message msg = node.recv(parent);
        bytes = std::move(msg.bytes);
        note = msg.note;
        ctr.max_depth = std::max(ctr.max_depth, note);
      }
      for (std::size_t l = levels; l-- > 0;) {
        const std::size_t stride = std::size_t{1} << l;
        if (me % stride == 0 && (me & stride) == 0 && me + stride < nodes)
          node.send(me + stride, bytes, note);
      }
      result.outputs[me] = decode_pieces(bytes, full_pieces, ctr.decompress_calls);
    };
  }

  result.trace = net.run_step(programs);
  finalize(result, req, counters, Topology::tree, nodes);
  return result;
}

}  // namespace

ReduceResult allreduce(const ReduceRequest& req, simnet::SimNet& net) {
  const std::size_t nodes = net.config().nodes;
  validate_request(req, nodes);

  if (nodes == 1) {
    // nothing to exchange; averaging over one node is the identity
    ReduceResult result;
    result.outputs = req.inputs;
    result.trace.bytes_sent.assign(1, 0);
    result.trace.bytes_received.assign(1, 0);
    return result;
  }

  switch (req.topology) {
    case Topology::sra: return run_sra(req, net);
    case Topology::ring: return run_ring(req, net);
    case Topology::tree: return run_tree(req, net);
  }
  throw std::invalid_argument("unknown topology");
}

std::vector<float> lossless_reference(const ReduceRequest& req) {
  const std::size_t nodes = req.inputs.size();
  if (nodes == 0) return {};
  const std::size_t d = req.inputs[0].size();
  std::vector<float> out(d, 0.0f);
  if (nodes == 1) {
    out = req.inputs[0];
  } else if (req.topology == Topology::tree) {
    // pairwise fold toward node 0, lower id always on the left
    std::vector<std::vector<float>> acc = req.inputs;
    for (std::size_t stride = 1; stride < nodes; stride <<= 1)
      for (std::size_t m = 0; m + stride < nodes; m += stride << 1)
        for (std::size_t i = 0; i < d; ++i) acc[m][i] += acc[m + stride][i];
    out = std::move(acc[0]);
  } else {
    const auto bounds = chunk_boundaries(d, nodes, req.segments);
    for (std::size_t c = 0; c < nodes; ++c) {
      for (std::size_t j = 0; j < nodes; ++j) {
        // sra owners fold sources in ascending id; a ring chunk picks up
        // local values along its walk and meets its owner last
        const std::size_t src =
            req.topology == Topology::sra ? j : (c + 1 + j) % nodes;
        const auto& vals = req.inputs[src];
        if (j == 0)
          for (std::size_t i = bounds[c]; i < bounds[c + 1]; ++i) out[i] = vals[i];
        else
          for (std::size_t i = bounds[c]; i < bounds[c + 1]; ++i) out[i] += vals[i];
      }
    }
  }
  if (req.op == ReduceOp::average && nodes > 1) {
    const float n = static_cast<float>(nodes);
    for (float& v : out) v /= n;
  }
  return out;
}

ReduceResult sparse_allreduce(const std::vector<codec::SparseChunk>& chunks,
                              ReduceOp op, simnet::SimNet& net) {
  const std::size_t nodes = net.config().nodes;
  if (chunks.size() != nodes)
    throw std::invalid_argument("expected one sparse chunk per node");
  const std::size_t d = chunks.empty() ? 0 : chunks[0].original_length;
  for (const auto& c : chunks)
    if (c.original_length != d)
      throw std::invalid_argument("sparse chunks disagree on vector length");

  auto serialize_sparse = [](const codec::SparseChunk& c) {
    std::vector<std::uint8_t> out;
    le_put_u32(out, static_cast<std::uint32_t>(c.original_length));
    le_put_u32(out, static_cast<std::uint32_t>(c.k));
    for (std::size_t idx : c.indices)
      le_put_u32(out, static_cast<std::uint32_t>(idx));
    for (float v : c.values) le_put_f32(out, v);
    return out;
  };
  auto parse_sparse = [](std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw std::runtime_error("sparse chunk truncated");
    codec::SparseChunk c;
    c.original_length = le_get_u32(bytes.data());
    c.k = le_get_u32(bytes.data() + 4);
    if (bytes.size() != 8 + 8 * c.k)
      throw std::runtime_error("sparse chunk size does not match k");
    for (std::size_t i = 0; i < c.k; ++i)
      c.indices.push_back(le_get_u32(bytes.data() + 8 + 4 * i));
    for (std::size_t i = 0; i < c.k; ++i)
      c.values.push_back(le_get_f32(bytes.data() + 8 + 4 * c.k + 4 * i));
    return c;
  };

  ReduceResult result;
  result.outputs.assign(nodes, std::vector<float>(d, 0.0f));

  if (nodes == 1) {
    result.outputs[0] = codec::topk_decompress(chunks[0]);
    result.trace.bytes_sent.assign(1, 0);
    result.trace.bytes_received.assign(1, 0);
    return result;
  }

  std::vector<simnet::NodeProgram> programs(nodes);
  for (std::size_t me = 0; me < nodes; ++me) {
    programs[me] = [&, me](simnet::NodeHandle& node) {
      auto bytes = serialize_sparse(chunks[me]);
      for (std::size_t j = 1; j < nodes; ++j) node.send((me + j) % nodes, bytes);

      std::vector<codec::SparseChunk> received(nodes);
      for (std::size_t src = 0; src < nodes; ++src) {
        if (src == me) continue;
        received[src] = parse_sparse(node.recv(src).bytes);
      }
      std::vector<float>& out = result.outputs[me];
      for (std::size_t id = 0; id < nodes; ++id) {
        auto dense = codec::topk_decompress(id == me ? chunks[me] : received[id]);
        for (std::size_t i = 0; i < d; ++i) out[i] += dense[i];
      }
    };
  }

  result.trace = net.run_step(programs);
  result.trace.rounds = 1;
  if (op == ReduceOp::average) {
    const float n = static_cast<float>(nodes);
    for (auto& out : result.outputs)
      for (float& v : out) v /= n;
  }
  return result;
}

}  // namespace gcomm::collectives
