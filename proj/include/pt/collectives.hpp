/*
 * Copyright 2026 The ptools Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pt/bytesio.hpp"
#include "pt/error.hpp"
#include "pt/transport.hpp"

namespace pt {

enum class ReduceOp : uint8_t { Min, LogicalAnd, LogicalOr };

namespace coll_detail {

constexpr uint32_t kTagBcast = 1;
constexpr uint32_t kTagReduce = 2;
constexpr uint32_t kTagGather = 3;
constexpr uint32_t kTagSplit = 4;

inline int relative_rank(int rank, int root, int size) {
  return (rank - root + size) % size;
}
inline int absolute_rank(int relative, int root, int size) {
  return (relative + root) % size;
}

}  // namespace coll_detail

/// Binomial-tree broadcast: exactly size-1 messages, depth ceil(log2 size).
/// Every rank must call with the same root; a mismatch is a protocol error.
inline std::string broadcast(const NodeGroup& g, int root, std::string_view payload) {
  using namespace coll_detail;
  int size = g.size();
  int rel = relative_rank(g.rank(), root, size);

  std::string data;
  if (rel == 0) {
    data.assign(payload.data(), payload.size());
  } else {
    int mask = 1;
    while (mask < size) {
      if (rel & mask) {
        int src = absolute_rank(rel - mask, root, size);
        std::string msg = g.recv(src, kTagBcast);
        ByteReader r(msg);
        if (int(r.u32()) != root)
          throw ProtocolError("broadcast called with mismatched roots");
        data.assign(r.rest());
        break;
      }
      mask <<= 1;
    }
    mask >>= 1;
    std::string framed;
    put_u32(framed, uint32_t(root));
    framed += data;
    while (mask > 0) {
      if (rel + mask < size && (rel & (mask - 1)) == 0)
        g.send(absolute_rank(rel + mask, root, size), kTagBcast, framed);
      mask >>= 1;
    }
    return data;
  }

  // Root: send to subtree leaders, widest subtree first.
  std::string framed;
  put_u32(framed, uint32_t(root));
  framed += data;
  int top = 1;
  while (top < size) top <<= 1;
  for (int mask = top >> 1; mask > 0; mask >>= 1)
    if (mask < size) g.send(absolute_rank(mask, root, size), kTagBcast, framed);
  return data;
}

inline int64_t apply_reduce(ReduceOp op, int64_t a, int64_t b) {
  switch (op) {
    case ReduceOp::Min: return std::min(a, b);
    case ReduceOp::LogicalAnd: return (a != 0 && b != 0) ? 1 : 0;
    case ReduceOp::LogicalOr: return (a != 0 || b != 0) ? 1 : 0;
  }
  throw UsageError("unknown reduce op");
}

/// Reduce along the mirror of the broadcast tree.  The result is only
/// meaningful at the root; other ranks get 0.
inline int64_t reduce(const NodeGroup& g, int root, ReduceOp op, int64_t value) {
  using namespace coll_detail;
  if ((op == ReduceOp::LogicalAnd || op == ReduceOp::LogicalOr) &&
      (value != 0 && value != 1))
    throw UsageError("logical reduction requires values in {0,1}");
  int size = g.size();
  int rel = relative_rank(g.rank(), root, size);

  int64_t acc = value;
  int mask = 1;
  while (mask < size) {
    if (rel & mask) {
      std::string msg;
      put_u32(msg, uint32_t(root));
      put_i64(msg, acc);
      g.send(absolute_rank(rel - mask, root, size), kTagReduce, msg);
      return 0;
    }
    if (rel + mask < size) {
      std::string msg = g.recv(absolute_rank(rel + mask, root, size), kTagReduce);
      ByteReader r(msg);
      if (int(r.u32()) != root)
        throw ProtocolError("reduce called with mismatched roots");
      acc = apply_reduce(op, acc, r.i64());
    }
    mask <<= 1;
  }
  return acc;  // rel == 0, i.e. the root
}

/// Gather every rank's contribution at the root, indexed by rank.
/// Non-root ranks get an empty vector.
inline std::vector<std::string> gather(const NodeGroup& g, int root,
                                       std::string_view value) {
  using namespace coll_detail;
  if (g.rank() != root) {
    std::string msg;
    put_u32(msg, uint32_t(root));
    msg.append(value.data(), value.size());
    g.send(root, kTagGather, msg);
    return {};
  }
  std::vector<std::string> out(size_t(g.size()));
  out[size_t(root)].assign(value.data(), value.size());
  for (int r = 0; r < g.size(); ++r) {
    if (r == root) continue;
    std::string msg = g.recv(r, kTagGather);
    ByteReader br(msg);
    if (int(br.u32()) != root)
      throw ProtocolError("gather called with mismatched roots");
    out[size_t(r)].assign(br.rest());
  }
  return out;
}

/// Excluded-from-split sentinel (the caller keeps no subgroup).
constexpr int kSplitUndefined = -1;

/// Partition the group by color.  Members of the same color form a subgroup
/// with ranks renumbered 0..k-1 in parent rank order; a member passing the
/// undefined sentinel gets no subgroup.  Rank 0 of the parent assigns the
/// subgroup context ids so that all members agree on the tag namespace.
inline std::optional<NodeGroup> split(const NodeGroup& g, int color) {
  using namespace coll_detail;
  std::string mine;
  put_u32(mine, uint32_t(color));
  std::vector<std::string> colors = gather(g, 0, mine);

  std::string plan;
  if (g.rank() == 0) {
    std::vector<int> cols(size_t(g.size()));
    for (int r = 0; r < g.size(); ++r) {
      ByteReader br(colors[size_t(r)]);
      cols[size_t(r)] = int(br.u32());
    }
    std::map<int, uint32_t> ctx_of_color;
    for (int c : cols)
      if (c != kSplitUndefined && !ctx_of_color.count(c))
        ctx_of_color[c] = g.transport().alloc_context();
    put_u32(plan, uint32_t(g.size()));
    for (int r = 0; r < g.size(); ++r) {
      put_u32(plan, uint32_t(cols[size_t(r)]));
      put_u32(plan, cols[size_t(r)] == kSplitUndefined
                        ? 0
                        : ctx_of_color[cols[size_t(r)]]);
    }
  }
  plan = broadcast(g, 0, plan);

  ByteReader br(plan);
  uint32_t n = br.u32();
  std::vector<int> cols(n);
  std::vector<uint32_t> ctxs(n);
  for (uint32_t i = 0; i < n; ++i) {
    cols[i] = int(br.u32());
    ctxs[i] = br.u32();
  }
  if (color == kSplitUndefined) return std::nullopt;

  std::vector<int> members;  // parent ranks, ascending
  int my_new_rank = -1;
  for (int r = 0; r < int(n); ++r) {
    if (cols[size_t(r)] == color) {
      if (r == g.rank()) my_new_rank = int(members.size());
      members.push_back(r);
    }
  }
  return g.subgroup(ctxs[size_t(g.rank())], members, my_new_rank);
}

/// Full barrier: a reduce followed by a broadcast.
inline void barrier(const NodeGroup& g) {
  reduce(g, 0, ReduceOp::Min, 0);
  broadcast(g, 0, "");
}

}  // namespace pt
