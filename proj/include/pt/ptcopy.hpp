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

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pt/chunk.hpp"
#include "pt/collectives.hpp"
#include "pt/exec.hpp"
#include "pt/sandbox.hpp"
#include "pt/tar.hpp"
#include "pt/transport.hpp"

namespace pt {

constexpr uint32_t kTagChunk = 5;
constexpr size_t kDefaultChunkSize = 64 * 1024;

/// Test hook: a node whose sandbox contains this marker fails its first
/// destination write (drives the ptmv never-delete-on-partial-failure
/// property without real hardware faults).
constexpr const char* kFailWriteMarker = "/.pt_fail_write";

enum class TransferMode : uint8_t { SingleFile, Archive };

struct TransferPlan {
  TransferMode mode = TransferMode::SingleFile;
  bool compress = true;
  size_t chunk_size = kDefaultChunkSize;
};

enum class TargetClass : uint8_t { IsFile, IsDirectory, Missing };

inline TargetClass classify_target(const NodeCtx& ctx, const std::string& dest) {
  namespace fs = std::filesystem;
  fs::path p = resolve_path(ctx, dest);
  std::error_code ec;
  if (fs::is_directory(p, ec)) return TargetClass::IsDirectory;
  if (fs::exists(fs::symlink_status(p, ec))) return TargetClass::IsFile;
  return TargetClass::Missing;
}

/// Per-rank result of one transfer, valid at the root.
struct CopyOutcome {
  std::vector<int> per_rank_status;      // 0 ok; nonzero error
  std::vector<uint64_t> bytes_written;   // raw bytes, per rank
  std::vector<std::string> notes;        // per rank, empty when ok
  bool aggregate_ok = false;
};

namespace ptcopy_detail {

// Static binomial tree rooted (in relative rank space) at 0: a node's
// parent strips its lowest set bit; children are rel+2^k for descending k.
inline int lowbit(int x) { return x & (-x); }

inline int tree_parent(int rel) { return rel - lowbit(rel); }

inline std::vector<int> tree_children(int rel, int size) {
  int top = 1;
  while (top < size) top <<= 1;
  int limit = rel == 0 ? top : lowbit(rel);
  std::vector<int> kids;
  for (int m = limit >> 1; m > 0; m >>= 1)
    if (rel + m < size) kids.push_back(rel + m);
  return kids;
}

}  // namespace ptcopy_detail

/// Pipelined chunked broadcast of a byte stream from the root through the
/// binomial tree.  Every chunk costs size-1 messages; a rank forwards each
/// chunk to its subtree before writing it, so chunk k+1 can be in flight
/// while chunk k is being written further down.
///
/// `source` is consumed at the root only.  Non-root ranks write through
/// `sink`; a null sink (failed open) makes that rank relay-only and report
/// the supplied open_error.  A read failure at the root poisons the stream
/// and every rank reports failure.
inline CopyOutcome pipeline_broadcast(const NodeGroup& g, int root,
                                      ByteSource* source,
                                      const TransferPlan& plan,
                                      ByteSink* sink,
                                      const std::string& open_error = "") {
  using namespace ptcopy_detail;
  if (plan.chunk_size == 0) throw UsageError("chunk size must be positive");
  int size = g.size();
  int rel = coll_detail::relative_rank(g.rank(), root, size);
  std::vector<int> kids = tree_children(rel, size);

  int my_status = 0;
  std::string my_note = open_error;
  uint64_t written = 0;
  if (sink == nullptr && g.rank() != root && !open_error.empty()) my_status = 1;

  auto forward = [&](const std::string& wire) {
    for (int k : kids)
      g.send(coll_detail::absolute_rank(k, root, size), kTagChunk, wire);
  };

  if (rel == 0) {
    auto read_chunk = [&](std::string& buf) {
      buf.resize(plan.chunk_size);
      size_t n = source->read(buf.data(), plan.chunk_size);
      buf.resize(n);
    };
    std::string cur, next;
    uint32_t index = 0;
    bool poisoned = false;
    try {
      read_chunk(cur);
    } catch (const std::exception& e) {
      poisoned = true;
      my_note = e.what();
    }
    while (!poisoned) {
      bool last = cur.size() < plan.chunk_size;
      if (!last) {
        try {
          read_chunk(next);
        } catch (const std::exception& e) {
          poisoned = true;
          my_note = e.what();
          break;
        }
        last = next.empty();
      }
      Chunk c = make_chunk(index++, last, cur, plan.compress);
      forward(encode_chunk(c));
      if (last) break;
      cur = std::move(next);
      next.clear();
    }
    if (poisoned) {
      Chunk c;
      c.index = index;
      c.last = true;
      c.poisoned = true;
      forward(encode_chunk(c));
      my_status = 1;
    }
  } else {
    int parent = coll_detail::absolute_rank(tree_parent(rel), root, size);
    for (;;) {
      std::string wire = g.recv(parent, kTagChunk);
      forward(wire);
      Chunk c = decode_chunk(wire);
      if (c.poisoned) {
        my_status = 1;
        if (my_note.empty()) my_note = "transfer aborted at source";
        if (sink) sink->discard();
        break;
      }
      if (sink && my_status == 0) {
        try {
          std::string data = chunk_data(c);
          sink->write(data);
          written += data.size();
          if (c.last) sink->finish();
        } catch (const std::exception& e) {
          my_status = 1;
          my_note = e.what();
          written = 0;
          sink->discard();
        }
      }
      if (c.last) break;
    }
  }

  std::string contribution;
  put_u32(contribution, uint32_t(my_status));
  put_u64(contribution, written);
  put_bytes(contribution, my_note);
  std::vector<std::string> all = gather(g, root, contribution);
  int64_t ok = reduce(g, root, ReduceOp::Min, my_status == 0 ? 1 : 0);

  CopyOutcome out;
  if (g.rank() == root) {
    out.aggregate_ok = ok == 1;
    out.per_rank_status.resize(size_t(size));
    out.bytes_written.resize(size_t(size));
    out.notes.resize(size_t(size));
    for (int r = 0; r < size; ++r) {
      ByteReader br(all[size_t(r)]);
      out.per_rank_status[size_t(r)] = int(br.u32());
      out.bytes_written[size_t(r)] = br.u64();
      out.notes[size_t(r)] = std::string(br.bytes());
    }
  }
  return out;
}

struct PtcpOptions {
  bool recursive = false;
  bool compress = true;
  size_t chunk_size = kDefaultChunkSize;
};

namespace ptcopy_detail {

struct WirePlan {
  TransferPlan plan;
  std::string dest;
  std::string src_basename;   // SingleFile: file name; Archive single-dir: dir name
  bool single_dir_source = false;
  uint32_t n_sources = 0;
};

inline std::string encode_plan(const WirePlan& w) {
  std::string out;
  out.push_back(char(uint8_t(w.plan.mode)));
  out.push_back(w.plan.compress ? 1 : 0);
  out.push_back(w.single_dir_source ? 1 : 0);
  put_u32(out, uint32_t(w.plan.chunk_size));
  put_u32(out, w.n_sources);
  put_bytes(out, w.dest);
  put_bytes(out, w.src_basename);
  return out;
}

inline WirePlan decode_plan(std::string_view data) {
  if (data.size() < 3) throw ProtocolError("short transfer plan");
  WirePlan w;
  w.plan.mode = TransferMode(uint8_t(data[0]));
  w.plan.compress = data[1] != 0;
  w.single_dir_source = data[2] != 0;
  ByteReader r(data.substr(3));
  w.plan.chunk_size = r.u32();
  w.n_sources = r.u32();
  w.dest = std::string(r.bytes());
  w.src_basename = std::string(r.bytes());
  return w;
}

struct NodeSink {
  std::unique_ptr<ByteSink> sink;
  std::string open_error;
};

inline NodeSink open_node_sink(const NodeCtx& ctx, const WirePlan& w,
                               TargetClass cls) {
  namespace fs = std::filesystem;
  NodeSink out;
  if (!ctx.sandbox.empty() &&
      fs::exists(resolve_path(ctx, kFailWriteMarker))) {
    struct FailingSink : ByteSink {
      void write(std::string_view) override {
        throw TransportError("injected write failure");
      }
      void finish() override {}
    };
    out.sink = std::make_unique<FailingSink>();
    return out;
  }
  try {
    if (w.plan.mode == TransferMode::SingleFile) {
      fs::path dest = resolve_path(ctx, w.dest);
      if (cls == TargetClass::IsDirectory) dest /= w.src_basename;
      else if (cls == TargetClass::Missing && !dest.parent_path().empty() &&
               !fs::is_directory(dest.parent_path()))
        throw TransportError("'" + w.dest + "': no such directory");
      out.sink = std::make_unique<FileSink>(dest);
    } else {
      if (cls == TargetClass::IsFile)
        throw TransportError("'" + w.dest + "' exists and is not a directory");
      if (cls == TargetClass::Missing) {
        if (!w.single_dir_source)
          throw TransportError("'" + w.dest + "': no such directory");
        // cp -r dir dest: dest becomes a copy of dir
        fs::path dest = resolve_path(ctx, w.dest);
        auto sink = std::make_unique<TarExtractSink>(dest.parent_path());
        sink->rename_root(w.src_basename, dest.filename().string());
        out.sink = std::move(sink);
      } else {
        out.sink = std::make_unique<TarExtractSink>(resolve_path(ctx, w.dest));
      }
    }
  } catch (const std::exception& e) {
    out.open_error = e.what();
    out.sink.reset();
  }
  return out;
}

}  // namespace ptcopy_detail

/// SPMD body of ptcp.  Rank 0 holds the sources; every target node ends up
/// with copies placed by cp rules for its own view of the destination.
/// Nodes whose destination classifies differently are handled in separate
/// subgroups keyed on the classification.
inline std::pair<ExitReport, CopyOutcome> ptcp_run(
    const NodeGroup& g, const PtcpOptions& opt,
    const std::vector<std::string>& sources, const std::string& dest) {
  namespace fs = std::filesystem;
  using namespace ptcopy_detail;

  WirePlan w;
  if (g.rank() == 0) {
    if (sources.empty()) throw UsageError("ptcp: missing source");
    if (dest.empty()) throw UsageError("ptcp: missing destination");
    bool any_dir = false;
    for (const auto& s : sources) {
      auto st = fs::symlink_status(s);
      if (!fs::exists(st))
        throw UsageError("ptcp: cannot stat '" + s + "': No such file or directory");
      if (fs::is_directory(st)) {
        if (!opt.recursive)
          throw UsageError("ptcp: -r not specified; omitting directory '" + s + "'");
        any_dir = true;
      }
    }
    w.plan.compress = opt.compress;
    w.plan.chunk_size = opt.chunk_size;
    w.dest = dest;
    w.n_sources = uint32_t(sources.size());
    if (sources.size() == 1 && !any_dir) {
      w.plan.mode = TransferMode::SingleFile;
      w.src_basename = fs::path(sources[0]).filename().string();
    } else {
      w.plan.mode = TransferMode::Archive;
      w.single_dir_source = sources.size() == 1;
      w.src_basename = fs::path(sources[0]).filename().string();
    }
  }
  w = decode_plan(broadcast(g, 0, g.rank() == 0 ? encode_plan(w) : std::string()));

  // Classify the destination on every target node; rank 0 reports a
  // sentinel class since it is the source side.
  uint8_t my_cls = 255;
  if (g.rank() != 0)
    my_cls = uint8_t(classify_target(NodeCtx::self(g), w.dest));
  std::vector<std::string> classes =
      gather(g, 0, std::string(1, char(my_cls)));

  if (g.rank() == 0 && w.n_sources > 1) {
    bool any_dir_dest = false;
    for (int r = 1; r < g.size(); ++r)
      if (TargetClass(uint8_t(classes[size_t(r)][0])) == TargetClass::IsDirectory)
        any_dir_dest = true;
    if (!any_dir_dest)
      throw UsageError("ptcp: target '" + w.dest + "' is not a directory on any node");
  }
  barrier(g);  // everyone passed validation or rank 0 has thrown

  // Same-class nodes form a subgroup; rank 0 stays out (undefined color).
  auto sub = split(g, g.rank() == 0 ? kSplitUndefined : int(my_cls));

  NodeSink ns;
  if (g.rank() != 0)
    ns = open_node_sink(NodeCtx::self(g), w, TargetClass(my_cls));

  std::unique_ptr<ByteSource> source;
  if (g.rank() == 0) {
    if (w.plan.mode == TransferMode::SingleFile) {
      source = std::make_unique<FileSource>(sources[0]);
    } else {
      std::vector<fs::path> paths(sources.begin(), sources.end());
      source = std::make_unique<TarSource>(paths);
    }
  }

  CopyOutcome outcome = pipeline_broadcast(g, 0, source.get(), w.plan,
                                           ns.sink.get(), ns.open_error);

  ExitReport rep;
  if (g.rank() == 0) {
    std::vector<int> codes(size_t(g.size()), 0);
    for (int r = 1; r < g.size(); ++r) {
      codes[size_t(r)] = outcome.per_rank_status[size_t(r)];
      if (!outcome.notes[size_t(r)].empty())
        rep.error_notes[g.host_of(r)] = outcome.notes[size_t(r)];
    }
    auto base = ExitReport::from_codes(g, codes);
    base.error_notes = std::move(rep.error_notes);
    rep = std::move(base);
  }
  return {std::move(rep), std::move(outcome)};
}

/// SPMD body of ptmv: ptcp, then delete the local sources if and only if
/// every node succeeded.  Deletion failures are reported separately.
inline ExitReport ptmv_run(const NodeGroup& g, const PtcpOptions& opt,
                           const std::vector<std::string>& sources,
                           const std::string& dest) {
  auto [rep, outcome] = ptcp_run(g, opt, sources, dest);
  if (g.rank() == 0 && rep.aggregate == 0) {
    namespace fs = std::filesystem;
    for (const auto& s : sources) {
      std::error_code ec;
      fs::remove_all(s, ec);
      if (ec) {
        rep.aggregate = 1;
        rep.error_notes["(local)"] =
            "copy succeeded but could not delete '" + s + "': " + ec.message();
      }
    }
  }
  return rep;
}

}  // namespace pt
