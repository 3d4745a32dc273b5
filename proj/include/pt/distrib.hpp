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

#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pt/builtins.hpp"
#include "pt/bytesio.hpp"
#include "pt/collectives.hpp"
#include "pt/exec.hpp"
#include "pt/hostspec.hpp"
#include "pt/sandbox.hpp"
#include "pt/transport.hpp"

namespace pt {

/// Test hook: a worker whose sandbox contains this marker reports itself
/// unusable instead of executing, is dropped from the idle pool, and its
/// in-flight file is requeued.
constexpr const char* kUnusableMarker = "/.pt_unusable";

constexpr uint32_t kTagJobData = 6;

/// Replace every `{}` in the template with the filename; with no `{}` the
/// filename is appended.  The result is split on blanks into argv.
inline std::vector<std::string> substitute(const std::string& tmpl,
                                           const std::string& file) {
  if (tmpl.empty()) throw UsageError("empty command template");
  std::string cmd;
  size_t pos = 0, hit;
  bool replaced = false;
  while ((hit = tmpl.find("{}", pos)) != std::string::npos) {
    cmd += tmpl.substr(pos, hit - pos);
    cmd += file;
    pos = hit + 2;
    replaced = true;
  }
  cmd += tmpl.substr(pos);
  std::vector<std::string> argv = detail::split_blanks(cmd);
  if (!replaced) argv.push_back(file);
  if (argv.empty()) throw UsageError("empty command template");
  return argv;
}

enum class JobStatus { Pending, Running, Done };

struct Job {
  std::string file;
  std::optional<int> assigned_rank;
  JobStatus status = JobStatus::Pending;
  int exit_code = -1;
  int round_started = -1;  // scheduler round in which the job ran
};

struct DistribResult {
  ExitReport report;
  std::vector<Job> jobs;           // one per input file, input order
  int rounds = 0;                  // dispatch/collect cycles
  std::vector<std::string> unprocessed;  // nonempty iff all workers died
  std::vector<std::string> warnings;
};

namespace distrib_detail {

constexpr uint8_t kWorkerDone = 0;
constexpr uint8_t kWorkerUnusable = 1;

struct JobReply {
  uint8_t state = kWorkerDone;
  int exit_code = 0;
  std::vector<std::pair<std::string, std::string>> outputs;  // name -> bytes
};

inline std::string encode_reply(const JobReply& r) {
  std::string out;
  out.push_back(char(r.state));
  put_u32(out, uint32_t(r.exit_code));
  put_u32(out, uint32_t(r.outputs.size()));
  for (const auto& [name, data] : r.outputs) {
    put_bytes(out, name);
    put_bytes(out, data);
  }
  return out;
}

inline JobReply decode_reply(std::string_view wire) {
  if (wire.empty()) throw ProtocolError("empty job reply");
  JobReply r;
  r.state = uint8_t(wire[0]);
  ByteReader br(wire.substr(1));
  r.exit_code = int(br.u32());
  uint32_t n = br.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string name{br.bytes()};
    std::string data{br.bytes()};
    r.outputs.emplace_back(std::move(name), std::move(data));
  }
  return r;
}

// Per-round assignment map broadcast to all ranks: worker rank -> file name
// (content travels point-to-point to the assigned worker only).
inline std::string encode_assignments(const std::map<int, std::string>& a,
                                      bool stop) {
  std::string out;
  out.push_back(stop ? 1 : 0);
  put_u32(out, uint32_t(a.size()));
  for (const auto& [rank, file] : a) {
    put_u32(out, uint32_t(rank));
    put_bytes(out, file);
  }
  return out;
}

inline std::pair<std::map<int, std::string>, bool> decode_assignments(
    std::string_view wire) {
  if (wire.empty()) throw ProtocolError("empty assignment map");
  bool stop = wire[0] != 0;
  ByteReader br(wire.substr(1));
  std::map<int, std::string> a;
  uint32_t n = br.u32();
  for (uint32_t i = 0; i < n; ++i) {
    int rank = int(br.u32());
    a[rank] = std::string(br.bytes());
  }
  return {a, stop};
}

inline std::map<std::string, Digest> snapshot_dir(
    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::map<std::string, Digest> snap;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    snap[fs::relative(e.path(), dir).generic_string()] = digest_of(ss.str());
  }
  return snap;
}

inline JobReply run_one_job(const NodeCtx& node, const std::string& tmpl,
                            const std::string& file, std::string_view content,
                            int job_idx, bool fetch) {
  namespace fs = std::filesystem;
  JobReply reply;
  std::string jobdir_name = ".ptjob_" + std::to_string(job_idx);
  fs::path jobdir = resolve_path(node, "/" + jobdir_name);
  fs::create_directories(jobdir);
  {
    std::ofstream f(jobdir / fs::path(file).filename(), std::ios::binary);
    f.write(content.data(), std::streamsize(content.size()));
  }
  auto before = snapshot_dir(jobdir);

  NodeCtx jobctx = node;
  jobctx.cwd = jobdir_name;
  std::vector<std::string> argv =
      substitute(tmpl, fs::path(file).filename().string());
  ExecResult r = execute_command(jobctx, argv);
  reply.exit_code = r.exit_code;

  if (fetch) {
    auto after = snapshot_dir(jobdir);
    for (const auto& [name, dig] : after) {
      auto it = before.find(name);
      if (it != before.end() && it->second == dig) continue;  // unchanged
      std::ifstream in(jobdir / name, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      reply.outputs.emplace_back(name, ss.str());
    }
  }
  std::error_code ec;
  fs::remove_all(jobdir, ec);
  return reply;
}

}  // namespace distrib_detail

struct DistribOptions {
  bool fetch = false;
  std::filesystem::path fetch_dir;  // defaults to the invoking directory
};

/// SPMD body of ptdistrib.  Rank 0 runs a greedy idle-first scheduler in
/// synchronous rounds: assignments are broadcast, file contents go to the
/// assigned workers, and results come back through a gather.  A worker that
/// reports itself unusable leaves the pool and its file is requeued.
inline DistribResult ptdistrib_run(const NodeGroup& g, const DistribOptions& opt,
                                   const std::string& tmpl,
                                   const std::vector<std::string>& files) {
  namespace fs = std::filesystem;
  using namespace distrib_detail;

  if (g.rank() == 0) {
    if (files.empty()) throw UsageError("ptdistrib: no input files");
    substitute(tmpl, "probe");  // template validation
    for (const auto& f : files)
      if (!fs::is_regular_file(f))
        throw UsageError("ptdistrib: cannot read '" + f + "'");
  }
  barrier(g);

  DistribResult result;
  std::map<std::string, int> job_index;
  if (g.rank() == 0) {
    for (size_t i = 0; i < files.size(); ++i) {
      Job j;
      j.file = files[i];
      result.jobs.push_back(j);
      job_index[files[i]] = int(i);
    }
  }

  std::deque<int> pending;  // indices into result.jobs (rank 0 only)
  for (size_t i = 0; i < files.size(); ++i) pending.push_back(int(i));
  std::vector<char> alive(size_t(g.size()), 1);
  int round = 0;
  int jobs_run_locally = 0;

  for (;;) {
    // Rank 0 plans the round.
    std::map<int, std::string> assign;
    bool stop = false;
    if (g.rank() == 0) {
      int live = 0;
      for (int r = 1; r < g.size(); ++r)
        if (alive[size_t(r)]) ++live;
      if (pending.empty()) {
        stop = true;
      } else if (live == 0) {
        stop = true;
        for (int idx : pending)
          result.unprocessed.push_back(result.jobs[size_t(idx)].file);
      } else {
        for (int r = 1; r < g.size() && !pending.empty(); ++r) {
          if (!alive[size_t(r)]) continue;
          int idx = pending.front();
          pending.pop_front();
          assign[r] = result.jobs[size_t(idx)].file;
          result.jobs[size_t(idx)].assigned_rank = r;
          result.jobs[size_t(idx)].status = JobStatus::Running;
        }
      }
    }
    std::string wire = broadcast(
        g, 0, g.rank() == 0 ? encode_assignments(assign, stop) : std::string());
    auto [assignments, do_stop] = decode_assignments(wire);
    if (do_stop) break;

    // Ship file contents to the assigned workers.
    if (g.rank() == 0) {
      for (const auto& [r, file] : assignments) {
        std::ifstream in(file, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        g.send(r, kTagJobData, ss.str());
      }
    }

    // Workers run their job (if any) and everyone joins the gather.
    std::string contribution;
    auto it = assignments.find(g.rank());
    if (g.rank() != 0 && it != assignments.end()) {
      std::string content = g.recv(0, kTagJobData);
      NodeCtx node = NodeCtx::self(g);
      JobReply reply;
      if (fs::exists(resolve_path(node, kUnusableMarker))) {
        reply.state = kWorkerUnusable;
      } else {
        reply = run_one_job(node, tmpl, it->second, content,
                            jobs_run_locally++, opt.fetch);
      }
      contribution = encode_reply(reply);
    }
    std::vector<std::string> replies = gather(g, 0, contribution);

    if (g.rank() == 0) {
      for (const auto& [r, file] : assignments) {
        Job& job = result.jobs[size_t(job_index[file])];
        JobReply reply = decode_reply(replies[size_t(r)]);
        if (reply.state == kWorkerUnusable) {
          alive[size_t(r)] = 0;
          job.status = JobStatus::Pending;
          job.assigned_rank.reset();
          pending.push_front(job_index[file]);  // requeue
          continue;
        }
        job.status = JobStatus::Done;
        job.exit_code = reply.exit_code;
        job.round_started = round;
        if (opt.fetch) {
          fs::path dir = opt.fetch_dir.empty() ? fs::current_path() : opt.fetch_dir;
          for (const auto& [name, data] : reply.outputs) {
            fs::path target = dir / fs::path(name).filename();
            if (fs::exists(target))
              result.warnings.push_back("ptdistrib: '" + name +
                                        "' fetched from multiple jobs; later write wins");
            std::ofstream out(target, std::ios::binary | std::ios::trunc);
            out.write(data.data(), std::streamsize(data.size()));
          }
        }
      }
    }
    ++round;
  }
  result.rounds = round;

  if (g.rank() == 0) {
    std::vector<int> codes(size_t(g.size()), 0);
    for (const auto& job : result.jobs)
      if (job.status == JobStatus::Done && job.exit_code != 0 &&
          job.assigned_rank)
        codes[size_t(*job.assigned_rank)] = job.exit_code;
    result.report = ExitReport::from_codes(g, codes);
    if (!result.unprocessed.empty()) result.report.aggregate = 1;
  }
  return result;
}

}  // namespace pt
