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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pt/builtins.hpp"
#include "pt/bytesio.hpp"
#include "pt/collectives.hpp"
#include "pt/transport.hpp"

namespace pt {

struct CommandSpec {
  std::vector<std::string> argv;
  bool headers = false;
};

/// Per-host exit status plus the aggregate (0 iff every host exited 0).
struct ExitReport {
  std::vector<std::pair<std::string, int>> per_host;  // rank order, ranks 1..N
  std::map<std::string, std::string> error_notes;
  int aggregate = 0;

  static ExitReport from_codes(const NodeGroup& g, const std::vector<int>& codes) {
    ExitReport rep;
    for (int r = 1; r < g.size(); ++r) {
      int code = codes[size_t(r)];
      rep.per_host.emplace_back(g.host_of(r), code);
      if (code != 0) rep.aggregate = 1;
    }
    return rep;
  }
};

/// SPMD body of ptexec and friends: every target rank executes the command
/// in its own context, output is collected at rank 0 grouped by host in
/// ascending rank order, and the aggregate comes from a Min reduction of
/// success flags.
inline std::pair<std::string, ExitReport> run_on_all(const NodeGroup& g,
                                                     const CommandSpec& spec) {
  if (spec.argv.empty()) throw UsageError("empty command");

  std::string contribution;
  int my_exit = 0;
  if (g.rank() != 0) {
    NodeCtx ctx = NodeCtx::self(g);
    ExecResult r = execute_command(ctx, spec.argv);
    my_exit = r.exit_code;
    put_u32(contribution, uint32_t(r.exit_code));
    put_bytes(contribution, r.out);
    put_bytes(contribution, r.err);
  } else {
    put_u32(contribution, 0);
    put_bytes(contribution, "");
    put_bytes(contribution, "");
  }

  std::vector<std::string> all = gather(g, 0, contribution);
  int64_t ok = reduce(g, 0, ReduceOp::Min, my_exit == 0 ? 1 : 0);

  if (g.rank() != 0) return {"", ExitReport{}};

  std::string out;
  std::vector<int> codes(size_t(g.size()), 0);
  std::map<std::string, std::string> notes;
  for (int r = 1; r < g.size(); ++r) {
    ByteReader br(all[size_t(r)]);
    int code = int(br.u32());
    std::string node_out{br.bytes()};
    std::string node_err{br.bytes()};
    codes[size_t(r)] = code;
    if (spec.headers) out += "[" + g.host_of(r) + "]\n";
    out += node_out;
    if (!node_err.empty()) notes[g.host_of(r)] = node_err;
  }
  ExitReport rep = ExitReport::from_codes(g, codes);
  rep.error_notes = std::move(notes);
  // cross-check: tree reduction and the per-host scan must agree
  if ((ok == 1) != (rep.aggregate == 0))
    throw ProtocolError("aggregate reduction disagrees with per-host codes");
  return {out, rep};
}

/// Map a pt-prefixed wrapper command onto its uniprocessor base command.
inline std::optional<std::string> wrapped_base_command(const std::string& name) {
  static const std::map<std::string, std::string> kMap = {
      {"ptrm", "rm"},         {"ptmkdir", "mkdir"}, {"ptrmdir", "rmdir"},
      {"ptchmod", "chmod"},   {"ptchown", "chown"}, {"ptchgrp", "chgrp"},
      {"ptln", "ln"},         {"ptkillall", "killall"},
      {"ptls", "ls"},         {"ptcat", "cat"},     {"ptfind", "find"},
  };
  auto it = kMap.find(name);
  if (it == kMap.end()) return std::nullopt;
  return it->second;
}

/// Which wrappers accept a leading -h (headers) flag.
inline bool wrapper_accepts_headers(const std::string& name) {
  return name == "ptls" || name == "ptcat" || name == "ptfind";
}

inline std::pair<std::string, ExitReport> run_wrapped(
    const NodeGroup& g, const std::string& name,
    const std::vector<std::string>& args) {
  auto base = wrapped_base_command(name);
  if (!base) throw UsageError("unknown wrapped command '" + name + "'");
  CommandSpec spec;
  spec.argv.push_back(*base);
  size_t i = 0;
  if (wrapper_accepts_headers(name) && !args.empty() && args[0] == "-h") {
    spec.headers = true;
    i = 1;
  }
  for (; i < args.size(); ++i) spec.argv.push_back(args[i]);
  return run_on_all(g, spec);
}

}  // namespace pt
