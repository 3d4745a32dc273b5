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

#include <signal.h>

#include <algorithm>
#include <map>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "pt/builtins.hpp"
#include "pt/collectives.hpp"
#include "pt/exec.hpp"
#include "pt/transport.hpp"

namespace pt {

/// Predicate tree over process records.  Evaluation is pure and total;
/// pattern validity is checked at parse time.
struct ProcPredicate {
  enum class Kind { True, User, MinElapsed, CmdMatch, And };

  Kind kind = Kind::True;
  std::string user;
  long min_elapsed = 0;
  std::string cmd_pattern;
  std::shared_ptr<const std::regex> cmd_re;
  std::vector<ProcPredicate> children;

  static ProcPredicate truth() { return {}; }

  static ProcPredicate by_user(std::string name) {
    ProcPredicate p;
    p.kind = Kind::User;
    p.user = std::move(name);
    return p;
  }

  /// "running for more than S seconds": strict inequality.
  static ProcPredicate min_elapsed_secs(long s) {
    ProcPredicate p;
    p.kind = Kind::MinElapsed;
    p.min_elapsed = s;
    return p;
  }

  static ProcPredicate cmd_match(const std::string& pattern) {
    ProcPredicate p;
    p.kind = Kind::CmdMatch;
    p.cmd_pattern = pattern;
    try {
      p.cmd_re = std::make_shared<const std::regex>(pattern);
    } catch (const std::regex_error&) {
      throw UsageError("invalid -cmd pattern '" + pattern + "'");
    }
    return p;
  }

  static ProcPredicate all_of(std::vector<ProcPredicate> kids) {
    ProcPredicate p;
    p.kind = Kind::And;
    p.children = std::move(kids);
    return p;
  }

  bool matches(const ProcessRecord& r) const {
    switch (kind) {
      case Kind::True: return true;
      case Kind::User: return r.user == user;
      case Kind::MinElapsed: return r.elapsed_seconds > min_elapsed;
      case Kind::CmdMatch: return std::regex_search(r.command, *cmd_re);
      case Kind::And:
        return std::all_of(children.begin(), children.end(),
                           [&](const ProcPredicate& c) { return c.matches(r); });
    }
    return false;
  }

  /// Wire form so rank 0 can ship the predicate to the nodes.
  std::string serialize() const {
    std::string out;
    out.push_back(char('0' + int(kind)));
    switch (kind) {
      case Kind::User: put_bytes(out, user); break;
      case Kind::MinElapsed: put_i64(out, min_elapsed); break;
      case Kind::CmdMatch: put_bytes(out, cmd_pattern); break;
      case Kind::And:
        put_u32(out, uint32_t(children.size()));
        for (const auto& c : children) put_bytes(out, c.serialize());
        break;
      case Kind::True: break;
    }
    return out;
  }

  static ProcPredicate deserialize(std::string_view data) {
    ByteReader r(data);
    return parse_node(r);
  }

 private:
  static ProcPredicate parse_node(ByteReader& r) {
    std::string_view rest = r.rest();
    if (rest.empty()) throw ProtocolError("empty predicate");
    ByteReader body(rest.substr(1));
    switch (rest[0] - '0') {
      case int(Kind::True): return truth();
      case int(Kind::User): return by_user(std::string(body.bytes()));
      case int(Kind::MinElapsed): return min_elapsed_secs(long(body.i64()));
      case int(Kind::CmdMatch): return cmd_match(std::string(body.bytes()));
      case int(Kind::And): {
        uint32_t n = body.u32();
        std::vector<ProcPredicate> kids;
        for (uint32_t i = 0; i < n; ++i)
          kids.push_back(deserialize(body.bytes()));
        return all_of(std::move(kids));
      }
    }
    throw ProtocolError("unknown predicate kind");
  }
};

struct ProcAction {
  enum class Kind { PrintDefault, Kill };
  Kind kind = Kind::PrintDefault;
  std::string signal_name;  // Kill only
};

inline int signal_number(const std::string& name) {
  static const std::map<std::string, int> kSignals = {
      {"SIGHUP", SIGHUP},   {"SIGINT", SIGINT},   {"SIGQUIT", SIGQUIT},
      {"SIGKILL", SIGKILL}, {"SIGTERM", SIGTERM}, {"SIGUSR1", SIGUSR1},
      {"SIGUSR2", SIGUSR2}, {"SIGSTOP", SIGSTOP}, {"SIGCONT", SIGCONT},
  };
  auto it = kSignals.find(name);
  if (it == kSignals.end())
    throw UsageError("unknown signal name '" + name + "'");
  return it->second;
}

struct PtfpsArgs {
  ProcPredicate predicate;
  ProcAction action;
};

/// Parse the flag/value pairs after the host arguments: -user, -time, -cmd
/// build the conjunction; -kill selects the kill action.
inline PtfpsArgs parse_ptfps(const std::vector<std::string>& args) {
  std::vector<ProcPredicate> preds;
  PtfpsArgs out;
  for (size_t i = 0; i < args.size(); ++i) {
    const std::string& flag = args[i];
    if (i + 1 >= args.size())
      throw UsageError("flag '" + flag + "' is missing its value");
    const std::string& val = args[++i];
    if (flag == "-user") {
      preds.push_back(ProcPredicate::by_user(val));
    } else if (flag == "-time") {
      try {
        size_t used = 0;
        long s = std::stol(val, &used);
        if (used != val.size() || s < 0) throw std::invalid_argument(val);
        preds.push_back(ProcPredicate::min_elapsed_secs(s));
      } catch (const std::exception&) {
        throw UsageError("-time expects a nonnegative number of seconds, got '" +
                         val + "'");
      }
    } else if (flag == "-cmd") {
      preds.push_back(ProcPredicate::cmd_match(val));
    } else if (flag == "-kill") {
      signal_number(val);  // validate now
      out.action.kind = ProcAction::Kind::Kill;
      out.action.signal_name = val;
    } else {
      throw UsageError("unknown ptfps flag '" + flag + "'");
    }
  }
  if (preds.empty()) out.predicate = ProcPredicate::truth();
  else if (preds.size() == 1) out.predicate = std::move(preds[0]);
  else out.predicate = ProcPredicate::all_of(std::move(preds));
  return out;
}

struct PtfpsResult {
  std::vector<std::string> lines;  // rank order then pid order
  ExitReport report;
};

/// SPMD body of ptfps.  Sim nodes enumerate the fixture table and log
/// attempted signals instead of delivering them; process backends read the
/// live process list and really signal.
inline PtfpsResult ptfps_run(const NodeGroup& g, const PtfpsArgs& spec) {
  std::string wire = spec.predicate.serialize();
  std::string blob = broadcast(g, 0, g.rank() == 0 ? wire : std::string());
  ProcPredicate pred = ProcPredicate::deserialize(blob);

  std::string contribution;
  int my_status = 0;
  if (g.rank() != 0) {
    NodeCtx ctx = NodeCtx::self(g);
    std::vector<ProcessRecord> table;
    if (g.backend() == Backend::Sim) {
      table = load_process_table(ctx);
    } else {
      ExecResult ps = execute_command(ctx, {"ps", "-e", "-o",
                                            "pid=,user=,etimes=,args="});
      if (ps.exit_code == 0) {
        std::istringstream in(ps.out);
        table = parse_process_table(in);
      } else {
        my_status = 1;
      }
    }
    std::vector<const ProcessRecord*> hits;
    for (const auto& r : table)
      if (pred.matches(r)) hits.push_back(&r);
    std::sort(hits.begin(), hits.end(),
              [](const ProcessRecord* a, const ProcessRecord* b) {
                return a->pid < b->pid;
              });

    std::string body;
    if (spec.action.kind == ProcAction::Kind::PrintDefault) {
      for (const auto* r : hits)
        body += ctx.hostname + ": " + std::to_string(r->pid) + " " + r->user +
                " " + std::to_string(r->elapsed_seconds) + " " + r->command +
                "\n";
    } else {
      int killed = 0;
      for (const auto* r : hits) {
        if (g.backend() == Backend::Sim) {
          log_signal(ctx, r->pid, spec.action.signal_name);
          ++killed;
        } else {
          if (::kill(pid_t(r->pid), signal_number(spec.action.signal_name)) == 0)
            ++killed;
          else
            my_status = 1;
        }
      }
      body = ctx.hostname + ": killed " + std::to_string(killed) + "\n";
    }
    put_u32(contribution, uint32_t(my_status));
    put_bytes(contribution, body);
  } else {
    put_u32(contribution, 0);
    put_bytes(contribution, "");
  }

  std::vector<std::string> all = gather(g, 0, contribution);
  reduce(g, 0, ReduceOp::Min, my_status == 0 ? 1 : 0);

  PtfpsResult res;
  if (g.rank() == 0) {
    std::vector<int> codes(size_t(g.size()), 0);
    for (int r = 1; r < g.size(); ++r) {
      ByteReader br(all[size_t(r)]);
      codes[size_t(r)] = int(br.u32());
      std::string body{br.bytes()};
      std::istringstream ls(body);
      std::string line;
      while (std::getline(ls, line)) res.lines.push_back(line);
    }
    res.report = ExitReport::from_codes(g, codes);
  }
  return res;
}

}  // namespace pt
