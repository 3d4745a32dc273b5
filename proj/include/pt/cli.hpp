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

#include <unistd.h>

#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "pt/distrib.hpp"
#include "pt/error.hpp"
#include "pt/exec.hpp"
#include "pt/hostspec.hpp"
#include "pt/predicates.hpp"
#include "pt/proc_backend.hpp"
#include "pt/procfind.hpp"
#include "pt/ptcopy.hpp"
#include "pt/textdisp.hpp"
#include "pt/transport.hpp"

namespace pt {

struct GlobalConfig {
  Backend backend = Backend::Sim;
  std::filesystem::path sim_root;
  std::string remote_shell_template;
};

inline GlobalConfig config_from_env(const EnvLookup& env = getenv_lookup) {
  GlobalConfig cfg;
  if (const char* b = env("PT_BACKEND")) {
    std::string name = b;
    if (name == "sim") cfg.backend = Backend::Sim;
    else if (name == "localproc") cfg.backend = Backend::LocalProc;
    else if (name == "remoteshell") cfg.backend = Backend::RemoteShell;
    else throw UsageError("unknown PT_BACKEND '" + name + "'");
  }
  if (const char* r = env("PT_SIM_ROOT")) cfg.sim_root = r;
  if (const char* s = env("PT_REMOTE_SHELL")) cfg.remote_shell_template = s;
  return cfg;
}

/// Every dispatchable command name.
inline const std::set<std::string>& command_names() {
  static const std::set<std::string> kNames = {
      "ptcp",    "ptmv",     "ptrm",      "ptmkdir", "ptrmdir", "ptchmod",
      "ptchown", "ptchgrp",  "ptln",      "ptkillall", "ptls",  "ptcat",
      "ptfind",  "ptexec",   "ptdistrib", "ptfps",   "pttest",  "pttesta",
      "pttesto", "ptpred",   "ptdisp",    "ptspread", "ptping",
  };
  return kNames;
}

/// Commands that run over a launched node group (everything except the
/// stdin/stdout filters).
inline bool command_needs_hosts(const std::string& name) {
  return name != "ptspread" && name != "ptdisp";
}

namespace cli_detail {

inline std::string basename_of(const std::string& path) {
  size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

inline std::string self_exe() {
  char buf[4096];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) return "pt";
  buf[n] = '\0';
  return buf;
}

inline void print_notes(const ExitReport& rep, std::ostream& err) {
  for (const auto& [host, note] : rep.error_notes) {
    std::string n = note;
    while (!n.empty() && n.back() == '\n') n.pop_back();
    err << host << ": " << n << "\n";
  }
}

// A single quoted token ("echo a b") is pre-split for the Sim builtin
// interpreter; real backends hand it to the shell instead.
inline std::vector<std::string> maybe_split_single(
    const NodeGroup& g, const std::vector<std::string>& argv) {
  if (g.backend() == Backend::Sim && argv.size() == 1)
    return detail::split_blanks(argv[0]);
  return argv;
}

}  // namespace cli_detail

/// SPMD dispatcher: run the body of `name` on this rank of the group.
/// Printing happens at rank 0 only; the return value is the aggregate exit
/// code (meaningful at rank 0).
inline int dispatch_on_group(const NodeGroup& g, const std::string& name,
                             const std::vector<std::string>& rest,
                             std::ostream& out, std::ostream& err) {
  if (name == "ptcp" || name == "ptmv") {
    PtcpOptions opt;
    size_t i = 0;
    for (; i < rest.size(); ++i) {
      if (rest[i] == "-r") {
        opt.recursive = true;
      } else if (rest[i] == "-o") {
        if (i + 1 >= rest.size()) throw UsageError(name + ": -o requires a value");
        const std::string& v = rest[++i];
        if (v == "compress") opt.compress = true;
        else if (v == "nocompress") opt.compress = false;
        else throw UsageError(name + ": unknown -o value '" + v + "'");
      } else {
        break;
      }
    }
    std::vector<std::string> paths(rest.begin() + long(i), rest.end());
    if (paths.size() < 2)
      throw UsageError(name + ": need at least one source and a destination");
    std::string dest = paths.back();
    paths.pop_back();
    ExitReport rep;
    if (name == "ptcp") {
      rep = ptcp_run(g, opt, paths, dest).first;
    } else {
      rep = ptmv_run(g, opt, paths, dest);
    }
    if (g.rank() == 0) cli_detail::print_notes(rep, err);
    return rep.aggregate;
  }

  if (wrapped_base_command(name)) {
    auto [output, rep] = run_wrapped(g, name, rest);
    if (g.rank() == 0) {
      out << output;
      cli_detail::print_notes(rep, err);
    }
    return rep.aggregate;
  }

  if (name == "ptexec") {
    CommandSpec spec;
    size_t i = 0;
    if (!rest.empty() && rest[0] == "-h") {
      spec.headers = true;
      i = 1;
    }
    spec.argv.assign(rest.begin() + long(i), rest.end());
    if (spec.argv.empty()) throw UsageError("ptexec: missing command");
    spec.argv = cli_detail::maybe_split_single(g, spec.argv);
    auto [output, rep] = run_on_all(g, spec);
    if (g.rank() == 0) {
      out << output;
      cli_detail::print_notes(rep, err);
    }
    return rep.aggregate;
  }

  if (name == "pttest" || name == "pttesta" || name == "pttesto") {
    TestMode mode = name == "pttesta" ? TestMode::And : TestMode::Or;
    std::vector<std::string> expr = rest;
    if (expr.size() == 1) expr = detail::split_blanks(expr[0]);
    if (expr.empty()) throw UsageError(name + ": missing test expression");
    TestResult r = pttest_run(g, mode, expr);
    return g.rank() == 0 && r.combined ? 0 : (g.rank() == 0 ? 1 : 0);
  }

  if (name == "ptpred") {
    if (rest.empty() || rest.size() > 3)
      throw UsageError("ptpred: expected '<test-expr>' ['<true-str>' ['<false-str>']]");
    std::vector<std::string> expr = detail::split_blanks(rest[0]);
    std::string true_out = rest.size() > 1 ? rest[1] : "1";
    std::string false_out = rest.size() > 2 ? rest[2] : "0";
    auto lines = ptpred_run(g, expr, true_out, false_out);
    if (g.rank() == 0)
      for (const auto& l : lines) out << l << "\n";
    return 0;
  }

  if (name == "ptfps") {
    PtfpsArgs spec = parse_ptfps(rest);
    PtfpsResult r = ptfps_run(g, spec);
    if (g.rank() == 0) {
      for (const auto& l : r.lines) out << l << "\n";
      cli_detail::print_notes(r.report, err);
    }
    return r.report.aggregate;
  }

  if (name == "ptdistrib") {
    DistribOptions opt;
    size_t i = 0;
    if (!rest.empty() && rest[0] == "-f") {
      opt.fetch = true;
      i = 1;
    }
    if (rest.size() < i + 2)
      throw UsageError("ptdistrib: expected '<template>' <file>...");
    std::string tmpl = rest[i];
    std::vector<std::string> files(rest.begin() + long(i) + 1, rest.end());
    DistribResult r = ptdistrib_run(g, opt, tmpl, files);
    if (g.rank() == 0) {
      for (const auto& w : r.warnings) err << w << "\n";
      for (const auto& f : r.unprocessed)
        err << "ptdistrib: no usable node for '" << f << "'\n";
    }
    return r.report.aggregate;
  }

  if (name == "ptping") {
    auto [output, rep] = run_on_all(g, CommandSpec{{"true"}, false});
    (void)output;
    if (g.rank() == 0)
      for (const auto& [host, code] : rep.per_host)
        out << host << ": " << (code == 0 ? "1" : "0") << "\n";
    return 0;
  }

  throw UsageError("unknown command '" + name + "'");
}

namespace cli_detail {

inline int run_filter_command(const std::string& name,
                              const std::vector<std::string>& args,
                              std::istream& in, std::ostream& out) {
  if (name == "ptspread") {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    for (const auto& l : spread(lines)) out << l << "\n";
    return 0;
  }
  // ptdisp
  DisplayOptions opt;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "-c") {
      opt.color = true;
    } else if (args[i] == "-t") {
      if (i + 1 >= args.size()) throw UsageError("ptdisp: -t requires a title");
      opt.title = args[++i];
    } else {
      throw UsageError("ptdisp: unknown flag '" + args[i] + "'");
    }
  }
  run_display(in, out, opt, default_cell_action());
  return 0;
}

}  // namespace cli_detail

/// Launch a group over the configured backend and run the command body on
/// every rank.  Returns rank 0's exit code.
inline int launch_and_dispatch(const GlobalConfig& cfg, const HostSet& hosts,
                               const std::string& name,
                               const std::vector<std::string>& rest,
                               const std::vector<std::string>& full_argv,
                               std::ostream& out, std::ostream& err) {
  int code = 0;
  LaunchOptions opt;
  opt.backend = cfg.backend;
  opt.sim_root = cfg.sim_root;
  opt.remote_shell_template = cfg.remote_shell_template;

  auto body = [&](NodeGroup& g) {
    int c = dispatch_on_group(g, name, rest, out, err);
    if (g.rank() == 0) code = c;
  };

  if (cfg.backend == Backend::Sim) {
    run_sim_group(hosts, opt, body);
  } else {
    opt.agent_argv = full_argv;
    run_proc_group(hosts, opt, cli_detail::self_exe(), body);
  }
  return code;
}

/// Full CLI entry: multi-call name resolution, host resolution, backend
/// launch, exit-code policy (0 success, 1 remote/logical failure, 2 usage).
inline int dispatch(std::vector<std::string> argv, std::istream& in,
                    std::ostream& out, std::ostream& err,
                    const EnvLookup& env = getenv_lookup) {
  try {
    if (argv.empty()) throw UsageError("missing command name");
    std::string name = cli_detail::basename_of(argv[0]);
    std::vector<std::string> args(argv.begin() + 1, argv.end());
    if (!command_names().count(name) && name != "__ptagent") {
      // multi-call binary invoked by its own name: the command is argv[1]
      if (args.empty()) throw UsageError("usage: pt <command> [args...]");
      name = args[0];
      args.erase(args.begin());
    }

    if (name == "__ptagent") {
      if (args.empty()) throw UsageError("missing agent spec");
      return agent_main(args[0], [&](NodeGroup& g,
                                     const std::vector<std::string>& cmd) {
        if (cmd.empty()) throw UsageError("empty agent command");
        std::string agent_name = cli_detail::basename_of(cmd[0]);
        std::vector<std::string> agent_args(cmd.begin() + 1, cmd.end());
        if (!command_names().count(agent_name)) {
          agent_name = agent_args.at(0);
          agent_args.erase(agent_args.begin());
        }
        size_t consumed = resolve_hosts(agent_args, env).consumed;
        agent_args.erase(agent_args.begin(), agent_args.begin() + long(consumed));
        dispatch_on_group(g, agent_name, agent_args, out, err);
      });
    }

    if (!command_names().count(name))
      throw UsageError("unknown command '" + name + "'");

    if (!command_needs_hosts(name))
      return cli_detail::run_filter_command(name, args, in, out);

    GlobalConfig cfg = config_from_env(env);
    ResolvedHosts resolved = resolve_hosts(args, env);
    std::vector<std::string> rest(args.begin() + long(resolved.consumed),
                                  args.end());
    std::vector<std::string> full_argv;
    full_argv.push_back(name);
    full_argv.insert(full_argv.end(), args.begin(), args.end());
    return launch_and_dispatch(cfg, resolved.hosts, name, rest, full_argv,
                               out, err);
  } catch (const UsageError& e) {
    err << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return 1;
  }
}

}  // namespace pt
