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

#include <fcntl.h>
#include <fnmatch.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pt/error.hpp"
#include "pt/sandbox.hpp"
#include "pt/testexpr.hpp"

namespace pt {

struct ExecResult {
  int exit_code = 0;
  std::string out;
  std::string err;
};

/// Where a simulated node keeps its process-table fixture and where the
/// builtin kill path records attempted signals.
constexpr const char* kProcTablePath = "/proc.table";
constexpr const char* kSignalLogPath = "/.pt_signals.log";

struct ProcessRecord {
  long pid = 0;
  std::string user;
  long elapsed_seconds = 0;
  std::string command;
};

/// Parse the fixture table: whitespace-separated `pid user elapsed command...`
/// lines; blank and '#' lines skipped.
inline std::vector<ProcessRecord> parse_process_table(std::istream& in) {
  std::vector<ProcessRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    ProcessRecord r;
    if (!(ls >> r.pid >> r.user >> r.elapsed_seconds)) {
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      if (line[line.find_first_not_of(" \t")] == '#') continue;
      throw UsageError("malformed process table line: " + line);
    }
    std::getline(ls, r.command);
    size_t b = r.command.find_first_not_of(" \t");
    r.command = b == std::string::npos ? "" : r.command.substr(b);
    if (r.command.empty())
      throw UsageError("process table row missing command: " + line);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ProcessRecord> load_process_table(const NodeCtx& ctx) {
  std::ifstream in(resolve_path(ctx, kProcTablePath));
  if (!in) return {};
  return parse_process_table(in);
}

/// Record an attempted signal delivery.  In Sim nothing is actually
/// signalled; the log is the observable effect.
inline void log_signal(const NodeCtx& ctx, long pid, const std::string& signame) {
  std::ofstream log(resolve_path(ctx, kSignalLogPath), std::ios::app);
  log << pid << ' ' << signame << '\n';
}

namespace builtin_detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l)) lines.push_back(l);
  return lines;
}

inline int bi_hostname(const NodeCtx& ctx, const std::vector<std::string>&,
                       ExecResult& res) {
  res.out = ctx.hostname + "\n";
  return 0;
}

inline int bi_echo(const NodeCtx&, const std::vector<std::string>& args,
                   ExecResult& res) {
  size_t i = 1;
  bool newline = true;
  if (i < args.size() && args[i] == "-n") {
    newline = false;
    ++i;
  }
  for (size_t j = i; j < args.size(); ++j) {
    if (j > i) res.out += ' ';
    res.out += args[j];
  }
  if (newline) res.out += '\n';
  return 0;
}

inline int bi_pwd(const NodeCtx& ctx, const std::vector<std::string>&,
                  ExecResult& res) {
  res.out = "/" + ctx.cwd.generic_string() + "\n";
  return 0;
}

inline int bi_ls(const NodeCtx& ctx, const std::vector<std::string>& args,
                 ExecResult& res) {
  namespace fs = std::filesystem;
  bool all = false;
  std::vector<std::string> paths;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "-a") all = true;
    else if (!args[i].empty() && args[i][0] == '-') continue;  // -l, -t: accepted, unstyled
    else paths.push_back(args[i]);
  }
  if (paths.empty()) paths.push_back(".");
  int rc = 0;
  for (const auto& p : paths) {
    fs::path rp = resolve_path(ctx, p);
    std::error_code ec;
    if (fs::is_directory(rp, ec)) {
      std::vector<std::string> names;
      for (const auto& d : fs::directory_iterator(rp, ec))
        names.push_back(d.path().filename().string());
      std::sort(names.begin(), names.end());
      for (const auto& n : names) {
        if (!all && !n.empty() && n[0] == '.') continue;
        res.out += n + "\n";
      }
    } else if (fs::exists(fs::symlink_status(rp, ec))) {
      res.out += p + "\n";
    } else {
      res.err += "ls: cannot access '" + p + "': No such file or directory\n";
      rc = 2;
    }
  }
  return rc;
}

inline int bi_cat(const NodeCtx& ctx, const std::vector<std::string>& args,
                  ExecResult& res) {
  int rc = 0;
  for (size_t i = 1; i < args.size(); ++i) {
    if (!args[i].empty() && args[i][0] == '-') continue;
    std::ifstream in(resolve_path(ctx, args[i]), std::ios::binary);
    if (!in) {
      res.err += "cat: " + args[i] + ": No such file or directory\n";
      rc = 1;
      continue;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    res.out += ss.str();
  }
  return rc;
}

inline int bi_touch(const NodeCtx& ctx, const std::vector<std::string>& args,
                    ExecResult& res) {
  for (size_t i = 1; i < args.size(); ++i) {
    std::ofstream f(resolve_path(ctx, args[i]), std::ios::app);
    if (!f) {
      res.err += "touch: cannot touch '" + args[i] + "'\n";
      return 1;
    }
  }
  return 0;
}

inline int bi_cp(const NodeCtx& ctx, const std::vector<std::string>& args,
                 ExecResult& res) {
  namespace fs = std::filesystem;
  std::vector<std::string> pos;
  for (size_t i = 1; i < args.size(); ++i)
    if (args[i].empty() || args[i][0] != '-') pos.push_back(args[i]);
  if (pos.size() != 2) {
    res.err = "cp: expected source and destination\n";
    return 1;
  }
  std::error_code ec;
  fs::path src = resolve_path(ctx, pos[0]);
  fs::path dst = resolve_path(ctx, pos[1]);
  if (fs::is_directory(dst, ec)) dst /= src.filename();
  fs::copy_file(src, dst, fs::copy_options::overwrite_existing, ec);
  if (ec) {
    res.err = "cp: cannot copy '" + pos[0] + "': " + ec.message() + "\n";
    return 1;
  }
  return 0;
}

inline int bi_rm(const NodeCtx& ctx, const std::vector<std::string>& args,
                 ExecResult& res) {
  namespace fs = std::filesystem;
  bool recursive = false, force = false;
  std::vector<std::string> paths;
  for (size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (!a.empty() && a[0] == '-' && a.size() > 1 && a[1] != '-') {
      for (char c : a.substr(1)) {
        if (c == 'r' || c == 'R') recursive = true;
        else if (c == 'f') force = true;
        else {
          res.err = std::string("rm: unknown option -") + c + "\n";
          return 1;
        }
      }
    } else {
      paths.push_back(a);
    }
  }
  int rc = 0;
  for (const auto& p : paths) {
    fs::path rp = resolve_path(ctx, p);
    std::error_code ec;
    if (!fs::exists(fs::symlink_status(rp, ec))) {
      if (!force) {
        res.err += "rm: cannot remove '" + p + "': No such file or directory\n";
        rc = 1;
      }
      continue;
    }
    if (fs::is_directory(fs::symlink_status(rp, ec)) && !recursive) {
      res.err += "rm: cannot remove '" + p + "': Is a directory\n";
      rc = 1;
      continue;
    }
    if (recursive) fs::remove_all(rp, ec);
    else fs::remove(rp, ec);
    if (ec && !force) {
      res.err += "rm: cannot remove '" + p + "': " + ec.message() + "\n";
      rc = 1;
    }
  }
  return rc;
}

inline int bi_mkdir(const NodeCtx& ctx, const std::vector<std::string>& args,
                    ExecResult& res) {
  namespace fs = std::filesystem;
  bool parents = false;
  int rc = 0;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "-p") {
      parents = true;
      continue;
    }
    fs::path rp = resolve_path(ctx, args[i]);
    std::error_code ec;
    if (parents) {
      fs::create_directories(rp, ec);
    } else {
      if (fs::exists(rp)) {
        res.err += "mkdir: cannot create directory '" + args[i] + "': File exists\n";
        rc = 1;
        continue;
      }
      fs::create_directory(rp, ec);
    }
    if (ec) {
      res.err += "mkdir: cannot create directory '" + args[i] + "': " +
                 ec.message() + "\n";
      rc = 1;
    }
  }
  return rc;
}

inline int bi_rmdir(const NodeCtx& ctx, const std::vector<std::string>& args,
                    ExecResult& res) {
  namespace fs = std::filesystem;
  int rc = 0;
  for (size_t i = 1; i < args.size(); ++i) {
    fs::path rp = resolve_path(ctx, args[i]);
    std::error_code ec;
    if (!fs::is_directory(rp, ec) || !fs::is_empty(rp, ec) ||
        (fs::remove(rp, ec), ec)) {
      res.err += "rmdir: failed to remove '" + args[i] + "'\n";
      rc = 1;
    }
  }
  return rc;
}

inline int bi_chmod(const NodeCtx& ctx, const std::vector<std::string>& args,
                    ExecResult& res) {
  if (args.size() < 3) {
    res.err = "chmod: missing operand\n";
    return 1;
  }
  char* end = nullptr;
  unsigned long mode = std::strtoul(args[1].c_str(), &end, 8);
  if (!end || *end != '\0') {
    res.err = "chmod: only octal modes are supported in sim\n";
    return 1;
  }
  int rc = 0;
  for (size_t i = 2; i < args.size(); ++i) {
    if (::chmod(resolve_path(ctx, args[i]).c_str(), mode_t(mode)) != 0) {
      res.err += "chmod: cannot access '" + args[i] + "'\n";
      rc = 1;
    }
  }
  return rc;
}

// Ownership is not modeled inside a sandbox; chown/chgrp succeed iff the
// target exists.
inline int bi_chown_like(const char* name, const NodeCtx& ctx,
                         const std::vector<std::string>& args, ExecResult& res) {
  if (args.size() < 3) {
    res.err = std::string(name) + ": missing operand\n";
    return 1;
  }
  int rc = 0;
  for (size_t i = 2; i < args.size(); ++i) {
    std::error_code ec;
    if (!std::filesystem::exists(
            std::filesystem::symlink_status(resolve_path(ctx, args[i]), ec))) {
      res.err += std::string(name) + ": cannot access '" + args[i] + "'\n";
      rc = 1;
    }
  }
  return rc;
}

inline int bi_ln(const NodeCtx& ctx, const std::vector<std::string>& args,
                 ExecResult& res) {
  namespace fs = std::filesystem;
  bool symbolic = false;
  std::vector<std::string> pos;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "-s") symbolic = true;
    else pos.push_back(args[i]);
  }
  if (pos.size() != 2) {
    res.err = "ln: expected target and link name\n";
    return 1;
  }
  std::error_code ec;
  fs::path link = resolve_path(ctx, pos[1]);
  if (symbolic) fs::create_symlink(pos[0], link, ec);
  else fs::create_hard_link(resolve_path(ctx, pos[0]), link, ec);
  if (ec) {
    res.err = "ln: failed to create link '" + pos[1] + "': " + ec.message() + "\n";
    return 1;
  }
  return 0;
}

inline int bi_diff(const NodeCtx& ctx, const std::vector<std::string>& args,
                   ExecResult& res) {
  std::vector<std::string> pos;
  for (size_t i = 1; i < args.size(); ++i)
    if (args[i].empty() || args[i][0] != '-') pos.push_back(args[i]);
  if (pos.size() != 2) {
    res.err = "diff: expected two files\n";
    return 2;
  }
  auto pa = resolve_path(ctx, pos[0]);
  auto pb = resolve_path(ctx, pos[1]);
  std::error_code ec;
  if (!std::filesystem::exists(pa, ec) || !std::filesystem::exists(pb, ec)) {
    res.err = "diff: no such file\n";
    return 2;
  }
  auto a = read_lines(pa);
  auto b = read_lines(pb);
  bool differ = false;
  size_t n = std::max(a.size(), b.size());
  for (size_t i = 0; i < n; ++i) {
    const std::string* la = i < a.size() ? &a[i] : nullptr;
    const std::string* lb = i < b.size() ? &b[i] : nullptr;
    if (la && lb && *la == *lb) continue;
    differ = true;
    res.out += std::to_string(i + 1) + "c" + std::to_string(i + 1) + "\n";
    if (la) res.out += "< " + *la + "\n";
    if (lb) res.out += "> " + *lb + "\n";
  }
  return differ ? 1 : 0;
}

inline int bi_test(const NodeCtx& ctx, const std::vector<std::string>& args,
                   ExecResult& res) {
  std::vector<std::string> expr(args.begin() + 1, args.end());
  if (args[0] == "[") {
    if (expr.empty() || expr.back() != "]") {
      res.err = "[: missing ']'\n";
      return 2;
    }
    expr.pop_back();
  }
  try {
    return eval_test_expr(expr, ctx) ? 0 : 1;
  } catch (const UsageError& e) {
    res.err = std::string("test: ") + e.what() + "\n";
    return 2;
  }
}

inline int bi_killall(const NodeCtx& ctx, const std::vector<std::string>& args,
                      ExecResult& res) {
  std::string signame = "SIGTERM";
  std::vector<std::string> names;
  for (size_t i = 1; i < args.size(); ++i) {
    if (!args[i].empty() && args[i][0] == '-') signame = args[i].substr(1);
    else names.push_back(args[i]);
  }
  if (names.empty()) {
    res.err = "killall: missing process name\n";
    return 2;
  }
  auto table = load_process_table(ctx);
  int matched = 0;
  for (const auto& r : table) {
    std::istringstream cs(r.command);
    std::string cmd0;
    cs >> cmd0;
    std::string base = std::filesystem::path(cmd0).filename().string();
    for (const auto& n : names) {
      if (base == n) {
        log_signal(ctx, r.pid, signame);
        ++matched;
        break;
      }
    }
  }
  if (matched == 0) {
    for (const auto& n : names)
      res.err += "killall: " + n + ": no process found\n";
    return 1;
  }
  return 0;
}

inline int bi_find(const NodeCtx& ctx, const std::vector<std::string>& args,
                   ExecResult& res) {
  namespace fs = std::filesystem;
  std::vector<std::string> roots;
  std::string name_glob;
  char type = 0;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "-name" && i + 1 < args.size()) name_glob = args[++i];
    else if (args[i] == "-type" && i + 1 < args.size()) type = args[++i][0];
    else if (!args[i].empty() && args[i][0] == '-') {
      res.err = "find: unsupported predicate '" + args[i] + "'\n";
      return 2;
    } else roots.push_back(args[i]);
  }
  if (roots.empty()) roots.push_back(".");

  auto matches = [&](const fs::path& p, bool is_dir) {
    if (type == 'f' && is_dir) return false;
    if (type == 'd' && !is_dir) return false;
    if (!name_glob.empty() &&
        ::fnmatch(name_glob.c_str(), p.filename().string().c_str(), 0) != 0)
      return false;
    return true;
  };

  int rc = 0;
  for (const auto& root : roots) {
    fs::path rp = resolve_path(ctx, root);
    std::error_code ec;
    if (!fs::exists(fs::symlink_status(rp, ec))) {
      res.err += "find: '" + root + "': No such file or directory\n";
      rc = 1;
      continue;
    }
    if (matches(fs::path(root), fs::is_directory(rp, ec))) res.out += root + "\n";
    if (fs::is_directory(rp, ec)) {
      std::vector<fs::path> stack_out;
      for (auto it = fs::recursive_directory_iterator(rp, ec);
           it != fs::recursive_directory_iterator(); ++it) {
        fs::path rel = fs::relative(it->path(), rp, ec);
        fs::path shown = fs::path(root) / rel;
        if (matches(shown, it->is_directory(ec)))
          stack_out.push_back(shown);
      }
      std::sort(stack_out.begin(), stack_out.end());
      for (const auto& p : stack_out) res.out += p.generic_string() + "\n";
    }
  }
  return rc;
}

inline int run_real_process(const NodeCtx& ctx,
                            const std::vector<std::string>& argv,
                            ExecResult& res) {
  int outpipe[2], errpipe[2];
  if (::pipe(outpipe) != 0 || ::pipe(errpipe) != 0)
    throw TransportError("pipe failed");
  pid_t pid = ::fork();
  if (pid < 0) throw TransportError("fork failed");
  if (pid == 0) {
    ::dup2(outpipe[1], 1);
    ::dup2(errpipe[1], 2);
    ::close(outpipe[0]); ::close(outpipe[1]);
    ::close(errpipe[0]); ::close(errpipe[1]);
    std::filesystem::path dir =
        ctx.sandbox.empty() ? std::filesystem::current_path()
                            : resolve_path(ctx, "/" + ctx.cwd.generic_string());
    if (!dir.empty()) (void)::chdir(dir.c_str());
    if (argv.size() == 1) {
      ::execl("/bin/sh", "sh", "-c", argv[0].c_str(), (char*)nullptr);
    } else {
      std::vector<char*> cargv;
      for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
      cargv.push_back(nullptr);
      ::execvp(cargv[0], cargv.data());
    }
    _exit(127);
  }
  ::close(outpipe[1]);
  ::close(errpipe[1]);
  auto drain = [](int fd, std::string& dst) {
    char buf[4096];
    ssize_t n;
    while ((n = ::read(fd, buf, sizeof buf)) > 0) dst.append(buf, size_t(n));
    ::close(fd);
  };
  drain(outpipe[0], res.out);
  drain(errpipe[0], res.err);
  int status = 0;
  ::waitpid(pid, &status, 0);
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

}  // namespace builtin_detail

/// Execute argv in a node context.  Sim nodes interpret a small builtin
/// command set against their sandbox; process backends run the real thing.
inline ExecResult execute_command(const NodeCtx& ctx,
                                  const std::vector<std::string>& argv) {
  using namespace builtin_detail;
  ExecResult res;
  if (argv.empty()) {
    res.exit_code = 2;
    res.err = "empty command\n";
    return res;
  }
  if (ctx.backend != Backend::Sim) {
    res.exit_code = run_real_process(ctx, argv, res);
    return res;
  }
  const std::string& cmd = argv[0];
  if (cmd == "hostname") res.exit_code = bi_hostname(ctx, argv, res);
  else if (cmd == "echo") res.exit_code = bi_echo(ctx, argv, res);
  else if (cmd == "pwd") res.exit_code = bi_pwd(ctx, argv, res);
  else if (cmd == "ls") res.exit_code = bi_ls(ctx, argv, res);
  else if (cmd == "cat") res.exit_code = bi_cat(ctx, argv, res);
  else if (cmd == "touch") res.exit_code = bi_touch(ctx, argv, res);
  else if (cmd == "cp") res.exit_code = bi_cp(ctx, argv, res);
  else if (cmd == "rm") res.exit_code = bi_rm(ctx, argv, res);
  else if (cmd == "mkdir") res.exit_code = bi_mkdir(ctx, argv, res);
  else if (cmd == "rmdir") res.exit_code = bi_rmdir(ctx, argv, res);
  else if (cmd == "chmod") res.exit_code = bi_chmod(ctx, argv, res);
  else if (cmd == "chown") res.exit_code = bi_chown_like("chown", ctx, argv, res);
  else if (cmd == "chgrp") res.exit_code = bi_chown_like("chgrp", ctx, argv, res);
  else if (cmd == "ln") res.exit_code = bi_ln(ctx, argv, res);
  else if (cmd == "diff") res.exit_code = bi_diff(ctx, argv, res);
  else if (cmd == "test" || cmd == "[") res.exit_code = bi_test(ctx, argv, res);
  else if (cmd == "killall") res.exit_code = bi_killall(ctx, argv, res);
  else if (cmd == "find") res.exit_code = bi_find(ctx, argv, res);
  else if (cmd == "true") res.exit_code = 0;
  else if (cmd == "false") res.exit_code = 1;
  else if (cmd == "sleep") res.exit_code = 0;  // durations are logical in sim
  else {
    res.exit_code = 127;
    res.err = cmd + ": command not found\n";
  }
  return res;
}

}  // namespace pt
