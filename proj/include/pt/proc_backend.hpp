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

#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pt/bytesio.hpp"
#include "pt/error.hpp"
#include "pt/hostspec.hpp"
#include "pt/transport.hpp"

namespace pt {

// Wire format between node agents: every message is one frame of
//   len (4 LE, length of everything after it) | src (4 LE) | dst (4 LE) |
//   tag (8 LE) | payload
// carried over a local socketpair (LocalProc, fd 3 in the child) or the
// agent's stdin/stdout (RemoteShell).

namespace proc_detail {

struct Frame {
  uint32_t src = 0, dst = 0;
  uint64_t tag = 0;
  std::string payload;
};

constexpr uint64_t kHelloTag = ~uint64_t(0);

inline void write_all(int fd, const char* data, size_t n) {
  while (n > 0) {
    ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError("write to peer failed: " + std::string(strerror(errno)));
    }
    data += w;
    n -= size_t(w);
  }
}

inline bool read_all(int fd, char* data, size_t n) {
  while (n > 0) {
    ssize_t r = ::read(fd, data, n);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError("read from peer failed: " + std::string(strerror(errno)));
    }
    if (r == 0) return false;  // EOF
    data += r;
    n -= size_t(r);
  }
  return true;
}

inline void write_frame(int fd, const Frame& f) {
  std::string head;
  put_u32(head, uint32_t(16 + f.payload.size()));
  put_u32(head, f.src);
  put_u32(head, f.dst);
  put_u64(head, f.tag);
  write_all(fd, head.data(), head.size());
  write_all(fd, f.payload.data(), f.payload.size());
}

inline bool read_frame(int fd, Frame& f) {
  char head[20];
  if (!read_all(fd, head, sizeof head)) return false;
  ByteReader r(std::string_view(head, sizeof head));
  uint32_t len = r.u32();
  if (len < 16) throw TransportError("malformed frame header");
  f.src = r.u32();
  f.dst = r.u32();
  f.tag = r.u64();
  f.payload.resize(len - 16);
  if (!f.payload.empty() && !read_all(fd, f.payload.data(), f.payload.size()))
    throw TransportError("frame truncated");
  return true;
}

}  // namespace proc_detail

/// Rank-0 side of the process transport.  All agents connect back to the
/// orchestrator in a star; a router thread shuttles frames between agents,
/// so any rank can talk to any other.
class ProcParentTransport : public Transport {
 public:
  /// wfds/rfds: per child rank (index 1..N; index 0 unused), write/read fds.
  ProcParentTransport(std::vector<int> wfds, std::vector<int> rfds,
                      std::vector<std::string> hosts)
      : wfds_(std::move(wfds)), rfds_(std::move(rfds)),
        hosts_(std::move(hosts)), fd_mu_(wfds_.size()),
        dead_(wfds_.size(), 0) {
    router_ = std::thread([this] { route(); });
  }

  ~ProcParentTransport() override {
    shutdown();
    if (router_.joinable()) router_.join();
    for (size_t i = 1; i < wfds_.size(); ++i) {
      if (wfds_[i] >= 0) ::close(wfds_[i]);
      if (rfds_[i] >= 0 && rfds_[i] != wfds_[i]) ::close(rfds_[i]);
    }
  }

  void send(int src, int dst, uint64_t tag, std::string_view payload) override {
    proc_detail::Frame f{uint32_t(src), uint32_t(dst), tag, std::string(payload)};
    deliver(f);
  }

  std::string recv(int /*dst*/, int src, uint64_t tag) override {
    std::unique_lock<std::mutex> lk(mu_);
    auto key = std::make_pair(src, tag);
    for (;;) {
      auto it = inbox_.find(key);
      if (it != inbox_.end() && !it->second.empty()) {
        std::string msg = std::move(it->second.front());
        it->second.pop_front();
        return msg;
      }
      if (dead_[size_t(src)])
        throw TransportError("node agent for host '" + hosts_[size_t(src)] +
                             "' terminated");
      cv_.wait(lk);
    }
  }

  uint32_t alloc_context() override { return next_context_.fetch_add(1); }

  /// Wait for every agent's hello frame; a silent agent is a launch failure.
  void await_hellos(int timeout_ms) {
    std::unique_lock<std::mutex> lk(mu_);
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(timeout_ms);
    for (size_t r = 1; r < wfds_.size(); ++r) {
      while (!hello_[int(r)]) {
        if (dead_[r] ||
            cv_.wait_until(lk, deadline) == std::cv_status::timeout)
          throw TransportError("failed to launch node agent on host '" +
                               hosts_[r] + "'");
      }
    }
  }

  void shutdown() { stopping_ = true; }

 private:
  void deliver(const proc_detail::Frame& f) {
    if (f.dst == 0) {
      std::lock_guard<std::mutex> lk(mu_);
      if (f.tag == proc_detail::kHelloTag) {
        hello_[int(f.src)] = true;
      } else {
        inbox_[{int(f.src), f.tag}].push_back(f.payload);
      }
      cv_.notify_all();
      return;
    }
    std::lock_guard<std::mutex> lk(fd_mu_[f.dst]);
    if (dead_[f.dst])
      throw TransportError("send to terminated host '" + hosts_[f.dst] + "'");
    proc_detail::write_frame(wfds_[f.dst], f);
  }

  void route() {
    std::vector<struct pollfd> pfds;
    std::vector<int> rank_of;
    for (size_t r = 1; r < rfds_.size(); ++r) {
      pfds.push_back({rfds_[r], POLLIN, 0});
      rank_of.push_back(int(r));
    }
    size_t open_count = pfds.size();
    while (open_count > 0) {
      int rc = ::poll(pfds.data(), pfds.size(), 200);
      if (rc < 0) {
        if (errno == EINTR) continue;
        break;
      }
      for (size_t i = 0; i < pfds.size(); ++i) {
        if (pfds[i].fd < 0) continue;
        if (pfds[i].revents & (POLLIN | POLLHUP | POLLERR)) {
          proc_detail::Frame f;
          bool ok = false;
          try {
            ok = proc_detail::read_frame(pfds[i].fd, f);
          } catch (const TransportError&) {
            ok = false;
          }
          if (!ok) {
            mark_dead(rank_of[i]);
            pfds[i].fd = -1;
            --open_count;
            continue;
          }
          try {
            deliver(f);
          } catch (const TransportError&) {
            // destination died; the sender will find out on its next recv
          }
        }
      }
    }
  }

  void mark_dead(int rank) {
    std::lock_guard<std::mutex> lk(mu_);
    dead_[size_t(rank)] = 1;
    cv_.notify_all();
  }

  std::vector<int> wfds_, rfds_;
  std::vector<std::string> hosts_;
  std::deque<std::mutex> fd_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<int, uint64_t>, std::deque<std::string>> inbox_;
  std::map<int, bool> hello_;
  std::vector<char> dead_;
  std::atomic<uint32_t> next_context_{1};
  std::atomic<bool> stopping_{false};
  std::thread router_;
};

/// Agent side: a single duplex channel to the orchestrator; traffic to
/// other ranks is routed through it.
class ProcChildTransport : public Transport {
 public:
  ProcChildTransport(int rfd, int wfd, int self_rank)
      : rfd_(rfd), wfd_(wfd), self_(self_rank) {
    proc_detail::Frame hello{uint32_t(self_), 0, proc_detail::kHelloTag, ""};
    proc_detail::write_frame(wfd_, hello);
  }

  void send(int src, int dst, uint64_t tag, std::string_view payload) override {
    proc_detail::Frame f{uint32_t(src), uint32_t(dst), tag, std::string(payload)};
    std::lock_guard<std::mutex> lk(wmu_);
    proc_detail::write_frame(wfd_, f);
  }

  std::string recv(int /*dst*/, int src, uint64_t tag) override {
    auto key = std::make_pair(src, tag);
    for (;;) {
      auto it = inbox_.find(key);
      if (it != inbox_.end() && !it->second.empty()) {
        std::string msg = std::move(it->second.front());
        it->second.pop_front();
        return msg;
      }
      proc_detail::Frame f;
      if (!proc_detail::read_frame(rfd_, f))
        throw TransportError("orchestrator connection closed");
      inbox_[{int(f.src), f.tag}].push_back(std::move(f.payload));
    }
  }

  uint32_t alloc_context() override {
    throw ProtocolError("context allocation is the orchestrator's job");
  }

 private:
  int rfd_, wfd_, self_;
  std::mutex wmu_;
  std::map<std::pair<int, uint64_t>, std::deque<std::string>> inbox_;
};

// ---------------------------------------------------------------------------
// launch plumbing

/// What a spawned agent needs to know, carried on its command line.
struct AgentSpec {
  int rank = 0;
  int size = 0;
  std::vector<std::string> hosts;      // host_of_rank, index 0 = orchestrator
  std::string sandbox_parent;          // empty on RemoteShell
  Backend backend = Backend::LocalProc;
  std::vector<std::string> command;    // argv the agent re-dispatches
  bool stdio_channel = false;          // true: fds 0/1; false: fd 3
};

inline std::string encode_agent_spec(const AgentSpec& s) {
  nlohmann::json j{{"rank", s.rank},
                   {"size", s.size},
                   {"hosts", s.hosts},
                   {"sandbox_parent", s.sandbox_parent},
                   {"backend", s.backend == Backend::RemoteShell ? "remoteshell"
                                                                 : "localproc"},
                   {"command", s.command},
                   {"stdio", s.stdio_channel}};
  std::string dump = j.dump();
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : dump) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 15]);
  }
  return out;
}

inline AgentSpec decode_agent_spec(const std::string& hexstr) {
  if (hexstr.size() % 2 != 0) throw UsageError("bad agent spec");
  std::string dump;
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw UsageError("bad agent spec");
  };
  for (size_t i = 0; i < hexstr.size(); i += 2)
    dump.push_back(char(nib(hexstr[i]) << 4 | nib(hexstr[i + 1])));
  nlohmann::json j = nlohmann::json::parse(dump);
  AgentSpec s;
  s.rank = j.at("rank").get<int>();
  s.size = j.at("size").get<int>();
  s.hosts = j.at("hosts").get<std::vector<std::string>>();
  s.sandbox_parent = j.at("sandbox_parent").get<std::string>();
  s.backend = j.at("backend").get<std::string>() == "remoteshell"
                  ? Backend::RemoteShell
                  : Backend::LocalProc;
  s.command = j.at("command").get<std::vector<std::string>>();
  s.stdio_channel = j.at("stdio").get<bool>();
  return s;
}

namespace proc_detail {

inline std::vector<std::string> shell_split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace proc_detail

struct SpawnedAgents {
  std::shared_ptr<ProcParentTransport> transport;
  std::vector<pid_t> pids;
};

/// Spawn one agent per host.  LocalProc: fork/exec self_exe with the agent
/// channel on fd 3.  RemoteShell: run `template` (%h -> host) with the
/// agent command appended, channel on the child's stdin/stdout.
inline SpawnedAgents spawn_agents(const std::string& self_exe,
                                  const std::vector<std::string>& host_of_rank,
                                  const LaunchOptions& opt,
                                  const std::filesystem::path& sandbox_parent) {
  int n = int(host_of_rank.size()) - 1;
  std::vector<int> wfds(size_t(n) + 1, -1), rfds(size_t(n) + 1, -1);
  std::vector<pid_t> pids(size_t(n) + 1, -1);

  for (int r = 1; r <= n; ++r) {
    AgentSpec spec;
    spec.rank = r;
    spec.size = n + 1;
    spec.hosts = host_of_rank;
    spec.backend = opt.backend;
    spec.command = opt.agent_argv;
    spec.stdio_channel = opt.backend == Backend::RemoteShell;
    spec.sandbox_parent =
        opt.backend == Backend::RemoteShell ? "" : sandbox_parent.string();

    std::vector<std::string> argv;
    if (opt.backend == Backend::RemoteShell) {
      if (opt.remote_shell_template.empty())
        throw UsageError("remoteshell backend requires PT_REMOTE_SHELL");
      for (auto& tok : proc_detail::shell_split(opt.remote_shell_template)) {
        std::string t = tok;
        size_t at;
        while ((at = t.find("%h")) != std::string::npos)
          t = t.substr(0, at) + host_of_rank[size_t(r)] + t.substr(at + 2);
        argv.push_back(t);
      }
      argv.push_back(self_exe);
      argv.push_back("__ptagent");
      argv.push_back(encode_agent_spec(spec));
    } else {
      argv = {self_exe, "__ptagent", encode_agent_spec(spec)};
    }

    int sv[2];
    int to_child[2], from_child[2];
    bool stdio = spec.stdio_channel;
    if (stdio) {
      if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
        throw TransportError("pipe failed");
    } else {
      if (::socketpair(AF_UNIX, SOCK_STREAM, 0, sv) != 0)
        throw TransportError("socketpair failed");
    }

    pid_t pid = ::fork();
    if (pid < 0)
      throw TransportError("failed to launch node agent on host '" +
                           host_of_rank[size_t(r)] + "'");
    if (pid == 0) {
      if (stdio) {
        ::dup2(to_child[0], 0);
        ::dup2(from_child[1], 1);
        ::close(to_child[0]); ::close(to_child[1]);
        ::close(from_child[0]); ::close(from_child[1]);
      } else {
        ::close(sv[0]);
        if (sv[1] != 3) {
          ::dup2(sv[1], 3);
          ::close(sv[1]);
        }
      }
      std::vector<char*> cargv;
      for (auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
      cargv.push_back(nullptr);
      ::execvp(cargv[0], cargv.data());
      _exit(127);
    }
    if (stdio) {
      ::close(to_child[0]);
      ::close(from_child[1]);
      wfds[size_t(r)] = to_child[1];
      rfds[size_t(r)] = from_child[0];
    } else {
      ::close(sv[1]);
      wfds[size_t(r)] = sv[0];
      rfds[size_t(r)] = sv[0];
    }
    pids[size_t(r)] = pid;
  }

  SpawnedAgents out;
  out.transport = std::make_shared<ProcParentTransport>(
      wfds, rfds, host_of_rank);
  out.pids = pids;
  return out;
}

/// Run an SPMD body over process-backed agents.  The body runs here as rank
/// 0; each agent re-enters the same command and runs it as its own rank.
template <typename NodeMain>
void run_proc_group(const HostSet& hosts, const LaunchOptions& opt,
                    const std::string& self_exe, NodeMain&& node_main) {
  namespace fs = std::filesystem;
  if (hosts.empty())
    throw UsageError("cannot launch a group over zero hosts");

  std::vector<std::string> host_of_rank;
  host_of_rank.push_back(detail::local_hostname());
  for (const auto& h : hosts.hosts) host_of_rank.push_back(h);

  fs::path sandbox_parent;
  std::vector<fs::path> sandboxes(host_of_rank.size());
  if (opt.backend == Backend::LocalProc) {
    sandbox_parent = detail::ensure_sim_root(opt);
    sandboxes = detail::make_sandboxes(host_of_rank, sandbox_parent);
  }

  SpawnedAgents agents =
      spawn_agents(self_exe, host_of_rank, opt, sandbox_parent);
  agents.transport->await_hellos(10000);

  std::vector<int> identity(host_of_rank.size());
  for (size_t i = 0; i < identity.size(); ++i) identity[i] = int(i);
  NodeGroup g(agents.transport, host_of_rank, sandboxes, 0, opt.backend,
              /*context=*/0, identity);
  std::exception_ptr err;
  try {
    node_main(g);
  } catch (...) {
    err = std::current_exception();
  }
  for (pid_t pid : agents.pids)
    if (pid > 0) ::waitpid(pid, nullptr, 0);
  if (err) std::rethrow_exception(err);
}

/// Agent entry point: rebuild the group from the spec and hand control to
/// `body` (the CLI's command dispatcher) as this agent's rank.
template <typename Body>
int agent_main(const std::string& spec_hex, Body&& body) {
  AgentSpec spec = decode_agent_spec(spec_hex);
  int rfd = spec.stdio_channel ? 0 : 3;
  int wfd = spec.stdio_channel ? 1 : 3;
  auto transport =
      std::make_shared<ProcChildTransport>(rfd, wfd, spec.rank);

  std::vector<std::filesystem::path> sandboxes(spec.hosts.size());
  if (!spec.sandbox_parent.empty()) {
    for (size_t r = 1; r < spec.hosts.size(); ++r)
      sandboxes[r] = std::filesystem::path(spec.sandbox_parent) / spec.hosts[r];
  }
  std::vector<int> identity(spec.hosts.size());
  for (size_t i = 0; i < identity.size(); ++i) identity[i] = int(i);
  NodeGroup g(transport, spec.hosts, sandboxes, spec.rank, spec.backend,
              /*context=*/0, identity);
  try {
    body(g, spec.command);
    return 0;
  } catch (const std::exception&) {
    // agents die quietly; the orchestrator reports the failure
    return 1;
  }
}

}  // namespace pt
