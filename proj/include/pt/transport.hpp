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

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include "pt/error.hpp"
#include "pt/hostspec.hpp"

namespace pt {

enum class Backend { Sim, LocalProc, RemoteShell };

inline const char* backend_name(Backend b) {
  switch (b) {
    case Backend::Sim: return "sim";
    case Backend::LocalProc: return "localproc";
    case Backend::RemoteShell: return "remoteshell";
  }
  return "?";
}

/// Counters kept by the simulated transport.  A round is one batch of
/// concurrently deliverable sends: each message is stamped with a logical
/// depth (its sender's clock + 1, clocks advancing on both send and
/// receive), and max_rounds is the largest depth issued so far.
struct SimStats {
  uint64_t messages_sent = 0;
  uint32_t max_rounds = 0;
};

/// Point-to-point byte transport between the ranks of one launch.
/// Delivery is FIFO per (src, dst, tag) triple.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(int src, int dst, uint64_t tag, std::string_view payload) = 0;
  virtual std::string recv(int dst, int src, uint64_t tag) = 0;
  /// Allocate a fresh collective-context id, unique within this launch.
  virtual uint32_t alloc_context() = 0;
};

/// Deterministic in-process transport: one thread per rank, lock-protected
/// mailboxes, logical-clock round accounting.
class SimTransport : public Transport {
 public:
  explicit SimTransport(int nranks)
      : clock_(size_t(nranks), 0), dead_(size_t(nranks), 0) {}

  void send(int src, int dst, uint64_t tag, std::string_view payload) override {
    std::lock_guard<std::mutex> lk(mu_);
    if (dead_[size_t(dst)])
      throw TransportError("send to terminated rank " + std::to_string(dst));
    uint32_t depth = ++clock_[size_t(src)];
    stats_.messages_sent++;
    if (depth > stats_.max_rounds) stats_.max_rounds = depth;
    queues_[{src, dst, tag}].push_back(Msg{std::string(payload), depth});
    cv_.notify_all();
  }

  std::string recv(int dst, int src, uint64_t tag) override {
    std::unique_lock<std::mutex> lk(mu_);
    auto key = std::make_tuple(src, dst, tag);
    for (;;) {
      auto it = queues_.find(key);
      if (it != queues_.end() && !it->second.empty()) {
        Msg m = std::move(it->second.front());
        it->second.pop_front();
        if (m.depth > clock_[size_t(dst)]) clock_[size_t(dst)] = m.depth;
        return std::move(m.payload);
      }
      if (dead_[size_t(src)])
        throw TransportError("recv from terminated rank " + std::to_string(src));
      cv_.wait(lk);
    }
  }

  uint32_t alloc_context() override { return next_context_.fetch_add(1); }

  void mark_dead(int rank) {
    std::lock_guard<std::mutex> lk(mu_);
    dead_[size_t(rank)] = 1;
    cv_.notify_all();
  }

  SimStats stats() const {
    std::lock_guard<std::mutex> lk(mu_);
    return stats_;
  }

  /// Zero counters and clocks.  Only meaningful while all ranks are
  /// quiescent (e.g. between barrier-separated phases of a test).
  void reset_stats() {
    std::lock_guard<std::mutex> lk(mu_);
    stats_ = SimStats{};
    for (auto& c : clock_) c = 0;
  }

 private:
  struct Msg {
    std::string payload;
    uint32_t depth;
  };
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::tuple<int, int, uint64_t>, std::deque<Msg>> queues_;
  std::vector<uint32_t> clock_;
  std::vector<char> dead_;
  SimStats stats_;
  std::atomic<uint32_t> next_context_{1};  // 0 is the launch-wide group
};

/// A launched set of communicating node contexts.  Rank 0 is the invoking
/// orchestrator; hosts occupy ranks 1..N.  Subgroups made by split() share
/// the parent transport under a distinct context id.
class NodeGroup {
 public:
  NodeGroup() = default;
  NodeGroup(std::shared_ptr<Transport> tr, std::vector<std::string> host_of_rank,
            std::vector<std::filesystem::path> sandboxes, int self_rank,
            Backend backend, uint32_t context, std::vector<int> parent_ranks)
      : transport_(std::move(tr)),
        hosts_(std::move(host_of_rank)),
        sandboxes_(std::move(sandboxes)),
        self_rank_(self_rank),
        backend_(backend),
        context_(context),
        parent_ranks_(std::move(parent_ranks)) {}

  int size() const { return int(hosts_.size()); }
  int rank() const { return self_rank_; }
  Backend backend() const { return backend_; }
  const std::vector<std::string>& hosts() const { return hosts_; }
  const std::string& host_of(int r) const { return hosts_.at(size_t(r)); }
  Transport& transport() const { return *transport_; }
  uint32_t context() const { return context_; }
  const std::vector<int>& parent_ranks() const { return parent_ranks_; }

  void send(int dst, uint32_t tag, std::string_view payload) const {
    check_rank(dst);
    if (dst == self_rank_)
      throw ProtocolError("self-send is not supported");
    transport_->send(parent_ranks_[size_t(self_rank_)],
                     parent_ranks_[size_t(dst)], make_tag(tag), payload);
  }

  std::string recv(int src, uint32_t tag) const {
    check_rank(src);
    if (src == self_rank_)
      throw ProtocolError("self-recv is not supported");
    return transport_->recv(parent_ranks_[size_t(self_rank_)],
                            parent_ranks_[size_t(src)], make_tag(tag));
  }

  /// Per-rank private filesystem root.  Empty path means "the real
  /// filesystem" (rank 0, and all ranks under RemoteShell).
  const std::filesystem::path& sandbox_root(int r) const {
    if (backend_ == Backend::RemoteShell)
      throw UsageError("sandbox_root is not supported on the remoteshell backend");
    check_rank(r);
    return sandboxes_.at(size_t(r));
  }

  NodeGroup with_rank(int r) const {
    NodeGroup g = *this;
    g.self_rank_ = r;
    return g;
  }

  NodeGroup subgroup(uint32_t context, std::vector<int> member_parent_ranks,
                     int new_rank) const {
    std::vector<std::string> hosts;
    std::vector<std::filesystem::path> boxes;
    for (int pr : member_parent_ranks) {
      hosts.push_back(hosts_.at(size_t(pr)));
      boxes.push_back(sandboxes_.at(size_t(pr)));
    }
    std::vector<int> abs;
    for (int pr : member_parent_ranks)
      abs.push_back(parent_ranks_.at(size_t(pr)));
    return NodeGroup(transport_, std::move(hosts), std::move(boxes), new_rank,
                     backend_, context, std::move(abs));
  }

 private:
  void check_rank(int r) const {
    if (r < 0 || r >= size())
      throw ProtocolError("rank " + std::to_string(r) + " out of range");
  }
  uint64_t make_tag(uint32_t tag) const {
    return (uint64_t(context_) << 16) | tag;
  }

  std::shared_ptr<Transport> transport_;
  std::vector<std::string> hosts_;
  std::vector<std::filesystem::path> sandboxes_;  // indexed by group rank
  int self_rank_ = 0;
  Backend backend_ = Backend::Sim;
  uint32_t context_ = 0;
  std::vector<int> parent_ranks_;  // group rank -> transport rank
};

struct LaunchOptions {
  Backend backend = Backend::Sim;
  std::filesystem::path sim_root;         // sandbox parent; mkdtemp if empty
  std::string remote_shell_template;      // e.g. "ssh %h", RemoteShell only
  std::vector<std::string> agent_argv;    // command argv for process backends
};

namespace detail {

inline std::filesystem::path ensure_sim_root(const LaunchOptions& opt) {
  namespace fs = std::filesystem;
  if (!opt.sim_root.empty()) {
    fs::create_directories(opt.sim_root);
    return opt.sim_root;
  }
  std::string tmpl = (fs::temp_directory_path() / "ptsim.XXXXXX").string();
  std::vector<char> buf(tmpl.begin(), tmpl.end());
  buf.push_back('\0');
  if (!::mkdtemp(buf.data()))
    throw TransportError("cannot create sim root directory");
  return fs::path(buf.data());
}

// Sandboxes are keyed by hostname so that successive commands against the
// same sim root see the same per-node filesystem.
inline std::vector<std::filesystem::path> make_sandboxes(
    const std::vector<std::string>& host_of_rank,
    const std::filesystem::path& root) {
  std::vector<std::filesystem::path> boxes;
  boxes.emplace_back();  // rank 0: real filesystem
  for (size_t r = 1; r < host_of_rank.size(); ++r) {
    std::filesystem::path p = root / host_of_rank[r];
    std::filesystem::create_directories(p);
    boxes.push_back(p);
  }
  return boxes;
}

inline std::string local_hostname() {
  char buf[256] = {0};
  if (::gethostname(buf, sizeof(buf) - 1) != 0) return "localhost";
  return buf;
}

}  // namespace detail

/// Outcome of a simulated launch, reported to the caller of run_group.
struct LaunchReport {
  SimStats stats;
  std::filesystem::path sim_root;
};

/// Run `node_main` on every rank of a simulated group: hosts at ranks 1..N
/// on their own threads, the orchestrator at rank 0 on the calling thread.
/// Returns once every rank has finished.  A rank that throws is marked dead
/// so that peers blocked on it fail with TransportError; rank 0's exception
/// propagates to the caller.
template <typename NodeMain>
LaunchReport run_sim_group(const HostSet& hosts, const LaunchOptions& opt,
                           NodeMain&& node_main) {
  if (hosts.empty())
    throw UsageError("cannot launch a group over zero hosts");
  int size = int(hosts.size()) + 1;
  auto transport = std::make_shared<SimTransport>(size);

  std::vector<std::string> host_of_rank;
  host_of_rank.push_back(detail::local_hostname());
  for (const auto& h : hosts.hosts) host_of_rank.push_back(h);

  std::filesystem::path root = detail::ensure_sim_root(opt);
  auto sandboxes = detail::make_sandboxes(host_of_rank, root);

  std::vector<int> identity(static_cast<size_t>(size), 0);
  for (int i = 0; i < size; ++i) identity[size_t(i)] = i;
  NodeGroup proto(transport, host_of_rank, sandboxes, 0, Backend::Sim,
                  /*context=*/0, identity);

  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(size), nullptr);
  for (int r = 1; r < size; ++r) {
    threads.emplace_back([&, r] {
      NodeGroup g = proto.with_rank(r);
      try {
        node_main(g);
      } catch (...) {
        errors[size_t(r)] = std::current_exception();
      }
      transport->mark_dead(r);
    });
  }

  std::exception_ptr root_error;
  {
    NodeGroup g0 = proto;
    try {
      node_main(g0);
    } catch (...) {
      root_error = std::current_exception();
    }
    transport->mark_dead(0);
  }
  for (auto& t : threads) t.join();
  if (root_error) std::rethrow_exception(root_error);

  LaunchReport rep;
  rep.stats = transport->stats();
  rep.sim_root = root;
  return rep;
}

}  // namespace pt
