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
#include <string>
#include <string_view>

#include "pt/transport.hpp"

namespace pt {

/// Execution context of one node: identity plus the filesystem view its
/// commands operate on.  An empty sandbox means the real filesystem.
struct NodeCtx {
  std::string hostname;
  std::filesystem::path sandbox;  // virtual root ("/" of the node), may be empty
  std::filesystem::path cwd;      // node-relative, defaults to the root
  Backend backend = Backend::Sim;

  static NodeCtx of(const NodeGroup& g, int rank) {
    NodeCtx c;
    c.hostname = g.host_of(rank);
    c.sandbox = g.sandbox_root(rank);
    c.backend = g.backend();
    return c;
  }
  static NodeCtx self(const NodeGroup& g) { return of(g, g.rank()); }
};

/// Map a node path onto the host filesystem.  Inside a sandbox, absolute
/// paths are rooted at the sandbox and ".." cannot climb above it.
inline std::filesystem::path resolve_path(const NodeCtx& ctx,
                                          std::string_view node_path) {
  namespace fs = std::filesystem;
  fs::path p(std::string{node_path});
  if (ctx.sandbox.empty()) {
    if (p.is_absolute()) return p;
    return (ctx.cwd.empty() ? fs::current_path() : ctx.cwd) / p;
  }
  fs::path rel = p.is_absolute() ? p.relative_path() : ctx.cwd / p;
  // lexical normalize, clamping at the sandbox root
  fs::path out;
  for (const auto& part : rel.lexically_normal()) {
    if (part == "..") {
      if (out.has_relative_path()) out = out.parent_path();
    } else if (part != "." && !part.empty()) {
      out /= part;
    }
  }
  return ctx.sandbox / out;
}

}  // namespace pt
