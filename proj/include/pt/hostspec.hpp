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

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pt/error.hpp"

namespace pt {

/// Where a host list came from.  Precedence: EnvFile beats everything.
enum class HostOrigin { EnvFile, All, MachineFile, ExplicitList };

/// Ordered, resolved list of target hostnames.  Order is specification
/// order; duplicates are preserved as given.
struct HostSet {
  std::vector<std::string> hosts;
  HostOrigin origin = HostOrigin::ExplicitList;

  size_t size() const { return hosts.size(); }
  bool empty() const { return hosts.empty(); }
};

/// A `prefix%dsuffix@ranges` pattern, e.g. "ccn%d-myr@129-256".
struct HostPattern {
  std::string prefix;
  std::string suffix;
  std::vector<std::pair<unsigned long, unsigned long>> ranges;  // lo <= hi
};

namespace detail {

inline std::vector<std::string> split_blanks(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline unsigned long parse_decimal(std::string_view tok, std::string_view spec) {
  if (tok.empty())
    throw UsageError("empty range term in host pattern '" + std::string(spec) + "'");
  unsigned long v = 0;
  for (char c : tok) {
    if (c < '0' || c > '9')
      throw UsageError("non-numeric range term '" + std::string(tok) +
                       "' in host pattern '" + std::string(spec) + "'");
    v = v * 10 + unsigned(c - '0');
  }
  return v;
}

inline std::string trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Parse `prefix%dsuffix@a,b-c,...` into its parts.  Exactly one %d and
/// exactly one @ are accepted; anything else is a usage error.
inline HostPattern parse_host_pattern(std::string_view spec) {
  size_t at = spec.find('@');
  if (at == std::string_view::npos)
    throw UsageError("host pattern '" + std::string(spec) + "' is missing '@'");
  if (spec.find('@', at + 1) != std::string_view::npos)
    throw UsageError("host pattern '" + std::string(spec) + "' has multiple '@'");
  std::string_view name = spec.substr(0, at);
  std::string_view ranges = spec.substr(at + 1);

  size_t pct = name.find("%d");
  if (pct == std::string_view::npos)
    throw UsageError("host pattern '" + std::string(spec) + "' is missing '%d'");
  if (name.find("%d", pct + 2) != std::string_view::npos)
    throw UsageError("host pattern '" + std::string(spec) + "' has multiple '%d'");

  HostPattern p;
  p.prefix = std::string(name.substr(0, pct));
  p.suffix = std::string(name.substr(pct + 2));

  if (ranges.empty())
    throw UsageError("host pattern '" + std::string(spec) + "' has an empty range list");
  size_t start = 0;
  while (start <= ranges.size()) {
    size_t comma = ranges.find(',', start);
    std::string_view term = ranges.substr(
        start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    size_t dash = term.find('-');
    unsigned long lo, hi;
    if (dash == std::string_view::npos) {
      lo = hi = detail::parse_decimal(term, spec);
    } else {
      lo = detail::parse_decimal(term.substr(0, dash), spec);
      hi = detail::parse_decimal(term.substr(dash + 1), spec);
    }
    if (lo > hi)
      throw UsageError("descending range '" + std::string(term) +
                       "' in host pattern '" + std::string(spec) + "'");
    p.ranges.emplace_back(lo, hi);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return p;
}

/// Expand a host specification: either a blank-separated explicit list or a
/// `prefix%dsuffix@ranges` pattern.  Numbers are not zero padded.
inline HostSet expand_pattern(std::string_view spec) {
  HostSet hs;
  if (spec.find("%d") == std::string_view::npos &&
      spec.find('@') == std::string_view::npos) {
    hs.hosts = detail::split_blanks(spec);
    hs.origin = HostOrigin::ExplicitList;
    if (hs.hosts.empty())
      throw UsageError("empty host list");
    return hs;
  }
  HostPattern p = parse_host_pattern(spec);
  for (auto [lo, hi] : p.ranges)
    for (unsigned long i = lo; i <= hi; ++i)
      hs.hosts.push_back(p.prefix + std::to_string(i) + p.suffix);
  hs.origin = HostOrigin::ExplicitList;
  return hs;
}

/// One host per line; blank lines and '#' comment lines are skipped.
inline HostSet read_machine_file_content(std::string_view content,
                                         HostOrigin origin) {
  HostSet hs;
  hs.origin = origin;
  std::istringstream in{std::string(content)};
  std::string line;
  while (std::getline(in, line)) {
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    hs.hosts.push_back(std::move(t));
  }
  if (hs.hosts.empty())
    throw UsageError("machine file contains no hosts");
  return hs;
}

inline HostSet read_machine_file(const std::string& path, HostOrigin origin) {
  std::ifstream in(path);
  if (!in)
    throw UsageError("cannot read machine file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return read_machine_file_content(buf.str(), origin);
  } catch (const UsageError&) {
    throw UsageError("machine file '" + path + "' contains no hosts");
  }
}

using EnvLookup = std::function<const char*(const char*)>;

inline const char* getenv_lookup(const char* name) { return std::getenv(name); }

struct ResolvedHosts {
  HostSet hosts;
  size_t consumed = 0;  // leading argv tokens eaten by host resolution
};

/// Resolve the target host list from the leading command arguments and the
/// environment.  PT_MACHINE_FILE overrides every argument form, and when it
/// is set no host tokens are consumed from argv.  The -all list is read from
/// PT_ALL_HOSTS_FILE, falling back to ~/.config/ptools/allhosts.
inline ResolvedHosts resolve_hosts(const std::vector<std::string>& args,
                                   const EnvLookup& env = getenv_lookup) {
  if (const char* mf = env("PT_MACHINE_FILE")) {
    ResolvedHosts r;
    r.hosts = read_machine_file(mf, HostOrigin::EnvFile);
    r.consumed = 0;
    return r;
  }
  if (args.empty())
    throw UsageError("no host argument (-all, -m <file>, or -M <spec>) and "
                     "PT_MACHINE_FILE is not set");
  const std::string& first = args[0];
  ResolvedHosts r;
  if (first == "-all") {
    std::string path;
    if (const char* p = env("PT_ALL_HOSTS_FILE")) {
      path = p;
    } else if (const char* home = env("HOME")) {
      path = std::string(home) + "/.config/ptools/allhosts";
    }
    if (path.empty())
      throw UsageError("-all requires PT_ALL_HOSTS_FILE or a home directory");
    r.hosts = read_machine_file(path, HostOrigin::All);
    r.consumed = 1;
  } else if (first == "-m") {
    if (args.size() < 2)
      throw UsageError("-m requires a file name");
    r.hosts = read_machine_file(args[1], HostOrigin::MachineFile);
    r.consumed = 2;
  } else if (first == "-M") {
    if (args.size() < 2)
      throw UsageError("-M requires a host list or pattern");
    r.hosts = expand_pattern(args[1]);
    r.consumed = 2;
  } else {
    throw UsageError("expected -all, -m <file>, or -M <spec>, got '" + first + "'");
  }
  return r;
}

}  // namespace pt
