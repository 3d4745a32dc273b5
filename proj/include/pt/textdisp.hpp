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

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "pt/error.hpp"
#include "pt/hostspec.hpp"

namespace pt {

// ---------------------------------------------------------------------------
// headers / spread

/// Emit `[host]` then the lines verbatim.  The header appears even for an
/// empty block.
inline std::vector<std::string> format_headers(const std::string& host,
                                               const std::vector<std::string>& lines) {
  std::vector<std::string> out;
  out.push_back("[" + host + "]");
  out.insert(out.end(), lines.begin(), lines.end());
  return out;
}

/// Turn headered output into grep-able `host:  line` form (colon, two
/// spaces).  Hosts with no content vanish.  Content before any header is a
/// format error.
inline std::vector<std::string> spread(const std::vector<std::string>& input) {
  std::vector<std::string> out;
  std::string host;
  for (const auto& line : input) {
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
      host = line.substr(1, line.size() - 2);
      continue;
    }
    if (host.empty())
      throw UsageError("ptspread: content line before any [host] header: " + line);
    out.push_back(host + ":  " + line);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ptdisp line protocol

struct DisplayMsg {
  enum class Kind { Color, Percentage, Text, Value };
  std::string host;
  Kind kind = Kind::Text;
  std::string fg, bg;   // Color
  double number = 0;    // Percentage / Value
  std::string text;     // Text
  bool operator==(const DisplayMsg&) const = default;
};

struct Legend {
  struct Entry {
    std::string label, fg, bg;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;
  bool operator==(const Legend&) const = default;
};

struct ParseErrorLine {
  std::string line;
  std::string reason;
};

using DisplayLine = std::variant<DisplayMsg, Legend, ParseErrorLine>;

namespace textdisp_detail {

inline bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end && *end == '\0';
}

}  // namespace textdisp_detail

/// Parse one protocol line: `$LEGEND$: label fg bg ...`, `host: color FG BG`,
/// `host: percentage P`, `host: text S...`, or `host: N`.  Anything else is
/// a ParseErrorLine the render loop skips.
inline DisplayLine parse_display_line(const std::string& line) {
  using textdisp_detail::parse_number;
  size_t sep = line.find(": ");
  if (sep == std::string::npos || sep == 0)
    return ParseErrorLine{line, "missing 'host: ' separator"};
  std::string head = line.substr(0, sep);
  std::string rest = line.substr(sep + 2);
  std::istringstream toks(rest);
  std::vector<std::string> args;
  std::string t;
  while (toks >> t) args.push_back(t);

  if (head == "$LEGEND$") {
    if (args.empty() || args.size() % 3 != 0)
      return ParseErrorLine{line, "legend needs label/fg/bg triples"};
    Legend l;
    for (size_t i = 0; i < args.size(); i += 3)
      l.entries.push_back({args[i], args[i + 1], args[i + 2]});
    return l;
  }

  DisplayMsg m;
  m.host = head;
  if (args.empty()) return ParseErrorLine{line, "empty payload"};
  if (args[0] == "color") {
    if (args.size() != 3) return ParseErrorLine{line, "color needs FG and BG"};
    m.kind = DisplayMsg::Kind::Color;
    m.fg = args[1];
    m.bg = args[2];
    return m;
  }
  if (args[0] == "percentage") {
    if (args.size() != 2 || !parse_number(args[1], m.number))
      return ParseErrorLine{line, "percentage needs one number"};
    m.kind = DisplayMsg::Kind::Percentage;
    return m;
  }
  if (args[0] == "text") {
    m.kind = DisplayMsg::Kind::Text;
    size_t at = rest.find("text");
    m.text = rest.size() > at + 5 ? rest.substr(at + 5) : "";
    return m;
  }
  if (args.size() == 1 && parse_number(args[0], m.number)) {
    m.kind = DisplayMsg::Kind::Value;
    return m;
  }
  return ParseErrorLine{line, "unknown payload"};
}

/// Render a protocol line back out (inverse of parse_display_line).
inline std::string render_display_line(const DisplayMsg& m) {
  switch (m.kind) {
    case DisplayMsg::Kind::Color: return m.host + ": color " + m.fg + " " + m.bg;
    case DisplayMsg::Kind::Percentage: {
      std::ostringstream os;
      os << m.host << ": percentage " << m.number;
      return os.str();
    }
    case DisplayMsg::Kind::Text: return m.host + ": text " + m.text;
    case DisplayMsg::Kind::Value: {
      std::ostringstream os;
      os << m.host << ": " << m.number;
      return os.str();
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// grid state and renderer

struct CellColor {
  std::string fg = "default";
  std::string bg = "default";
};

/// Last-write-wins cell state per host, insertion order for layout.
/// A pure function of the message sequence.
class GridState {
 public:
  void apply(const DisplayLine& line) {
    if (const auto* m = std::get_if<DisplayMsg>(&line)) {
      if (!cells_.count(m->host)) order_.push_back(m->host);
      cells_[m->host] = *m;
    } else if (const auto* l = std::get_if<Legend>(&line)) {
      legend_ = *l;
    } else {
      ++parse_errors_;
    }
  }

  void apply_line(const std::string& raw) { apply(parse_display_line(raw)); }

  size_t cell_count() const { return order_.size(); }
  const std::vector<std::string>& hosts() const { return order_; }
  const DisplayMsg& cell(const std::string& host) const { return cells_.at(host); }
  const std::optional<Legend>& legend() const { return legend_; }
  size_t parse_errors() const { return parse_errors_; }

  void set_title(std::string t) { title_ = std::move(t); }
  const std::string& title() const { return title_; }

  /// Percentage values are clamped to [0,100] at render time and mapped to
  /// a green/yellow/red ramp (<50 green, <80 yellow, else red).
  static CellColor color_of(const DisplayMsg& m) {
    if (m.kind == DisplayMsg::Kind::Color) return {m.fg, m.bg};
    if (m.kind == DisplayMsg::Kind::Percentage) {
      double p = std::clamp(m.number, 0.0, 100.0);
      if (p < 50) return {"black", "green"};
      if (p < 80) return {"black", "yellow"};
      return {"black", "red"};
    }
    return {};
  }

  static std::string label_of(const DisplayMsg& m) {
    switch (m.kind) {
      case DisplayMsg::Kind::Color: return "";
      case DisplayMsg::Kind::Percentage: {
        double p = std::clamp(m.number, 0.0, 100.0);
        std::ostringstream os;
        os << p << '%';
        return os.str();
      }
      case DisplayMsg::Kind::Text: return m.text;
      case DisplayMsg::Kind::Value: {
        std::ostringstream os;
        os << m.number;
        return os.str();
      }
    }
    return "";
  }

 private:
  std::map<std::string, DisplayMsg> cells_;
  std::vector<std::string> order_;
  std::optional<Legend> legend_;
  std::string title_;
  size_t parse_errors_ = 0;
};

namespace textdisp_detail {

inline int ansi_color_code(const std::string& name, bool background) {
  static const std::map<std::string, int> kColors = {
      {"black", 0}, {"red", 1},     {"green", 2}, {"yellow", 3},
      {"blue", 4},  {"magenta", 5}, {"cyan", 6},  {"white", 7},
  };
  auto it = kColors.find(name);
  if (it == kColors.end()) return background ? 49 : 39;  // default
  return (background ? 40 : 30) + it->second;
}

}  // namespace textdisp_detail

/// Terminal grid renderer, kept separate from GridState so all display
/// logic is testable headlessly.  Cells lay out in a near-square grid that
/// adapts to the host count; when the terminal is too small the view
/// degrades to a plain list.
class GridRenderer {
 public:
  GridRenderer(bool color, int width, int height)
      : color_(color), width_(width), height_(height) {}

  void render(const GridState& s, std::ostream& out,
              int selected = -1) const {
    size_t n = s.cell_count();
    if (!s.title().empty()) out << "== " << s.title() << " ==\n";
    if (n == 0) {
      out << "(no hosts yet)\n";
      return;
    }
    int cols = int(std::ceil(std::sqrt(double(n))));
    int cell_w = std::max(8, cell_width(s));
    if ((cell_w + 1) * cols > width_ || cols > width_ / 9) {
      render_list(s, out, selected);
      return;
    }
    int idx = 0;
    for (size_t row = 0; idx < int(n); ++row) {
      for (int c = 0; c < cols && idx < int(n); ++c, ++idx) {
        const std::string& host = s.hosts()[size_t(idx)];
        const DisplayMsg& m = s.cell(host);
        std::string label = GridState::label_of(m);
        if (label.empty()) label = short_name(host);
        print_cell(out, label, GridState::color_of(m), cell_w, idx == selected);
        out << ' ';
      }
      out << '\n';
    }
    if (selected >= 0 && selected < int(n))
      out << "> " << s.hosts()[size_t(selected)] << '\n';
    if (s.legend()) {
      for (const auto& e : s.legend()->entries) {
        print_cell(out, e.label, {e.fg, e.bg}, int(e.label.size()) + 2, false);
        out << ' ';
      }
      out << '\n';
    }
  }

 private:
  static std::string short_name(const std::string& host) {
    size_t dot = host.find('.');
    return dot == std::string::npos ? host : host.substr(0, dot);
  }

  int cell_width(const GridState& s) const {
    size_t w = 0;
    for (const auto& h : s.hosts()) {
      std::string label = GridState::label_of(s.cell(h));
      if (label.empty()) label = short_name(h);
      w = std::max(w, label.size());
    }
    return int(w) + 2;
  }

  void render_list(const GridState& s, std::ostream& out, int selected) const {
    int idx = 0;
    for (const auto& h : s.hosts()) {
      out << (idx == selected ? "> " : "  ") << h << ": ";
      const DisplayMsg& m = s.cell(h);
      std::string label = GridState::label_of(m);
      CellColor cc = GridState::color_of(m);
      if (label.empty()) label = cc.bg;
      print_cell(out, label, cc, int(label.size()) + 2, false);
      out << '\n';
      ++idx;
    }
  }

  void print_cell(std::ostream& out, const std::string& label, CellColor cc,
                  int width, bool selected) const {
    using textdisp_detail::ansi_color_code;
    std::string text = label.size() > size_t(width)
                           ? label.substr(0, size_t(width))
                           : label;
    int pad = width - int(text.size());
    int left = pad / 2, right = pad - left;
    if (color_)
      out << "\033[" << ansi_color_code(cc.fg, false) << ';'
          << ansi_color_code(cc.bg, true) << 'm';
    out << (selected ? '>' : '[') << std::string(size_t(left), ' ') << text
        << std::string(size_t(right), ' ') << (selected ? '<' : ']');
    if (color_) out << "\033[0m";
  }

  bool color_;
  int width_;
  int height_;
};

/// Hook invoked when a cell is activated; the default spawns a terminal
/// shell to the host via the PT_DISP_SHELL_CMD template (%h -> hostname).
using CellActionHook = std::function<void(const std::string& host)>;

inline CellActionHook default_cell_action() {
  return [](const std::string& host) {
    std::string tmpl = "xterm -e ssh %h &";
    if (const char* t = std::getenv("PT_DISP_SHELL_CMD")) tmpl = t;
    std::string cmd;
    size_t pos = 0, hit;
    while ((hit = tmpl.find("%h", pos)) != std::string::npos) {
      cmd += tmpl.substr(pos, hit - pos);
      cmd += host;
      pos = hit + 2;
    }
    cmd += tmpl.substr(pos);
    if (std::system(cmd.c_str()) != 0) {
      // reported by the caller's status line; the loop keeps running
    }
  };
}

/// Invoke the action hook for the grid cell at `index` (layout order).
/// Returns false (hook untouched) when the index is out of range.
inline bool activate_cell(const GridState& s, int index,
                          const CellActionHook& hook) {
  if (index < 0 || index >= int(s.cell_count()) || !hook) return false;
  hook(s.hosts()[size_t(index)]);
  return true;
}

struct DisplayOptions {
  bool color = false;
  std::string title;
  int width = 80;
  int height = 24;
  bool clear_screen = true;
};

/// Perpetual render loop: reads protocol lines from `in`, re-renders after
/// each update, skips malformed lines.  Returns when the stream ends.
inline GridState run_display(std::istream& in, std::ostream& out,
                             const DisplayOptions& opt,
                             const CellActionHook& hook = {}) {
  GridState state;
  state.set_title(opt.title);
  GridRenderer renderer(opt.color, opt.width, opt.height);
  std::string line;
  (void)hook;  // interactive activation is wired up by the CLI front end
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    state.apply_line(line);
    if (opt.clear_screen) out << "\033[2J\033[H";
    renderer.render(state, out);
    out.flush();
  }
  return state;
}

}  // namespace pt
