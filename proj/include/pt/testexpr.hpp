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
#include <string>
#include <vector>

#include "pt/error.hpp"
#include "pt/sandbox.hpp"

namespace pt {

// Evaluator for the test(1) expression subset used by pttest/ptpred and the
// sim builtin `test`.  File operators are resolved against the node's
// filesystem view.  Grammar (precedence low to high): -o, -a, !, primaries.

namespace testexpr_detail {

class Parser {
 public:
  Parser(const std::vector<std::string>& toks, const NodeCtx& ctx)
      : toks_(toks), ctx_(ctx) {}

  bool parse() {
    if (toks_.empty()) return false;  // `test` with no args is false
    bool v = expr();
    if (pos_ != toks_.size())
      throw UsageError("trailing tokens in test expression near '" + peek() + "'");
    return v;
  }

 private:
  bool expr() {
    bool v = term();
    while (match("-o")) v = term() || v;
    return v;
  }

  bool term() {
    bool v = factor();
    while (match("-a")) v = factor() && v;
    return v;
  }

  bool factor() {
    if (match("!")) return !factor();
    if (match("(")) {
      bool v = expr();
      if (!match(")")) throw UsageError("missing ')' in test expression");
      return v;
    }
    return primary();
  }

  bool primary() {
    namespace fs = std::filesystem;
    std::string a = next("operand");
    if (a.size() == 2 && a[0] == '-' && pos_ < toks_.size() &&
        std::string("efdrwxsznL").find(a[1]) != std::string::npos) {
      std::string arg = next("operand");
      if (a == "-z") return arg.empty();
      if (a == "-n") return !arg.empty();
      fs::path p = resolve_path(ctx_, arg);
      std::error_code ec;
      switch (a[1]) {
        case 'e': return fs::exists(fs::symlink_status(p, ec));
        case 'f': return fs::is_regular_file(p, ec);
        case 'd': return fs::is_directory(p, ec);
        case 'L': return fs::is_symlink(fs::symlink_status(p, ec));
        case 's': return fs::is_regular_file(p, ec) && fs::file_size(p, ec) > 0;
        case 'r': return ::access(p.c_str(), R_OK) == 0;
        case 'w': return ::access(p.c_str(), W_OK) == 0;
        case 'x': return ::access(p.c_str(), X_OK) == 0;
      }
    }
    // binary operator?
    if (pos_ + 1 < toks_.size()) {
      const std::string& op = toks_[pos_];
      if (op == "=" || op == "!=") {
        std::string b = (pos_ += 2, toks_[pos_ - 1]);
        return (op == "=") == (a == b);
      }
      if (op == "-eq" || op == "-ne" || op == "-lt" || op == "-le" ||
          op == "-gt" || op == "-ge") {
        long x = to_int(a);
        long y = to_int((pos_ += 2, toks_[pos_ - 1]));
        if (op == "-eq") return x == y;
        if (op == "-ne") return x != y;
        if (op == "-lt") return x < y;
        if (op == "-le") return x <= y;
        if (op == "-gt") return x > y;
        return x >= y;
      }
    }
    if (a.size() == 2 && a[0] == '-')
      throw UsageError("test operator '" + a + "' is missing its operand");
    return !a.empty();  // bare string: true iff nonempty
  }

  static long to_int(const std::string& s) {
    try {
      size_t used = 0;
      long v = std::stol(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw UsageError("integer expected in test expression, got '" + s + "'");
    }
  }

  bool match(const char* tok) {
    if (pos_ < toks_.size() && toks_[pos_] == tok) {
      ++pos_;
      return true;
    }
    return false;
  }
  std::string next(const char* what) {
    if (pos_ >= toks_.size())
      throw UsageError(std::string("test expression ends where ") + what +
                       " was expected");
    return toks_[pos_++];
  }
  const std::string& peek() const { return toks_[pos_]; }

  const std::vector<std::string>& toks_;
  const NodeCtx& ctx_;
  size_t pos_ = 0;
};

}  // namespace testexpr_detail

/// Evaluate a test(1) expression in a node's filesystem view.
/// Throws UsageError on malformed expressions (distinct from logical false).
inline bool eval_test_expr(const std::vector<std::string>& tokens,
                           const NodeCtx& ctx) {
  return testexpr_detail::Parser(tokens, ctx).parse();
}

/// Validate an expression shape without touching any filesystem.
inline void check_test_expr(const std::vector<std::string>& tokens) {
  NodeCtx dummy;
  dummy.sandbox = "/nonexistent-validation-root";
  eval_test_expr(tokens, dummy);
}

}  // namespace pt
