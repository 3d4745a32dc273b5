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

#include <sys/stat.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pt/error.hpp"

namespace pt {

/// Pull-based byte stream.  read() returns 0 only at end of stream and may
/// throw on source failure (the copy pipeline turns that into an abort).
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual size_t read(char* buf, size_t n) = 0;
};

/// Push-based byte sink.
class ByteSink {
 public:
  virtual ~ByteSink() = default;
  virtual void write(std::string_view data) = 0;
  virtual void finish() = 0;
  /// Drop whatever partial output the sink has produced so far.
  virtual void discard() {}
};

class FileSource : public ByteSource {
 public:
  explicit FileSource(const std::filesystem::path& p) : in_(p, std::ios::binary) {
    if (!in_) throw UsageError("cannot read '" + p.string() + "'");
  }
  size_t read(char* buf, size_t n) override {
    in_.read(buf, std::streamsize(n));
    if (in_.bad()) throw TransportError("read failure on source file");
    return size_t(in_.gcount());
  }

 private:
  std::ifstream in_;
};

class FileSink : public ByteSink {
 public:
  explicit FileSink(const std::filesystem::path& p) : path_(p) {
    out_.open(p, std::ios::binary | std::ios::trunc);
    if (!out_) throw TransportError("cannot write '" + p.string() + "'");
  }
  void write(std::string_view data) override {
    out_.write(data.data(), std::streamsize(data.size()));
    if (!out_) throw TransportError("write failure on '" + path_.string() + "'");
  }
  void finish() override {
    out_.close();
    if (out_.fail()) throw TransportError("close failure on '" + path_.string() + "'");
  }
  void discard() override {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

namespace tar_detail {

constexpr size_t kBlock = 512;

inline void put_octal(char* field, size_t width, uint64_t value) {
  // width includes the trailing NUL
  std::snprintf(field, width, "%0*llo", int(width - 1),
                static_cast<unsigned long long>(value));
}

inline std::string make_header(const std::string& name, uint64_t size,
                               unsigned mode, char typeflag,
                               const std::string& linkname) {
  if (name.size() > 100)
    throw UsageError("archive member name too long: " + name);
  std::string h(kBlock, '\0');
  char* p = h.data();
  std::memcpy(p, name.data(), name.size());
  put_octal(p + 100, 8, mode & 07777);
  put_octal(p + 108, 8, 0);  // uid
  put_octal(p + 116, 8, 0);  // gid
  put_octal(p + 124, 12, size);
  put_octal(p + 136, 12, 0);  // mtime
  std::memset(p + 148, ' ', 8);
  p[156] = typeflag;
  if (!linkname.empty()) {
    if (linkname.size() > 100)
      throw UsageError("link target too long: " + linkname);
    std::memcpy(p + 157, linkname.data(), linkname.size());
  }
  std::memcpy(p + 257, "ustar", 6);
  std::memcpy(p + 263, "00", 2);
  unsigned sum = 0;
  for (size_t i = 0; i < kBlock; ++i) sum += (unsigned char)p[i];
  put_octal(p + 148, 7, sum);
  p[155] = ' ';
  return h;
}

struct Entry {
  std::string name;       // path inside the archive
  std::filesystem::path src;
  char typeflag;          // '0' file, '5' dir, '2' symlink
  uint64_t size;
  unsigned mode;
  std::string linkname;
};

inline unsigned mode_bits(const std::filesystem::path& p) {
  struct ::stat st{};
  if (::lstat(p.c_str(), &st) != 0) return 0644;
  return st.st_mode & 07777;
}

}  // namespace tar_detail

/// Incremental POSIX ustar producer over a list of paths.  Directory trees
/// are walked up front (names only); file contents are read on demand, so
/// the archive is never materialized in memory.
class TarSource : public ByteSource {
 public:
  explicit TarSource(const std::vector<std::filesystem::path>& paths) {
    namespace fs = std::filesystem;
    for (const auto& p : paths) {
      if (!fs::exists(fs::symlink_status(p)))
        throw UsageError("cannot archive '" + p.string() + "': no such file");
      add(p, p.filename().string());
    }
  }

  size_t read(char* buf, size_t n) override {
    size_t got = 0;
    while (got < n) {
      if (!pending_.empty()) {
        size_t k = std::min(n - got, pending_.size() - pend_pos_);
        std::memcpy(buf + got, pending_.data() + pend_pos_, k);
        pend_pos_ += k;
        got += k;
        if (pend_pos_ == pending_.size()) {
          pending_.clear();
          pend_pos_ = 0;
        }
        continue;
      }
      if (file_remaining_ > 0) {
        size_t k = size_t(std::min<uint64_t>(n - got, file_remaining_));
        file_->read(buf + got, std::streamsize(k));
        size_t r = size_t(file_->gcount());
        if (r == 0) throw TransportError("archive source shrank while reading");
        got += r;
        file_remaining_ -= r;
        if (file_remaining_ == 0) {
          file_.reset();
          size_t pad = (tar_detail::kBlock - file_size_ % tar_detail::kBlock) %
                       tar_detail::kBlock;
          pending_.assign(pad, '\0');
        }
        continue;
      }
      if (!next_entry()) break;
    }
    return got;
  }

 private:
  void add(const std::filesystem::path& p, const std::string& name) {
    namespace fs = std::filesystem;
    auto st = fs::symlink_status(p);
    tar_detail::Entry e;
    e.name = name;
    e.src = p;
    e.mode = tar_detail::mode_bits(p);
    if (fs::is_symlink(st)) {
      e.typeflag = '2';
      e.size = 0;
      e.linkname = fs::read_symlink(p).string();
      entries_.push_back(std::move(e));
    } else if (fs::is_directory(st)) {
      e.typeflag = '5';
      e.size = 0;
      e.name += '/';
      entries_.push_back(std::move(e));
      std::vector<fs::path> kids;
      for (const auto& d : fs::directory_iterator(p)) kids.push_back(d.path());
      std::sort(kids.begin(), kids.end());
      for (const auto& k : kids) add(k, name + "/" + k.filename().string());
    } else {
      e.typeflag = '0';
      e.size = fs::file_size(p);
      entries_.push_back(std::move(e));
    }
  }

  bool next_entry() {
    if (entry_idx_ == entries_.size()) {
      if (trailer_done_) return false;
      pending_.assign(2 * tar_detail::kBlock, '\0');
      trailer_done_ = true;
      return true;
    }
    const auto& e = entries_[entry_idx_++];
    pending_ = tar_detail::make_header(e.name, e.size, e.mode, e.typeflag,
                                       e.linkname);
    if (e.typeflag == '0' && e.size > 0) {
      file_ = std::make_unique<std::ifstream>(e.src, std::ios::binary);
      if (!*file_)
        throw TransportError("cannot read '" + e.src.string() + "'");
      file_remaining_ = e.size;
      file_size_ = e.size;
    }
    return true;
  }

  std::vector<tar_detail::Entry> entries_;
  size_t entry_idx_ = 0;
  std::string pending_;
  size_t pend_pos_ = 0;
  std::unique_ptr<std::ifstream> file_;
  uint64_t file_remaining_ = 0;
  uint64_t file_size_ = 0;
  bool trailer_done_ = false;
};

/// Streaming ustar extractor: feed it bytes in any granularity; it creates
/// directories, files (with permission bits), and symlinks under dest.
class TarExtractSink : public ByteSink {
 public:
  explicit TarExtractSink(const std::filesystem::path& dest) : dest_(dest) {
    std::filesystem::create_directories(dest);
  }

  /// Rename the archive's top-level member `from` to `to` on extraction
  /// (cp -r source dest-that-does-not-exist semantics).
  void rename_root(std::string from, std::string to) {
    rename_from_ = std::move(from);
    rename_to_ = std::move(to);
  }

  void write(std::string_view data) override {
    buf_.append(data.data(), data.size());
    drain();
  }

  void finish() override {
    drain();
    // trailing zero blocks and slack are fine; a half-parsed header is not
    if (in_file_)
      throw ProtocolError("archive stream truncated mid-file");
  }

  void discard() override {
    if (in_file_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(cur_path_, ec);
      in_file_ = false;
    }
    buf_.clear();
  }

 private:
  void drain() {
    using namespace tar_detail;
    for (;;) {
      if (in_file_) {
        size_t want = size_t(file_remaining_ + file_pad_);
        size_t take = std::min(want, buf_.size());
        size_t data_take = size_t(std::min<uint64_t>(take, file_remaining_));
        if (data_take > 0) {
          out_.write(buf_.data(), std::streamsize(data_take));
          if (!out_) throw TransportError("write failure while extracting");
          file_remaining_ -= data_take;
        }
        size_t pad_take = take - data_take;
        file_pad_ -= pad_take;
        buf_.erase(0, take);
        if (file_remaining_ == 0 && file_pad_ == 0) {
          out_.close();
          apply_mode(cur_path_, cur_mode_);
          in_file_ = false;
          continue;
        }
        return;  // need more bytes
      }
      if (buf_.size() < kBlock) return;
      const char* h = buf_.data();
      bool all_zero = true;
      for (size_t i = 0; i < kBlock; ++i)
        if (h[i] != '\0') { all_zero = false; break; }
      if (all_zero) {
        buf_.erase(0, kBlock);
        continue;
      }
      if (std::memcmp(h + 257, "ustar", 5) != 0)
        throw ProtocolError("bad ustar magic in archive stream");
      std::string name(h, strnlen(h, 100));
      unsigned mode = unsigned(std::strtoul(h + 100, nullptr, 8));
      uint64_t size = std::strtoull(h + 124, nullptr, 8);
      char type = h[156];
      std::string linkname(h + 157, strnlen(h + 157, 100));
      buf_.erase(0, kBlock);

      std::filesystem::path target = safe_join(name);
      if (type == '5') {
        std::filesystem::create_directories(target);
        apply_mode(target, mode);
      } else if (type == '2') {
        std::filesystem::create_directories(target.parent_path());
        std::error_code ec;
        std::filesystem::remove(target, ec);
        std::filesystem::create_symlink(linkname, target);
      } else {  // regular file (or anything we treat as one)
        std::filesystem::create_directories(target.parent_path());
        out_.open(target, std::ios::binary | std::ios::trunc);
        if (!out_) throw TransportError("cannot create '" + target.string() + "'");
        cur_path_ = target;
        cur_mode_ = mode;
        file_remaining_ = size;
        file_pad_ = (kBlock - size % kBlock) % kBlock;
        in_file_ = true;
        if (size == 0) {
          out_.close();
          apply_mode(cur_path_, cur_mode_);
          in_file_ = false;
        }
      }
    }
  }

  std::filesystem::path safe_join(const std::string& name) const {
    std::filesystem::path p = dest_;
    bool first = true;
    for (const auto& part : std::filesystem::path(name)) {
      if (part == "..") throw ProtocolError("archive member escapes destination");
      if (part == "/" || part == ".") continue;
      if (first && !rename_from_.empty() && part == rename_from_)
        p /= rename_to_;
      else
        p /= part;
      first = false;
    }
    return p;
  }

  static void apply_mode(const std::filesystem::path& p, unsigned mode) {
    ::chmod(p.c_str(), mode);
  }

  std::filesystem::path dest_;
  std::string rename_from_, rename_to_;
  std::string buf_;
  bool in_file_ = false;
  std::ofstream out_;
  std::filesystem::path cur_path_;
  unsigned cur_mode_ = 0644;
  uint64_t file_remaining_ = 0;
  uint64_t file_pad_ = 0;
};

}  // namespace pt
