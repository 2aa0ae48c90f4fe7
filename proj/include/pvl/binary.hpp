/* Copyright 2026 The pvl Authors
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

// Little-endian binary encoding shared by the model and cache file formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "pvl/error.hpp"
#include "pvl/transcript.hpp"

namespace pvl::bin {

class Writer {
 public:
  void raw(std::string_view s) { buf_.append(s); }
  template <class T>
  void put(T v) {
    static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    buf_.append(reinterpret_cast<const char*>(b), sizeof(T));
  }
  void str(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  void f64s(std::span<const double> xs) {
    for (double x : xs) put(x);
  }
  // Trailing FNV-1a checksum over everything written so far.
  void seal() { put(fnv1a64(buf_)); }
  const std::string& bytes() const noexcept { return buf_; }
  std::string take() && { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes, const char* what) : b_(bytes), what_(what) {}

  // Verifies and strips the trailing checksum.
  void unseal() {
    need(8);
    std::string_view body = b_.substr(0, b_.size() - 8);
    Reader tail(b_.substr(b_.size() - 8), what_);
    const auto sum = tail.get<std::uint64_t>();
    require(sum == fnv1a64(body), ErrorKind::kData, std::string(what_) + ": checksum mismatch");
    b_ = body;
  }
  void expect(std::string_view magic) {
    need(magic.size());
    require(b_.substr(at_, magic.size()) == magic, ErrorKind::kData, std::string(what_) + ": bad magic");
    at_ += magic.size();
  }
  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char b[sizeof(T)];
    std::memcpy(b, b_.data() + at_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    T v;
    std::memcpy(&v, b, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(b_.substr(at_, n));
    at_ += n;
    return s;
  }
  void f64s(std::span<double> out) {
    for (double& x : out) x = get<double>();
  }
  void finish() const {
    require(at_ == b_.size(), ErrorKind::kData, std::string(what_) + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    require(b_.size() - at_ >= n, ErrorKind::kData, std::string(what_) + ": truncated payload");
  }
  std::string_view b_;
  std::size_t at_ = 0;
  const char* what_;
};

}  // namespace pvl::bin
