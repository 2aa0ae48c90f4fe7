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

// Per-layer, per-head, per-position key/value store.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pvl/error.hpp"
#include "pvl/numcore.hpp"
#include "pvl/transcript.hpp"

namespace pvl {

struct KVEntry {
  Vec key;
  Vec value;
  int layer = 0;
  int head = 0;
  int pos = 0;
  TurnRole role = TurnRole::kUser;
};

class KVCache {
 public:
  KVCache() = default;
  KVCache(std::string model_id, int n_layers, int n_heads, int d_head)
      : model_id_(std::move(model_id)),
        n_layers_(n_layers),
        n_heads_(n_heads),
        d_head_(d_head),
        keys_(static_cast<std::size_t>(n_layers * n_heads)),
        values_(static_cast<std::size_t>(n_layers * n_heads)) {
    require(n_layers > 0 && n_heads > 0 && d_head > 0, ErrorKind::kPrecondition,
            "KVCache dimensions must be positive");
  }

  const std::string& model_id() const noexcept { return model_id_; }
  void retag(std::string model_id) { model_id_ = std::move(model_id); }
  int n_layers() const noexcept { return n_layers_; }
  int n_heads() const noexcept { return n_heads_; }
  int d_head() const noexcept { return d_head_; }

  // Number of positions opened (roles recorded).
  std::size_t size() const noexcept { return roles_.size(); }
  bool empty() const noexcept { return roles_.empty(); }
  const std::vector<TurnRole>& roles() const noexcept { return roles_; }
  TurnRole role(std::size_t pos) const { return roles_.at(pos); }

  std::size_t length(int layer, int head) const { return keys_[slot(layer, head)].size(); }

  // True when every (layer, head) holds exactly size() positions.
  bool complete() const {
    for (const auto& k : keys_)
      if (k.size() != roles_.size()) return false;
    return true;
  }

  void open_position(TurnRole role) {
    require(complete(), ErrorKind::kPrecondition,
            "KVCache: previous position not completed at every layer");
    roles_.push_back(role);
  }

  void append(int layer, int head, std::size_t pos, Vec key, Vec value) {
    auto s = slot(layer, head);
    require(pos + 1 == roles_.size(), ErrorKind::kPrecondition,
            "KVCache: append at pos " + std::to_string(pos) + " but open position is " +
                std::to_string(static_cast<long>(roles_.size()) - 1));
    require(keys_[s].size() == pos, ErrorKind::kPrecondition,
            "KVCache: position gap at layer " + std::to_string(layer) + " head " +
                std::to_string(head) + " (have " + std::to_string(keys_[s].size()) +
                ", appending " + std::to_string(pos) + ")");
    check_same_dim(key.dim(), static_cast<std::size_t>(d_head_), "KVCache key");
    check_same_dim(value.dim(), static_cast<std::size_t>(d_head_), "KVCache value");
    keys_[s].push_back(std::move(key));
    values_[s].push_back(std::move(value));
  }

  // Bulk path for layer-synchronous prefill: opens every position at once on
  // an empty cache, then fills whole (layer, head) columns.
  void open_positions(const std::vector<TurnRole>& roles) {
    require(roles_.empty(), ErrorKind::kPrecondition, "KVCache: bulk open needs an empty cache");
    roles_ = roles;
  }
  void assign_column(int layer, int head, std::vector<Vec> keys, std::vector<Vec> values) {
    auto s = slot(layer, head);
    require(keys_[s].empty(), ErrorKind::kPrecondition, "KVCache: column already filled");
    require(keys.size() == roles_.size() && values.size() == roles_.size(), ErrorKind::kPrecondition,
            "KVCache: column length does not match opened positions");
    for (std::size_t p = 0; p < keys.size(); ++p) {
      check_same_dim(keys[p].dim(), static_cast<std::size_t>(d_head_), "KVCache key");
      check_same_dim(values[p].dim(), static_cast<std::size_t>(d_head_), "KVCache value");
    }
    keys_[s] = std::move(keys);
    values_[s] = std::move(values);
  }

  const Vec& key(int layer, int head, std::size_t pos) const { return keys_[slot(layer, head)].at(pos); }
  const Vec& value(int layer, int head, std::size_t pos) const {
    return values_[slot(layer, head)].at(pos);
  }
  Vec& key(int layer, int head, std::size_t pos) { return keys_[slot(layer, head)].at(pos); }
  Vec& value(int layer, int head, std::size_t pos) { return values_[slot(layer, head)].at(pos); }

  KVEntry entry(int layer, int head, std::size_t pos) const {
    return KVEntry{key(layer, head, pos), value(layer, head, pos), layer, head,
                   static_cast<int>(pos), role(pos)};
  }

  // Drops positions >= n.
  void truncate(std::size_t n) {
    if (n >= roles_.size()) return;
    roles_.resize(n);
    for (auto& k : keys_)
      if (k.size() > n) k.resize(n);
    for (auto& v : values_)
      if (v.size() > n) v.resize(n);
  }

  bool same_shape(const KVCache& o) const {
    return n_layers_ == o.n_layers_ && n_heads_ == o.n_heads_ && d_head_ == o.d_head_;
  }

  // Byte-identical content, including model_id and roles.
  friend bool bit_equal(const KVCache& a, const KVCache& b) {
    if (a.model_id_ != b.model_id_ || !a.same_shape(b) || a.roles_ != b.roles_) return false;
    for (std::size_t s = 0; s < a.keys_.size(); ++s) {
      if (a.keys_[s].size() != b.keys_[s].size()) return false;
      for (std::size_t p = 0; p < a.keys_[s].size(); ++p)
        if (!bit_equal(a.keys_[s][p], b.keys_[s][p]) || !bit_equal(a.values_[s][p], b.values_[s][p]))
          return false;
    }
    return true;
  }

 private:
  std::size_t slot(int layer, int head) const {
    require(layer >= 0 && layer < n_layers_ && head >= 0 && head < n_heads_,
            ErrorKind::kPrecondition,
            "KVCache: (layer " + std::to_string(layer) + ", head " + std::to_string(head) +
                ") out of range");
    return static_cast<std::size_t>(layer * n_heads_ + head);
  }

  std::string model_id_;
  int n_layers_ = 0;
  int n_heads_ = 0;
  int d_head_ = 0;
  std::vector<TurnRole> roles_;
  std::vector<std::vector<Vec>> keys_;
  std::vector<std::vector<Vec>> values_;
};

}  // namespace pvl
