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

// KV-cache lifecycle: prefill (sequential and layer-synchronous), transfer
// encoding, model-change rebuild, divergence and post-hoc editing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "pvl/binary.hpp"
#include "pvl/cache.hpp"
#include "pvl/model.hpp"
#include "pvl/transcript.hpp"

namespace pvl {

inline KVCache prefill(const Model& m, const TokenStream& s, const Hooks& hooks = {}) {
  require(!s.tokens.empty(), ErrorKind::kPrecondition, "prefill: empty token list");
  require(s.roles.size() == s.tokens.size(), ErrorKind::kPrecondition, "prefill: roles/tokens length mismatch");
  KVCache cache = m.empty_cache();
  for (std::size_t i = 0; i < s.size(); ++i)
    forward_pass(m, s.tokens[i], static_cast<int>(i), s.roles[i], cache, hooks);
  return cache;
}

inline KVCache prefill(const Model& m, const Transcript& tr) { return prefill(m, tr.flatten(m.vocab())); }

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers over contiguous
// chunks. Work items must be independent.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errs(threads);
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errs[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

inline unsigned default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1u : std::min(hc, 8u);
}

}  // namespace detail

// All positions advance one layer at a time. Each position runs exactly the
// arithmetic of forward_pass, so the cache matches prefill bit for bit.
inline KVCache prefill_parallel(const Model& m, const TokenStream& s, unsigned threads = detail::default_threads()) {
  require(!s.tokens.empty(), ErrorKind::kPrecondition, "prefill: empty token list");
  require(s.roles.size() == s.tokens.size(), ErrorKind::kPrecondition, "prefill: roles/tokens length mismatch");
  const std::size_t n = s.size();
  std::vector<Vec> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = embed(m, s.tokens[i], static_cast<int>(i), s.roles[i]);
  KVCache cache = m.empty_cache();
  cache.open_positions(s.roles);
  std::vector<std::vector<HeadProjection>> proj(n);
  const int H = m.spec().n_heads;
  for (int l = 0; l < m.spec().n_layers; ++l) {
    const auto& L = m.weights().layers[static_cast<std::size_t>(l)];
    detail::parallel_for(n, threads, [&](std::size_t i) { proj[i] = project_heads(m, l, rms_norm(x[i], L.attn_gain)); });
    for (int h = 0; h < H; ++h) {
      std::vector<Vec> ks(n), vs(n);
      for (std::size_t i = 0; i < n; ++i) {
        ks[i] = proj[i][static_cast<std::size_t>(h)].k;
        vs[i] = proj[i][static_cast<std::size_t>(h)].v;
      }
      cache.assign_column(l, h, std::move(ks), std::move(vs));
    }
    detail::parallel_for(n, threads, [&](std::size_t i) {
      Vec a = attention_read(m, l, x[i], proj[i], cache, static_cast<int>(i), nullptr, nullptr);
      x[i] = mlp_forward(m, l, a).residual;
    });
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Transfer encoding

inline constexpr std::uint16_t kCacheFormatVersion = 1;

inline std::string serialize_cache(const KVCache& c) {
  require(c.complete(), ErrorKind::kPrecondition, "serialize_cache: cache has a partially filled position");
  bin::Writer w;
  w.raw("PVKC");
  w.put(kCacheFormatVersion);
  w.str(c.model_id());
  w.put(static_cast<std::uint32_t>(c.n_layers()));
  w.put(static_cast<std::uint32_t>(c.n_heads()));
  w.put(static_cast<std::uint32_t>(c.d_head()));
  w.put(static_cast<std::uint64_t>(c.size()));
  for (TurnRole r : c.roles()) w.put(static_cast<std::uint8_t>(r));
  for (int l = 0; l < c.n_layers(); ++l)
    for (int h = 0; h < c.n_heads(); ++h)
      for (std::size_t p = 0; p < c.size(); ++p) {
        w.f64s(c.key(l, h, p).span());
        w.f64s(c.value(l, h, p).span());
      }
  w.seal();
  return std::move(w).take();
}

inline KVCache deserialize_cache(std::string_view bytes) {
  bin::Reader r(bytes, "cache file");
  r.unseal();
  r.expect("PVKC");
  const auto version = r.get<std::uint16_t>();
  require(version == kCacheFormatVersion, ErrorKind::kData,
          "cache file: unsupported version " + std::to_string(version));
  std::string id = r.str();
  const auto nl = r.get<std::uint32_t>(), nh = r.get<std::uint32_t>(), dh = r.get<std::uint32_t>();
  require(nl > 0 && nh > 0 && dh > 0 && nl < 4096 && nh < 4096 && dh < 65536, ErrorKind::kData,
          "cache file: implausible dimensions");
  const auto n = r.get<std::uint64_t>();
  require(n <= bytes.size(), ErrorKind::kData, "cache file: implausible length");
  std::vector<TurnRole> roles(n);
  for (auto& role : roles) {
    const auto v = r.get<std::uint8_t>();
    require(v < kNumRoles, ErrorKind::kData, "cache file: bad role tag");
    role = static_cast<TurnRole>(v);
  }
  KVCache c(std::move(id), static_cast<int>(nl), static_cast<int>(nh), static_cast<int>(dh));
  c.open_positions(roles);
  for (int l = 0; l < c.n_layers(); ++l)
    for (int h = 0; h < c.n_heads(); ++h) {
      std::vector<Vec> ks(n, Vec(dh)), vs(n, Vec(dh));
      for (std::size_t p = 0; p < n; ++p) {
        r.f64s(ks[p].span());
        r.f64s(vs[p].span());
      }
      c.assign_column(l, h, std::move(ks), std::move(vs));
    }
  r.finish();
  return c;
}

// Deserialization for a specific model: rejects a foreign cache up front.
inline KVCache load_cache_for(const Model& m, std::string_view bytes) {
  KVCache c = deserialize_cache(bytes);
  check_cache_for(m, c);
  return c;
}

// The new model cannot inherit the old cache; it rebuilds from the transcript.
inline KVCache rebuild_for_model(const Transcript& tr, const Model& other) {
  return prefill(other, tr.flatten(other.vocab()));
}

inline constexpr double kDivergenceEps = 1e-12;

// Mean relative distance over aligned key and value vectors.
inline double cache_divergence(const KVCache& a, const KVCache& b) {
  require(a.same_shape(b) && a.size() == b.size() && a.complete() && b.complete(), ErrorKind::kMismatch,
          "cache_divergence: incomparable caches");
  if (a.empty()) return 0.0;
  double sum = 0.0;
  std::size_t count = 0;
  auto rel = [](const Vec& x, const Vec& y) {
    return norm(x - y) / std::max({norm(x), norm(y), kDivergenceEps});
  };
  for (int l = 0; l < a.n_layers(); ++l)
    for (int h = 0; h < a.n_heads(); ++h)
      for (std::size_t p = 0; p < a.size(); ++p) {
        sum += rel(a.key(l, h, p), b.key(l, h, p));
        sum += rel(a.value(l, h, p), b.value(l, h, p));
        count += 2;
      }
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Post-hoc editing

enum class EditTarget { kKeys, kValues, kBoth };

struct CacheSelector {
  int layer_lo = 0;
  int layer_hi = 0;  // inclusive
  std::set<int> heads;  // empty = all
  std::optional<TurnRole> role;
  EditTarget target = EditTarget::kValues;
  std::optional<std::pair<int, int>> positions;  // inclusive, optional

  bool selects(int layer, int head, int pos, TurnRole r) const {
    if (layer < layer_lo || layer > layer_hi) return false;
    if (!heads.empty() && !heads.count(head)) return false;
    if (role && *role != r) return false;
    if (positions && (pos < positions->first || pos > positions->second)) return false;
    return true;
  }
};

struct EditMode {
  enum class Kind { kScale, kSetTo, kAdd } kind = Kind::kScale;
  double amount = 1.0;
  static EditMode scale(double f) { return {Kind::kScale, f}; }
  static EditMode set_to(double v) { return {Kind::kSetTo, v}; }
  static EditMode add(double d) { return {Kind::kAdd, d}; }
  double apply(double proj) const {
    switch (kind) {
      case Kind::kScale: return proj * amount;
      case Kind::kSetTo: return amount;
      case Kind::kAdd: return proj + amount;
    }
    return proj;
  }
};

struct EditReport {
  std::size_t count = 0;    // entries transformed by the mode
  std::size_t changed = 0;  // entries whose bits actually changed
  double mean_abs_delta = 0.0;
  std::vector<std::pair<int, int>> skipped_heads;  // (layer, head) where d maps to zero
  bool empty_selection() const noexcept { return count == 0; }
};

namespace detail {

inline void edit_vec(Vec& x, const Vec& u, const EditMode& mode, EditReport& rep, double& dsum) {
  const double p = dot(x, u);
  const double delta = mode.apply(p) - p;
  ++rep.count;
  dsum += std::abs(delta);
  if (delta == 0.0) return;
  axpy(delta, u, x);
  ++rep.changed;
}

inline void check_selector(const KVCache& c, const CacheSelector& sel) {
  require(sel.layer_lo >= 0 && sel.layer_lo <= sel.layer_hi && sel.layer_hi < c.n_layers(),
          ErrorKind::kPrecondition, "CacheSelector: layer range out of bounds");
  for (int h : sel.heads)
    require(h >= 0 && h < c.n_heads(), ErrorKind::kPrecondition, "CacheSelector: head out of bounds");
}

template <class DirFor>
EditReport edit_impl(KVCache& c, const CacheSelector& sel, const EditMode& mode, DirFor dir_for) {
  check_selector(c, sel);
  EditReport rep;
  double dsum = 0.0;
  for (int l = sel.layer_lo; l <= sel.layer_hi; ++l)
    for (int h = 0; h < c.n_heads(); ++h) {
      if (!sel.heads.empty() && !sel.heads.count(h)) continue;
      auto uk = dir_for(l, h, false);
      auto uv = dir_for(l, h, true);
      const bool do_k = sel.target != EditTarget::kValues, do_v = sel.target != EditTarget::kKeys;
      if ((do_k && !uk) || (do_v && !uv)) rep.skipped_heads.emplace_back(l, h);
      for (std::size_t p = 0; p < c.size(); ++p) {
        if (!sel.selects(l, h, static_cast<int>(p), c.role(p))) continue;
        if (do_k && uk) edit_vec(c.key(l, h, p), *uk, mode, rep, dsum);
        if (do_v && uv) edit_vec(c.value(l, h, p), *uv, mode, rep, dsum);
      }
    }
  if (rep.count) rep.mean_abs_delta = dsum / static_cast<double>(rep.count);
  return rep;
}

}  // namespace detail

// Edit with a direction that already lives in head space (dim == d_head).
inline EditReport edit_cache(KVCache& c, const CacheSelector& sel, const Direction& d, const EditMode& mode) {
  check_same_dim(d.dim(), static_cast<std::size_t>(c.d_head()), "edit_cache direction (head space)");
  const Vec u = d.unit();
  return detail::edit_impl(c, sel, mode, [&](int, int, bool) { return std::optional<Vec>(u); });
}

// Edit with a residual-space direction (dim == d_model). Each head sees
// normalize(W_V d) for values and normalize(W_K d) for keys; heads where the
// image vanishes are skipped and listed in the report.
inline EditReport edit_cache(KVCache& c, const CacheSelector& sel, const Direction& d, const EditMode& mode,
                             const Model& m) {
  check_cache_for(m, c);
  check_same_dim(d.dim(), static_cast<std::size_t>(m.spec().d_model), "edit_cache direction (residual space)");
  return detail::edit_impl(c, sel, mode, [&](int l, int h, bool value) -> std::optional<Vec> {
    const auto& hw = m.weights().layers[static_cast<std::size_t>(l)].heads[static_cast<std::size_t>(h)];
    Vec img = matvec(value ? hw.w_v : hw.w_k, d.unit());
    const double n = norm(img);
    if (n == 0.0) return std::nullopt;
    return (1.0 / n) * img;
  });
}

}  // namespace pvl
