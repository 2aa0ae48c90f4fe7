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

// Decoder-only toy transformer.
//
//   x  = embed[token] + role_embed[role] + sinusoid(pos)
//   per layer:  x <- hooks(x)                              (layer entry)
//               x += sum_h W_O^h attn_h(rms_norm(x))       (writes K/V to cache)
//               x += expert(rms_norm(x)) + mlp_bias        (dense when n_experts == 1)
//   logits = unembed^T rms_norm(x)

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pvl/cache.hpp"
#include "pvl/error.hpp"
#include "pvl/numcore.hpp"
#include "pvl/transcript.hpp"

namespace pvl {

struct ModelSpec {
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_head = 0;
  int d_mlp = 0;
  int vocab_size = 0;
  int n_experts = 1;
  int d_pos = -1;  // trailing dims carrying the positional code; -1 means d_model
  std::string model_id;

  int pos_dims() const { return d_pos < 0 ? d_model : d_pos; }

  void validate() const {
    require(d_model > 0 && n_layers > 0 && n_heads > 0 && d_head > 0 && d_mlp > 0 &&
                vocab_size > 0 && n_experts >= 1,
            ErrorKind::kPrecondition, "ModelSpec: all sizes must be positive");
    require(n_heads * d_head == d_model, ErrorKind::kPrecondition,
            "ModelSpec: n_heads * d_head must equal d_model");
    require(pos_dims() <= d_model, ErrorKind::kPrecondition, "ModelSpec: d_pos exceeds d_model");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct HeadWeights {
  Mat w_q, w_k, w_v;  // d_head x d_model
  Mat w_o;            // d_model x d_head
  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

struct ExpertWeights {
  Mat w_in;   // d_mlp x d_model
  Mat w_out;  // d_model x d_mlp
  friend bool operator==(const ExpertWeights&, const ExpertWeights&) = default;
};

struct LayerWeights {
  Vec attn_gain;
  std::vector<HeadWeights> heads;
  Vec mlp_gain;
  Mat router;  // n_experts x d_model; empty for a dense layer
  std::vector<ExpertWeights> experts;
  Vec mlp_bias;
  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  Mat embed;       // vocab x d_model
  Mat role_embed;  // 3 x d_model
  std::vector<LayerWeights> layers;
  Vec final_gain;
  Mat unembed;  // d_model x vocab
  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

// Calls f(name, mat) / f(name, vec) for every tensor in serialization order.
template <typename Weights, typename MatFn, typename VecFn>
void for_each_tensor(Weights& w, MatFn&& on_mat, VecFn&& on_vec) {
  on_mat("embed", w.embed);
  on_mat("role_embed", w.role_embed);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& L = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    on_vec(p + "attn_gain", L.attn_gain);
    for (std::size_t h = 0; h < L.heads.size(); ++h) {
      const std::string hp = p + "heads." + std::to_string(h) + ".";
      on_mat(hp + "w_q", L.heads[h].w_q);
      on_mat(hp + "w_k", L.heads[h].w_k);
      on_mat(hp + "w_v", L.heads[h].w_v);
      on_mat(hp + "w_o", L.heads[h].w_o);
    }
    on_vec(p + "mlp_gain", L.mlp_gain);
    if (L.experts.size() > 1) on_mat(p + "router", L.router);
    for (std::size_t e = 0; e < L.experts.size(); ++e) {
      const std::string ep = p + "experts." + std::to_string(e) + ".";
      on_mat(ep + "w_in", L.experts[e].w_in);
      on_mat(ep + "w_out", L.experts[e].w_out);
    }
    on_vec(p + "mlp_bias", L.mlp_bias);
  }
  on_vec("final_gain", w.final_gain);
  on_mat("unembed", w.unembed);
}

// Zero-initialized weights of the right shapes (gains set to one).
inline ModelWeights zero_weights(const ModelSpec& s) {
  s.validate();
  const auto D = static_cast<std::size_t>(s.d_model), H = static_cast<std::size_t>(s.d_head),
             M = static_cast<std::size_t>(s.d_mlp), V = static_cast<std::size_t>(s.vocab_size),
             E = static_cast<std::size_t>(s.n_experts);
  ModelWeights w;
  w.embed = Mat(V, D);
  w.role_embed = Mat(kNumRoles, D);
  for (int l = 0; l < s.n_layers; ++l) {
    LayerWeights L;
    L.attn_gain = Vec(D, 1.0);
    for (int h = 0; h < s.n_heads; ++h) L.heads.push_back({Mat(H, D), Mat(H, D), Mat(H, D), Mat(D, H)});
    L.mlp_gain = Vec(D, 1.0);
    if (E > 1) L.router = Mat(E, D);
    for (std::size_t e = 0; e < E; ++e) L.experts.push_back({Mat(M, D), Mat(D, M)});
    L.mlp_bias = Vec(D);
    w.layers.push_back(std::move(L));
  }
  w.final_gain = Vec(D, 1.0);
  w.unembed = Mat(D, V);
  return w;
}

class Model {
 public:
  Model(ModelSpec spec, ModelWeights weights, Vocabulary vocab)
      : spec_(std::move(spec)), weights_(std::move(weights)), vocab_(std::move(vocab)) {
    validate();
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const ModelWeights& weights() const noexcept { return weights_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const std::string& id() const noexcept { return spec_.model_id; }

  KVCache empty_cache() const {
    return KVCache(spec_.model_id, spec_.n_layers, spec_.n_heads, spec_.d_head);
  }

 private:
  void validate() const {
    spec_.validate();
    require(vocab_.size() == static_cast<std::size_t>(spec_.vocab_size), ErrorKind::kDimension,
            "vocabulary has " + std::to_string(vocab_.size()) + " symbols, spec says " +
                std::to_string(spec_.vocab_size));
    const ModelWeights ref = zero_weights(spec_);
    require(weights_.layers.size() == ref.layers.size(), ErrorKind::kDimension,
            "weights: layer count does not match spec");
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    for_each_tensor(
        ref, [&](const std::string&, const Mat& m) { shapes.emplace_back(m.rows(), m.cols()); },
        [&](const std::string&, const Vec& v) { shapes.emplace_back(v.dim(), 0); });
    std::size_t i = 0;
    bool ok = true;
    std::string bad;
    for_each_tensor(
        weights_,
        [&](const std::string& name, const Mat& m) {
          if (i >= shapes.size() || shapes[i] != std::make_pair(m.rows(), m.cols()) ||
              !all_finite(m.span())) {
            if (ok) bad = name;
            ok = false;
          }
          ++i;
        },
        [&](const std::string& name, const Vec& v) {
          if (i >= shapes.size() || shapes[i] != std::make_pair(v.dim(), std::size_t{0}) ||
              !all_finite(v.span())) {
            if (ok) bad = name;
            ok = false;
          }
          ++i;
        });
    require(ok && i == shapes.size(), ErrorKind::kDimension,
            "weights: tensor '" + bad + "' has the wrong shape or non-finite entries");
  }

  ModelSpec spec_;
  ModelWeights weights_;
  Vocabulary vocab_;
};

// ---------------------------------------------------------------------------
// Hooks

enum class Site : std::uint8_t {
  kEmbed,        // embedding output, before any hook (layer 0 only)
  kBlockInput,   // residual entering layer l after hooks
  kAttnOut,      // after the attention residual add
  kBlockOutput,  // after the MLP residual add
};

inline const char* to_string(Site s) {
  switch (s) {
    case Site::kEmbed: return "embed";
    case Site::kBlockInput: return "block_input";
    case Site::kAttnOut: return "attn_out";
    case Site::kBlockOutput: return "block_output";
  }
  return "?";
}

struct ResidualSite {
  int layer = 0;
  int pos = 0;
  TurnRole role = TurnRole::kUser;
};

// Modifies the residual stream at the entry of a layer. Implementations must be
// immutable so one instance can serve concurrent runs.
class ResidualHook {
 public:
  virtual ~ResidualHook() = default;
  virtual void apply(const ResidualSite& site, Vec& residual) const = 0;
};

struct AttentionStreamRecord {
  int layer = 0;
  int head = 0;
  int src_pos = 0;
  int dst_pos = 0;
  double weight = 0.0;
  Vec value_contribution;  // d_model, after W_O
};

class ForwardObserver {
 public:
  virtual ~ForwardObserver() = default;
  virtual bool wants_streams() const { return false; }
  virtual void on_residual(Site, const ResidualSite&, const Vec&) {}
  virtual void on_attention(const AttentionStreamRecord&) {}
  virtual void on_expert(const ResidualSite&, int /*expert*/) {}
  virtual void on_logits(int /*pos*/, const Vec&) {}
};

struct ExpertOverride {
  int layer = 0;
  int pos = -1;  // -1: every position
  int expert = 0;
};

struct Hooks {
  std::vector<std::shared_ptr<const ResidualHook>> residual;
  ForwardObserver* observer = nullptr;
  std::vector<ExpertOverride> expert_overrides;

  std::optional<int> forced_expert(int layer, int pos) const {
    for (const auto& o : expert_overrides)
      if (o.layer == layer && (o.pos < 0 || o.pos == pos)) return o.expert;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Forward computation

inline Vec positional_code(int d_model, int d_pos, int pos) {
  Vec pe(static_cast<std::size_t>(d_model));
  const int off = d_model - d_pos;
  for (int i = 0; i < d_pos; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_pos));
    pe[static_cast<std::size_t>(off + i)] = std::sin(pos * freq);
    if (i + 1 < d_pos) pe[static_cast<std::size_t>(off + i + 1)] = std::cos(pos * freq);
  }
  return pe;
}

inline void check_token(const Model& m, TokenId t) {
  require(t >= 0 && t < m.spec().vocab_size, ErrorKind::kPrecondition,
          "token id " + std::to_string(t) + " out of range [0, " +
              std::to_string(m.spec().vocab_size) + ")");
}

// Row lookup; the role and positional terms are added when supplied.
inline Vec embed(const Model& m, TokenId token, std::optional<int> pos = std::nullopt,
                 std::optional<TurnRole> role = std::nullopt) {
  check_token(m, token);
  Vec x = m.weights().embed.row_vec(static_cast<std::size_t>(token));
  if (role) {
    auto r = m.weights().role_embed.row(static_cast<std::size_t>(*role));
    for (std::size_t i = 0; i < x.dim(); ++i) x[i] += r[i];
  }
  if (pos) {
    require(*pos >= 0, ErrorKind::kPrecondition, "negative position");
    Vec pe = positional_code(m.spec().d_model, m.spec().pos_dims(), *pos);
    for (std::size_t i = 0; i < x.dim(); ++i) x[i] += pe[i];
  }
  return x;
}

struct HeadProjection {
  Vec q, k, v;
};

inline std::vector<HeadProjection> project_heads(const Model& m, int layer, const Vec& normed) {
  const auto& L = m.weights().layers[static_cast<std::size_t>(layer)];
  std::vector<HeadProjection> out;
  out.reserve(L.heads.size());
  for (const auto& h : L.heads)
    out.push_back({matvec(h.w_q, normed), matvec(h.w_k, normed), matvec(h.w_v, normed)});
  return out;
}

struct AttentionResult {
  Vec residual;                   // residual after the attention add
  std::vector<KVEntry> new_entries;  // this token's (k, v) per head
  std::vector<AttentionStreamRecord> streams;
};

// Attention for one head at `pos` against cache positions 0..pos (the current
// token's own entry must already be in the cache). Returns the weights and the
// mixed value vector.
inline std::pair<Vec, Vec> attend_head(const KVCache& cache, int layer, int head, int pos,
                                       const Vec& q) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(cache.d_head()));
  Vec scores(static_cast<std::size_t>(pos + 1));
  for (int j = 0; j <= pos; ++j)
    scores[static_cast<std::size_t>(j)] = dot(q, cache.key(layer, head, static_cast<std::size_t>(j))) * scale;
  Vec w = softmax(scores);
  Vec mix(static_cast<std::size_t>(cache.d_head()));
  for (int j = 0; j <= pos; ++j)
    axpy(w[static_cast<std::size_t>(j)], cache.value(layer, head, static_cast<std::size_t>(j)), mix);
  return {std::move(w), std::move(mix)};
}

// Second half of attention once the layer's K/V for `pos` are cached: mixes
// values, projects through W_O and adds to the residual.
inline Vec attention_read(const Model& m, int layer, const Vec& residual,
                          const std::vector<HeadProjection>& proj, const KVCache& cache,
                          int pos, ForwardObserver* observer,
                          std::vector<AttentionStreamRecord>* streams_out) {
  const auto& L = m.weights().layers[static_cast<std::size_t>(layer)];
  const bool want = (observer && observer->wants_streams()) || streams_out;
  Vec attn(residual.dim());
  for (int h = 0; h < m.spec().n_heads; ++h) {
    auto [w, mix] = attend_head(cache, layer, h, pos, proj[static_cast<std::size_t>(h)].q);
    const auto& W_O = L.heads[static_cast<std::size_t>(h)].w_o;
    attn += matvec(W_O, mix);
    if (want) {
      for (int j = 0; j <= pos; ++j) {
        AttentionStreamRecord r{layer, h, j, pos, w[static_cast<std::size_t>(j)],
                                matvec(W_O, w[static_cast<std::size_t>(j)] *
                                                cache.value(layer, h, static_cast<std::size_t>(j)))};
        if (observer && observer->wants_streams()) observer->on_attention(r);
        if (streams_out) streams_out->push_back(std::move(r));
      }
    }
  }
  return residual + attn;
}

// Appends this token's K/V for `layer` to the cache. The cache must have
// `pos` open and hold positions 0..pos-1 at this layer.
inline void attention_write(int layer, int pos, const std::vector<HeadProjection>& proj,
                            KVCache& cache) {
  for (std::size_t h = 0; h < proj.size(); ++h)
    cache.append(layer, static_cast<int>(h), static_cast<std::size_t>(pos), proj[h].k, proj[h].v);
}

inline void check_cache_for(const Model& m, const KVCache& cache) {
  require(cache.model_id() == m.id(), ErrorKind::kMismatch,
          "KV cache belongs to model '" + cache.model_id() + "', not '" + m.id() + "'");
  require(cache.n_layers() == m.spec().n_layers && cache.n_heads() == m.spec().n_heads &&
              cache.d_head() == m.spec().d_head,
          ErrorKind::kMismatch, "KV cache shape does not match model");
}

// Full attention sublayer: norm, project, cache write, read. `cache` must have
// `pos` open (see KVCache::open_position).
inline AttentionResult attention_forward(const Model& m, int layer, const Vec& residual,
                                         KVCache& cache, int pos, const Hooks& hooks = {}) {
  check_cache_for(m, cache);
  require(layer >= 0 && layer < m.spec().n_layers, ErrorKind::kPrecondition, "layer out of range");
  require(pos >= 0 && static_cast<std::size_t>(pos) + 1 == cache.size(), ErrorKind::kPrecondition,
          "attention_forward: position " + std::to_string(pos) + " is not the open cache position");
  const auto& L = m.weights().layers[static_cast<std::size_t>(layer)];
  Vec normed = rms_norm(residual, L.attn_gain);
  auto proj = project_heads(m, layer, normed);
  attention_write(layer, pos, proj, cache);
  AttentionResult out;
  for (std::size_t h = 0; h < proj.size(); ++h)
    out.new_entries.push_back({proj[h].k, proj[h].v, layer, static_cast<int>(h), pos,
                               cache.role(static_cast<std::size_t>(pos))});
  out.residual = attention_read(m, layer, residual, proj, cache, pos, hooks.observer, &out.streams);
  return out;
}

struct MlpResult {
  Vec residual;
  int expert = 0;
};

inline int route(const Model& m, int layer, const Vec& normed) {
  const auto& L = m.weights().layers[static_cast<std::size_t>(layer)];
  if (L.experts.size() <= 1) return 0;
  Vec scores = matvec(L.router, normed);
  return static_cast<int>(argmax(scores.span()));
}

inline MlpResult mlp_forward(const Model& m, int layer, const Vec& residual,
                             std::optional<int> forced_expert = std::nullopt) {
  require(layer >= 0 && layer < m.spec().n_layers, ErrorKind::kPrecondition, "layer out of range");
  const auto& L = m.weights().layers[static_cast<std::size_t>(layer)];
  Vec normed = rms_norm(residual, L.mlp_gain);
  int e = forced_expert ? *forced_expert : route(m, layer, normed);
  require(e >= 0 && static_cast<std::size_t>(e) < L.experts.size(), ErrorKind::kPrecondition,
          "expert index out of range");
  const auto& X = L.experts[static_cast<std::size_t>(e)];
  Vec h = matvec(X.w_in, normed);
  for (auto& x : h) x = gelu(x);
  Vec out = residual + matvec(X.w_out, h);
  out += L.mlp_bias;
  return {std::move(out), e};
}

inline Vec unembed(const Model& m, const Vec& residual) {
  return matvec_t(m.weights().unembed, rms_norm(residual, m.weights().final_gain));
}

// Residual at the entry of `layer` after hooks, with observer notification.
inline void enter_layer(const Hooks& hooks, const ResidualSite& site, Vec& x) {
  for (const auto& h : hooks.residual) h->apply(site, x);
  if (hooks.observer) hooks.observer->on_residual(Site::kBlockInput, site, x);
}

// One token through every layer. Opens a new cache position, appends its K/V
// at each layer and returns next-token logits.
inline Vec forward_pass(const Model& m, TokenId token, int pos, TurnRole role, KVCache& cache,
                        const Hooks& hooks = {}) {
  check_cache_for(m, cache);
  require(pos >= 0 && static_cast<std::size_t>(pos) == cache.size() && cache.complete(),
          ErrorKind::kPrecondition,
          "forward_pass: cache holds " + std::to_string(cache.size()) +
              " positions, expected pos " + std::to_string(pos));
  Vec x = embed(m, token, pos, role);
  cache.open_position(role);
  if (hooks.observer) hooks.observer->on_residual(Site::kEmbed, {0, pos, role}, x);
  for (int l = 0; l < m.spec().n_layers; ++l) {
    const ResidualSite site{l, pos, role};
    enter_layer(hooks, site, x);
    const auto& L = m.weights().layers[static_cast<std::size_t>(l)];
    Vec normed = rms_norm(x, L.attn_gain);
    auto proj = project_heads(m, l, normed);
    attention_write(l, pos, proj, cache);
    x = attention_read(m, l, x, proj, cache, pos, hooks.observer, nullptr);
    if (hooks.observer) hooks.observer->on_residual(Site::kAttnOut, site, x);
    auto mlp = mlp_forward(m, l, x, hooks.forced_expert(l, pos));
    x = std::move(mlp.residual);
    if (hooks.observer) {
      hooks.observer->on_expert(site, mlp.expert);
      hooks.observer->on_residual(Site::kBlockOutput, site, x);
    }
  }
  Vec logits = unembed(m, x);
  if (hooks.observer) hooks.observer->on_logits(pos, logits);
  return logits;
}

}  // namespace pvl
