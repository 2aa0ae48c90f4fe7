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

// Incremental decoding over a KV cache.

#pragma once

#include <cstdint>
#include <utility>

#include "pvl/model.hpp"
#include "pvl/rng.hpp"
#include "pvl/transcript.hpp"

namespace pvl {

struct DecodePolicy {
  enum class Mode { kGreedy, kSample };
  Mode mode = Mode::kGreedy;
  std::uint64_t seed = 0;
  double temperature = 1.0;

  static DecodePolicy greedy() { return {}; }
  static DecodePolicy sample(std::uint64_t seed, double temperature = 1.0) {
    return {Mode::kSample, seed, temperature};
  }
};

// A model, its growing cache and the logits of the last token fed.
class Session {
 public:
  explicit Session(const Model& m, Hooks hooks = {})
      : model_(&m), hooks_(std::move(hooks)), cache_(m.empty_cache()) {}

  // Continues from a cache built elsewhere (transfer). The last position is
  // dropped and re-run to regenerate its logits; forward passes are
  // deterministic so the cache is unchanged by this.
  static Session resume(const Model& m, KVCache cache, const TokenStream& stream, Hooks hooks = {}) {
    check_cache_for(m, cache);
    require(cache.complete() && cache.size() == stream.size() && !stream.tokens.empty(),
            ErrorKind::kMismatch, "resume: cache length does not match transcript");
    require(cache.roles() == stream.roles, ErrorKind::kMismatch,
            "resume: cache roles do not match transcript");
    Session s(m, std::move(hooks));
    s.cache_ = std::move(cache);
    s.cache_.truncate(stream.size() - 1);
    s.tokens_.assign(stream.tokens.begin(), stream.tokens.end() - 1);
    s.feed(stream.tokens.back(), stream.roles.back());
    return s;
  }

  const Vec& feed(TokenId t, TurnRole role) {
    logits_ = forward_pass(*model_, t, static_cast<int>(cache_.size()), role, cache_, hooks_);
    tokens_.push_back(t);
    return logits_;
  }

  void feed_stream(const TokenStream& s, std::size_t from = 0) {
    for (std::size_t i = from; i < s.size(); ++i) feed(s.tokens[i], s.roles[i]);
  }

  const Model& model() const noexcept { return *model_; }
  const KVCache& cache() const noexcept { return cache_; }
  KVCache& cache() noexcept { return cache_; }
  KVCache take_cache() && { return std::move(cache_); }
  const Vec& last_logits() const noexcept { return logits_; }
  std::size_t position() const noexcept { return cache_.size(); }
  const std::vector<TokenId>& tokens() const noexcept { return tokens_; }
  const Hooks& hooks() const noexcept { return hooks_; }
  void set_hooks(Hooks h) { hooks_ = std::move(h); }

 private:
  const Model* model_;
  Hooks hooks_;
  KVCache cache_;
  Vec logits_;
  std::vector<TokenId> tokens_;
};

inline TokenId pick_token(const Vec& logits, const DecodePolicy& policy, Rng& rng) {
  require(logits.dim() > 0, ErrorKind::kPrecondition, "empty vocabulary");
  if (policy.mode == DecodePolicy::Mode::kGreedy) return static_cast<TokenId>(argmax(logits.span()));
  require(policy.temperature > 0.0, ErrorKind::kPrecondition, "temperature must be positive");
  Vec scaled = (1.0 / policy.temperature) * logits;
  Vec p = softmax(scaled);
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    cum += p[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(p.dim() - 1);
}

// Emits n_new tokens into the transcript's trailing assistant turn (opening one,
// with its header token, if the last turn is not the assistant's). Every
// emitted token is fed, so the cache covers the whole transcript afterwards.
inline void continue_generation(Session& s, Transcript& tr, int n_new, const DecodePolicy& policy,
                                Rng& rng) {
  require(n_new >= 0, ErrorKind::kPrecondition, "n_new must be non-negative");
  if (n_new == 0) return;
  const auto& vocab = s.model().vocab();
  if (tr.empty() || tr.turns().back().role != TurnRole::kAssistant) {
    tr.add_turn_tokens(vocab, TurnRole::kAssistant, {});
    if (auto h = vocab.header(TurnRole::kAssistant)) s.feed(*h, TurnRole::kAssistant);
  }
  require(s.position() > 0, ErrorKind::kPrecondition, "generation needs at least one fed token");
  for (int i = 0; i < n_new; ++i) {
    TokenId t = pick_token(s.last_logits(), policy, rng);
    tr.extend_last(vocab, t);
    s.feed(t, TurnRole::kAssistant);
  }
}

struct Generation {
  Transcript transcript;
  KVCache cache;
};

inline Generation generate_with_cache(const Model& m, const Transcript& transcript, int n_new,
                                      const DecodePolicy& policy = {}, const Hooks& hooks = {}) {
  require(n_new >= 0, ErrorKind::kPrecondition, "n_new must be non-negative");
  Session s(m, hooks);
  s.feed_stream(transcript.flatten(m.vocab()));
  Transcript out = transcript;
  Rng rng(policy.seed);
  continue_generation(s, out, n_new, policy, rng);
  return {std::move(out), std::move(s).take_cache()};
}

inline Transcript generate(const Model& m, const Transcript& transcript, int n_new,
                           const DecodePolicy& policy = {}, const Hooks& hooks = {}) {
  if (n_new == 0) return transcript;
  return generate_with_cache(m, transcript, n_new, policy, hooks).transcript;
}

}  // namespace pvl
