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

// Synthetic "planted" models whose persona, decision and plan directions are
// known by construction.
//
// Residual layout (d_model = 64 by default, one basis dim per feature):
//
//   0..2    role features (system, user, assistant), written by role_embed
//   3       persona key: marker and trait tokens advertise it to head 0
//   4, 5    default gateway v and decision u
//   6..8    extra persona traits w1..w3
//   9, 10   default plan direction and an alternative plan slot
//   11      trigger feature, 12..16 countdown features
//   17..29  question topics (12 battery topics + identity)
//   30..47  free; filler tokens get small seeded components here
//   48..63  sinusoidal position code
//
// Every layer carries the same two attention heads:
//   head 0  assistant queries read marker/trait and assistant positions and
//           copy {v, w1..w3, plan} (the persona copy head)
//   head 1  assistant queries read user positions and copy {v, topics}
// User queries in both heads give assistant keys a score so negative that
// their weight underflows to exactly zero, so user-position computation never
// depends on assistant-position state. The MLP at readout_layer writes
// c * <norm(x), v> along u; the unembedding reads topics and u for behavior
// tokens, and the countdown features plus the plan direction for the payoff.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pvl/builders.hpp"
#include "pvl/model.hpp"
#include "pvl/rng.hpp"
#include "pvl/transcript.hpp"

namespace pvl {

namespace planted_dims {
inline constexpr int kSys = 0, kUsr = 1, kAsst = 2, kPersonaKey = 3;
inline constexpr int kGateway = 4, kDecision = 5;
inline constexpr int kTrait0 = 6, kNumTraits = 3;
inline constexpr int kPlan = 9, kPlanAlt = 10;
inline constexpr int kTrigger = 11, kCountdown0 = 12, kMaxCountdown = 5;
inline constexpr int kTopic0 = 17, kNumTopics = 13;
inline constexpr int kFree0 = 30, kFreeEnd = 48;
inline constexpr int kPosDims = 16;
inline constexpr int kMinDModel = kFreeEnd + kPosDims;
}  // namespace planted_dims

inline constexpr int kBatteryTopics = 12;
inline constexpr int kIdentityTopic = 12;

struct BehaviorPair {
  std::string topic;     // question token carrying the topic
  std::string positive;  // emitted when the persona projection is positive
  std::string negative;
};

struct PlanSpec {
  std::string trigger = "nl";
  Direction direction;
  std::string payoff = "rabbit";
  int delay = 5;
};

struct PlantedSpec {
  Direction gateway;
  Direction decision;
  int readout_layer = 3;
  std::vector<BehaviorPair> behavior_table;
  std::optional<PlanSpec> plan;
};

// Construction constants. The defaults are what the tests and experiments use.
struct PlantedKnobs {
  double marker = 0.5;          // |v| written by mark+/mark-
  double trait = 1.0;           // |w_i| written by trait tokens
  double topic = 1.0;
  double assistant_tone = 0.6;  // +v written by the "assist" filler token
  double head0_query = 6.0;
  double head0_asst_key = 0.5;  // relative to the persona key
  double head1_query = 6.0;
  double exclusion = 1e6;       // user-query penalty on assistant keys
  double head0_gain = 0.15;
  double head1_gain = 0.15;
  double topic_gain = 1.0;
  double readout_gain = 20.0;
  double behavior_margin = 4.0;  // u weight in behavior unembedding rows
  double topic_weight = 8.0;
  double filler_weight = 1.0;
  double countdown_weight = 12.0;
  double plan_weight = 8.0;
  double end_bias = 0.5;
  double plan_strength = 0.5;
  double junk = 0.3;
};

inline std::vector<std::string> planted_user_words() {
  return {"hi", "tell", "please", "ask", "dream", "awaken", "aura", "shine"};
}

// User words that pull the persona toward the negative pole and their pull.
inline double planted_user_pull(const std::string& w) {
  if (w == "dream") return -0.5;
  if (w == "awaken") return -1.0;
  if (w == "aura") return -1.5;
  if (w == "shine") return 0.5;
  return 0.0;
}

inline Vocabulary planted_vocabulary() {
  std::vector<std::string> s = {"<system>", "<user>", "<assistant>", "mark+", "mark-"};
  for (int i = 1; i <= planted_dims::kNumTraits; ++i) {
    s.push_back("trait" + std::to_string(i) + "+");
    s.push_back("trait" + std::to_string(i) + "-");
  }
  auto two = [](int i) { return (i < 10 ? "0" : "") + std::to_string(i); };
  for (int i = 0; i < kBatteryTopics; ++i) s.push_back("q" + two(i));
  s.push_back("who");
  for (int i = 0; i < kBatteryTopics; ++i) s.push_back("a" + two(i));
  for (int i = 0; i < kBatteryTopics; ++i) s.push_back("b" + two(i));
  s.push_back("model");
  s.push_back("ghost");
  s.push_back("ok");
  s.push_back("assist");
  for (const auto& w : planted_user_words()) s.push_back(w);
  s.push_back("nl");
  for (int i = 1; i <= planted_dims::kMaxCountdown; ++i) s.push_back("c" + std::to_string(i));
  s.push_back("end");
  s.push_back("rabbit");
  s.push_back("habit");
  return Vocabulary(std::move(s));
}

inline Vec basis(int d_model, int i) {
  Vec e(static_cast<std::size_t>(d_model));
  e[static_cast<std::size_t>(i)] = 1.0;
  return e;
}

inline ModelSpec planted_base_spec() {
  ModelSpec s;
  s.d_model = 64;
  s.n_layers = 6;
  s.n_heads = 4;
  s.d_head = 16;
  s.d_mlp = 16;
  s.n_experts = 1;
  s.d_pos = planted_dims::kPosDims;
  return s;
}

inline std::vector<BehaviorPair> default_behavior_table() {
  std::vector<BehaviorPair> t;
  auto two = [](int i) { return (i < 10 ? "0" : "") + std::to_string(i); };
  for (int i = 0; i < kBatteryTopics; ++i) t.push_back({"q" + two(i), "a" + two(i), "b" + two(i)});
  t.push_back({"who", "model", "ghost"});
  return t;
}

// Default spec: v, u and the plan on their reserved dims, readout at layer 3,
// plan trigger "nl" with payoff "rabbit" after 5 steps.
inline PlantedSpec default_planted_spec(bool with_plan = true, int d_model = 64) {
  PlantedSpec p;
  p.gateway = Direction(basis(d_model, planted_dims::kGateway), 0, "persona");
  p.decision = Direction(basis(d_model, planted_dims::kDecision), 3, "decision");
  p.readout_layer = 3;
  p.behavior_table = default_behavior_table();
  if (with_plan) p.plan = PlanSpec{"nl", Direction(basis(d_model, planted_dims::kPlan), 0, "plan"), "rabbit", 5};
  return p;
}

// Same as default but the trigger plants the alternative plan direction,
// paid off by "habit".
inline PlantedSpec alternative_plan_spec(int d_model = 64) {
  PlantedSpec p = default_planted_spec(true, d_model);
  p.plan->direction = Direction(basis(d_model, planted_dims::kPlanAlt), 0, "plan-alt");
  p.plan->payoff = "habit";
  return p;
}

struct PlantedModel {
  Model model;
  PlantedSpec spec;
  PlantedKnobs knobs;
  std::vector<Direction> traits;  // w1..w3

  const Vocabulary& vocab() const { return model.vocab(); }
  TokenId token(std::string_view s) const { return model.vocab().at(s); }
};

namespace detail {

inline bool in_allowed_region(const Vec& d) {
  using namespace planted_dims;
  for (std::size_t i = 0; i < d.dim(); ++i) {
    const int k = static_cast<int>(i);
    const bool allowed = k == kGateway || k == kDecision || k == kPlan || k == kPlanAlt ||
                         (k >= kFree0 && k < kFreeEnd);
    if (!allowed && std::abs(d[i]) > 1e-12) return false;
  }
  return true;
}

inline void add_outer(Mat& m, std::size_t row, const Vec& dir, double scale) {
  for (std::size_t c = 0; c < dir.dim(); ++c) m(row, c) += scale * dir[c];
}

// Column t of unembed += scale * dir.
inline void add_unembed(Mat& u, TokenId t, const Vec& dir, double scale) {
  for (std::size_t r = 0; r < dir.dim(); ++r) u(r, static_cast<std::size_t>(t)) += scale * dir[r];
}

}  // namespace detail

inline PlantedModel build_planted_model(const PlantedSpec& ps, ModelSpec base, std::uint64_t seed,
                                        const PlantedKnobs& k = {}) {
  using namespace planted_dims;
  const Vocabulary vocab = planted_vocabulary();
  base.vocab_size = static_cast<int>(vocab.size());
  base.d_pos = kPosDims;
  base.n_experts = 1;
  require(base.d_model >= kMinDModel && base.n_heads >= 2 && base.d_head >= 16 && base.d_mlp >= 2,
          ErrorKind::kPrecondition,
          "infeasible planted spec: needs d_model >= " + std::to_string(kMinDModel) +
              ", >= 2 heads of width >= 16 and d_mlp >= 2");
  base.validate();
  const int D = base.d_model;
  require(ps.readout_layer >= 0 && ps.readout_layer < base.n_layers - 1, ErrorKind::kPrecondition,
          "infeasible planted spec: readout_layer must be < n_layers - 1");

  const Vec& v = ps.gateway.unit();
  const Vec& u = ps.decision.unit();
  require(v.dim() == static_cast<std::size_t>(D) && u.dim() == v.dim(), ErrorKind::kDimension,
          "planted directions must have dimension d_model");
  require(std::abs(dot(v, u)) <= 1e-8, ErrorKind::kPrecondition,
          "infeasible planted spec: gateway and decision are not orthogonal");
  require(detail::in_allowed_region(v) && detail::in_allowed_region(u), ErrorKind::kPrecondition,
          "infeasible planted spec: gateway/decision overlap reserved features");
  if (ps.plan) {
    const Vec& p = ps.plan->direction.unit();
    require(p.dim() == v.dim() && detail::in_allowed_region(p), ErrorKind::kPrecondition,
            "infeasible planted spec: plan direction overlaps reserved features");
    require(std::abs(dot(p, v)) <= 1e-8 && std::abs(dot(p, u)) <= 1e-8, ErrorKind::kPrecondition,
            "infeasible planted spec: plan direction not orthogonal to v and u");
    require(ps.plan->delay >= 2 && ps.plan->delay <= kMaxCountdown + 1, ErrorKind::kPrecondition,
            "plan delay must be in [2, " + std::to_string(kMaxCountdown + 1) + "]");
  }
  for (const auto& b : ps.behavior_table) {
    require(vocab.find(b.topic) && vocab.find(b.positive) && vocab.find(b.negative),
            ErrorKind::kPrecondition, "behavior table names unknown tokens");
  }

  auto e = [&](int i) { return basis(D, i); };
  std::vector<Direction> traits;
  for (int i = 0; i < kNumTraits; ++i)
    traits.emplace_back(e(kTrait0 + i), 0, "trait" + std::to_string(i + 1));

  ModelSpec spec = base;
  spec.model_id = "planted-" + std::to_string(seed) + "-v" + std::to_string(argmax(v.span())) +
                  (ps.plan ? "-p" + std::to_string(argmax(ps.plan->direction.unit().span())) : "");
  ModelWeights w = zero_weights(spec);
  auto tok = [&](std::string_view s) { return static_cast<std::size_t>(vocab.at(s)); };
  auto add_embed = [&](std::string_view s, const Vec& dir, double scale) {
    auto row = w.embed.row(tok(s));
    for (std::size_t i = 0; i < dir.dim(); ++i) row[i] += scale * dir[i];
  };

  // Role embedding.
  w.role_embed(0, kSys) = 1.0;
  w.role_embed(1, kUsr) = 1.0;
  w.role_embed(2, kAsst) = 1.0;

  // Token embeddings.
  add_embed("mark+", e(kPersonaKey), 1.0);
  add_embed("mark+", v, k.marker);
  add_embed("mark-", e(kPersonaKey), 1.0);
  add_embed("mark-", v, -k.marker);
  for (int i = 0; i < kNumTraits; ++i) {
    const std::string n = "trait" + std::to_string(i + 1);
    add_embed(n + "+", e(kPersonaKey), 1.0);
    add_embed(n + "+", traits[static_cast<std::size_t>(i)].unit(), k.trait);
    add_embed(n + "-", e(kPersonaKey), 1.0);
    add_embed(n + "-", traits[static_cast<std::size_t>(i)].unit(), -k.trait);
  }
  const std::vector<BehaviorPair> topic_table = default_behavior_table();
  for (int i = 0; i < kNumTopics; ++i)
    add_embed(topic_table[static_cast<std::size_t>(i)].topic, e(kTopic0 + i), k.topic);
  add_embed("assist", v, k.assistant_tone);
  for (const auto& word : planted_user_words()) {
    const double pull = planted_user_pull(word);
    if (pull != 0.0) add_embed(word, v, pull);
  }
  // Small seeded identity components for filler words, outside every
  // mechanism's read subspace.
  {
    Rng rng(seed);
    std::vector<std::string> filler = {"ok", "assist", "end"};
    for (const auto& word : planted_user_words()) filler.push_back(word);
    for (const auto& f : filler) {
      auto row = w.embed.row(tok(f));
      for (int i = kFree0 + 8; i < kFreeEnd; ++i) row[static_cast<std::size_t>(i)] += k.junk * rng.normal() / 3.0;
    }
  }
  if (ps.plan) {
    add_embed(ps.plan->trigger, e(kTrigger), 1.0);
    add_embed(ps.plan->trigger, ps.plan->direction.unit(), k.plan_strength);
  }
  for (int i = 0; i < kMaxCountdown; ++i) add_embed("c" + std::to_string(i + 1), e(kCountdown0 + i), 1.0);

  // Attention: identical heads 0 and 1 at every layer.
  const std::vector<Vec> persona_dirs = [&] {
    std::vector<Vec> d = {v};
    for (const auto& t : traits) d.push_back(t.unit());
    if (ps.plan) d.push_back(ps.plan->direction.unit());
    return d;
  }();
  std::vector<Vec> context_dirs = {v};
  for (int i = 0; i < kNumTopics; ++i) context_dirs.push_back(e(kTopic0 + i));

  for (int l = 0; l < spec.n_layers; ++l) {
    auto& L = w.layers[static_cast<std::size_t>(l)];
    {
      auto& H = L.heads[0];
      detail::add_outer(H.w_q, 0, e(kAsst), k.head0_query);
      detail::add_outer(H.w_k, 0, e(kPersonaKey), 1.0);
      detail::add_outer(H.w_k, 0, e(kAsst), k.head0_asst_key);
      detail::add_outer(H.w_q, 1, e(kUsr), k.exclusion);
      detail::add_outer(H.w_k, 1, e(kAsst), -1.0);
      for (std::size_t i = 0; i < persona_dirs.size(); ++i) {
        detail::add_outer(H.w_v, i, persona_dirs[i], 1.0);
        for (std::size_t r = 0; r < static_cast<std::size_t>(D); ++r) H.w_o(r, i) += k.head0_gain * persona_dirs[i][r];
      }
    }
    {
      auto& H = L.heads[1];
      detail::add_outer(H.w_q, 0, e(kAsst), k.head1_query);
      detail::add_outer(H.w_k, 0, e(kUsr), 1.0);
      detail::add_outer(H.w_q, 1, e(kUsr), k.exclusion);
      detail::add_outer(H.w_k, 1, e(kAsst), -1.0);
      for (std::size_t i = 0; i < context_dirs.size(); ++i) {
        detail::add_outer(H.w_v, i, context_dirs[i], 1.0);
        const double g = i == 0 ? k.head1_gain : k.topic_gain;
        for (std::size_t r = 0; r < static_cast<std::size_t>(D); ++r) H.w_o(r, i) += g * context_dirs[i][r];
      }
    }
  }

  // Readout MLP: gelu(Gz) - gelu(-Gz) = Gz, so the output is exactly linear
  // in z = <norm(x), v>.
  {
    auto& X = w.layers[static_cast<std::size_t>(ps.readout_layer)].experts[0];
    const double G = 4.0;
    detail::add_outer(X.w_in, 0, v, G);
    detail::add_outer(X.w_in, 1, v, -G);
    for (std::size_t r = 0; r < static_cast<std::size_t>(D); ++r) {
      X.w_out(r, 0) += k.readout_gain / G * u[r];
      X.w_out(r, 1) -= k.readout_gain / G * u[r];
    }
  }

  // Unembedding.
  auto add_un = [&](std::string_view s, const Vec& dir, double scale) {
    detail::add_unembed(w.unembed, static_cast<TokenId>(tok(s)), dir, scale);
  };
  for (std::size_t i = 0; i < ps.behavior_table.size(); ++i) {
    const auto& b = ps.behavior_table[i];
    const auto topic_idx = [&] {
      for (std::size_t j = 0; j < topic_table.size(); ++j)
        if (topic_table[j].topic == b.topic) return static_cast<int>(j);
      return -1;
    }();
    require(topic_idx >= 0, ErrorKind::kPrecondition, "behavior topic '" + b.topic + "' unknown");
    add_un(b.positive, e(kTopic0 + topic_idx), k.topic_weight);
    add_un(b.positive, u, k.behavior_margin);
    add_un(b.negative, e(kTopic0 + topic_idx), k.topic_weight);
    add_un(b.negative, u, -k.behavior_margin);
  }
  add_un("ok", e(kAsst), k.filler_weight);
  if (ps.plan) {
    const int steps = ps.plan->delay - 1;  // countdown tokens c1..c{steps}
    add_un("c1", e(kTrigger), k.countdown_weight);
    for (int i = 1; i < steps; ++i)
      add_un("c" + std::to_string(i + 1), e(kCountdown0 + i - 1), k.countdown_weight);
    const Vec now = e(kCountdown0 + steps - 1);
    add_un("end", now, k.countdown_weight + k.end_bias);
    add_un(ps.plan->payoff, now, k.countdown_weight);
    add_un(ps.plan->payoff, ps.plan->direction.unit(), k.plan_weight);
  }

  return PlantedModel{Model(std::move(spec), std::move(w), vocab), ps, k, std::move(traits)};
}

}  // namespace pvl
