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

// Persona vectors: contrastive extraction, runtime steering, activation
// capping, steering folded into weights, and single-layer sweeps.

#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvl/generate.hpp"
#include "pvl/model.hpp"
#include "pvl/trace.hpp"

namespace pvl {

enum class Phase { kGenerationOnly, kUserOnly, kAll };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::kGenerationOnly: return "generation_only";
    case Phase::kUserOnly: return "user_only";
    case Phase::kAll: return "all";
  }
  return "?";
}

inline Phase phase_from_string(std::string_view s) {
  if (s == "generation_only") return Phase::kGenerationOnly;
  if (s == "user_only") return Phase::kUserOnly;
  if (s == "all") return Phase::kAll;
  fail(ErrorKind::kPrecondition, "unknown phase '" + std::string(s) + "'");
}

// generation_only covers every assistant-role position (the model's own
// turn, header included); user_only covers user-role positions.
inline bool phase_matches(Phase p, TurnRole r) {
  switch (p) {
    case Phase::kGenerationOnly: return r == TurnRole::kAssistant;
    case Phase::kUserOnly: return r == TurnRole::kUser;
    case Phase::kAll: return true;
  }
  return false;
}

struct LayerRange {
  int lo = 0;
  int hi = 0;  // inclusive
  bool contains(int l) const noexcept { return l >= lo && l <= hi; }
  static LayerRange single(int l) { return {l, l}; }
};

inline void check_range(const Model& m, const LayerRange& r) {
  require(r.lo >= 0 && r.lo <= r.hi && r.hi < m.spec().n_layers, ErrorKind::kPrecondition,
          "layer range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "] outside model");
}

struct SteeringPlan {
  Direction direction;
  LayerRange layers;
  double alpha = 0.0;
  Phase phase = Phase::kAll;
};

struct CapPlan {
  Direction direction;
  LayerRange layers;
  double threshold = 0.0;
  Phase phase = Phase::kGenerationOnly;
};

class SteeringHook : public ResidualHook {
 public:
  explicit SteeringHook(SteeringPlan plan) : plan_(std::move(plan)) {
    require(std::isfinite(plan_.alpha), ErrorKind::kPrecondition, "steering alpha must be finite");
  }
  void apply(const ResidualSite& s, Vec& x) const override {
    if (plan_.alpha == 0.0 || !plan_.layers.contains(s.layer) || !phase_matches(plan_.phase, s.role)) return;
    axpy(plan_.alpha, plan_.direction.unit(), x);
  }
  const SteeringPlan& plan() const noexcept { return plan_; }

 private:
  SteeringPlan plan_;
};

// One-sided clamp: a projection below tau is raised to tau. The correction is
// repeated with a growing step until rounding can no longer leave it below.
class CapHook : public ResidualHook {
 public:
  explicit CapHook(CapPlan plan) : plan_(std::move(plan)) {
    require(!std::isnan(plan_.threshold), ErrorKind::kPrecondition, "cap threshold must not be NaN");
  }
  void apply(const ResidualSite& s, Vec& x) const override {
    if (!plan_.layers.contains(s.layer) || !phase_matches(plan_.phase, s.role)) return;
    const Vec& u = plan_.direction.unit();
    const double tau = plan_.threshold;
    double p = dot(x, u);
    if (p >= tau) return;
    axpy(tau - p, u, x);
    double nudge = std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(tau));
    for (int i = 0; i < 64 && (p = dot(x, u)) < tau; ++i, nudge *= 2) axpy(tau - p + nudge, u, x);
    require(dot(x, u) >= tau, ErrorKind::kConvergence, "cap hook could not reach threshold");
  }
  const CapPlan& plan() const noexcept { return plan_; }

 private:
  CapPlan plan_;
};

inline std::shared_ptr<ResidualHook> steering_hook(const SteeringPlan& plan) {
  return std::make_shared<SteeringHook>(plan);
}
inline std::shared_ptr<ResidualHook> cap_hook(const CapPlan& plan) { return std::make_shared<CapHook>(plan); }

// Attach-time checks against a concrete model.
inline Hooks& attach(Hooks& h, const Model& m, const SteeringPlan& plan) {
  check_range(m, plan.layers);
  check_same_dim(plan.direction.dim(), static_cast<std::size_t>(m.spec().d_model), "steering direction");
  h.residual.push_back(steering_hook(plan));
  return h;
}
inline Hooks& attach(Hooks& h, const Model& m, const CapPlan& plan) {
  check_range(m, plan.layers);
  check_same_dim(plan.direction.dim(), static_cast<std::size_t>(m.spec().d_model), "cap direction");
  h.residual.push_back(cap_hook(plan));
  return h;
}

// ---------------------------------------------------------------------------
// Extraction

inline constexpr int kDefaultResponseTokens = 4;

// Mean residual at the entry of `layer` over the positions of the generated
// assistant turn (header included), pooled over prompts.
inline Vec mean_response_activation(const Model& m, const std::vector<Transcript>& prompts, int layer,
                                    int n_new = kDefaultResponseTokens, const Hooks& hooks = {}) {
  require(!prompts.empty(), ErrorKind::kPrecondition, "need at least one prompt");
  require(n_new >= 1, ErrorKind::kPrecondition, "need at least one response token");
  check_range(m, LayerRange::single(layer));
  Vec sum(static_cast<std::size_t>(m.spec().d_model));
  std::size_t count = 0;
  for (const auto& p : prompts) {
    const std::size_t start = p.flatten(m.vocab()).size();
    TracedRun run = trace_run(m, p, n_new, hooks, {}, false);
    for (std::size_t pos = start; pos < run.trace.positions(); ++pos) {
      sum += run.trace.residual(Site::kBlockInput, layer, static_cast<int>(pos));
      ++count;
    }
  }
  return (1.0 / static_cast<double>(count)) * sum;
}

inline Direction extract_direction(const Model& m, const std::vector<Transcript>& positive,
                                   const std::vector<Transcript>& negative, int layer,
                                   int n_new = kDefaultResponseTokens, std::string label = "persona") {
  require(!positive.empty() && !negative.empty(), ErrorKind::kPrecondition,
          "extract_direction: need at least one prompt per side");
  Vec diff = mean_response_activation(m, positive, layer, n_new) - mean_response_activation(m, negative, layer, n_new);
  require(norm(diff) > 0.0, ErrorKind::kDegenerate, "extract_direction: degenerate contrast (zero difference)");
  return Direction(diff, layer, std::move(label));
}

// ---------------------------------------------------------------------------
// Fine-tune as bias

// Adds alpha * unit to the residual at the entry of `layer` for every token:
// through the previous layer's MLP bias, or through every embedding row when
// layer == 0. alpha == 0 returns an exact copy.
inline Model fold_bias(const Model& m, const Direction& d, double alpha, int layer) {
  check_range(m, LayerRange::single(layer));
  check_same_dim(d.dim(), static_cast<std::size_t>(m.spec().d_model), "fold direction");
  require(std::isfinite(alpha), ErrorKind::kPrecondition, "fold alpha must be finite");
  ModelWeights w = m.weights();
  ModelSpec spec = m.spec();
  if (alpha != 0.0) {
    if (layer > 0) {
      axpy(alpha, d.unit(), w.layers[static_cast<std::size_t>(layer - 1)].mlp_bias);
    } else {
      for (std::size_t r = 0; r < w.embed.rows(); ++r) {
        auto row = w.embed.row(r);
        for (std::size_t i = 0; i < row.size(); ++i) row[i] += alpha * d.unit()[i];
      }
    }
    std::ostringstream id;
    id.precision(17);
    id << spec.model_id << "+fold(" << d.label() << "," << layer << "," << alpha << ")";
    spec.model_id = id.str();
  }
  return Model(std::move(spec), std::move(w), m.vocab());
}

// ---------------------------------------------------------------------------
// Probes

// A context whose next token is read as a binary behavior.
struct Probe {
  std::string label;
  Transcript context;
  TokenId positive = 0;
  TokenId negative = 0;
};

struct ProbeOutcome {
  TokenId emitted = 0;
  int score = 0;  // +1 positive, -1 negative, 0 neither
  double margin = 0.0;  // logit(positive) - logit(negative)
};

// One decoded token under `policy` (margin left at zero).
inline ProbeOutcome run_probe(const Model& m, const Probe& p, const Hooks& hooks = {},
                              const DecodePolicy& policy = {}) {
  Session s(m, hooks);
  Transcript tr = p.context;
  s.feed_stream(tr.flatten(m.vocab()));
  Rng rng(policy.seed);
  continue_generation(s, tr, 1, policy, rng);
  ProbeOutcome o;
  o.emitted = tr.turns().back().tokens.back();
  o.score = o.emitted == p.positive ? 1 : (o.emitted == p.negative ? -1 : 0);
  return o;
}

// Greedy outcome plus the logit margin at the decision point.
inline ProbeOutcome probe_margin(const Model& m, const Probe& p, const Hooks& hooks = {}) {
  Session s(m, hooks);
  TokenStream st = p.context.flatten(m.vocab());
  s.feed_stream(st);
  if (p.context.empty() || p.context.turns().back().role != TurnRole::kAssistant)
    if (auto h = m.vocab().header(TurnRole::kAssistant)) s.feed(*h, TurnRole::kAssistant);
  const Vec& lg = s.last_logits();
  ProbeOutcome o;
  o.emitted = static_cast<TokenId>(argmax(lg.span()));
  o.score = o.emitted == p.positive ? 1 : (o.emitted == p.negative ? -1 : 0);
  o.margin = lg[static_cast<std::size_t>(p.positive)] - lg[static_cast<std::size_t>(p.negative)];
  return o;
}

struct SuiteResult {
  std::vector<ProbeOutcome> outcomes;
  int positives() const {
    int n = 0;
    for (const auto& o : outcomes) n += o.score > 0;
    return n;
  }
  int negatives() const {
    int n = 0;
    for (const auto& o : outcomes) n += o.score < 0;
    return n;
  }
  double mean_score() const {
    if (outcomes.empty()) return 0.0;
    double s = 0.0;
    for (const auto& o : outcomes) s += o.score;
    return s / static_cast<double>(outcomes.size());
  }
};

inline SuiteResult run_suite(const Model& m, const std::vector<Probe>& suite, const Hooks& hooks = {}) {
  require(!suite.empty(), ErrorKind::kPrecondition, "empty probe suite");
  SuiteResult r;
  for (const auto& p : suite) r.outcomes.push_back(probe_margin(m, p, hooks));
  return r;
}

// Number of probes whose emitted token differs between two runs.
inline int count_flips(const SuiteResult& a, const SuiteResult& b) {
  require(a.outcomes.size() == b.outcomes.size(), ErrorKind::kMismatch, "suite results differ in size");
  int n = 0;
  for (std::size_t i = 0; i < a.outcomes.size(); ++i) n += a.outcomes[i].emitted != b.outcomes[i].emitted;
  return n;
}

// Fraction of probes flipped by steering at each single layer.
inline std::vector<double> layer_sweep(const Model& m, const Direction& d, double alpha,
                                       const std::vector<Probe>& suite, Phase phase = Phase::kAll) {
  require(!suite.empty(), ErrorKind::kPrecondition, "layer_sweep: empty probe suite");
  const SuiteResult base = run_suite(m, suite);
  std::vector<double> curve;
  for (int l = 0; l < m.spec().n_layers; ++l) {
    Hooks h;
    attach(h, m, SteeringPlan{d, LayerRange::single(l), alpha, phase});
    curve.push_back(static_cast<double>(count_flips(base, run_suite(m, suite, h))) /
                    static_cast<double>(suite.size()));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Direction files

inline nlohmann::json direction_to_json(const Direction& d) {
  return {{"label", d.label()}, {"layer", d.layer()}, {"dim", d.dim()}, {"unit", d.unit().values()}};
}

inline Direction direction_from_json(const nlohmann::json& j) {
  try {
    auto unit = j.at("unit").get<std::vector<double>>();
    require(unit.size() == j.at("dim").get<std::size_t>(), ErrorKind::kData, "direction: dim mismatch");
    Vec v(std::move(unit));
    require(std::abs(norm(v) - 1.0) <= 1e-10, ErrorKind::kData, "direction: unit vector is not normalized");
    return Direction(v, j.at("layer").get<int>(), j.value("label", std::string()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed direction: ") + e.what());
  }
}

}  // namespace pvl
