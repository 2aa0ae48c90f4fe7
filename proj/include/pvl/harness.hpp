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

// Experiment runners. Each returns an ExperimentReport whose pass flag is
// recomputed from its metrics and the configured thresholds.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvl/builders.hpp"
#include "pvl/kvcache.hpp"
#include "pvl/persona.hpp"
#include "pvl/planted.hpp"
#include "pvl/probes.hpp"
#include "pvl/report.hpp"
#include "pvl/trace.hpp"

#ifndef PVL_DATA_DIR
#define PVL_DATA_DIR "data"
#endif
#ifndef PVL_CONFIG_DIR
#define PVL_CONFIG_DIR "config"
#endif

namespace pvl {

inline std::string data_path(const std::string& rel) { return std::string(PVL_DATA_DIR) + "/" + rel; }

inline std::string default_thresholds_path() {
  if (const char* p = std::getenv("PVL_THRESHOLDS")) return p;
  return std::string(PVL_CONFIG_DIR) + "/thresholds.json";
}

inline ThresholdTable load_thresholds(const std::string& path = default_thresholds_path()) {
  return thresholds_from_json(read_json_file(path));
}

// Settings shared by the planted experiments.
// Full-scale figures the planted experiments are analogs of. Documentation
// only; no threshold is derived from them.
namespace reference {
inline constexpr int kEditLayerLo = 32, kEditLayerHi = 47;
inline constexpr double kEditScale = 0.15;
inline constexpr int kIdentitySamples = 10, kFurtherProbes = 12;
inline constexpr double kAuraScoreBefore = 5.5, kAuraScoreAfter = 2.1;
inline constexpr double kMisalignedRate = 0.50, kControlRate = 0.0;
inline constexpr int kStreamsAtToken101 = 64000;  // 8 heads, 80 layers, 100 prior positions
}  // namespace reference

struct PlantedSetup {
  std::uint64_t seed = 1;
  int monitor_layer = 2;
  LayerRange cap_layers{0, 3};
  double cap_tau = 0.25;
  LayerRange edit_band{1, 3};
  double edit_factor = 1.15;
  int identity_repeats = 10;
  double steer_alpha = 2.0;
  int fold_layer_pre = 1;
  double plan_threshold = 0.25;
  int plan_layer = 1;

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"monitor_layer", monitor_layer},
            {"cap_layers", {cap_layers.lo, cap_layers.hi}},
            {"cap_tau", cap_tau},
            {"edit_band", {edit_band.lo, edit_band.hi}},
            {"edit_factor", edit_factor},
            {"identity_repeats", identity_repeats},
            {"steer_alpha", steer_alpha},
            {"fold_layer_pre", fold_layer_pre},
            {"plan_threshold", plan_threshold},
            {"plan_layer", plan_layer}};
  }
};

class Harness {
 public:
  explicit Harness(ThresholdTable thresholds, std::string out_dir = {})
      : thresholds_(std::move(thresholds)), out_dir_(std::move(out_dir)) {}

  const ThresholdTable& thresholds() const noexcept { return thresholds_; }

  ExperimentReport finish(ExperimentReport r) const {
    auto it = thresholds_.find(r.experiment_id);
    require(it != thresholds_.end(), ErrorKind::kData, "no thresholds configured for '" + r.experiment_id + "'");
    r.thresholds = it->second;
    r.decide();
    if (!out_dir_.empty()) r.write(out_dir_);
    return r;
  }

  // -------------------------------------------------------------------------
  ExperimentReport prefill_equivalence(std::uint64_t model_seed, std::uint64_t transcript_seed, int len,
                                       int n_experts = 2) const {
    require(len >= 2 && len <= 256, ErrorKind::kPrecondition, "prefill-equivalence: len must be in [2, 256]");
    const Vocabulary vocab = generic_vocabulary(24);
    const Model m = random_model(small_spec(n_experts), vocab, model_seed);
    const Transcript prompt = random_transcript(vocab, transcript_seed, 3);
    Generation g = generate_with_cache(m, prompt, len);
    const TokenStream s = g.transcript.flatten(vocab);
    ExperimentReport r = equivalence_report(g.cache, prefill(m, s), prefill_parallel(m, s));
    r.config = {{"model_seed", model_seed}, {"transcript_seed", transcript_seed}, {"len", len},
                {"n_experts", n_experts}, {"positions", s.size()}};
    return finish(std::move(r));
  }

  // Metrics only; exposed so a perturbed cache can serve as a negative control.
  static ExperimentReport equivalence_report(const KVCache& generated, const KVCache& pre, const KVCache& par) {
    ExperimentReport r;
    r.experiment_id = "prefill-equivalence";
    r.metrics["divergence_prefill"] = cache_divergence(generated, pre);
    r.metrics["divergence_parallel"] = cache_divergence(generated, par);
    r.metrics["bit_equal_prefill"] = bit_equal(generated, pre);
    r.metrics["bit_equal_parallel"] = bit_equal(generated, par);
    return r;
  }

  // -------------------------------------------------------------------------
  // Continuations of n_new tokens after `script`, interrupted at each split
  // (a count of tokens already generated). Variant (c) may run the remainder
  // under another model to show a model change breaks equivalence.
  ExperimentReport serving_transfer(const Model& m, const Transcript& script, int n_new,
                                    const std::vector<int>& splits, const Model* rebuild_model = nullptr) const {
    int prev = 0;
    for (int s : splits) {
      require(s > prev && s < n_new, ErrorKind::kPrecondition, "serving-transfer: splits must increase within (0, n_new)");
      prev = s;
    }
    const DecodePolicy policy;
    auto run = [&](int mode) {
      const Model* cur = &m;
      Session s(m);
      s.feed_stream(script.flatten(m.vocab()));
      Transcript tr = script;
      Rng rng(policy.seed);
      int done = 0;
      for (std::size_t k = 0; k <= splits.size(); ++k) {
        const int upto = k < splits.size() ? splits[k] : n_new;
        continue_generation(s, tr, upto - done, policy, rng);
        done = upto;
        if (k == splits.size()) break;
        const TokenStream st = tr.flatten(m.vocab());
        if (mode == 1) {
          // Server hop with the cache shipped as bytes.
          KVCache moved = load_cache_for(*cur, serialize_cache(s.cache()));
          s = Session::resume(*cur, std::move(moved), st);
        } else if (mode == 2) {
          // Server hop that rebuilds the cache from the transcript.
          if (rebuild_model) cur = rebuild_model;
          Session fresh(*cur);
          fresh.feed_stream(st);
          s = std::move(fresh);
        }
      }
      return tr.turns().back().tokens;
    };
    const auto a = run(0), b = run(1), c = run(2);
    ExperimentReport r;
    r.experiment_id = "serving-transfer";
    r.config = {{"model_id", m.id()}, {"n_new", n_new}, {"splits", splits},
                {"rebuild_model", rebuild_model ? rebuild_model->id() : m.id()}};
    r.metrics["match_transfer"] = a == b;
    r.metrics["match_prefill"] = a == c;
    r.metrics["tokens"] = static_cast<double>(a.size());
    if (rebuild_model) r.notes.push_back("variant (c) rebuilt under a different model: divergence expected");
    return finish(std::move(r));
  }

  // -------------------------------------------------------------------------
  struct ModelChange {
    double divergence = 0.0;
    bool endings_differ = false;
    std::string ending_a, ending_b;
  };

  static ModelChange compare_models(const Model& a, const Model& b, const Transcript& script, int n_new) {
    require(a.vocab() == b.vocab(), ErrorKind::kMismatch, "model change: vocabularies differ");
    ModelChange mc;
    const KVCache ca = prefill(a, script);
    const KVCache cb = rebuild_for_model(script, b);
    mc.divergence = cache_divergence(ca, cb);
    const auto ga = generate(a, script, n_new), gb = generate(b, script, n_new);
    mc.ending_a = a.vocab().symbol(ga.turns().back().tokens.back());
    mc.ending_b = b.vocab().symbol(gb.turns().back().tokens.back());
    mc.endings_differ = ga.turns().back().tokens != gb.turns().back().tokens;
    return mc;
  }

  // Divergence from two differently seeded random models; endings from two
  // planted models whose plans differ.
  ExperimentReport model_change(std::uint64_t seed_a, std::uint64_t seed_b, const PlantedModel& plan_a,
                                const PlantedModel& plan_b, const Transcript& plan_script) const {
    const Vocabulary vocab = generic_vocabulary(24);
    const Model a = random_model(small_spec(), vocab, seed_a), b = random_model(small_spec(), vocab, seed_b);
    const Transcript tr = random_transcript(vocab, seed_a + seed_b, 4);
    const ModelChange rnd = compare_models(a, b, tr, 4);
    const int n = plan_a.spec.plan ? plan_a.spec.plan->delay : 4;
    const ModelChange pl = compare_models(plan_a.model, plan_b.model, plan_script, n);
    ExperimentReport r;
    r.experiment_id = "model-change";
    r.config = {{"seed_a", seed_a}, {"seed_b", seed_b}, {"plan_model_a", plan_a.model.id()},
                {"plan_model_b", plan_b.model.id()}};
    r.metrics["divergence"] = rnd.divergence;
    r.metrics["plan_divergence"] = pl.divergence;
    r.metrics["plan_endings_differ"] = pl.endings_differ;
    r.notes.push_back("plan endings: " + pl.ending_a + " vs " + pl.ending_b);
    return finish(std::move(r));
  }

  // -------------------------------------------------------------------------
  ExperimentReport mini1(const Model& m, const Transcript& drift, const Direction& axis, const PlantedSetup& cfg) const {
    check_range(m, cfg.cap_layers);
    const TracedRun base = trace_transcript(m, drift, {}, false);
    Hooks h;
    attach(h, m, CapPlan{axis, cfg.cap_layers, cfg.cap_tau, Phase::kGenerationOnly});
    const TracedRun cap = trace_transcript(m, drift, h, false);
    const ProjectionSeries sb = projection_series(base.trace, axis, cfg.monitor_layer);
    const ProjectionSeries sc = projection_series(cap.trace, axis, cfg.monitor_layer);

    ExperimentReport r;
    r.experiment_id = "mini1";
    r.config = cfg.to_json();
    r.config["axis"] = axis.label();
    double user_delta = 0.0, slack = std::numeric_limits<double>::infinity();
    bool any_user = false, identical = true;
    for (const auto& [key, xb] : base.trace.residuals) {
      const Vec& xc = cap.trace.residuals.at(key);
      identical = identical && bit_equal(xb, xc);
      const int pos = std::get<2>(key);
      if (base.trace.roles[static_cast<std::size_t>(pos)] == TurnRole::kUser) {
        any_user = true;
        for (std::size_t i = 0; i < xb.dim(); ++i) user_delta = std::max(user_delta, std::abs(xb[i] - xc[i]));
      }
    }
    for (std::size_t p = 0; p < cap.trace.positions(); ++p) {
      if (cap.trace.roles[p] != TurnRole::kAssistant) continue;
      for (int l = cfg.cap_layers.lo; l <= cfg.cap_layers.hi; ++l)
        slack = std::min(slack, project(cap.trace.residual(Site::kBlockInput, l, static_cast<int>(p)), axis) - cfg.cap_tau);
    }
    if (any_user) r.metrics["user_delta_max"] = user_delta;
    if (std::isfinite(slack)) r.metrics["cap_slack_min"] = slack;
    r.metrics["runs_identical"] = identical;
    const auto ab = sb.of_role(TurnRole::kAssistant);
    double rise = 0.0;
    for (std::size_t i = 1; i < ab.size(); ++i) rise = std::max(rise, ab[i].mean_projection - ab[i - 1].mean_projection);
    r.metrics["baseline_assistant_max_rise"] = rise;
    if (!ab.empty()) r.metrics["baseline_assistant_drop"] = ab.front().mean_projection - ab.back().mean_projection;

    std::ostringstream csv;
    csv.precision(17);
    csv << "condition,turn,role,mean_projection\n";
    for (const auto& [name, s] : {std::pair{"uncapped", &sb}, std::pair{"capped", &sc}})
      for (const auto& p : s->points) csv << name << ',' << p.turn << ',' << to_string(p.role) << ',' << p.mean_projection << '\n';
    r.csv["series.csv"] = csv.str();
    auto lines = split_by_role(sb, " (uncapped)");
    for (auto& l : split_by_role(sc, " (capped)")) lines.push_back(std::move(l));
    r.svg["series.svg"] = svg_lines("projection on axis per turn", lines);
    return finish(std::move(r));
  }

  // -------------------------------------------------------------------------
  struct Mini2Result {
    ExperimentReport report;
    double min_flip_factor = 0.0;  // 0 when no factor up to 4 flips
  };

  // Session over the script with the cache edited along `axis`.
  static Session edited_session(const PlantedModel& pm, const Transcript& script, const Direction& axis,
                                const LayerRange& band, double factor, EditReport* rep = nullptr) {
    Session s(pm.model);
    s.feed_stream(script.flatten(pm.vocab()));
    CacheSelector sel{band.lo, band.hi, {}, TurnRole::kAssistant, EditTarget::kValues, std::nullopt};
    EditReport e = edit_cache(s.cache(), sel, axis, EditMode::scale(factor), pm.model);
    if (rep) *rep = e;
    return s;
  }

  // Asks one follow-up question on a copy of the session. Returns the
  // logits at the answer position.
  static Vec ask(const PlantedModel& pm, Session s, const Transcript& script, const BehaviorPair& b) {
    const Probe p = followup_probe(pm, script, b);
    s.feed_stream(p.context.flatten(pm.vocab()), s.position());
    if (auto h = pm.vocab().header(TurnRole::kAssistant)) s.feed(*h, TurnRole::kAssistant);
    return s.last_logits();
  }

  static int answer_sign(const PlantedModel& pm, const Vec& logits, const BehaviorPair& b) {
    const TokenId t = static_cast<TokenId>(argmax(logits.span()));
    return t == pm.token(b.positive) ? 1 : (t == pm.token(b.negative) ? -1 : 0);
  }

  static double min_flip_factor(const PlantedModel& pm, const Transcript& script, const Direction& axis,
                                const LayerRange& band) {
    const auto& who = identity_pair(pm);
    auto sign_at = [&](double f) { return answer_sign(pm, ask(pm, edited_session(pm, script, axis, band, f), script, who), who); };
    const int base = sign_at(1.0);
    double lo = 1.0, hi = 4.0;
    if (sign_at(hi) == base) return 0.0;
    for (int i = 0; i < 50; ++i) {
      const double mid = 0.5 * (lo + hi);
      (sign_at(mid) == base ? lo : hi) = mid;
    }
    return hi;
  }

  ExperimentReport mini2(const PlantedModel& pm, const Transcript& script, const Direction& axis,
                         const PlantedSetup& cfg, double factor) const {
    require(factor > 0.0, ErrorKind::kPrecondition, "mini2: factor must be positive");
    const auto& who = identity_pair(pm);
    const auto battery = battery_pairs(pm);
    require(!battery.empty(), ErrorKind::kPrecondition, "mini2: empty probe set");
    const Session before = edited_session(pm, script, axis, cfg.edit_band, 1.0);
    EditReport rep;
    const Session after = edited_session(pm, script, axis, cfg.edit_band, factor, &rep);

    const Vec who_before = ask(pm, before, script, who), who_after = ask(pm, after, script, who);
    int flips = 0, positive_after = 0, sample_pos_before = 0, sample_pos_after = 0;
    for (int i = 0; i < cfg.identity_repeats; ++i) {
      // Greedy decoding: every repeat is the same deterministic question.
      const int b = answer_sign(pm, ask(pm, before, script, who), who);
      const int a = answer_sign(pm, ask(pm, after, script, who), who);
      flips += a != b;
      positive_after += a > 0;
      Rng rb(cfg.seed * 1000 + static_cast<std::uint64_t>(i)), ra(cfg.seed * 1000 + static_cast<std::uint64_t>(i));
      const DecodePolicy sp = DecodePolicy::sample(cfg.seed * 1000 + static_cast<std::uint64_t>(i));
      sample_pos_before += pick_token(who_before, sp, rb) == pm.token(who.positive);
      sample_pos_after += pick_token(who_after, sp, ra) == pm.token(who.positive);
    }
    double score_before = 0.0, score_after = 0.0;
    for (const auto& b : battery) {
      score_before += answer_sign(pm, ask(pm, before, script, b), b);
      score_after += answer_sign(pm, ask(pm, after, script, b), b);
    }
    score_before /= static_cast<double>(battery.size());
    score_after /= static_cast<double>(battery.size());

    ExperimentReport r;
    r.experiment_id = "mini2";
    r.config = cfg.to_json();
    r.config["factor"] = factor;
    r.config["model_id"] = pm.model.id();
    r.metrics["identity_flips_greedy"] = flips;
    r.metrics["identity_positive_after"] = positive_after;
    r.metrics["identity_margin_before"] = who_before[static_cast<std::size_t>(pm.token(who.positive))] -
                                          who_before[static_cast<std::size_t>(pm.token(who.negative))];
    r.metrics["identity_margin_after"] = who_after[static_cast<std::size_t>(pm.token(who.positive))] -
                                         who_after[static_cast<std::size_t>(pm.token(who.negative))];
    r.metrics["identity_samples_positive_before"] = sample_pos_before;
    r.metrics["identity_samples_positive_after"] = sample_pos_after;
    r.metrics["battery_score_before"] = score_before;
    r.metrics["battery_score_after"] = score_after;
    r.metrics["battery_crossed"] = (score_before < 0.0 && score_after > 0.0) || (score_before > 0.0 && score_after < 0.0);
    r.metrics["edited_entries"] = static_cast<double>(rep.count);
    r.metrics["edit_mean_abs_delta"] = rep.mean_abs_delta;
    r.metrics["min_flip_factor"] = min_flip_factor(pm, script, axis, cfg.edit_band);
    return finish(std::move(r));
  }

  // -------------------------------------------------------------------------
  // Probes flipped into the direction of sign(alpha) relative to `base`.
  static int directed_flips(const SuiteResult& base, const SuiteResult& after, double alpha) {
    const int want = alpha > 0 ? 1 : -1;
    int n = 0;
    for (std::size_t i = 0; i < base.outcomes.size(); ++i)
      n += base.outcomes[i].score != want && after.outcomes[i].score == want;
    return n;
  }

  ExperimentReport gateway(const PlantedModel& pm, const PlantedSetup& cfg) const {
    const Model& m = pm.model;
    const Direction& v = pm.spec.gateway;
    const int post = pm.spec.readout_layer + 1;
    ExperimentReport r;
    r.experiment_id = "gateway";
    r.config = cfg.to_json();
    r.config["readout_layer"] = pm.spec.readout_layer;
    std::ostringstream csv;
    csv << "alpha,layer,flip_rate\n";
    std::vector<SvgSeries> curves;
    for (double alpha : {cfg.steer_alpha, -cfg.steer_alpha}) {
      const std::string tag = alpha > 0 ? "pos" : "neg";
      // Start from the opposite persona so flips are visible.
      const auto suite = planted_probe_suite(pm, alpha > 0 ? -1 : 1);
      const SuiteResult base = run_suite(m, suite);
      r.metrics["fold_pre_flips_" + tag] = directed_flips(base, run_suite(fold_bias(m, v, alpha, cfg.fold_layer_pre), suite), alpha);
      r.metrics["fold_post_flips_" + tag] = count_flips(base, run_suite(fold_bias(m, v, alpha, post), suite));
      Hooks pre, late;
      attach(pre, m, SteeringPlan{v, {0, pm.spec.readout_layer}, alpha, Phase::kAll});
      attach(late, m, SteeringPlan{v, {post, m.spec().n_layers - 1}, alpha, Phase::kAll});
      r.metrics["steer_pre_flips_" + tag] = directed_flips(base, run_suite(m, suite, pre), alpha);
      r.metrics["steer_post_flips_" + tag] = count_flips(base, run_suite(m, suite, late));
      const auto curve = layer_sweep(m, v, alpha, suite);
      double pre_min = 1.0, post_max = 0.0;
      SvgSeries sv{"alpha " + detail::fmt(alpha, 1), {}, {}};
      for (int l = 0; l < static_cast<int>(curve.size()); ++l) {
        csv << alpha << ',' << l << ',' << curve[static_cast<std::size_t>(l)] << '\n';
        (l <= pm.spec.readout_layer ? pre_min = std::min(pre_min, curve[static_cast<std::size_t>(l)])
                                    : post_max = std::max(post_max, curve[static_cast<std::size_t>(l)]));
        sv.x.push_back(l);
        sv.y.push_back(curve[static_cast<std::size_t>(l)]);
      }
      curves.push_back(std::move(sv));
      r.metrics["sweep_pre_min_" + tag] = pre_min;
      r.metrics["sweep_post_max_" + tag] = post_max;
    }
    r.metrics["suite_size"] = kSuiteSize;
    r.csv["layer_sweep.csv"] = csv.str();
    r.svg["layer_sweep.svg"] = svg_lines("flip rate by steered layer", curves, "layer", "flip rate");
    return finish(std::move(r));
  }

  // -------------------------------------------------------------------------
  ExperimentReport plan_persistence(const PlantedModel& pm, const Transcript& script, const PlantedSetup& cfg,
                                    int horizon = -1) const {
    require(pm.spec.plan.has_value(), ErrorKind::kPrecondition, "plan-persistence: no plan planted");
    const PlanSpec& plan = *pm.spec.plan;
    const Model& m = pm.model;
    const TokenStream st = script.flatten(m.vocab());
    const TokenId trig = pm.token(plan.trigger), payoff = pm.token(plan.payoff);
    if (horizon < 0) horizon = plan.delay + 1;
    ExperimentReport r;
    r.experiment_id = "plan-persistence";
    r.config = cfg.to_json();
    r.config["delay"] = plan.delay;
    r.config["horizon"] = horizon;
    int t = -1;
    for (std::size_t i = 0; i < st.size(); ++i)
      if (st.tokens[i] == trig) t = static_cast<int>(i);
    const TracedRun run = trace_transcript(m, script, {}, false);
    const int probe_pos = t >= 0 ? t : static_cast<int>(st.size()) - 1;
    r.metrics["plan_projection"] = project(run.trace.residual(Site::kBlockInput, cfg.plan_layer, probe_pos), plan.direction);
    r.metrics["trigger_found"] = t >= 0;

    auto continuation = [&](bool zero_plan) {
      Session s(m);
      s.feed_stream(st);
      if (zero_plan && t >= 0) {
        CacheSelector sel{0, m.spec().n_layers - 1, {}, std::nullopt, EditTarget::kValues, std::pair{t, t}};
        edit_cache(s.cache(), sel, plan.direction, EditMode::set_to(0.0), m);
      }
      Transcript tr = script;
      Rng rng(0);
      continue_generation(s, tr, horizon, {}, rng);
      return tr.flatten(m.vocab()).tokens;
    };
    const auto normal = continuation(false), zeroed = continuation(true);
    int payoff_at = -1;
    for (std::size_t i = st.size(); i < normal.size(); ++i)
      if (normal[i] == payoff) {
        payoff_at = static_cast<int>(i);
        break;
      }
    // Past the horizon neither the payoff nor the effect of zeroing can be seen.
    const bool observable = t < 0 || t + plan.delay < static_cast<int>(normal.size());
    if (observable) {
      if (t >= 0) r.metrics["payoff_delay_error"] = payoff_at < 0 ? 1e9 : std::abs((payoff_at - t) - plan.delay);
      r.metrics["ending_changed"] = normal != zeroed;
    } else {
      r.notes.push_back("payoff beyond horizon: not observable");
    }
    r.metrics["payoff_observed"] = payoff_at >= 0;
    std::string a, b;
    for (std::size_t i = st.size(); i < normal.size(); ++i) a += m.vocab().symbol(normal[i]) + " ";
    for (std::size_t i = st.size(); i < zeroed.size(); ++i) b += m.vocab().symbol(zeroed[i]) + " ";
    r.notes.push_back("continuation: " + a);
    r.notes.push_back("plan zeroed:  " + b);
    return finish(std::move(r));
  }

  // -------------------------------------------------------------------------
  // Forces expert (routed + 1) mod E at `layer` for every position and counts
  // cache entries that change at layers <= layer and above it.
  ExperimentReport moe_locality(std::uint64_t seed, int layer, int len = 12) const {
    const Vocabulary vocab = generic_vocabulary(24);
    const Model m = random_model(small_spec(4), vocab, seed);
    require(layer >= 0 && layer < m.spec().n_layers, ErrorKind::kPrecondition, "moe-locality: layer out of range");
    const Transcript prompt = random_transcript(vocab, seed, 3);
    const TokenStream s = generate(m, prompt, len).flatten(vocab);
    TraceRecorder rec(m, false);
    Hooks obs;
    obs.observer = &rec;
    const KVCache base = prefill(m, s, obs);
    const Trace tr = std::move(rec).finish(s);
    Hooks forced;
    for (std::size_t p = 0; p < s.size(); ++p) {
      const int routed = tr.expert_choices.at({layer, static_cast<int>(p)});
      forced.expert_overrides.push_back({layer, static_cast<int>(p), (routed + 1) % m.spec().n_experts});
    }
    const KVCache alt = prefill(m, s, forced);
    double below = 0, above = 0;
    for (int l = 0; l < m.spec().n_layers; ++l)
      for (int h = 0; h < m.spec().n_heads; ++h)
        for (std::size_t p = 0; p < s.size(); ++p) {
          const bool same = bit_equal(base.key(l, h, p), alt.key(l, h, p)) && bit_equal(base.value(l, h, p), alt.value(l, h, p));
          (l <= layer ? below : above) += !same;
        }
    ExperimentReport r;
    r.experiment_id = "moe-locality";
    r.config = {{"seed", seed}, {"layer", layer}, {"n_experts", m.spec().n_experts}, {"positions", s.size()}};
    r.metrics["changed_at_or_below"] = below;
    r.metrics["changed_above"] = above;
    return finish(std::move(r));
  }

 private:
  ThresholdTable thresholds_;
  std::string out_dir_;
};

// Bundled fixtures.
inline Transcript load_bundled_script(const std::string& name, const Vocabulary& vocab) {
  return load_script(data_path("scripts/" + name + ".json"), vocab);
}

}  // namespace pvl
