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

#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

#include "pvl/harness.hpp"
#include "pvl/probes.hpp"

using namespace pvl;
namespace fs = std::filesystem;

namespace {

const PlantedModel& planted() {
  static const PlantedModel pm = build_planted_model(default_planted_spec(), planted_base_spec(), 1);
  return pm;
}

Harness harness(const std::string& out = {}) { return Harness(load_thresholds(), out); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pvl_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Thresholds, ParseAndEvaluate) {
  const ThresholdTable t = thresholds_from_json(nlohmann::json::parse(R"({"experiments": {"x": [
      {"metric": "a", "op": "ge", "value": 1},
      {"metric": "b", "op": "lt", "value": 0.5, "optional": true}]}})"));
  const auto& th = t.at("x");
  EXPECT_TRUE(ExperimentReport::evaluate({{"a", 1.0}}, th));
  EXPECT_FALSE(ExperimentReport::evaluate({{"a", 0.9}}, th));
  EXPECT_FALSE(ExperimentReport::evaluate({{"a", 2.0}, {"b", 0.5}}, th));
  EXPECT_FALSE(ExperimentReport::evaluate({{"b", 0.1}}, th));  // required metric missing
  EXPECT_THROW(thresholds_from_json(nlohmann::json::parse(R"({"experiments": {"x": [{"metric": "a", "op": "~", "value": 1}]}})")),
               Error);
  EXPECT_THROW(load_thresholds("/nonexistent/thresholds.json"), Error);
}

TEST(Thresholds, BundledTableCoversEveryExperiment) {
  const ThresholdTable t = load_thresholds();
  for (const char* id : {"prefill-equivalence", "serving-transfer", "model-change", "mini1", "mini2", "gateway",
                         "plan-persistence", "moe-locality"})
    EXPECT_TRUE(t.count(id)) << id;
}

TEST(PrefillEquivalence, PassesAndMinimalLength) {
  const ExperimentReport r = harness().prefill_equivalence(1, 1, 32);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.metric("divergence_prefill"), 0.0);
  EXPECT_TRUE(harness().prefill_equivalence(1, 1, 2).pass);
  EXPECT_THROW(harness().prefill_equivalence(1, 1, 1), Error);
}

TEST(PrefillEquivalence, PerturbedCacheFails) {
  const Vocabulary v = generic_vocabulary(24);
  const Model m = random_model(small_spec(2), v, 1);
  const TokenStream s = generate(m, random_transcript(v, 1, 3), 8).flatten(v);
  const KVCache good = prefill(m, s);
  KVCache bad = good;
  bad.value(1, 0, 3)[2] *= 2.0;
  const ExperimentReport r = harness().finish(Harness::equivalence_report(good, bad, good));
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.metric("divergence_prefill"), 0.0);
}

TEST(ServingTransfer, SplitsZeroSplitsAndModelSwap) {
  const Vocabulary v = generic_vocabulary(24);
  const Model m = random_model(small_spec(2), v, 3), other = random_model(small_spec(2), v, 4);
  const Transcript t = random_transcript(v, 3, 3);
  const ExperimentReport two = harness().serving_transfer(m, t, 40, {13, 27});
  EXPECT_TRUE(two.pass);
  EXPECT_EQ(two.metric("tokens"), 40.0);
  EXPECT_TRUE(harness().serving_transfer(m, t, 40, {}).pass);
  const ExperimentReport swapped = harness().serving_transfer(m, t, 40, {13, 27}, &other);
  EXPECT_FALSE(swapped.pass);
  EXPECT_EQ(swapped.metric("match_transfer"), 1.0);
  EXPECT_EQ(swapped.metric("match_prefill"), 0.0);
  EXPECT_THROW(harness().serving_transfer(m, t, 40, {27, 13}), Error);
}

TEST(ModelChange, SameModelAndPlantedPair) {
  const PlantedModel& a = planted();
  const PlantedModel b = build_planted_model(alternative_plan_spec(), planted_base_spec(), 1);
  const Transcript script = load_bundled_script("plan", a.vocab());
  const auto same = Harness::compare_models(a.model, a.model, script, 5);
  EXPECT_EQ(same.divergence, 0.0);
  EXPECT_FALSE(same.endings_differ);
  const auto pair = Harness::compare_models(a.model, b.model, script, 5);
  EXPECT_TRUE(pair.endings_differ);
  EXPECT_EQ(pair.ending_a, "rabbit");
  EXPECT_EQ(pair.ending_b, "habit");
  const ExperimentReport r = harness().model_change(1, 2, a, b, script);
  EXPECT_TRUE(r.pass);
  EXPECT_GT(r.metric("divergence"), 0.1);
}

TEST(Mini1, PassesAndWritesArtifacts) {
  setenv("PVL_FIXED_CLOCK", "1", 1);
  const fs::path out = scratch("mini1");
  const PlantedModel& pm = planted();
  const ExperimentReport r = harness(out.string()).mini1(pm.model, load_bundled_script("drift", pm.vocab()), pm.spec.gateway, {});
  EXPECT_TRUE(r.pass);
  EXPECT_LE(r.metric("user_delta_max"), 1e-9);
  EXPECT_GE(r.metric("cap_slack_min"), 0.0);
  for (const char* f : {"report.json", "series.csv", "series.svg"}) EXPECT_TRUE(fs::exists(out / "mini1" / f)) << f;
  const auto j = read_json_file((out / "mini1" / "report.json").string());
  EXPECT_EQ(j.at("schema_version"), kReportSchemaVersion);
  EXPECT_EQ(j.at("timestamp"), "1970-01-01T00:00:00Z");
  EXPECT_TRUE(j.at("pass").get<bool>());
}

TEST(Mini1, LowThresholdLeavesRunsIdentical) {
  const PlantedModel& pm = planted();
  PlantedSetup cfg;
  cfg.cap_tau = -1e9;
  const ExperimentReport r = harness().mini1(pm.model, load_bundled_script("drift", pm.vocab()), pm.spec.gateway, cfg);
  EXPECT_EQ(r.metric("runs_identical"), 1.0);
  EXPECT_TRUE(r.pass);
}

TEST(Mini1, AssistantOnlyScriptHasNoUserMetric) {
  const PlantedModel& pm = planted();
  Transcript t(pm.vocab().id());
  t.add_turn(pm.vocab(), TurnRole::kAssistant, "assist ok");
  const ExperimentReport r = harness().mini1(pm.model, t, pm.spec.gateway, {});
  EXPECT_FALSE(r.metrics.count("user_delta_max"));
  EXPECT_GE(r.metric("cap_slack_min"), 0.0);
  EXPECT_TRUE(r.pass);
}

TEST(Mini2, EditFlipsIdentityAndIdentityEditDoesNot) {
  const PlantedModel& pm = planted();
  const Transcript aura = load_bundled_script("aura", pm.vocab());
  PlantedSetup cfg;
  const ExperimentReport on = harness().mini2(pm, aura, pm.spec.gateway, cfg, cfg.edit_factor);
  EXPECT_TRUE(on.pass);
  EXPECT_EQ(on.metric("identity_flips_greedy"), 10.0);
  EXPECT_LT(on.metric("battery_score_before"), 0.0);
  EXPECT_GT(on.metric("battery_score_after"), 0.0);
  EXPECT_LE(on.metric("min_flip_factor"), cfg.edit_factor);
  const ExperimentReport id = harness().mini2(pm, aura, pm.spec.gateway, cfg, 1.0);
  EXPECT_FALSE(id.pass);
  EXPECT_EQ(id.metric("identity_flips_greedy"), 0.0);
}

TEST(Mini2, BatteryHasTwelveProbes) {
  EXPECT_EQ(battery_pairs(planted()).size(), static_cast<std::size_t>(reference::kFurtherProbes));
}

TEST(Gateway, PreReadoutFlipsPostReadoutDoesNot) {
  const ExperimentReport r = harness().gateway(planted(), {});
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.metric("suite_size"), 20.0);
}

TEST(PlanPersistence, PayoffArrivesOnTime) {
  const PlantedModel& pm = planted();
  const ExperimentReport r = harness().plan_persistence(pm, load_bundled_script("plan", pm.vocab()), {});
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.metric("payoff_delay_error"), 0.0);
  EXPECT_EQ(r.metric("ending_changed"), 1.0);
  EXPECT_GE(r.metric("plan_projection"), 0.25);
}

TEST(PlanPersistence, NoTriggerNoPlan) {
  const PlantedModel& pm = planted();
  Transcript t(pm.vocab().id());
  t.add_turn(pm.vocab(), TurnRole::kUser, "hi");
  t.add_turn(pm.vocab(), TurnRole::kAssistant, "ok");
  const ExperimentReport r = harness().plan_persistence(pm, t, {});
  EXPECT_EQ(r.metric("trigger_found"), 0.0);
  EXPECT_EQ(r.metric("payoff_observed"), 0.0);
  EXPECT_LT(r.metric("plan_projection"), 0.25);
  EXPECT_FALSE(r.pass);
}

TEST(PlanPersistence, PayoffBeyondHorizonIsNotAFailure) {
  const PlantedModel& pm = planted();
  const ExperimentReport r = harness().plan_persistence(pm, load_bundled_script("plan", pm.vocab()), {}, 2);
  EXPECT_FALSE(r.metrics.count("payoff_delay_error"));
  EXPECT_TRUE(r.pass);
  bool noted = false;
  for (const auto& n : r.notes) noted |= n.find("not observable") != std::string::npos;
  EXPECT_TRUE(noted);
}

TEST(MoeLocality, LayersAtOrBelowAreUntouched) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ExperimentReport r = harness().moe_locality(seed, 1);
    EXPECT_TRUE(r.pass) << seed;
    EXPECT_EQ(r.metric("changed_at_or_below"), 0.0);
  }
  EXPECT_THROW(harness().moe_locality(1, 7), Error);
}

TEST(Svg, OutputIsWellFormed) {
  ProjectionSeries s;
  s.points = {{0, TurnRole::kUser, 0.1, 2}, {1, TurnRole::kAssistant, -0.2, 3}};
  const std::string svg = svg_lines("a <title> & more", split_by_role(s, ""));
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("&lt;title&gt; &amp; more"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  const std::string sc = svg_scatter("pts", {{"a", 0.0, 1.0}, {"b", 1.0, 0.0}});
  EXPECT_NE(sc.find("<circle"), std::string::npos);
}
