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

#include <gtest/gtest.h>

#include "pvl/builders.hpp"
#include "pvl/harness.hpp"
#include "pvl/model_io.hpp"
#include "pvl/persona.hpp"
#include "pvl/probes.hpp"

using namespace pvl;

namespace {

const PlantedModel& planted() {
  static const PlantedModel pm = build_planted_model(default_planted_spec(), planted_base_spec(), 1);
  return pm;
}

Hooks steer(const Model& m, const Direction& d, int lo, int hi, double alpha, Phase ph = Phase::kAll) {
  Hooks h;
  attach(h, m, SteeringPlan{d, {lo, hi}, alpha, ph});
  return h;
}

// The persona direction in the residual, orthogonal to everything the
// planted model reads it with.
Direction free_direction(const PlantedModel& pm) {
  Vec raw(static_cast<std::size_t>(pm.model.spec().d_model));
  raw[static_cast<std::size_t>(planted_dims::kFree0)] = 1.0;
  return Direction(raw, 0, "free");
}

}  // namespace

TEST(Phase, ParsesAndMatches) {
  EXPECT_EQ(phase_from_string("generation_only"), Phase::kGenerationOnly);
  EXPECT_EQ(phase_from_string("user_only"), Phase::kUserOnly);
  EXPECT_EQ(phase_from_string("all"), Phase::kAll);
  EXPECT_THROW(phase_from_string("sometimes"), Error);
  EXPECT_TRUE(phase_matches(Phase::kGenerationOnly, TurnRole::kAssistant));
  EXPECT_FALSE(phase_matches(Phase::kGenerationOnly, TurnRole::kUser));
  EXPECT_TRUE(phase_matches(Phase::kUserOnly, TurnRole::kUser));
  EXPECT_FALSE(phase_matches(Phase::kUserOnly, TurnRole::kSystem));
}

TEST(PlantedModel, MarkerSetsBehaviorOnAllContexts) {
  const PlantedModel& pm = planted();
  const SuiteResult pos = run_suite(pm.model, planted_probe_suite(pm, 1));
  const SuiteResult neg = run_suite(pm.model, planted_probe_suite(pm, -1));
  EXPECT_EQ(pos.positives(), kSuiteSize);
  EXPECT_EQ(neg.negatives(), kSuiteSize);
  // the logit gap carries the sign of the persona projection
  for (std::size_t i = 0; i < pos.outcomes.size(); ++i) {
    EXPECT_GT(pos.outcomes[i].margin, 0.0);
    EXPECT_LT(neg.outcomes[i].margin, 0.0);
  }
}

TEST(PlantedModel, GenerationEmitsPositiveBehavior) {
  const PlantedModel& pm = planted();
  const Probe p = planted_probe_suite(pm, 1).front();
  EXPECT_EQ(run_probe(pm.model, p).score, 1);
  EXPECT_EQ(run_probe(pm.model, p, {}, DecodePolicy::sample(4, 0.05)).score, 1);
}

TEST(Extraction, RecoversPlantedAxis) {
  const PlantedModel& pm = planted();
  const auto table = default_behavior_table();
  std::vector<Transcript> pos, neg;
  for (int i = 0; i < 4; ++i) {
    const std::string q = "tell " + table[static_cast<std::size_t>(i)].topic;
    pos.push_back(planted_context(pm, 1, q));
    neg.push_back(planted_context(pm, -1, q));
  }
  for (int layer = 1; layer <= pm.spec.readout_layer; ++layer)
    EXPECT_GE(cosine(extract_direction(pm.model, pos, neg, layer).unit(), pm.spec.gateway.unit()), 0.95);
  const Direction one = extract_direction(pm.model, {pos[0]}, {neg[0]}, 2);
  EXPECT_NEAR(norm(one.unit()), 1.0, 1e-15);
  try {
    extract_direction(pm.model, pos, pos, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerate);
  }
}

TEST(Steering, ZeroAlphaIsBitIdentical) {
  const Vocabulary v = generic_vocabulary(10);
  const Model m = random_model(small_spec(2), v, 2);
  const Transcript t = random_transcript(v, 2, 3);
  const Direction d(Vec(std::vector<double>(16, 1.0)), 0);
  const Generation a = generate_with_cache(m, t, 6);
  const Generation b = generate_with_cache(m, t, 6, {}, steer(m, d, 0, 2, 0.0));
  EXPECT_EQ(a.transcript, b.transcript);
  EXPECT_TRUE(bit_equal(a.cache, b.cache));
}

TEST(Steering, AddsExactlyAlphaAtTheHookedSites) {
  const Vocabulary v = generic_vocabulary(10);
  const Model m = random_model(small_spec(), v, 3);
  const Transcript t = random_transcript(v, 3, 2);
  const Direction d(Vec{0, 0, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 4}, 1);
  const Trace plain = trace_transcript(m, t).trace;
  Hooks h = steer(m, d, 1, 1, 2.5);
  const Trace st = trace_transcript(m, t, h).trace;
  // layer 0 untouched; at layer 1 the pre-hook residual (layer 0 output) plus 2.5 d
  for (std::size_t p = 0; p < st.positions(); ++p) {
    const int ip = static_cast<int>(p);
    EXPECT_TRUE(bit_equal(st.residual(Site::kBlockInput, 0, ip), plain.residual(Site::kBlockInput, 0, ip)));
    const Vec diff = st.residual(Site::kBlockInput, 1, ip) - st.residual(Site::kBlockOutput, 0, ip);
    EXPECT_NEAR(diff[2], 2.5 * 0.6, 1e-12);
    EXPECT_NEAR(diff[15], 2.5 * 0.8, 1e-12);
  }
  EXPECT_THROW(steer(m, d, 0, 5, 1.0), Error);
  EXPECT_THROW(steer(m, Direction(Vec{1, 0}, 0), 0, 0, 1.0), Error);
}

TEST(Steering, GatewayIsLayerSpecific) {
  const PlantedModel& pm = planted();
  const Model& m = pm.model;
  const int ro = pm.spec.readout_layer, last = m.spec().n_layers - 1;
  const auto neg_suite = planted_probe_suite(pm, -1), pos_suite = planted_probe_suite(pm, 1);
  EXPECT_EQ(run_suite(m, neg_suite, steer(m, pm.spec.gateway, 0, ro, 2.0)).positives(), kSuiteSize);
  EXPECT_EQ(run_suite(m, pos_suite, steer(m, pm.spec.gateway, 0, ro, -2.0)).negatives(), kSuiteSize);
  EXPECT_EQ(run_suite(m, neg_suite, steer(m, pm.spec.gateway, ro + 1, last, 2.0)).negatives(), kSuiteSize);
}

TEST(Sweep, PlantedCurveAndControls) {
  const PlantedModel& pm = planted();
  const auto suite = planted_probe_suite(pm, -1);
  const auto curve = layer_sweep(pm.model, pm.spec.gateway, 2.0, suite);
  ASSERT_EQ(curve.size(), static_cast<std::size_t>(pm.model.spec().n_layers));
  for (std::size_t l = 0; l < curve.size(); ++l)
    EXPECT_EQ(curve[l], static_cast<int>(l) <= pm.spec.readout_layer ? 1.0 : 0.0) << "layer " << l;
  for (double c : layer_sweep(pm.model, pm.spec.gateway, 0.0, suite)) EXPECT_EQ(c, 0.0);
  for (double c : layer_sweep(pm.model, free_direction(pm), 2.0, suite)) EXPECT_EQ(c, 0.0);
}

TEST(Fold, ZeroAlphaIsBitEqualCopy) {
  const PlantedModel& pm = planted();
  const Model f = fold_bias(pm.model, pm.spec.gateway, 0.0, 2);
  EXPECT_TRUE(bit_equal(f, pm.model));
  EXPECT_NE(fold_bias(pm.model, pm.spec.gateway, 1.0, 2).id(), pm.model.id());
}

TEST(Fold, MatchesRuntimeSteering) {
  const Vocabulary v = generic_vocabulary(12);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Model m = random_model(small_spec(2), v, seed);
    const Transcript t = random_transcript(v, seed, 3);
    Rng rng(seed);
    Vec raw(16);
    for (auto& x : raw) x = rng.normal();
    const Direction d(raw, 0);
    for (double alpha : {-2.0, 0.7, 4.0})
      for (int layer : {0, 1, 2}) {
        const Generation steered = generate_with_cache(m, t, 6, {}, steer(m, d, layer, layer, alpha));
        const Model folded = fold_bias(m, d, alpha, layer);
        Transcript ft = generate(folded, t, 6);
        EXPECT_EQ(ft, steered.transcript) << seed << " " << alpha << " " << layer;
        const Trace a = trace_transcript(m, steered.transcript, steer(m, d, layer, layer, alpha), false).trace;
        const Trace b = trace_transcript(folded, steered.transcript, {}, false).trace;
        for (const auto& [pos, la] : a.logits_by_pos) {
          const Vec& lb = b.logits_by_pos.at(pos);
          for (std::size_t i = 0; i < la.dim(); ++i) EXPECT_NEAR(la[i], lb[i], 1e-9 * std::max(1.0, std::abs(la[i])));
        }
      }
  }
}

TEST(Fold, BroadFlipFromOneBias) {
  const PlantedModel& pm = planted();
  const Model f = fold_bias(pm.model, pm.spec.gateway, 2.0, 1);
  EXPECT_EQ(run_suite(f, planted_probe_suite(pm, -1)).positives(), kSuiteSize);
}

TEST(Cap, ThresholdBelowEverythingIsBitIdentical) {
  const PlantedModel& pm = planted();
  const Transcript drift = load_bundled_script("drift", pm.vocab());
  Hooks h;
  attach(h, pm.model, CapPlan{pm.spec.gateway, {0, pm.model.spec().n_layers - 1}, -1e9, Phase::kAll});
  const TracedRun a = trace_transcript(pm.model, drift);
  const TracedRun b = trace_transcript(pm.model, drift, h);
  EXPECT_TRUE(bit_equal(a.cache, b.cache));
}

TEST(Cap, GenerationOnlyContract) {
  const PlantedModel& pm = planted();
  const Transcript drift = load_bundled_script("drift", pm.vocab());
  const double tau = 0.25;
  const LayerRange capped{0, pm.spec.readout_layer};
  Hooks h;
  attach(h, pm.model, CapPlan{pm.spec.gateway, capped, tau, Phase::kGenerationOnly});
  const Trace base = trace_transcript(pm.model, drift).trace;
  const Trace cap = trace_transcript(pm.model, drift, h).trace;
  for (std::size_t p = 0; p < cap.positions(); ++p) {
    const int ip = static_cast<int>(p);
    for (int l = 0; l < cap.n_layers; ++l) {
      const Vec& x = cap.residual(Site::kBlockInput, l, ip);
      if (cap.roles[p] == TurnRole::kAssistant && capped.contains(l)) {
        EXPECT_GE(project(x, pm.spec.gateway), tau) << "pos " << p << " layer " << l;
      }
      if (cap.roles[p] == TurnRole::kUser) {
        const Vec d = x - base.residual(Site::kBlockInput, l, ip);
        EXPECT_LE(norm(d), 1e-9) << "pos " << p << " layer " << l;
      }
    }
  }
  // zero threshold: every generated token at or above zero
  Hooks z;
  attach(z, pm.model, CapPlan{pm.spec.gateway, capped, 0.0, Phase::kGenerationOnly});
  const TracedRun gen = trace_run(pm.model, drift, 4, z, {}, false);
  for (std::size_t p = 0; p < gen.trace.positions(); ++p)
    if (gen.trace.roles[p] == TurnRole::kAssistant) {
      for (int l = capped.lo; l <= capped.hi; ++l)
        EXPECT_GE(project(gen.trace.residual(Site::kBlockInput, l, static_cast<int>(p)), pm.spec.gateway), 0.0);
    }
}

TEST(Cap, ClampIsExactEvenWithRounding) {
  const Vec u_raw{0.1, 0.7, 0.3, 0.2};
  const Direction d(u_raw, 0);
  const CapHook hook(CapPlan{d, {0, 0}, 1.0 / 3.0, Phase::kAll});
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    Vec x{rng.normal() * 1e3, rng.normal(), rng.normal(), rng.normal() * 1e-3};
    hook.apply({0, 0, TurnRole::kAssistant}, x);
    EXPECT_GE(project(x, d), 1.0 / 3.0);
  }
}

TEST(Direction, JsonRoundTripAndValidation) {
  const Direction d(Vec{1, 2, 2}, 3, "x");
  const Direction back = direction_from_json(direction_to_json(d));
  EXPECT_TRUE(bit_equal(back.unit(), d.unit()));
  EXPECT_EQ(back.layer(), 3);
  EXPECT_EQ(back.label(), "x");
  auto j = direction_to_json(d);
  j["unit"] = {1.0, 1.0, 1.0};
  EXPECT_THROW(direction_from_json(j), Error);
  EXPECT_THROW(direction_from_json(nlohmann::json::object()), Error);
}
