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

#include <cmath>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "pvl/harness.hpp"
#include "pvl/probes.hpp"
#include "pvl/space.hpp"

using namespace pvl;

namespace {

const PlantedModel& planted() {
  static const PlantedModel pm = build_planted_model(default_planted_spec(), planted_base_spec(), 1);
  return pm;
}

ProjectionSeries series_of(const std::vector<double>& assistant_values) {
  ProjectionSeries s;
  int turn = 0;
  for (double v : assistant_values) {
    s.points.push_back({turn++, TurnRole::kUser, 100.0, 1});  // ignored by default
    s.points.push_back({turn++, TurnRole::kAssistant, v, 1});
  }
  return s;
}

}  // namespace

TEST(Reference, FullScaleConstants) {
  EXPECT_EQ(reference::kRoles, 275);
  EXPECT_EQ(reference::kGemmaDims, 4098);
  EXPECT_EQ(reference::kK70Gemma, 4);
  EXPECT_EQ(reference::kK70Qwen, 8);
  EXPECT_EQ(reference::kK70Llama, 19);
  EXPECT_EQ(reference::kPc1LoadingCorrelation, 0.92);
  EXPECT_EQ(reference::kAuraScoreBefore, 5.5);
  EXPECT_EQ(reference::kAuraScoreAfter, 2.1);
  EXPECT_EQ(reference::kEditLayerLo, 32);
  EXPECT_EQ(reference::kEditLayerHi, 47);
  EXPECT_EQ(reference::kMisalignedRate, 0.5);
}

TEST(SyntheticCloud, MatchesPopulationSpectrum) {
  const SyntheticCloudSpec spec;
  const SyntheticCloud sc = synthetic_cloud(spec, 7);
  const AxisReport rep = analyze_cloud(cloud_from_points(sc.points), 4);
  // Oracle: eigendecomposition of sum_i s_i a_i a_i^T + sigma^2 I by a library solver.
  const int d = static_cast<int>(spec.dim);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(d, d) * sc.noise_variance;
  for (std::size_t i = 0; i < sc.axes.size(); ++i) {
    Eigen::VectorXd a(d);
    for (int j = 0; j < d; ++j) a(j) = sc.axes[i][static_cast<std::size_t>(j)];
    cov += spec.fractions[i] * a * a.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues().reverse();
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(rep.pca.variance_fraction[static_cast<std::size_t>(i)], ev(i) / ev.sum(), 0.03) << i;
    // and the closed form of the same thing
    EXPECT_NEAR(ev(i) / ev.sum(), spec.fractions[static_cast<std::size_t>(i)] + sc.noise_variance, 1e-12);
  }
  EXPECT_EQ(rep.k70, 4);
  EXPECT_GE(std::abs(cosine(rep.pca.components[0], sc.axes[0])), 0.99);
}

TEST(SyntheticCloud, SeedDeterminesPoints) {
  SyntheticCloudSpec spec;
  spec.points = 50;
  EXPECT_EQ(synthetic_cloud(spec, 3).points, synthetic_cloud(spec, 3).points);
  EXPECT_NE(synthetic_cloud(spec, 3).points, synthetic_cloud(spec, 4).points);
}

TEST(AnalyzeCloud, LineCloudHasOneComponent) {
  const Vec u{0.6, 0.0, 0.8};
  std::vector<Vec> pts;
  for (int i = -3; i <= 3; ++i) pts.push_back(static_cast<double>(i) * u);
  const AxisReport r = analyze_cloud(cloud_from_points(pts), 2);
  EXPECT_EQ(r.k70, 1);
  EXPECT_NEAR(r.pca.variance_fraction[0], 1.0, 1e-12);
  EXPECT_NEAR(std::abs(cosine(r.assistant_axis.unit(), u)), 1.0, 1e-12);
  EXPECT_EQ(r.loadings.size(), pts.size());
  EXPECT_EQ(r.loadings_csv().substr(0, 17), "label,pc1_loading");
}

TEST(AnalyzeCloud, DegenerateClouds) {
  const std::vector<Vec> same{Vec{1, 2}, Vec{1, 2}, Vec{1, 2}};
  try {
    analyze_cloud(cloud_from_points(same), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerate);
  }
  EXPECT_THROW(analyze_cloud(cloud_from_points({Vec{1, 2}, Vec{0, 1}}), 3), Error);
}

TEST(RoleCloud, PlantedCloudLivesInPersonaSubspace) {
  const PlantedModel& pm = planted();
  const RoleCloud cloud = build_role_cloud(pm.model, planted_role_prompts(), planted_question_battery(), 2);
  EXPECT_EQ(cloud.size(), 24u);
  const AxisReport r = analyze_cloud(cloud, 6);
  const auto basis = planted_persona_subspace(pm);
  double total = 0, inside = 0;
  for (const auto& v : cloud.vectors) {
    const Vec c = v - r.pca.mean;
    total += dot(c, c);
    for (const auto& b : basis) inside += dot(c, b) * dot(c, b);
  }
  EXPECT_GE(inside / total, 0.9);
}

TEST(RoleCloud, IdenticalRolesGiveIdenticalVectors) {
  const PlantedModel& pm = planted();
  const RoleCloud c = build_role_cloud(pm.model, {{"a", "mark+ trait1+"}, {"b", "mark+ trait1+"}, {"c", "mark-"}},
                                       planted_question_battery(1), 2);
  EXPECT_TRUE(bit_equal(c.vectors[0], c.vectors[1]));
  EXPECT_EQ(c.vectors[0].dim(), static_cast<std::size_t>(pm.model.spec().d_model));
  EXPECT_THROW(build_role_cloud(pm.model, {{"a", "mark+"}, {"a", "mark-"}}, {"tell q00"}, 2), Error);
}

TEST(RoleCloud, JsonRoundTrip) {
  const RoleCloud c = cloud_from_points({Vec{1, 2}, Vec{3, 4.5}}, 2);
  const RoleCloud back = RoleCloud::from_json(c.to_json());
  EXPECT_EQ(back.labels, c.labels);
  EXPECT_EQ(back.vectors, c.vectors);
  EXPECT_EQ(back.layer, 2);
  EXPECT_THROW(RoleCloud::from_json(nlohmann::json{{"labels", {"x"}}}), Error);
}

TEST(RefineAxis, SeparatedClustersRecoverDirection) {
  const Vec u{0.0, 0.6, -0.8};
  std::vector<Vec> pts;
  std::vector<std::string> a, o;
  const std::vector<Vec> jitter{Vec{0.1, 0, 0}, Vec{-0.1, 0, 0}, Vec{0, 0, 0}};
  for (std::size_t i = 0; i < jitter.size(); ++i) {
    pts.push_back(jitter[i] + 2.0 * u);
    pts.push_back(jitter[i] - 2.0 * u);
  }
  const RoleCloud c = cloud_from_points(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) (i % 2 ? o : a).push_back(c.labels[i]);
  const Direction d = refine_assistant_axis(c, a, o);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(d.unit()[i], u[i], 1e-6);
  // one outlier against the rest
  std::vector<std::string> rest(c.labels.begin(), c.labels.end() - 1);
  EXPECT_GE(std::abs(cosine(refine_assistant_axis(c, rest, {c.labels.back()}).unit(), u)), 0.99);
  const RoleCloud flat = cloud_from_points({Vec{1, 0}, Vec{1, 0}});
  EXPECT_THROW(refine_assistant_axis(flat, {"p0"}, {"p1"}), Error);
  EXPECT_THROW(refine_assistant_axis(c, {"p0"}, {"p0"}), Error);
}

TEST(Basin, ConstantSeriesDwellsFully) {
  const BasinReport r = basin_diagnostics(series_of({0.5, 0.5, 0.5}), {0.5, 0.1});
  EXPECT_EQ(r.dwell, 1.0);
  EXPECT_EQ(r.entry_turn, 1);
  EXPECT_FALSE(r.exit_turn.has_value());
  EXPECT_EQ(r.turns, 3u);
}

TEST(Basin, ExitAndReturn) {
  const BasinReport r = basin_diagnostics(series_of({0.5, 0.45, 0.1, 0.5}), {0.5, 0.1});
  EXPECT_EQ(r.exit_turn, 5);
  EXPECT_TRUE(r.returned);
  EXPECT_DOUBLE_EQ(r.dwell, 0.75);
  EXPECT_THROW(basin_diagnostics(series_of({1.0}), {0.0, 0.0}), Error);
}

TEST(Basin, PlantedDriftLeavesAndCapKeepsIt) {
  const PlantedModel& pm = planted();
  const Transcript drift = load_bundled_script("drift", pm.vocab());
  const int layer = 2;
  const auto base = projection_series(trace_transcript(pm.model, drift).trace, pm.spec.gateway, layer);
  const auto a = base.of_role(TurnRole::kAssistant);
  const double start = a.front().mean_projection;
  const BasinRegion region{start, 0.25 * std::abs(start - a.back().mean_projection)};
  // oracle exit turn: first assistant turn farther than the radius
  int expected = -1;
  for (const auto& p : a)
    if (std::abs(p.mean_projection - start) > region.radius) {
      expected = p.turn;
      break;
    }
  const BasinReport r = basin_diagnostics(base, region);
  ASSERT_TRUE(r.exit_turn.has_value());
  EXPECT_EQ(*r.exit_turn, expected);

  // Capped at the starting level: the assistant series is floored there.
  Hooks h;
  attach(h, pm.model, CapPlan{pm.spec.gateway, {0, pm.spec.readout_layer}, start, Phase::kGenerationOnly});
  const auto capped = projection_series(trace_transcript(pm.model, drift, h).trace, pm.spec.gateway, layer);
  const BasinReport rc = basin_diagnostics(capped, {start + 1.0, 1.0});
  EXPECT_EQ(rc.dwell, 1.0);
}
