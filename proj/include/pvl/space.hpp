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

// Persona space: role-activation clouds, principal axes and basin statistics.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvl/numcore.hpp"
#include "pvl/persona.hpp"
#include "pvl/rng.hpp"
#include "pvl/trace.hpp"

namespace pvl {

// Reference scale of the original study, kept for documentation only.
namespace reference {
inline constexpr int kRoles = 275;
inline constexpr int kGemmaDims = 4098;
inline constexpr int kK70Gemma = 4, kK70Qwen = 8, kK70Llama = 19;
inline constexpr double kPc1LoadingCorrelation = 0.92;  // lower bound across the three models
}  // namespace reference

struct RoleCloud {
  std::vector<std::string> labels;
  std::vector<Vec> vectors;
  int layer = 0;
  std::string battery_id;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return vectors.empty() ? 0 : vectors[0].dim(); }

  void validate() const {
    require(labels.size() == vectors.size(), ErrorKind::kPrecondition, "cloud: labels/vectors length mismatch");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      require(seen.insert(labels[i]).second, ErrorKind::kPrecondition, "cloud: duplicate label " + labels[i]);
      check_same_dim(vectors[i].dim(), dim(), "cloud vector");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json roles = nlohmann::json::array();
    for (std::size_t i = 0; i < size(); ++i) roles.push_back({{"label", labels[i]}, {"vector", vectors[i].values()}});
    return {{"layer", layer}, {"battery_id", battery_id}, {"roles", roles}};
  }

  static RoleCloud from_json(const nlohmann::json& j) {
    try {
      RoleCloud c;
      c.layer = j.at("layer").get<int>();
      c.battery_id = j.value("battery_id", std::string());
      for (const auto& r : j.at("roles")) {
        c.labels.push_back(r.at("label").get<std::string>());
        c.vectors.emplace_back(r.at("vector").get<std::vector<double>>());
      }
      c.validate();
      return c;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kData, std::string("malformed cloud: ") + e.what());
    }
  }
};

struct RolePrompt {
  std::string label;
  std::string system_text;  // the role, delivered as a system turn
};

inline constexpr int kCloudResponseTokens = 3;

// Per role: every battery question under the role's system turn, a short
// greedy response each, and the mean residual at `layer` over all response
// positions. Roles are independent and assembled in input order.
inline RoleCloud build_role_cloud(const Model& m, const std::vector<RolePrompt>& roles,
                                  const std::vector<std::string>& battery, int layer,
                                  int n_new = kCloudResponseTokens) {
  require(roles.size() >= 2, ErrorKind::kPrecondition, "build_role_cloud: need at least 2 roles");
  require(!battery.empty(), ErrorKind::kPrecondition, "build_role_cloud: empty question battery");
  RoleCloud cloud;
  cloud.layer = layer;
  std::string joined;
  for (const auto& q : battery) joined += q + "\n";
  cloud.battery_id = "battery-" + hex64(fnv1a64(joined));
  const auto& V = m.vocab();
  for (const auto& r : roles) {
    std::vector<Transcript> prompts;
    for (const auto& q : battery) {
      Transcript tr(V.id());
      if (!r.system_text.empty()) tr.add_turn(V, TurnRole::kSystem, r.system_text);
      tr.add_turn(V, TurnRole::kUser, q);
      prompts.push_back(std::move(tr));
    }
    cloud.labels.push_back(r.label);
    cloud.vectors.push_back(mean_response_activation(m, prompts, layer, n_new));
  }
  cloud.validate();
  return cloud;
}

struct AxisReport {
  PcaResult pca;
  int k70 = 0;
  Direction assistant_axis;
  std::vector<double> loadings;  // centered role vector on PC1
  std::vector<std::string> labels;

  std::string loadings_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "label,pc1_loading\n";
    for (std::size_t i = 0; i < labels.size(); ++i) os << labels[i] << ',' << loadings[i] << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    return {{"k70", k70},
            {"variance_fraction", pca.variance_fraction},
            {"eigenvalues", pca.eigenvalues},
            {"total_variance", pca.total_variance},
            {"assistant_axis", direction_to_json(assistant_axis)},
            {"labels", labels},
            {"loadings", loadings}};
  }
};

inline constexpr double kK70Target = 0.70;

inline AxisReport analyze_cloud(const RoleCloud& cloud, std::size_t k) {
  cloud.validate();
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < cloud.size() && distinct < 2; ++i) {
    bool fresh = true;
    for (std::size_t j = 0; j < i; ++j) fresh = fresh && !(cloud.vectors[i] == cloud.vectors[j]);
    distinct += fresh;
  }
  require(distinct >= 2, ErrorKind::kDegenerate, "analyze_cloud: fewer than 2 distinct points");
  require(k >= 1 && k <= cloud.dim(), ErrorKind::kPrecondition, "analyze_cloud: k out of range");
  AxisReport r;
  r.pca = pca(cloud.vectors, k);
  require(r.pca.total_variance > 0.0, ErrorKind::kDegenerate, "analyze_cloud: zero variance");
  r.k70 = static_cast<int>(r.pca.components_for(kK70Target));
  r.assistant_axis = Direction(r.pca.components[0], cloud.layer, "assistant-axis");
  r.labels = cloud.labels;
  for (const auto& v : cloud.vectors) r.loadings.push_back(project(v - r.pca.mean, r.assistant_axis));
  return r;
}

inline Direction refine_assistant_axis(const RoleCloud& cloud, const std::vector<std::string>& assistant,
                                       const std::vector<std::string>& other) {
  require(!assistant.empty() && !other.empty(), ErrorKind::kPrecondition, "refine: both label sets must be nonempty");
  const std::set<std::string> a(assistant.begin(), assistant.end()), o(other.begin(), other.end());
  for (const auto& x : a) require(!o.count(x), ErrorKind::kPrecondition, "refine: label sets overlap: " + x);
  auto mean_of = [&](const std::set<std::string>& names) {
    Vec s(cloud.dim());
    std::size_t n = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i)
      if (names.count(cloud.labels[i])) {
        s += cloud.vectors[i];
        ++n;
      }
    require(n == names.size(), ErrorKind::kPrecondition, "refine: unknown label");
    return (1.0 / static_cast<double>(n)) * s;
  };
  Vec diff = mean_of(a) - mean_of(o);
  require(norm(diff) > 0.0, ErrorKind::kDegenerate, "refine: identical means");
  return Direction(diff, cloud.layer, "assistant-axis-refined");
}

struct BasinRegion {
  double center = 0.0;
  double radius = 1.0;
};

struct BasinReport {
  double dwell = 0.0;            // fraction of turns inside
  std::optional<int> entry_turn;  // first turn inside
  std::optional<int> exit_turn;   // first turn outside after being inside
  bool returned = false;          // re-entered after an exit
  std::size_t turns = 0;
};

// Descriptive statistics of one role's points (assistant by default).
inline BasinReport basin_diagnostics(const ProjectionSeries& series, const BasinRegion& region,
                                     std::optional<TurnRole> role = TurnRole::kAssistant) {
  require(region.radius > 0.0, ErrorKind::kPrecondition, "basin: radius must be positive");
  std::vector<ProjectionPoint> pts = role ? series.of_role(*role) : series.points;
  require(!pts.empty(), ErrorKind::kPrecondition, "basin: empty series");
  BasinReport r;
  r.turns = pts.size();
  std::size_t inside = 0;
  for (const auto& p : pts) {
    const bool in = std::abs(p.mean_projection - region.center) <= region.radius;
    inside += in;
    if (in && !r.entry_turn) r.entry_turn = p.turn;
    if (!in && r.entry_turn && !r.exit_turn) r.exit_turn = p.turn;
    if (in && r.exit_turn) r.returned = true;
  }
  r.dwell = static_cast<double>(inside) / static_cast<double>(pts.size());
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic clouds with a known spectrum

struct SyntheticCloudSpec {
  std::size_t dim = 48;
  std::size_t points = 4000;
  std::vector<double> fractions = {0.40, 0.15, 0.10, 0.05};  // signal share per planted axis
  double noise_fraction = 0.30;  // isotropic, spread over every dim
};

struct SyntheticCloud {
  std::vector<Vec> points;
  std::vector<Vec> axes;  // planted orthonormal axes, strongest first
  double noise_variance = 0.0;  // per dim
  std::vector<double> axis_variance;
};

// Points x = sum_i sqrt(s_i) z_i a_i + sigma g with unit total variance.
inline SyntheticCloud synthetic_cloud(const SyntheticCloudSpec& s, std::uint64_t seed) {
  require(s.fractions.size() <= s.dim && s.points >= 2, ErrorKind::kPrecondition, "synthetic cloud: bad spec");
  Rng rng(seed);
  std::vector<Vec> raw;
  for (std::size_t i = 0; i < s.fractions.size(); ++i) {
    Vec v(s.dim);
    for (auto& x : v) x = rng.normal();
    raw.push_back(std::move(v));
  }
  SyntheticCloud c;
  c.axes = orthonormal_basis_from(raw);
  require(c.axes.size() == s.fractions.size(), ErrorKind::kDegenerate, "synthetic cloud: dependent axes");
  c.axis_variance = s.fractions;
  c.noise_variance = s.noise_fraction / static_cast<double>(s.dim);
  const double sigma = std::sqrt(c.noise_variance);
  for (std::size_t n = 0; n < s.points; ++n) {
    Vec x(s.dim);
    for (std::size_t i = 0; i < c.axes.size(); ++i) axpy(std::sqrt(s.fractions[i]) * rng.normal(), c.axes[i], x);
    for (auto& xi : x) xi += sigma * rng.normal();
    c.points.push_back(std::move(x));
  }
  return c;
}

inline RoleCloud cloud_from_points(const std::vector<Vec>& pts, int layer = 0) {
  RoleCloud c;
  c.layer = layer;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    c.labels.push_back("p" + std::to_string(i));
    c.vectors.push_back(pts[i]);
  }
  return c;
}

}  // namespace pvl
