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

// Behavioral probes against planted models.

#pragma once

#include <string>
#include <vector>

#include "pvl/persona.hpp"
#include "pvl/planted.hpp"
#include "pvl/space.hpp"

namespace pvl {

inline constexpr int kSuiteSize = 20;

// Persona state set by a leading system marker: +1 "mark+", -1 "mark-",
// 0 no system turn.
inline Transcript planted_context(const Vocabulary& V, int baseline, const std::string& user_text) {
  Transcript tr(V.id());
  if (baseline > 0) tr.add_turn(V, TurnRole::kSystem, "mark+");
  if (baseline < 0) tr.add_turn(V, TurnRole::kSystem, "mark-");
  tr.add_turn(V, TurnRole::kUser, user_text);
  return tr;
}
inline Transcript planted_context(const PlantedModel& pm, int baseline, const std::string& user_text) {
  return planted_context(pm.vocab(), baseline, user_text);
}

inline Probe behavior_probe(const Vocabulary& V, const BehaviorPair& b, Transcript context) {
  return Probe{b.topic, std::move(context), V.at(b.positive), V.at(b.negative)};
}
inline Probe behavior_probe(const PlantedModel& pm, const BehaviorPair& b, Transcript context) {
  return behavior_probe(pm.vocab(), b, std::move(context));
}

// Twenty contexts: lead words {tell, ask} crossed with nine battery topics
// and the identity question. Works for any model on the planted vocabulary.
inline std::vector<Probe> planted_probe_suite(const Vocabulary& V, const std::vector<BehaviorPair>& table,
                                              int baseline) {
  require(!table.empty(), ErrorKind::kPrecondition, "empty behavior table");
  std::vector<Probe> out;
  std::vector<std::size_t> topics;
  for (std::size_t i = 0; i < 9 && i + 1 < table.size(); ++i) topics.push_back(i);
  topics.push_back(table.size() - 1);
  for (const char* lead : {"tell", "ask"})
    for (std::size_t t : topics) {
      Probe p = behavior_probe(V, table[t], planted_context(V, baseline, std::string(lead) + " " + table[t].topic));
      p.label = std::string(lead) + "/" + table[t].topic;
      out.push_back(std::move(p));
    }
  return out;
}
inline std::vector<Probe> planted_probe_suite(const PlantedModel& pm, int baseline) {
  return planted_probe_suite(pm.vocab(), pm.spec.behavior_table, baseline);
}

// Probes appended to an existing conversation: one user question each.
inline Probe followup_probe(const PlantedModel& pm, const Transcript& history, const BehaviorPair& b,
                            const std::string& lead = "ask") {
  Transcript tr = history;
  tr.add_turn(pm.vocab(), TurnRole::kUser, lead + " " + b.topic);
  Probe p = behavior_probe(pm, b, std::move(tr));
  p.label = lead + "/" + b.topic;
  return p;
}

inline const BehaviorPair& identity_pair(const PlantedModel& pm) {
  for (const auto& b : pm.spec.behavior_table)
    if (b.topic == "who") return b;
  fail(ErrorKind::kPrecondition, "planted model has no identity probe");
}

inline std::vector<BehaviorPair> battery_pairs(const PlantedModel& pm) {
  std::vector<BehaviorPair> out;
  for (const auto& b : pm.spec.behavior_table)
    if (b.topic != "who") out.push_back(b);
  return out;
}

// 16 roles with one signed token per persona feature, plus 8 where a
// neutral "ok" stands in for one feature. Every role prompt has 4 tokens.
inline std::vector<RolePrompt> planted_role_prompts() {
  const std::vector<std::string> feats = {"mark", "trait1", "trait2", "trait3"};
  std::vector<RolePrompt> out;
  for (int mask = 0; mask < 16; ++mask) {
    std::string text, label;
    for (int f = 0; f < 4; ++f) {
      const char sign = (mask >> f) & 1 ? '-' : '+';
      text += (f ? " " : "") + feats[static_cast<std::size_t>(f)] + sign;
      label += sign;
    }
    out.push_back({"role" + label, text});
  }
  for (int i = 0; i < 8; ++i) {
    const int blank = i % 4;
    const bool neg = i >= 4;
    std::string text, label;
    for (int f = 0; f < 4; ++f) {
      const std::string tok = f == blank ? "ok" : feats[static_cast<std::size_t>(f)] + (neg ? "-" : "+");
      text += (f ? " " : "") + tok;
      label += f == blank ? '0' : (neg ? '-' : '+');
    }
    out.push_back({"role" + label, text});
  }
  return out;
}

inline std::vector<std::string> planted_question_battery(std::size_t n = 6) {
  std::vector<std::string> out;
  const auto table = default_behavior_table();
  for (std::size_t i = 0; i < n && i < static_cast<std::size_t>(kBatteryTopics); ++i)
    out.push_back("tell " + table[i].topic);
  return out;
}

// Orthonormal span of the persona features (v, w1..w3) and the decision u.
inline std::vector<Vec> planted_persona_subspace(const PlantedModel& pm) {
  std::vector<Vec> dirs = {pm.spec.gateway.unit(), pm.spec.decision.unit()};
  for (const auto& t : pm.traits) dirs.push_back(t.unit());
  return orthonormal_basis_from(dirs);
}

}  // namespace pvl
