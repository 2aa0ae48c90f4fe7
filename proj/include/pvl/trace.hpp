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

// Residual-stream and attention-stream instrumentation.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "pvl/generate.hpp"
#include "pvl/model.hpp"
#include "pvl/transcript.hpp"

namespace pvl {

struct Trace {
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  std::vector<TokenId> tokens;
  std::vector<TurnRole> roles;
  std::vector<int> turn_index;
  std::map<std::tuple<Site, int, int>, Vec> residuals;  // (site, layer, pos)
  std::vector<AttentionStreamRecord> streams;
  std::map<int, Vec> logits_by_pos;
  std::map<std::pair<int, int>, int> expert_choices;  // (layer, pos)

  std::size_t positions() const noexcept { return roles.size(); }

  const Vec& residual(Site site, int layer, int pos) const {
    auto it = residuals.find({site, layer, pos});
    require(it != residuals.end(), ErrorKind::kPrecondition,
            std::string("no residual traced at ") + to_string(site) + " layer " +
                std::to_string(layer) + " pos " + std::to_string(pos));
    return it->second;
  }
  bool has_layer(int layer) const { return layer >= 0 && layer < n_layers && !residuals.empty(); }
};

class TraceRecorder : public ForwardObserver {
 public:
  explicit TraceRecorder(const Model& m, bool record_streams = true) : record_streams_(record_streams) {
    trace_.n_layers = m.spec().n_layers;
    trace_.n_heads = m.spec().n_heads;
    trace_.d_model = m.spec().d_model;
  }

  bool wants_streams() const override { return record_streams_; }
  void on_residual(Site s, const ResidualSite& r, const Vec& x) override {
    if (s == Site::kEmbed) {
      if (static_cast<std::size_t>(r.pos) >= trace_.roles.size()) trace_.roles.resize(static_cast<std::size_t>(r.pos) + 1);
      trace_.roles[static_cast<std::size_t>(r.pos)] = r.role;
    }
    trace_.residuals[{s, r.layer, r.pos}] = x;
  }
  void on_attention(const AttentionStreamRecord& rec) override { trace_.streams.push_back(rec); }
  void on_expert(const ResidualSite& r, int expert) override {
    trace_.expert_choices[{r.layer, r.pos}] = expert;
  }
  void on_logits(int pos, const Vec& logits) override { trace_.logits_by_pos[pos] = logits; }

  Trace finish(const TokenStream& stream) && {
    trace_.tokens = stream.tokens;
    trace_.turn_index = stream.turn_index;
    require(trace_.roles.size() == stream.size(), ErrorKind::kPrecondition,
            "trace does not cover every position of the transcript");
    return std::move(trace_);
  }

 private:
  bool record_streams_;
  Trace trace_;
};

inline Hooks with_observer(Hooks hooks, ForwardObserver* obs) {
  hooks.observer = obs;
  return hooks;
}

struct TracedRun {
  Transcript transcript;
  Trace trace;
  KVCache cache;
};

// Generation with full recording. Observation is read-only, so tokens, logits
// and cache match an untraced run bit for bit.
inline TracedRun trace_run(const Model& m, const Transcript& transcript, int n_new,
                           const Hooks& hooks = {}, const DecodePolicy& policy = {},
                           bool record_streams = true) {
  TraceRecorder rec(m, record_streams);
  Generation g = generate_with_cache(m, transcript, n_new, policy, with_observer(hooks, &rec));
  TokenStream s = g.transcript.flatten(m.vocab());
  Trace t = std::move(rec).finish(s);
  return {std::move(g.transcript), std::move(t), std::move(g.cache)};
}

// Teacher-forced pass over a fixed transcript (no generation).
inline TracedRun trace_transcript(const Model& m, const Transcript& transcript,
                                  const Hooks& hooks = {}, bool record_streams = true) {
  TraceRecorder rec(m, record_streams);
  Session s(m, with_observer(hooks, &rec));
  TokenStream stream = transcript.flatten(m.vocab());
  s.feed_stream(stream);
  Trace t = std::move(rec).finish(stream);
  return {transcript, std::move(t), std::move(s).take_cache()};
}

// Attention streams feeding the prediction at 1-indexed token number
// `position`: one per head, layer and prior position.
inline long long count_streams(const ModelSpec& spec, long long position) {
  require(position >= 1, ErrorKind::kPrecondition, "count_streams: position must be >= 1");
  return static_cast<long long>(spec.n_heads) * spec.n_layers * (position - 1);
}

struct ProjectionPoint {
  int turn = 0;
  TurnRole role = TurnRole::kUser;
  double mean_projection = 0.0;
  int n_tokens = 0;
};

struct ProjectionSeries {
  int layer = 0;
  Site site = Site::kBlockInput;
  std::vector<ProjectionPoint> points;

  std::vector<ProjectionPoint> of_role(TurnRole r) const {
    std::vector<ProjectionPoint> out;
    for (const auto& p : points)
      if (p.role == r) out.push_back(p);
    return out;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "turn,role,mean_projection\n";
    for (const auto& p : points) os << p.turn << ',' << to_string(p.role) << ',' << p.mean_projection << '\n';
    return os.str();
  }
};

// Per-turn mean of project(residual at `layer`, axis) over that turn's
// positions (header included).
inline ProjectionSeries projection_series(const Trace& trace, const Direction& axis, int layer,
                                          Site site = Site::kBlockInput) {
  require(layer >= 0 && layer < trace.n_layers, ErrorKind::kPrecondition,
          "projection_series: layer " + std::to_string(layer) + " not traced");
  check_same_dim(axis.dim(), static_cast<std::size_t>(trace.d_model), "projection_series axis");
  ProjectionSeries out{layer, site, {}};
  std::map<int, std::pair<double, int>> acc;
  std::map<int, TurnRole> roles;
  for (std::size_t p = 0; p < trace.positions(); ++p) {
    const int t = trace.turn_index[p];
    auto& [sum, n] = acc[t];
    sum += project(trace.residual(site, layer, static_cast<int>(p)), axis);
    ++n;
    roles[t] = trace.roles[p];
  }
  for (const auto& [t, sn] : acc)
    out.points.push_back({t, roles[t], sn.first / sn.second, sn.second});
  return out;
}

// Records arriving at dst_pos ranked by |weight|, or by |<contribution, d>|
// when d is given; ties break on (layer, head, src).
inline std::vector<AttentionStreamRecord> top_streams(const Trace& trace, int dst_pos, std::size_t k,
                                                      const std::optional<Direction>& d = std::nullopt) {
  require(dst_pos >= 0 && static_cast<std::size_t>(dst_pos) < trace.positions(),
          ErrorKind::kPrecondition, "top_streams: dst_pos out of range");
  std::vector<std::pair<double, const AttentionStreamRecord*>> cand;
  for (const auto& r : trace.streams) {
    if (r.dst_pos != dst_pos) continue;
    const double score = d ? std::abs(project(r.value_contribution, *d)) : std::abs(r.weight);
    cand.emplace_back(score, &r);
  }
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return std::tie(a.second->layer, a.second->head, a.second->src_pos) <
           std::tie(b.second->layer, b.second->head, b.second->src_pos);
  });
  std::vector<AttentionStreamRecord> out;
  for (std::size_t i = 0; i < std::min(k, cand.size()); ++i) out.push_back(*cand[i].second);
  return out;
}

// Largest |block_input + sum of stream contributions - attn_out| over every
// traced (layer, position).
inline double stream_decomposition_error(const Trace& trace) {
  std::map<std::pair<int, int>, Vec> sums;
  for (const auto& r : trace.streams) {
    auto [it, fresh] = sums.try_emplace({r.layer, r.dst_pos}, Vec(static_cast<std::size_t>(trace.d_model)));
    it->second += r.value_contribution;
  }
  double worst = 0.0;
  for (const auto& [key, s] : sums) {
    const auto [layer, pos] = key;
    Vec recon = trace.residual(Site::kBlockInput, layer, pos) + s;
    const Vec& post = trace.residual(Site::kAttnOut, layer, pos);
    for (std::size_t i = 0; i < recon.dim(); ++i) worst = std::max(worst, std::abs(recon[i] - post[i]));
  }
  return worst;
}

// Largest |sum of weights - 1| over every (layer, head, dst).
inline double stream_weight_error(const Trace& trace) {
  std::map<std::tuple<int, int, int>, double> sums;
  for (const auto& r : trace.streams) sums[{r.layer, r.head, r.dst_pos}] += r.weight;
  double worst = 0.0;
  for (const auto& [k, s] : sums) worst = std::max(worst, std::abs(s - 1.0));
  return worst;
}

inline nlohmann::json trace_to_json(const Trace& t, const Vocabulary& vocab) {
  using nlohmann::json;
  json j;
  j["shape"] = {{"n_layers", t.n_layers},
                {"n_heads", t.n_heads},
                {"d_model", t.d_model},
                {"positions", t.positions()},
                {"sites", {"embed", "block_input", "attn_out", "block_output"}}};
  json toks = json::array();
  for (std::size_t p = 0; p < t.positions(); ++p)
    toks.push_back({{"pos", p},
                    {"token", vocab.symbol(t.tokens[p])},
                    {"role", to_string(t.roles[p])},
                    {"turn", t.turn_index[p]}});
  j["tokens"] = toks;
  json res = json::array();
  for (const auto& [key, x] : t.residuals) {
    const auto& [site, layer, pos] = key;
    res.push_back({{"site", to_string(site)}, {"layer", layer}, {"pos", pos}, {"vector", x.values()}});
  }
  j["residuals"] = res;
  json st = json::array();
  for (const auto& r : t.streams)
    st.push_back({{"layer", r.layer},
                  {"head", r.head},
                  {"src", r.src_pos},
                  {"dst", r.dst_pos},
                  {"weight", r.weight},
                  {"value_contribution", r.value_contribution.values()}});
  j["streams"] = st;
  json lg = json::object();
  for (const auto& [pos, l] : t.logits_by_pos) lg[std::to_string(pos)] = l.values();
  j["logits"] = lg;
  json ex = json::array();
  for (const auto& [key, e] : t.expert_choices) ex.push_back({{"layer", key.first}, {"pos", key.second}, {"expert", e}});
  j["experts"] = ex;
  return j;
}

}  // namespace pvl
