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

// Seeded random models for property tests and experiments.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pvl/model.hpp"
#include "pvl/rng.hpp"

namespace pvl {

// Role headers followed by w0..w{n-1}.
inline Vocabulary generic_vocabulary(int n_words) {
  std::vector<std::string> syms = {"<system>", "<user>", "<assistant>"};
  for (int i = 0; i < n_words; ++i) syms.push_back("w" + std::to_string(i));
  return Vocabulary(std::move(syms));
}

inline void fill_normal(Mat& m, Rng& rng, double stddev) {
  for (auto& x : m.span()) x = stddev * rng.normal();
}
inline void fill_normal(Vec& v, Rng& rng, double stddev) {
  for (auto& x : v) x = stddev * rng.normal();
}

struct RandomModelOptions {
  double embed_scale = 1.0;
  double weight_scale = 1.0;  // multiplies 1/sqrt(fan_in)
  double gain_jitter = 0.1;
  double bias_scale = 0.0;
};

// Tensors drawn in serialization order from one generator, so (spec, seed)
// fully determines the weights.
inline Model random_model(ModelSpec spec, const Vocabulary& vocab, std::uint64_t seed,
                          const RandomModelOptions& opt = {}) {
  spec.vocab_size = static_cast<int>(vocab.size());
  if (spec.model_id.empty()) spec.model_id = "random-" + std::to_string(seed);
  ModelWeights w = zero_weights(spec);
  Rng rng(seed);
  for_each_tensor(
      w,
      [&](const std::string& name, Mat& m) {
        const bool is_embed = name == "embed" || name == "role_embed";
        const double sd = is_embed ? opt.embed_scale
                                   : opt.weight_scale / std::sqrt(static_cast<double>(m.cols()));
        fill_normal(m, rng, sd);
      },
      [&](const std::string& name, Vec& v) {
        if (name.ends_with("mlp_bias")) {
          fill_normal(v, rng, opt.bias_scale);
        } else {
          for (auto& x : v) x = 1.0 + opt.gain_jitter * rng.normal();
        }
      });
  return Model(std::move(spec), std::move(w), vocab);
}

inline ModelSpec small_spec(int n_experts = 1) {
  ModelSpec s;
  s.d_model = 16;
  s.n_layers = 3;
  s.n_heads = 2;
  s.d_head = 8;
  s.d_mlp = 32;
  s.n_experts = n_experts;
  return s;
}

// A random transcript: optional system turn, then alternating user/assistant
// turns of 1..max_len words.
inline Transcript random_transcript(const Vocabulary& vocab, std::uint64_t seed, int n_turns,
                                    int max_len = 4) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::string> words;
  for (const auto& s : vocab.symbols())
    if (s.front() != '<') words.push_back(s);
  Transcript tr(vocab.id());
  auto text = [&] {
    std::string t;
    const auto n = 1 + rng.below(static_cast<std::size_t>(max_len));
    for (std::size_t i = 0; i < n; ++i) {
      if (i) t += ' ';
      t += words[rng.below(words.size())];
    }
    return t;
  };
  if (rng.uniform() < 0.5) tr.add_turn(vocab, TurnRole::kSystem, text());
  for (int i = 0; i < n_turns; ++i)
    tr.add_turn(vocab, i % 2 == 0 ? TurnRole::kUser : TurnRole::kAssistant, text());
  return tr;
}

}  // namespace pvl
