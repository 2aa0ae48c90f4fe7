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
#include "pvl/generate.hpp"
#include "pvl/kvcache.hpp"

using namespace pvl;

namespace {

struct Fixture {
  Vocabulary vocab = generic_vocabulary(16);
  Model model;
  Transcript transcript;
  TokenStream stream;
  explicit Fixture(std::uint64_t seed, int experts = 2)
      : model(random_model(small_spec(experts), vocab, seed)),
        transcript(generate(model, random_transcript(vocab, seed, 3), 10)),
        stream(transcript.flatten(vocab)) {}
};

}  // namespace

TEST(Prefill, SequentialParallelAndGenerationCachesAreBitIdentical) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Fixture f(seed);
    Generation g = generate_with_cache(f.model, random_transcript(f.vocab, seed, 3), 10);
    const TokenStream s = g.transcript.flatten(f.vocab);
    EXPECT_TRUE(bit_equal(g.cache, prefill(f.model, s)));
    for (unsigned threads : {1u, 2u, 3u, 8u}) EXPECT_TRUE(bit_equal(g.cache, prefill_parallel(f.model, s, threads)));
  }
}

TEST(Prefill, ParallelPathRethrowsWorkerErrors) {
  const Fixture f(1);
  TokenStream bad = f.stream;
  bad.tokens[2] = 999;
  EXPECT_THROW(prefill_parallel(f.model, bad, 4), Error);
}

TEST(CacheFile, RoundTripIsBitExact) {
  const Fixture f(3);
  const KVCache c = prefill(f.model, f.stream);
  EXPECT_TRUE(bit_equal(deserialize_cache(serialize_cache(c)), c));
  EXPECT_TRUE(bit_equal(load_cache_for(f.model, serialize_cache(c)), c));
}

TEST(CacheFile, ForeignModelIsMismatch) {
  const Fixture f(3), g(4);
  const std::string bytes = serialize_cache(prefill(f.model, f.stream));
  try {
    load_cache_for(g.model, bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMismatch);
  }
}

TEST(CacheFile, CorruptHeaderAndTruncationAreDataErrors) {
  const Fixture f(3);
  const std::string bytes = serialize_cache(prefill(f.model, f.stream));
  for (std::size_t at : {std::size_t{0}, std::size_t{5}, std::size_t{12}, bytes.size() / 2}) {
    std::string bad = bytes;
    bad[at] = static_cast<char>(bad[at] ^ 0x21);
    try {
      deserialize_cache(bad);
      ADD_FAILURE() << "corruption at byte " << at << " went unnoticed";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kData);
    }
  }
  EXPECT_THROW(deserialize_cache(bytes.substr(0, bytes.size() - 9)), Error);
  EXPECT_THROW(deserialize_cache(""), Error);
}

TEST(Transfer, ResumedSessionContinuesIdentically) {
  const Fixture f(5);
  Transcript full = f.transcript;
  Session live(f.model);
  live.feed_stream(f.stream);
  Rng r1(0);
  continue_generation(live, full, 6, {}, r1);

  Transcript moved = f.transcript;
  Session resumed = Session::resume(f.model, deserialize_cache(serialize_cache(prefill(f.model, f.stream))), f.stream);
  Session fresh(f.model);
  fresh.feed_stream(f.stream);
  EXPECT_TRUE(bit_equal(resumed.last_logits(), fresh.last_logits()));
  Rng r2(0);
  continue_generation(resumed, moved, 6, {}, r2);
  EXPECT_EQ(full, moved);
  EXPECT_TRUE(bit_equal(live.cache(), resumed.cache()));
}

TEST(Transfer, ResumeRejectsMismatchedTranscript) {
  const Fixture f(5);
  const KVCache c = prefill(f.model, f.stream);
  TokenStream shorter = f.stream;
  shorter.tokens.pop_back();
  shorter.roles.pop_back();
  EXPECT_THROW(Session::resume(f.model, c, shorter), Error);
}

TEST(Divergence, ZeroForSelfPositiveAcrossModels) {
  const Fixture f(7);
  const KVCache a = prefill(f.model, f.stream);
  EXPECT_EQ(cache_divergence(a, a), 0.0);
  const Model other = random_model(small_spec(2), f.vocab, 8);
  const KVCache b = rebuild_for_model(f.transcript, other);
  EXPECT_GT(cache_divergence(a, b), 0.1);
  const Fixture g(9);
  EXPECT_THROW(cache_divergence(a, prefill(g.model, g.stream)), Error);
}

TEST(Edit, ScaleMatchesHandProjection) {
  const Fixture f(11);
  KVCache c = prefill(f.model, f.stream);
  const KVCache before = c;
  const Vec u_raw{1, 2, 0, 0, -1, 0, 0, 3};
  const Direction d(u_raw, 0);
  CacheSelector sel{1, 1, {0}, TurnRole::kAssistant, EditTarget::kValues, std::nullopt};
  const EditReport rep = edit_cache(c, sel, d, EditMode::scale(1.5));
  std::size_t expected = 0;
  for (std::size_t p = 0; p < c.size(); ++p) {
    for (int l = 0; l < 3; ++l)
      for (int h = 0; h < 2; ++h) {
        const bool hit = l == 1 && h == 0 && c.role(p) == TurnRole::kAssistant;
        EXPECT_TRUE(bit_equal(c.key(l, h, p), before.key(l, h, p)));
        if (!hit) {
          EXPECT_TRUE(bit_equal(c.value(l, h, p), before.value(l, h, p)));
          continue;
        }
        ++expected;
        // oracle: x + 0.5 (x . u) u, elementwise
        const Vec& x = before.value(l, h, p);
        double proj = 0, nn = 0;
        for (std::size_t i = 0; i < 8; ++i) {
          proj += x[i] * u_raw[i];
          nn += u_raw[i] * u_raw[i];
        }
        for (std::size_t i = 0; i < 8; ++i)
          EXPECT_NEAR(c.value(l, h, p)[i], x[i] + 0.5 * proj / nn * u_raw[i], 1e-12);
      }
  }
  EXPECT_EQ(rep.count, expected);
  EXPECT_GT(expected, 0u);
}

TEST(Edit, SetToAndAddAndIdentity) {
  const Fixture f(12);
  const KVCache base = prefill(f.model, f.stream);
  const Direction d(Vec{0, 0, 1, 0, 0, 0, 0, 0}, 0);
  CacheSelector all{0, 2, {}, std::nullopt, EditTarget::kBoth, std::nullopt};
  KVCache c = base;
  edit_cache(c, all, d, EditMode::set_to(0.25));
  EXPECT_EQ(c.key(2, 1, 3)[2], 0.25);
  EXPECT_EQ(c.value(0, 0, 0)[2], 0.25);
  EXPECT_TRUE(bit_equal(Vec{c.value(0, 0, 0)[0]}, Vec{base.value(0, 0, 0)[0]}));
  c = base;
  edit_cache(c, all, d, EditMode::add(-1.0));
  EXPECT_NEAR(c.value(1, 1, 2)[2], base.value(1, 1, 2)[2] - 1.0, 1e-15);
  c = base;
  const EditReport id = edit_cache(c, all, d, EditMode::scale(1.0));
  EXPECT_GT(id.count, 0u);
  EXPECT_EQ(id.changed, 0u);
  EXPECT_TRUE(bit_equal(c, base));
}

TEST(Edit, PositionWindowAndEmptySelection) {
  const Fixture f(13);
  KVCache c = prefill(f.model, f.stream);
  const KVCache base = c;
  const Direction d(Vec{1, 1, 1, 1, 1, 1, 1, 1}, 0);
  CacheSelector sel{0, 0, {}, std::nullopt, EditTarget::kValues, std::make_pair(2, 3)};
  EXPECT_EQ(edit_cache(c, sel, d, EditMode::scale(0.0)).count, 2u * 2u);
  EXPECT_TRUE(bit_equal(c.value(0, 0, 1), base.value(0, 0, 1)));
  sel.positions = std::make_pair(1000, 1001);
  EXPECT_TRUE(edit_cache(c, sel, d, EditMode::scale(0.0)).empty_selection());
  sel.layer_hi = 9;
  EXPECT_THROW(edit_cache(c, sel, d, EditMode::scale(0.0)), Error);
}

TEST(Edit, ResidualDirectionMapsThroughValueProjection) {
  const Fixture f(14);
  KVCache c = prefill(f.model, f.stream);
  const KVCache base = c;
  Vec raw(16);
  raw[3] = 1.0;
  const Direction d(raw, 1);
  CacheSelector sel{1, 1, {1}, std::nullopt, EditTarget::kValues, std::nullopt};
  edit_cache(c, sel, d, EditMode::set_to(0.0), f.model);
  // oracle: the value has no component left along W_V e3
  const Mat& wv = f.model.weights().layers[1].heads[1].w_v;
  Vec img(8);
  for (std::size_t i = 0; i < 8; ++i) img[i] = wv(i, 3);
  for (std::size_t p = 0; p < c.size(); ++p) {
    EXPECT_NEAR(dot(c.value(1, 1, p), img), 0.0, 1e-12);
    EXPECT_TRUE(bit_equal(c.value(1, 0, p), base.value(1, 0, p)));
  }
}

TEST(Edit, ZeroImageHeadsAreSkipped) {
  const Vocabulary v = generic_vocabulary(4);
  ModelSpec spec = small_spec();
  spec.vocab_size = static_cast<int>(v.size());
  spec.model_id = "sparse";
  ModelWeights w = zero_weights(spec);
  for (std::size_t i = 0; i < 8; ++i) w.layers[0].heads[0].w_v(i, i) = 1.0;
  const Model m(spec, w, v);
  Transcript t(v.id());
  t.add_turn(v, TurnRole::kUser, "w0 w1");
  KVCache c = prefill(m, t);
  Vec raw(16);
  raw[0] = 1.0;
  const EditReport rep = edit_cache(c, {0, 0, {}, std::nullopt, EditTarget::kValues, std::nullopt}, Direction(raw, 0),
                                    EditMode::scale(2.0), m);
  ASSERT_EQ(rep.skipped_heads.size(), 1u);
  EXPECT_EQ(rep.skipped_heads[0], std::make_pair(0, 1));
}
