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
#include "pvl/transcript.hpp"

using namespace pvl;

namespace {
Vocabulary vocab() { return generic_vocabulary(6); }
}  // namespace

TEST(Vocabulary, RejectsDuplicatesAndWhitespace) {
  EXPECT_THROW(Vocabulary({"a", "a"}), Error);
  EXPECT_THROW(Vocabulary({"a b"}), Error);
  EXPECT_THROW(Vocabulary({""}), Error);
}

TEST(Vocabulary, IdDependsOnContentAndOrder) {
  EXPECT_EQ(Vocabulary({"a", "b"}).id(), Vocabulary({"a", "b"}).id());
  EXPECT_NE(Vocabulary({"a", "b"}).id(), Vocabulary({"b", "a"}).id());
}

TEST(Tokenize, RoundTripsAndReportsOffset) {
  const Vocabulary v = vocab();
  const auto toks = tokenize(v, "  w1 w3\tw0 ");
  EXPECT_EQ(toks, (std::vector<TokenId>{4, 6, 3}));
  EXPECT_EQ(detokenize(v, toks), "w1 w3 w0");
  try {
    tokenize(v, "w1 zz");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("offset 3"), std::string::npos);
  }
}

TEST(Transcript, EnforcesRoleOrder) {
  const Vocabulary v = vocab();
  Transcript t(v.id());
  t.add_turn(v, TurnRole::kSystem, "w0");
  EXPECT_THROW(t.add_turn(v, TurnRole::kSystem, "w0"), Error);
  t.add_turn(v, TurnRole::kUser, "w1");
  EXPECT_THROW(t.add_turn(v, TurnRole::kUser, "w1"), Error);
  t.add_turn(v, TurnRole::kAssistant, "w2");
  Transcript late(v.id());
  late.add_turn(v, TurnRole::kUser, "w1");
  EXPECT_THROW(late.add_turn(v, TurnRole::kSystem, "w0"), Error);
}

TEST(Transcript, FlattenInsertsOneHeaderPerTurn) {
  const Vocabulary v = vocab();
  Transcript t(v.id());
  t.add_turn(v, TurnRole::kUser, "w0 w1");
  t.add_turn(v, TurnRole::kAssistant, "w2");
  const TokenStream s = t.flatten(v);
  EXPECT_EQ(s.tokens, (std::vector<TokenId>{v.at("<user>"), 3, 4, v.at("<assistant>"), 5}));
  EXPECT_EQ(s.roles, (std::vector<TurnRole>{TurnRole::kUser, TurnRole::kUser, TurnRole::kUser,
                                            TurnRole::kAssistant, TurnRole::kAssistant}));
  EXPECT_EQ(s.turn_index, (std::vector<int>{0, 0, 0, 1, 1}));
}

TEST(Transcript, NoHeaderWhenVocabularyLacksIt) {
  const Vocabulary v({"a", "b"});
  Transcript t(v.id());
  t.add_turn(v, TurnRole::kUser, "a b");
  EXPECT_EQ(t.flatten(v).size(), 2u);
}

TEST(Transcript, JsonRoundTrip) {
  const Vocabulary v = vocab();
  const Transcript t = random_transcript(v, 3, 5);
  const Transcript back = Transcript::from_json(t.to_json(), v);
  EXPECT_EQ(back, t);
  EXPECT_EQ(back.content_hash(), t.content_hash());
}

TEST(Transcript, VocabularyMismatchIsDetected) {
  const Vocabulary v = vocab(), other = generic_vocabulary(7);
  const Transcript t = random_transcript(v, 1, 2);
  EXPECT_THROW(t.flatten(other), Error);
  nlohmann::json j = t.to_json();
  try {
    Transcript::from_json(j, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMismatch);
  }
}

TEST(Transcript, MalformedJsonIsDataError) {
  try {
    Transcript::from_json(nlohmann::json{{"turns", {{{"role", "user"}}}}}, vocab());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
  EXPECT_THROW(role_from_string("narrator"), Error);
}

TEST(Transcript, BundledScriptsLoad) {
  for (const char* name : {"drift", "aura", "plan"}) {
    const auto j = read_json_file(std::string(PVL_DATA_DIR) + "/scripts/" + name + ".json");
    EXPECT_TRUE(j.contains("turns")) << name;
  }
}
