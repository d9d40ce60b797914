#include <gtest/gtest.h>

#include <string>

#include "safegen/detector.hpp"
#include "safegen/registry.hpp"
#include "oracles.hpp"

using namespace safegen;

namespace {

std::vector<std::string> all_strings(std::size_t max_len, const std::string& alphabet) {
  std::vector<std::string> out = {""};
  std::vector<std::string> frontier = {""};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::string> next;
    for (const auto& s : frontier)
      for (char c : alphabet) next.push_back(s + c);
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

}  // namespace

TEST(Gestalt, KnownValues) {
  EXPECT_DOUBLE_EQ(ratcliff_obershelp("violence", "violent"), 0.8);
  EXPECT_DOUBLE_EQ(ratcliff_obershelp("", ""), 1.0);
  EXPECT_DOUBLE_EQ(ratcliff_obershelp("abc", ""), 0.0);
  EXPECT_DOUBLE_EQ(ratcliff_obershelp("abcd", "bcde"), 0.75);
}

TEST(Gestalt, MatchesBruteForceExhaustivelyToLengthFour) {
  const auto strings = all_strings(4, "abcd");
  for (const auto& a : strings)
    for (const auto& b : strings) ASSERT_DOUBLE_EQ(ratcliff_obershelp(a, b), oracle::gestalt(a, b)) << a << " / " << b;
}

TEST(Gestalt, MatchesBruteForceOnRandomLongStrings) {
  Rng rng(99);
  auto draw = [&] {
    std::string s(static_cast<std::size_t>(rng.uniform() * 13), 'a');
    for (char& c : s) c = "abcd"[static_cast<int>(rng.uniform() * 4) % 4];
    return s;
  };
  for (int i = 0; i < 20000; ++i) {
    const std::string a = draw(), b = draw();
    const double r = ratcliff_obershelp(a, b);
    ASSERT_DOUBLE_EQ(r, oracle::gestalt(a, b)) << a << " / " << b;
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 1.0);
    ASSERT_DOUBLE_EQ(ratcliff_obershelp(a, a), 1.0);
  }
}

TEST(NearestCentroid, PicksTheClosestLabel) {
  const ConceptRegistry r = make_default_registry();
  for (const auto& l : r.detection_labels()) {
    const Detection d = classify_nn(r.at(l).centroid, r);
    EXPECT_EQ(d.predicted_label, l);
    EXPECT_EQ(d.predicted_class, r.at(l).cls);
    EXPECT_NEAR(d.best_similarity, 1.0, 1e-12);
    EXPECT_GE(d.margin, 0.0);
  }
}

TEST(NearestCentroid, ScaleInvariantAndDeterministic) {
  const ConceptRegistry r = make_default_registry();
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec q = rng.normal_vector(r.dimension());
    const Detection a = classify_nn(Embedding(q), r);
    const Detection b = classify_nn(Embedding(scaled(q, 0.01 + 50.0 * rng.uniform())), r);
    EXPECT_EQ(a.predicted_label, b.predicted_label);
    EXPECT_EQ(classify_nn(Embedding(q), r), a);
  }
}

TEST(NearestCentroid, Errors) {
  const ConceptRegistry r = make_default_registry();
  EXPECT_THROW(classify_nn(Embedding(Vec(r.dimension(), 0.0)), r), DomainError);
  EXPECT_THROW(classify_nn(Embedding(Vec(3, 1.0)), r), DomainError);
}

TEST(NearestCentroid, FullAccuracyOnMarginSeparatedClusters) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto fx = oracle::separated_clusters(seed, 6, 16, 200, 0.45);
    std::size_t hits = 0;
    for (const auto& [label, x] : fx.points) hits += classify_nn(Embedding(x), fx.registry).predicted_class == fx.registry.at(label).cls;
    EXPECT_EQ(hits, fx.points.size()) << "seed " << seed;
  }
}

TEST(LlmDetector, InstructionTemplate) {
  const std::string s = build_llm_instruction("a brawl", {"violence", "hate"});
  EXPECT_EQ(s,
            "Given the text to image prompt [a brawl] and the safe detection categories [violence, hate], what would "
            "be the top predicted class for the input?");
}

TEST(LlmDetector, EchoedLabel) {
  const ConceptRegistry r = make_default_registry();
  ScriptedClient client({std::string("The top predicted class is: Violence.")});
  const Detection d = classify_llm("two men fighting", detection_candidates(r), client);
  EXPECT_EQ(d.predicted_label, "violence");
  EXPECT_EQ(d.predicted_class, ConceptClass::unsafe);
  EXPECT_EQ(d.method, DetectionMethod::llm);
  EXPECT_EQ(client.instructions().size(), 1u);
}

TEST(LlmDetector, GarbageIsNoMatch) {
  const ConceptRegistry r = make_default_registry();
  ScriptedClient client({std::string("zzqx")});
  EXPECT_THROW(classify_llm("p", detection_candidates(r), client), NoMatchError);
  ScriptedClient empty({std::string("")});
  EXPECT_THROW(classify_llm("p", detection_candidates(r), empty), NoMatchError);
}

TEST(LlmDetector, RetriesTransientFailures) {
  const ConceptRegistry r = make_default_registry();
  ScriptedClient client({ScriptedClient::Failure{}, ScriptedClient::Failure{}, std::string("full clothing")});
  const Detection d = classify_llm("p", detection_candidates(r), client, RetryPolicy{3});
  EXPECT_EQ(d.predicted_label, "full clothing");
  EXPECT_EQ(d.predicted_class, ConceptClass::safe);
  EXPECT_EQ(client.instructions().size(), 3u);

  ScriptedClient failing({ScriptedClient::Failure{}});
  try {
    classify_llm("p", detection_candidates(r), failing, RetryPolicy{2});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 2);
  }
}

TEST(LlmDetector, MultiWordLabelInsideSentence) {
  const ConceptRegistry r = make_default_registry();
  const Detection d = parse_llm_response("I would say it is showing self care, mostly.", detection_candidates(r));
  EXPECT_EQ(d.predicted_label, "showing self care");
}
