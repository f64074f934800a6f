#include <gtest/gtest.h>

#include <cmath>

#include "geoshield/errors.hpp"
#include "geoshield/semantic.hpp"

using namespace geoshield;

namespace {

TEST(Semantic, IdenticalCaptions) {
  const auto r = semantic_consistency("a red bus on a wet road", "A red bus on a wet road.");
  EXPECT_EQ(r.bleu, 1.0);
  EXPECT_EQ(r.rouge, 1.0);
  EXPECT_FALSE(r.bert_s);
}

TEST(Semantic, DisjointCaptions) {
  const auto r = semantic_consistency("a red bus on a wet road", "two cats sleeping");
  EXPECT_EQ(r.bleu, 0.0);
  EXPECT_EQ(r.rouge, 0.0);
}

TEST(Semantic, HandLcsExample) {
  EXPECT_DOUBLE_EQ(rouge_l_f1("the cat sat on the mat", "the cat on the mat"), 10.0 / 11.0);
}

TEST(Semantic, BleuHandComputed) {
  // candidate "the cat on the mat" (5 tokens), reference 6 tokens:
  // p1 = 5/5, p2 = (3+1)/(4+1), p3 = (1+1)/(3+1), p4 = (0+1)/(2+1); bp = exp(1 - 6/5)
  const double expect =
      std::exp(1.0 - 6.0 / 5.0) * std::pow(1.0 * (4.0 / 5.0) * (2.0 / 4.0) * (1.0 / 3.0), 0.25);
  EXPECT_NEAR(sentence_bleu("the cat sat on the mat", "the cat on the mat"), expect, 1e-15);
}

TEST(Semantic, ShortCandidateUsesAvailableOrders) {
  // two tokens: only 1- and 2-gram precisions exist
  const double expect = std::exp(1.0 - 3.0 / 2.0) * std::sqrt(1.0 * (2.0 / 2.0));
  EXPECT_NEAR(sentence_bleu("red bus stops", "red bus"), expect, 1e-15);
}

TEST(Semantic, ScorerSlot) {
  const auto r = semantic_consistency("a b", "a c", [](std::string_view, std::string_view) { return 0.75; });
  ASSERT_TRUE(r.bert_s);
  EXPECT_EQ(*r.bert_s, 0.75);
  EXPECT_THROW(semantic_consistency("a", "b", [](std::string_view, std::string_view) { return 1.5; }),
               ContractError);
}

TEST(Semantic, EmptyCaptionsRejected) {
  EXPECT_THROW(semantic_consistency("", "x"), DomainError);
  EXPECT_THROW(semantic_consistency("x", " ,. "), DomainError);
}

}  // namespace
