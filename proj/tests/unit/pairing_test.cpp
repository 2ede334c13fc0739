#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "persona/pairing.hpp"
#include "support/bm25_oracle.hpp"
#include "support/synthetic.hpp"

namespace {

using namespace persona::pairing;
using persona::ContractViolation;
using persona::DataError;
using persona::corpus::Corpus;
using persona::corpus::SourceTag;
using persona::corpus::tokenize;

Corpus make_general(std::initializer_list<std::pair<const char*, const char*>> pairs) {
  Corpus c;
  for (auto [p, r] : pairs) c.pairs.push_back({tokenize(p), tokenize(r), SourceTag::general()});
  return c;
}

TEST(BuildIndex, SinglePair) {
  auto general = make_general({{"how are you", "fine thanks fine"}});
  auto index = build_index(general);
  EXPECT_EQ(index.document_count(), 1u);
  ASSERT_EQ(index.postings("fine").size(), 1u);
  EXPECT_EQ(index.postings("fine")[0].doc, 0u);
  EXPECT_EQ(index.postings("fine")[0].tf, 2u);
  EXPECT_DOUBLE_EQ(index.average_length(), 3.0);
  EXPECT_TRUE(index.postings("how").empty());  // posts are not indexed
  EXPECT_TRUE(index.postings("absent").empty());
  EXPECT_EQ(index.document_frequency("absent"), 0u);
}

TEST(BuildIndex, EmptyCorpusRejected) {
  Corpus empty;
  EXPECT_THROW(build_index(empty), ContractViolation);
}

TEST(BuildIndex, DocumentFrequenciesMatchCounting) {
  synthetic::World world;
  auto general = world.general(100, 3);
  auto index = build_index(general);
  std::map<std::string, std::set<std::size_t>> docs;
  for (std::size_t d = 0; d < general.pairs.size(); ++d)
    for (const auto& t : general.pairs[d].response) docs[t].insert(d);
  for (const auto& [token, set] : docs) {
    EXPECT_EQ(index.document_frequency(token), set.size()) << token;
    std::size_t k = 0;
    for (std::size_t d : set) EXPECT_EQ(index.postings(token)[k++].doc, d);
  }
}

TEST(MatchMessage, IdenticalResponseRanksFirst) {
  auto general = make_general({{"p1", "red green"}, {"p2", "blue sky wide"}, {"p3", "green grass"}});
  auto index = build_index(general);
  auto ranked = match_message(index, tokenize("blue sky wide"), 3);
  ASSERT_FALSE(ranked.empty());
  EXPECT_EQ(ranked[0].doc, 1u);
  EXPECT_TRUE(match_message(index, tokenize("nothing shared"), 5).empty());
  EXPECT_THROW(match_message(index, tokenize("red"), 0), ContractViolation);
}

TEST(MatchMessage, ReturnsAtMostMatchingDocs) {
  auto general = make_general({{"p1", "red green"}, {"p2", "blue sky"}, {"p3", "green grass"}});
  auto index = build_index(general);
  EXPECT_EQ(match_message(index, tokenize("green"), 10).size(), 2u);
  EXPECT_EQ(match_message(index, tokenize("green"), 1).size(), 1u);
}

TEST(MatchMessage, TiesGoToSmallerDocId) {
  auto general = make_general({{"p1", "alpha beta"}, {"p2", "alpha gamma"}, {"p3", "alpha beta"}});
  auto index = build_index(general);
  auto ranked = match_message(index, tokenize("alpha"), 3);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].doc, 0u);
  EXPECT_EQ(ranked[1].doc, 1u);
  EXPECT_EQ(ranked[2].doc, 2u);
  auto dup = match_message(index, tokenize("alpha beta"), 2);
  EXPECT_EQ(dup[0].doc, 0u);
  EXPECT_EQ(dup[1].doc, 2u);
}

TEST(MatchMessage, TopOneMatchesBruteForceScoring) {
  synthetic::World world;
  auto general = world.general(50, 9);
  auto index = build_index(general);
  std::mt19937_64 rng(4);
  for (int q = 0; q < 100; ++q) {
    auto query = world.message(static_cast<std::size_t>(q) % 5, rng() % world.topics, rng);
    auto ours = match_message(index, query, 50);
    auto oracle = oracle::brute_force_rank(general, query);
    ASSERT_EQ(ours.size(), oracle.size());
    for (std::size_t i = 0; i < ours.size(); ++i) {
      EXPECT_NEAR(ours[i].score, oracle[i].score, 1e-12);
      if (i > 0) {
        EXPECT_GE(ours[i - 1].score, ours[i].score);
      }
    }
    if (!ours.empty()) {
      // oracle's stable sort keeps the smaller id first among equal scores
      EXPECT_TRUE(ours[0].doc == oracle[0].doc || std::abs(ours[0].score - oracle[0].score) < 1e-12);
    }
  }
}

TEST(MatchMessage, ScoreNonDecreasingInTermFrequency) {
  synthetic::World world;
  auto index = build_index(world.general(60, 5));
  for (std::size_t len : {1u, 3u, 10u}) {
    for (double idf : {0.1, 1.0, 3.0}) {
      double prev = 0;
      for (std::size_t tf = 1; tf <= 20; ++tf) {
        const double s = index.term_score(idf, tf, len);
        EXPECT_GE(s, prev);
        prev = s;
      }
    }
  }
  // same length, different tf, through the index itself
  auto general = make_general({{"p1", "x y y"}, {"p2", "x y z"}, {"p3", "w w w"}});
  auto idx = build_index(general);
  auto ranked = match_message(idx, tokenize("y"), 2);
  EXPECT_EQ(ranked[0].doc, 0u);
  EXPECT_GT(ranked[0].score, ranked[1].score);
}

TEST(MatchMessage, StableUnderCorpusPermutation) {
  synthetic::World world;
  auto general = world.general(80, 13);
  auto shuffled = general;
  std::mt19937_64 rng(6);
  std::shuffle(shuffled.pairs.begin(), shuffled.pairs.end(), rng);
  auto a = build_index(general);
  auto b = build_index(shuffled);
  for (int q = 0; q < 40; ++q) {
    auto query = world.message(0, rng() % world.topics, rng);
    auto ra = match_message(a, query, 80);
    auto rb = match_message(b, query, 80);
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) EXPECT_NEAR(ra[i].score, rb[i].score, 1e-12);
    if (ra.size() > 1 && ra[0].score != ra[1].score) {
      EXPECT_EQ(general.pairs[ra[0].doc].response, shuffled.pairs[rb[0].doc].response);
    }
  }
}

TEST(BuildPersonaCorpus, AdoptsPostOfBestResponse) {
  auto general = make_general({{"what is up", "not much really"}, {"nice day", "sunny and warm"}});
  auto index = build_index(general);
  auto built = build_persona_corpus(index, {{tokenize("sunny and warm"), "ann"}}, general);
  ASSERT_EQ(built.corpus.pairs.size(), 1u);
  EXPECT_EQ(built.corpus.pairs[0].post, tokenize("nice day"));
  EXPECT_EQ(built.corpus.pairs[0].response, tokenize("sunny and warm"));
  EXPECT_EQ(built.corpus.tag, SourceTag::persona("ann"));
}

TEST(BuildPersonaCorpus, SkipsUnmatchable) {
  auto general = make_general({{"what is up", "not much really"}, {"nice day", "sunny and warm"}});
  auto index = build_index(general);
  auto built = build_persona_corpus(index, {{tokenize("warm indeed"), "bo"}, {tokenize("zzz qqq"), "bo"}}, general);
  EXPECT_EQ(built.corpus.pairs.size(), 1u);
  EXPECT_EQ(built.skipped_unmatchable, 1u);
  EXPECT_THROW(build_persona_corpus(index, {{tokenize("zzz"), "bo"}}, general), DataError);
  EXPECT_THROW(build_persona_corpus(index, {}, general), ContractViolation);
}

TEST(BuildPersonaCorpus, StoplistOnlyMessagesDropped) {
  auto general = make_general({{"hey", "hello there friend"}, {"nice day", "sunny and warm"}});
  auto index = build_index(general);
  std::unordered_set<std::string> stop{"hello", "hi"};
  auto built = build_persona_corpus(index, {{tokenize("hello hi"), "cy"}, {tokenize("hello sunny"), "cy"}}, general, stop);
  EXPECT_EQ(built.dropped_stoplisted, 1u);
  ASSERT_EQ(built.corpus.pairs.size(), 1u);
  // "hello" is ignored for matching, so the pair goes to the sunny response
  EXPECT_EQ(built.corpus.pairs[0].post, tokenize("nice day"));
  EXPECT_EQ(built.corpus.pairs[0].response, tokenize("hello sunny"));
}

TEST(BuildPersonaCorpus, PostsAlwaysComeFromGeneralCorpus) {
  synthetic::World world;
  auto general = world.general(500, 1);
  auto index = build_index(general);
  std::set<std::vector<std::string>> posts;
  for (const auto& p : general.pairs) posts.insert(p.post);
  for (std::size_t persona = 0; persona < 5; ++persona) {
    auto built = build_persona_corpus(index, world.messages(persona, 200, 2), general, synthetic::World::stopwords());
    EXPECT_EQ(built.corpus.pairs.size() + built.skipped_unmatchable + built.dropped_stoplisted, 200u);
    for (const auto& p : built.corpus.pairs) EXPECT_TRUE(posts.contains(p.post));
    for (std::size_t i = 0; i < built.corpus.pairs.size(); ++i)
      EXPECT_EQ(built.corpus.pairs[i].post, general.pairs[built.matched_docs[i]].post);
  }
}

TEST(BuildPersonaCorpus, SinglePersonaOnly) {
  auto general = make_general({{"a b", "c d"}});
  auto index = build_index(general);
  EXPECT_THROW(build_persona_corpus(index, {{tokenize("c"), "ann"}, {tokenize("d"), "bo"}}, general), ContractViolation);
}

TEST(Messages, ParseSkipsBlankLines) {
  std::istringstream in("first  message\n\n   \nsecond\n");
  auto msgs = parse_messages(in, "ann");
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].tokens, tokenize("first message"));
  EXPECT_EQ(msgs[1].persona, "ann");
  EXPECT_THROW(load_messages("/nonexistent/messages.txt", "ann"), DataError);
}

}  // namespace
