// Copyright 2026 The qreform Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "qreform/error.hpp"
#include "qreform/search.hpp"

using namespace qreform;
using namespace qreform::search;

namespace {

using Words = std::vector<std::string>;

std::string random_text(Rng& rng, std::size_t len, std::size_t vocab) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) {
    if (i) s += ' ';
    s += "w" + std::to_string(uniform_index(rng, vocab));
  }
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("qreform-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("search") {

TEST_CASE("tokenizer") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("Nobel Prize, 1993") == Words{"nobel", "prize", "1993"});
  CHECK(tokenize("  --a--B  ") == Words{"a", "b"});
  CHECK(tokenize("caf\xc3\xa9 au lait") == Words{"caf\xc3\xa9", "au", "lait"});
  Rng rng(1);
  const std::string alphabet = "abcXYZ019 ,.;-_\t\n";
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (std::size_t k = uniform_index(rng, 40); k > 0; --k) s += alphabet[uniform_index(rng, alphabet.size())];
    const auto once = tokenize(s);
    std::string joined;
    for (const auto& w : once) joined += w + " ";
    CHECK(tokenize(joined) == once);
  }
}

TEST_CASE("optional stopword removal and plural stripping") {
  TokenizerOptions opts;
  opts.remove_stopwords = true;
  opts.stem = true;
  const auto toks = tokenize("The cats and the dogs", opts);
  CHECK(toks == Words{"cat", "dog"});
}

TEST_CASE("index statistics on the hand corpus") {
  const auto e = fixture::hand_corpus();
  const auto& ix = *e.index;
  CHECK(ix.doc_count() == 3);
  CHECK(ix.avg_doc_length() == doctest::Approx(14.0 / 3.0));
  // Hand counts.
  CHECK(ix.df(e.id("apple")) == 2);
  CHECK(ix.df(e.id("banana")) == 2);
  CHECK(ix.df(e.id("cherry")) == 2);
  CHECK(ix.df(e.id("date")) == 1);
  CHECK(ix.df(e.id("grape")) == 1);
  CHECK(e.corpus->doc(0).tf(e.id("apple")) == 2);
  CHECK(e.corpus->doc(1).tf(e.id("banana")) == 3);
  CHECK(e.corpus->doc(2).tf(e.id("grape")) == 2);
  CHECK(e.corpus->doc(1).tf(e.id("apple")) == 0);
  for (TokenId t = 0; t < e.corpus->vocab().size(); ++t) {
    const auto post = ix.postings(t);
    CHECK(post.size() == ix.df(t));
    for (std::size_t i = 1; i < post.size(); ++i) {
      CHECK(ix.id_rank(post[i - 1].doc) < ix.id_rank(post[i].doc));
    }
  }
}

TEST_CASE("corpus statistics sum to the collection size") {
  Rng rng(2);
  auto corpus = std::make_shared<Corpus>();
  for (int d = 0; d < 30; ++d) corpus->add_document("x" + std::to_string(d), random_text(rng, 20, 50));
  std::uint64_t counts = 0;
  double prob = 0;
  for (TokenId t = 0; t < corpus->vocab().size(); ++t) {
    counts += corpus->collection_count(t);
    prob += corpus->collection_prob(t);
  }
  CHECK(counts == corpus->total_tokens());
  CHECK(prob == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single-document index and empty corpus") {
  auto one = fixture::make_env({"a b c a"});
  for (const char* w : {"a", "b", "c"}) CHECK(one.index->df(one.id(w)) == 1);
  CHECK_THROWS_AS(InvertedIndex::build(std::make_shared<Corpus>()), DataError);
}

TEST_CASE("bm25 on the hand corpus matches scalar evaluation") {
  const auto e = fixture::hand_corpus();
  const auto raw = e.raw();
  for (const char* text : {"apple", "banana cherry", "grape apple fig", "apple apple date"}) {
    const auto q = e.q(text);
    const auto got = bm25_search(*e.index, q, 10);
    const auto want = oracle::bm25_rank(raw, q, 10);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].doc == want[i].first);
      CHECK(got[i].score == doctest::Approx(want[i].second).epsilon(1e-12));
    }
  }
}

TEST_CASE("bm25 agrees with a brute-force scorer on random corpora") {
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n_docs = 1 + uniform_index(rng, 200);
    const std::size_t vocab = 5 + uniform_index(rng, 60);
    std::vector<std::string> texts;
    for (std::size_t d = 0; d < n_docs; ++d) texts.push_back(random_text(rng, 1 + uniform_index(rng, 30), vocab));
    const auto e = fixture::make_env(texts);
    const auto raw = e.raw();
    for (int qi = 0; qi < 4; ++qi) {
      const auto q = e.corpus->lookup(random_text(rng, 1 + uniform_index(rng, 4), vocab + 5));
      const std::size_t k = 1 + uniform_index(rng, 20);
      const auto got = bm25_search(*e.index, q, k);
      const auto want = oracle::bm25_rank(raw, q, k);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].doc == want[i].first);
        CHECK(got[i].score == doctest::Approx(want[i].second).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("bm25 edge cases") {
  const auto e = fixture::make_env({"alpha beta", "gamma delta", "alpha beta", "epsilon"});
  SUBCASE("term absent everywhere gives an empty list") {
    auto corpus = std::make_shared<Corpus>();
    corpus->add_document("d", "x y");
    const auto q = corpus->encode("zzz");
    const auto ix = InvertedIndex::build(corpus);
    CHECK(bm25_search(ix, q, 5).empty());
  }
  SUBCASE("a document equal to the query wins") {
    const auto r = bm25_search(*e.index, e.q("gamma delta"), 5);
    REQUIRE(!r.empty());
    CHECK(e.corpus->doc(r[0].doc).doc_id == "d1");
  }
  SUBCASE("equal scores break by doc id") {
    const auto r = bm25_search(*e.index, e.q("alpha"), 5);
    REQUIRE(r.size() == 2);
    CHECK(r[0].score == r[1].score);
    CHECK(e.corpus->doc(r[0].doc).doc_id == "d0");
    CHECK(e.corpus->doc(r[1].doc).doc_id == "d2");
  }
  SUBCASE("k = 0 is rejected") { CHECK_THROWS_AS(bm25_search(*e.index, e.q("alpha"), 0), std::invalid_argument); }
  SUBCASE("repeated searches are identical") {
    CHECK(bm25_search(*e.index, e.q("alpha gamma"), 3) == bm25_search(*e.index, e.q("alpha gamma"), 3));
  }
}

TEST_CASE("another occurrence of the query term never lowers a document's score") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> texts;
    for (int d = 0; d < 8; ++d) texts.push_back(random_text(rng, 1 + uniform_index(rng, 12), 6));
    const std::size_t target = uniform_index(rng, texts.size());
    const std::string term = "w" + std::to_string(uniform_index(rng, 6));
    texts[target] += " " + term;
    const auto before = fixture::make_env(texts);
    texts[target] += " " + term;
    const auto after = fixture::make_env(texts);
    const auto q1 = before.q(term), q2 = after.q(term);
    double s1 = 0, s2 = 0;
    for (const auto& r : bm25_search(*before.index, q1, 8)) {
      if (r.doc == target) s1 = r.score;
    }
    for (const auto& r : bm25_search(*after.index, q2, 8)) {
      if (r.doc == target) s2 = r.score;
    }
    CHECK(s2 >= s1 - 1e-12);
  }
}

TEST_CASE("recall reward is non-decreasing in k") {
  Rng rng(5);
  std::vector<std::string> texts;
  for (int d = 0; d < 60; ++d) texts.push_back(random_text(rng, 10, 20));
  const auto e = fixture::make_env(texts);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = e.corpus->lookup(random_text(rng, 3, 20));
    std::vector<DocIndex> rel;
    for (int i = 0; i < 5; ++i) rel.push_back(static_cast<DocIndex>(uniform_index(rng, 60)));
    const RelevantSet relevant(rel);
    double prev = 0;
    for (std::size_t k = 1; k <= 60; ++k) {
      const double r = query_environment(*e.index, q, k, relevant).reward;
      CHECK(r >= prev);
      prev = r;
    }
  }
}

TEST_CASE("dirichlet smoothing") {
  SUBCASE("hand value (2 + 1500 * 0.01) / (10 + 1500)") {
    auto corpus = std::make_shared<Corpus>();
    corpus->add_document("a", "t t x1 x2 x3 x4 x5 x6 x7 x8");
    std::string filler;
    for (int i = 0; i < 190; ++i) filler += "f" + std::to_string(i) + " ";
    corpus->add_document("b", filler);
    const TokenId t = *corpus->vocab().find("t");
    CHECK(corpus->collection_prob(t) == doctest::Approx(0.01));
    CHECK(dirichlet_prob(t, corpus->doc(0), 1500.0, *corpus) == doctest::Approx(17.0 / 1510.0).epsilon(1e-14));
    CHECK(dirichlet_prob(t, corpus->doc(0), 0.0, *corpus) == doctest::Approx(0.2).epsilon(1e-14));
  }
  SUBCASE("a word absent from the document and the corpus has probability 0") {
    auto corpus = std::make_shared<Corpus>();
    corpus->add_document("a", "x y");
    const TokenId z = corpus->encode("zeta")[0];
    CHECK(dirichlet_prob(z, corpus->doc(0), 1500.0, *corpus) == 0.0);
  }
  SUBCASE("empty document with u = 0 is an error") {
    auto corpus = std::make_shared<Corpus>();
    corpus->add_document("a", "x");
    corpus->add_document("empty", "");
    CHECK_THROWS_AS(dirichlet_prob(0, corpus->doc(1), 0.0, *corpus), std::invalid_argument);
  }
}

TEST_CASE("environment reward is recall at k") {
  const auto e = fixture::make_env({"a b", "a c", "a d", "a e", "z"});
  const auto q = e.q("a");
  CHECK(query_environment(*e.index, q, 4, RelevantSet({0, 1, 2, 3})).reward == 1.0);
  CHECK(query_environment(*e.index, q, 4, RelevantSet({4})).reward == 0.0);
  CHECK(query_environment(*e.index, q, 2, RelevantSet({0, 1, 2, 3})).reward == 0.5);
  CHECK_THROWS_WITH_AS(query_environment(*e.index, q, 2, RelevantSet{}), "undefined recall",
                       std::invalid_argument);
}

TEST_CASE("file formats round trip and reject malformed input") {
  const auto dir = temp_dir("search-io");
  const std::vector<RawDocument> docs{{"d1", "hello \"world\"\ttab"}, {"d2", "caf\xc3\xa9"}};
  write_corpus_jsonl((dir / "c.jsonl").string(), docs);
  const auto back = read_corpus_jsonl((dir / "c.jsonl").string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].doc_id == "d1");
  CHECK(back[0].text == docs[0].text);
  CHECK(back[1].text == docs[1].text);

  const std::vector<RawQuery> qs{{"q1", "one two"}, {"q2", "three"}};
  write_queries_tsv((dir / "q.tsv").string(), qs);
  const auto qb = read_queries_tsv((dir / "q.tsv").string());
  REQUIRE(qb.size() == 2);
  CHECK(qb[1].qid == "q2");
  CHECK(qb[1].text == "three");

  const Qrels qrels{{"q1", {"d2", "d1"}}, {"q2", {"d1"}}};
  write_qrels_tsv((dir / "r.tsv").string(), qrels);
  CHECK(read_qrels_tsv((dir / "r.tsv").string()) == qrels);

  std::ofstream((dir / "bad.jsonl").string()) << "{\"doc_id\": \"x\"\n";
  CHECK_THROWS_AS(read_corpus_jsonl((dir / "bad.jsonl").string()), DataError);
  std::ofstream((dir / "bad.tsv").string()) << "no-tab-here\n";
  CHECK_THROWS_AS(read_qrels_tsv((dir / "bad.tsv").string()), DataError);
  CHECK_THROWS_AS(read_queries_tsv((dir / "missing.tsv").string()), DataError);
}

}  // TEST_SUITE
