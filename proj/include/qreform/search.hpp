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

// The retrieval environment: tokenizer, corpus store, immutable inverted
// index with BM25 ranking, Dirichlet-smoothed document language models and
// the query -> (ranked list, recall reward) interaction.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qreform/types.hpp"

namespace qreform::search {

struct TokenizerOptions {
  bool remove_stopwords = false;
  bool stem = false;  // plural-stripping "S" stemmer
};

// Lowercases ASCII letters and splits on ASCII non-alphanumerics. Bytes
// >= 0x80 are kept as token characters so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& opts = {});

class Vocabulary {
 public:
  TokenId intern(std::string_view word);
  std::optional<TokenId> find(std::string_view word) const;
  const std::string& word(TokenId id) const { return words_.at(id); }
  std::size_t size() const noexcept { return words_.size(); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct Document {
  std::string doc_id;
  TokenSeq tokens;
  // (term, count) sorted by term id.
  std::vector<std::pair<TokenId, std::uint32_t>> term_counts;

  std::size_t length() const noexcept { return tokens.size(); }
  std::uint32_t tf(TokenId t) const;
};

class Corpus {
 public:
  explicit Corpus(TokenizerOptions opts = {}) : opts_(opts) {}

  DocIndex add_document(std::string doc_id, std::string_view text);
  DocIndex add_document(std::string doc_id, TokenSeq tokens);

  // Tokenizes and interns every word, so words absent from the documents get
  // ids with zero collection count.
  TokenSeq encode(std::string_view text);
  // Tokenizes and keeps only words already in the vocabulary.
  TokenSeq lookup(std::string_view text) const;
  std::string decode(std::span<const TokenId> tokens) const;
  std::vector<std::string> words(std::span<const TokenId> tokens) const;

  const Vocabulary& vocab() const noexcept { return vocab_; }
  Vocabulary& vocab() noexcept { return vocab_; }
  const TokenizerOptions& tokenizer() const noexcept { return opts_; }

  std::size_t size() const noexcept { return docs_.size(); }
  bool empty() const noexcept { return docs_.empty(); }
  const Document& doc(DocIndex i) const { return docs_.at(i); }
  std::optional<DocIndex> find(std::string_view doc_id) const;

  std::uint64_t collection_count(TokenId t) const {
    return t < counts_.size() ? counts_[t] : 0;
  }
  std::uint64_t total_tokens() const noexcept { return total_; }
  // P(t|C) = count(t) / |C|.
  double collection_prob(TokenId t) const;

 private:
  TokenizerOptions opts_;
  Vocabulary vocab_;
  std::vector<Document> docs_;
  std::unordered_map<std::string, DocIndex> by_id_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct Posting {
  DocIndex doc;
  std::uint32_t tf;
};

struct ScoredDoc {
  DocIndex doc;
  double score;
  bool operator==(const ScoredDoc&) const = default;
};

// Ordered by (score desc, doc_id asc) with unique documents.
using RankedList = std::vector<ScoredDoc>;

class InvertedIndex {
 public:
  // Throws DataError on an empty corpus.
  static InvertedIndex build(std::shared_ptr<const Corpus> corpus, Bm25Params params = {});

  const Corpus& corpus() const noexcept { return *corpus_; }
  std::shared_ptr<const Corpus> corpus_ptr() const noexcept { return corpus_; }
  const Bm25Params& params() const noexcept { return params_; }

  std::size_t doc_count() const noexcept { return doc_lengths_.size(); }
  double avg_doc_length() const noexcept { return avgdl_; }
  std::uint32_t doc_length(DocIndex d) const { return doc_lengths_[d]; }
  std::size_t term_count() const noexcept { return postings_.size(); }

  std::uint32_t df(TokenId t) const {
    return t < postings_.size() ? static_cast<std::uint32_t>(postings_[t].size()) : 0;
  }
  std::span<const Posting> postings(TokenId t) const;
  // ln(1 + (N - df + 0.5) / (df + 0.5)).
  double idf(TokenId t) const { return t < idf_.size() ? idf_[t] : 0.0; }
  // Position of the document in ascending doc_id order.
  std::uint32_t id_rank(DocIndex d) const { return id_rank_[d]; }

  // BM25 contribution of one query-term occurrence.
  double term_weight(TokenId t, std::uint32_t tf, std::uint32_t doc_len) const;

 private:
  std::shared_ptr<const Corpus> corpus_;
  Bm25Params params_;
  std::vector<std::vector<Posting>> postings_;
  std::vector<double> idf_;
  std::vector<std::uint32_t> doc_lengths_;
  std::vector<std::uint32_t> id_rank_;
  double avgdl_ = 0.0;
};

// Top-k documents by BM25 summed over query tokens (repeats count again).
// Terms without postings are ignored; a query with no indexed term returns
// an empty list. Throws std::invalid_argument when k == 0.
RankedList bm25_search(const InvertedIndex& index, std::span<const TokenId> query, std::size_t k);

// (tf(t,d) + u P(t|C)) / (|d| + u).
double dirichlet_prob(TokenId t, const Document& d, double u, const Corpus& corpus);

// Immutable set of relevant documents.
class RelevantSet {
 public:
  RelevantSet() = default;
  explicit RelevantSet(std::vector<DocIndex> docs);
  bool contains(DocIndex d) const;
  std::size_t size() const noexcept { return docs_.size(); }
  bool empty() const noexcept { return docs_.empty(); }
  const std::vector<DocIndex>& docs() const noexcept { return docs_; }

 private:
  std::vector<DocIndex> docs_;  // sorted, unique
};

struct EnvResponse {
  RankedList ranked;
  double reward = 0.0;  // Recall@k
};

// Throws std::invalid_argument("undefined recall") when `relevant` is empty.
EnvResponse query_environment(const InvertedIndex& index, std::span<const TokenId> query,
                              std::size_t k, const RelevantSet& relevant);

// ---------------------------------------------------------------------------
// File formats

struct RawDocument {
  std::string doc_id;
  std::string text;
};

struct RawQuery {
  std::string qid;
  std::string text;
};

// Qrels keep file order of first appearance per query.
using Qrels = std::map<std::string, std::vector<std::string>>;

// JSON lines: {"doc_id": str, "text": str}.
std::vector<RawDocument> read_corpus_jsonl(const std::string& path);
void write_corpus_jsonl(const std::string& path, std::span<const RawDocument> docs);
// qid <TAB> text
std::vector<RawQuery> read_queries_tsv(const std::string& path);
void write_queries_tsv(const std::string& path, std::span<const RawQuery> queries);
// qid <TAB> doc_id, binary relevance.
Qrels read_qrels_tsv(const std::string& path);
void write_qrels_tsv(const std::string& path, const Qrels& qrels);

}  // namespace qreform::search
