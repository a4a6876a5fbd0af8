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

#include "qreform/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

#include "qreform/error.hpp"

namespace qreform::search {

namespace {

bool is_token_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",   "at",    "be",   "by",   "for",  "from",
      "has",  "he",   "in",   "is",   "it",   "its",   "of",   "on",   "or",   "that",
      "the",  "to",   "was",  "were", "will", "with",  "this", "but",  "not",  "what",
      "which", "who", "whom", "when", "where", "why",  "how",  "his",  "her",  "they"};
  return words;
}

// Harman's S-stemmer.
void s_stem(std::string& w) {
  const auto ends = [&](std::string_view suf) {
    return w.size() > suf.size() && w.compare(w.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends("ies") && !ends("eies") && !ends("aies")) {
    w.replace(w.size() - 3, 3, "y");
  } else if (ends("es") && !ends("aes") && !ends("ees") && !ends("oes")) {
    w.pop_back();
  } else if (ends("s") && !ends("us") && !ends("ss")) {
    w.pop_back();
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& opts) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (opts.remove_stopwords && stopwords().count(cur)) {
      cur.clear();
      return;
    }
    if (opts.stem) s_stem(cur);
    out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_token_char(c)) {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

TokenId Vocabulary::intern(std::string_view word) {
  auto it = ids_.find(std::string(word));
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(words_.size());
  words_.emplace_back(word);
  ids_.emplace(words_.back(), id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t Document::tf(TokenId t) const {
  auto it = std::lower_bound(term_counts.begin(), term_counts.end(), t,
                             [](const auto& p, TokenId v) { return p.first < v; });
  return it != term_counts.end() && it->first == t ? it->second : 0;
}

DocIndex Corpus::add_document(std::string doc_id, std::string_view text) {
  TokenSeq tokens;
  for (const auto& w : tokenize(text, opts_)) tokens.push_back(vocab_.intern(w));
  return add_document(std::move(doc_id), std::move(tokens));
}

DocIndex Corpus::add_document(std::string doc_id, TokenSeq tokens) {
  if (by_id_.count(doc_id)) throw DataError("duplicate doc_id '" + doc_id + "'");
  Document d;
  d.doc_id = std::move(doc_id);
  d.tokens = std::move(tokens);
  TokenSeq sorted = d.tokens;
  std::sort(sorted.begin(), sorted.end());
  for (auto t : sorted) {
    if (t >= vocab_.size()) throw std::out_of_range("token id outside vocabulary");
    if (!d.term_counts.empty() && d.term_counts.back().first == t) {
      ++d.term_counts.back().second;
    } else {
      d.term_counts.emplace_back(t, 1);
    }
  }
  if (counts_.size() < vocab_.size()) counts_.resize(vocab_.size(), 0);
  for (auto t : d.tokens) ++counts_[t];
  total_ += d.tokens.size();
  const auto idx = static_cast<DocIndex>(docs_.size());
  by_id_.emplace(d.doc_id, idx);
  docs_.push_back(std::move(d));
  return idx;
}

TokenSeq Corpus::encode(std::string_view text) {
  TokenSeq out;
  for (const auto& w : tokenize(text, opts_)) out.push_back(vocab_.intern(w));
  return out;
}

TokenSeq Corpus::lookup(std::string_view text) const {
  TokenSeq out;
  for (const auto& w : tokenize(text, opts_)) {
    if (auto id = vocab_.find(w)) out.push_back(*id);
  }
  return out;
}

std::string Corpus::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (auto t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += vocab_.word(t);
  }
  return out;
}

std::vector<std::string> Corpus::words(std::span<const TokenId> tokens) const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (auto t : tokens) out.push_back(vocab_.word(t));
  return out;
}

std::optional<DocIndex> Corpus::find(std::string_view doc_id) const {
  auto it = by_id_.find(std::string(doc_id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

double Corpus::collection_prob(TokenId t) const {
  if (total_ == 0) return 0.0;
  return static_cast<double>(collection_count(t)) / static_cast<double>(total_);
}

// ---------------------------------------------------------------------------

InvertedIndex InvertedIndex::build(std::shared_ptr<const Corpus> corpus, Bm25Params params) {
  if (!corpus || corpus->empty()) throw DataError("cannot index an empty corpus");
  if (params.k1 < 0.0 || params.b < 0.0 || params.b > 1.0) {
    throw ConfigError("BM25 requires k1 >= 0 and b in [0, 1]");
  }
  InvertedIndex idx;
  idx.params_ = params;
  const std::size_t n = corpus->size();
  idx.postings_.resize(corpus->vocab().size());
  idx.doc_lengths_.resize(n);
  double total_len = 0.0;
  for (DocIndex d = 0; d < n; ++d) {
    const auto& doc = corpus->doc(d);
    idx.doc_lengths_[d] = static_cast<std::uint32_t>(doc.length());
    total_len += static_cast<double>(doc.length());
    for (const auto& [t, c] : doc.term_counts) idx.postings_[t].push_back({d, c});
  }
  idx.avgdl_ = total_len / static_cast<double>(n);
  idx.idf_.resize(idx.postings_.size());
  for (std::size_t t = 0; t < idx.postings_.size(); ++t) {
    const double df = static_cast<double>(idx.postings_[t].size());
    idx.idf_[t] = std::log(1.0 + (static_cast<double>(n) - df + 0.5) / (df + 0.5));
  }
  std::vector<DocIndex> order(n);
  std::iota(order.begin(), order.end(), DocIndex{0});
  std::sort(order.begin(), order.end(), [&](DocIndex a, DocIndex b) {
    return corpus->doc(a).doc_id < corpus->doc(b).doc_id;
  });
  idx.id_rank_.resize(n);
  for (std::size_t r = 0; r < n; ++r) idx.id_rank_[order[r]] = static_cast<std::uint32_t>(r);
  idx.corpus_ = std::move(corpus);
  return idx;
}

std::span<const Posting> InvertedIndex::postings(TokenId t) const {
  if (t >= postings_.size()) return {};
  return postings_[t];
}

double InvertedIndex::term_weight(TokenId t, std::uint32_t tf, std::uint32_t doc_len) const {
  const double f = static_cast<double>(tf);
  const double norm =
      params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(doc_len) / avgdl_);
  return idf(t) * f * (params_.k1 + 1.0) / (f + norm);
}

namespace {

struct Accumulator {
  std::vector<double> score;
  std::vector<char> seen;
  std::vector<DocIndex> touched;
};

Accumulator& scratch(std::size_t n) {
  thread_local Accumulator acc;
  if (acc.score.size() < n) {
    acc.score.assign(n, 0.0);
    acc.seen.assign(n, 0);
  }
  return acc;
}

}  // namespace

RankedList bm25_search(const InvertedIndex& index, std::span<const TokenId> query,
                       std::size_t k) {
  if (k == 0) throw std::invalid_argument("bm25_search: k must be >= 1");
  auto& acc = scratch(index.doc_count());
  acc.touched.clear();
  for (auto t : query) {
    for (const auto& p : index.postings(t)) {
      if (!acc.seen[p.doc]) {
        acc.seen[p.doc] = 1;
        acc.touched.push_back(p.doc);
      }
      acc.score[p.doc] += index.term_weight(t, p.tf, index.doc_length(p.doc));
    }
  }
  RankedList out;
  out.reserve(acc.touched.size());
  for (auto d : acc.touched) {
    out.push_back({d, acc.score[d]});
    acc.score[d] = 0.0;
    acc.seen[d] = 0;
  }
  const auto better = [&](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return index.id_rank(a.doc) < index.id_rank(b.doc);
  };
  if (out.size() > k) {
    std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k), out.end(),
                      better);
    out.resize(k);
  } else {
    std::sort(out.begin(), out.end(), better);
  }
  return out;
}

double dirichlet_prob(TokenId t, const Document& d, double u, const Corpus& corpus) {
  if (u < 0.0) throw std::invalid_argument("dirichlet_prob: u must be >= 0");
  const double denom = static_cast<double>(d.length()) + u;
  if (denom == 0.0) throw std::invalid_argument("dirichlet_prob: |d| + u is zero");
  const double smooth = u > 0.0 ? u * corpus.collection_prob(t) : 0.0;
  return (static_cast<double>(d.tf(t)) + smooth) / denom;
}

RelevantSet::RelevantSet(std::vector<DocIndex> docs) : docs_(std::move(docs)) {
  std::sort(docs_.begin(), docs_.end());
  docs_.erase(std::unique(docs_.begin(), docs_.end()), docs_.end());
}

bool RelevantSet::contains(DocIndex d) const {
  return std::binary_search(docs_.begin(), docs_.end(), d);
}

EnvResponse query_environment(const InvertedIndex& index, std::span<const TokenId> query,
                              std::size_t k, const RelevantSet& relevant) {
  if (relevant.empty()) throw std::invalid_argument("undefined recall");
  EnvResponse r;
  r.ranked = bm25_search(index, query, k);
  std::size_t hits = 0;
  for (const auto& sd : r.ranked) hits += relevant.contains(sd.doc) ? 1 : 0;
  r.reward = static_cast<double>(hits) / static_cast<double>(relevant.size());
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string chomp(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

}  // namespace

std::vector<RawDocument> read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  std::vector<RawDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = chomp(line);
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      docs.push_back({j.at("doc_id").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

void write_corpus_jsonl(const std::string& path, std::span<const RawDocument> docs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& d : docs) {
    out << nlohmann::json{{"doc_id", d.doc_id}, {"text", d.text}}.dump() << '\n';
  }
}

std::vector<RawQuery> read_queries_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open queries file " + path);
  std::vector<RawQuery> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = chomp(line);
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 2) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 'qid<TAB>text'");
    }
    out.push_back({cols[0], cols[1]});
  }
  return out;
}

void write_queries_tsv(const std::string& path, std::span<const RawQuery> queries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& q : queries) out << q.qid << '\t' << q.text << '\n';
}

Qrels read_qrels_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open qrels file " + path);
  Qrels out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = chomp(line);
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 2) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 'qid<TAB>doc_id'");
    }
    auto& docs = out[cols[0]];
    if (std::find(docs.begin(), docs.end(), cols[1]) == docs.end()) docs.push_back(cols[1]);
  }
  return out;
}

void write_qrels_tsv(const std::string& path, const Qrels& qrels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& [qid, docs] : qrels) {
    for (const auto& d : docs) out << qid << '\t' << d << '\n';
  }
}

}  // namespace qreform::search
