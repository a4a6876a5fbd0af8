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

#include "qreform/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_set>

#include "qreform/error.hpp"

namespace qreform::baselines {

void Rm3Config::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("rm3 lambda must lie in [0, 1]");
  if (mu < 0.0) throw ConfigError("rm3 mu must be >= 0");
  if (fb_docs < 1) throw ConfigError("rm3 needs at least one feedback document");
}

double tfidf(const search::InvertedIndex& index, TokenId t, std::uint32_t tf) {
  const double df = index.df(t);
  if (df == 0.0) return 0.0;
  return static_cast<double>(tf) * std::log(static_cast<double>(index.doc_count()) / df);
}

std::vector<TokenId> top_tfidf_terms(const search::InvertedIndex& index, DocIndex d,
                                     std::size_t n) {
  const auto& corpus = index.corpus();
  const auto& doc = corpus.doc(d);
  std::vector<std::pair<double, TokenId>> scored;
  scored.reserve(doc.term_counts.size());
  for (const auto& [t, c] : doc.term_counts) scored.emplace_back(tfidf(index, t, c), t);
  const auto better = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return corpus.vocab().word(a.second) < corpus.vocab().word(b.second);
  };
  const std::size_t take = std::min(n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), better);
  std::vector<TokenId> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
  return out;
}

TokenSeq prf_expand(std::span<const TokenId> q0, const search::InvertedIndex& index,
                    std::size_t n, std::size_t k) {
  TokenSeq out(q0.begin(), q0.end());
  if (n == 0 || k == 0) return out;
  const auto ranked = search::bm25_search(index, q0, k);
  std::unordered_set<TokenId> added;
  for (const auto& sd : ranked) {
    for (auto t : top_tfidf_terms(index, sd.doc, n)) {
      if (added.insert(t).second) out.push_back(t);
    }
  }
  return out;
}

std::vector<TermProb> rm3_distribution(std::span<const TokenId> q0,
                                       const search::InvertedIndex& index, const Rm3Config& cfg) {
  cfg.validate();
  const auto& corpus = index.corpus();
  const auto feedback = search::bm25_search(index, q0, cfg.fb_docs);
  if (feedback.empty()) throw DataError("no feedback documents");

  // log P(q0|d) with Dirichlet-smoothed term probabilities. Query terms that
  // never occur in the collection are skipped: their factor would be zero for
  // every document and carries no information about which document matters.
  std::vector<double> log_lik(feedback.size(), 0.0);
  for (std::size_t i = 0; i < feedback.size(); ++i) {
    const auto& doc = corpus.doc(feedback[i].doc);
    for (auto t : q0) {
      if (corpus.collection_count(t) == 0) continue;
      log_lik[i] += std::log(search::dirichlet_prob(t, doc, cfg.mu, corpus));
    }
  }
  const double max_ll = *std::max_element(log_lik.begin(), log_lik.end());
  std::vector<double> weight(feedback.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < feedback.size(); ++i) {
    weight[i] = std::isfinite(max_ll) ? std::exp(log_lik[i] - max_ll) : 1.0;
    wsum += weight[i];
  }
  for (auto& w : weight) w /= wsum;

  const std::size_t vocab = corpus.vocab().size();
  std::vector<double> fb(vocab, 0.0);
  // Smoothing mass is shared across documents: sum_d w_d u P(t|C) / (|d|+u).
  double smooth_coef = 0.0;
  for (std::size_t i = 0; i < feedback.size(); ++i) {
    const auto& doc = corpus.doc(feedback[i].doc);
    const double denom = static_cast<double>(doc.length()) + cfg.mu;
    smooth_coef += weight[i] * cfg.mu / denom;
    for (const auto& [t, c] : doc.term_counts) {
      fb[t] += weight[i] * static_cast<double>(c) / denom;
    }
  }
  std::map<TokenId, double> query_tf;
  for (auto t : q0) query_tf[t] += 1.0;

  std::vector<TermProb> dist;
  dist.reserve(vocab);
  for (TokenId t = 0; t < vocab; ++t) {
    double feedback_part = fb[t] + smooth_coef * corpus.collection_prob(t);
    double query_part = 0.0;
    if (auto it = query_tf.find(t); it != query_tf.end()) {
      query_part = it->second / static_cast<double>(q0.size());
    }
    dist.push_back({t, (1.0 - cfg.lambda) * query_part + cfg.lambda * feedback_part});
  }
  std::sort(dist.begin(), dist.end(), [&](const TermProb& a, const TermProb& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return corpus.vocab().word(a.term) < corpus.vocab().word(b.term);
  });
  return dist;
}

TokenSeq rm3_expand(std::span<const TokenId> q0, const search::InvertedIndex& index,
                    const Rm3Config& cfg) {
  const auto dist = rm3_distribution(q0, index, cfg);
  TokenSeq out;
  for (std::size_t i = 0; i < dist.size() && out.size() < cfg.n_terms; ++i) {
    if (dist[i].prob <= 0.0) break;
    out.push_back(dist[i].term);
  }
  return out;
}

std::string expansion_trace_tsv(std::span<const TermProb> dist, const search::Corpus& corpus,
                                std::size_t limit) {
  std::ostringstream os;
  os << "term\tprobability\n";
  char buf[64];
  for (std::size_t i = 0; i < dist.size() && i < limit; ++i) {
    std::snprintf(buf, sizeof buf, "%.12g", dist[i].prob);
    os << corpus.vocab().word(dist[i].term) << '\t' << buf << '\n';
  }
  return os.str();
}

}  // namespace qreform::baselines
