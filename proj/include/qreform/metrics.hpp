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

// Evaluation quantities: ranking metrics with binary relevance, token F1 and
// the oracle upper bound, reformulation diversity, and out-of-partition
// diagnostics. All functions are pure.

#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qreform/search.hpp"
#include "qreform/types.hpp"

namespace qreform::metrics {

using search::RelevantSet;

std::vector<DocIndex> doc_ids(const search::RankedList& ranked);

// |top-k ∩ relevant| / |relevant|.
double recall_at_k(std::span<const DocIndex> ranked, const RelevantSet& relevant, std::size_t k);
// Mean over relevant documents of precision at their rank; unretrieved
// relevant documents contribute 0.
double average_precision(std::span<const DocIndex> ranked, const RelevantSet& relevant);
// Precision at rank |relevant|.
double r_precision(std::span<const DocIndex> ranked, const RelevantSet& relevant);
// 1 / rank of the first relevant document, 0 when none is retrieved.
double reciprocal_rank(std::span<const DocIndex> ranked, const RelevantSet& relevant);
// Gain 1, discount 1/log2(rank + 1), over the whole list.
double ndcg(std::span<const DocIndex> ranked, const RelevantSet& relevant);

// Bag-of-tokens F1 with multiset intersection. Throws on empty truth.
double token_f1(std::span<const TokenId> prediction, std::span<const TokenId> truth);

// Per query, the best score among its candidates; averaged over queries.
double oracle_score(const std::vector<std::vector<double>>& candidate_scores);
// Recall@k of a perfect selector that ranks every relevant candidate first.
double oracle_recall(std::span<const DocIndex> candidates, const RelevantSet& relevant,
                     std::size_t k);

// ---------------------------------------------------------------------------
// Diversity over sets of reformulations of the same original query. Every
// set must hold at least two reformulations. Pairs are ordered (q, q'),
// q != q' by position. Results are scaled by 100 except length_std.

using ReformulationSet = std::vector<TokenSeq>;

// Mean pairwise cosine similarity of token count vectors.
double pcos(std::span<const ReformulationSet> sets);
// Mean pairwise sentence BLEU (orders 1-4, add-one smoothing for n >= 2).
double pbleu(std::span<const ReformulationSet> sets);
// Mean pairwise PINC with K = 4; orders longer than q' are skipped.
double pinc(std::span<const ReformulationSet> sets);
// Mean over sets of the population standard deviation of lengths.
double length_std(std::span<const ReformulationSet> sets);

double cosine_counts(std::span<const TokenId> a, std::span<const TokenId> b);
// BLEU of `hypothesis` against a single `reference`, in [0, 1].
double sentence_bleu(std::span<const TokenId> hypothesis, std::span<const TokenId> reference);
// PINC of candidate q against source q', in [0, 1].
double pinc_pair(std::span<const TokenId> q, std::span<const TokenId> q_prime,
                 std::size_t max_order = 4);

// ---------------------------------------------------------------------------

struct PartitionMetrics {
  double oop_score = 0.0;     // E_i[E_{j!=i}[s_ij]]
  double oop_variance = 0.0;  // E_i[V_{j!=i}[s_ij]] with an N-2 denominator
  double oop_error = 0.0;     // E_i[s_ii - E_{j!=i}[s_ij]]
};

// `s[i][j]` is agent i's score on partition j. Requires a square N x N
// matrix with N >= 3.
PartitionMetrics partition_metrics(const std::vector<std::vector<double>>& s);

// ---------------------------------------------------------------------------
// Per-query evaluation over runs keyed by query id.

struct EvalResult {
  std::vector<std::string> metric_names;
  std::map<std::string, std::map<std::string, double>> per_query;

  // Arithmetic mean of each metric over queries.
  std::map<std::string, double> macro() const;
  std::string to_tsv() const;   // metric <TAB> value, fixed 6 decimals
  std::string to_json() const;  // {"macro": {...}, "per_query": {...}}
};

// qid -> ranked doc ids (best first).
using Run = std::map<std::string, std::vector<std::string>>;

// Standard metric set: MAP, R-Prec, MRR, NDCG and Recall@k for each k.
// Queries without qrels are skipped. Queries with qrels but no run entry
// are skipped too unless `complete` is set, in which case they score 0.
EvalResult evaluate_run(const Run& run, const search::Qrels& qrels,
                        std::span<const std::size_t> recall_ks, bool complete = false);

// qid <TAB> doc_id <TAB> rank <TAB> score, one line per retrieved document.
Run read_run_tsv(const std::string& path);
struct RunEntry {
  std::string doc_id;
  double score;
};
void write_run_tsv(const std::string& path,
                   const std::map<std::string, std::vector<RunEntry>>& run);

}  // namespace qreform::metrics
