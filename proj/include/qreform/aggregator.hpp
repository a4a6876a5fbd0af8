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

// The meta-agent: merges the result lists of several reformulations and
// re-ranks the union by s = s_A * s_R, where s_A = sum_i 1/rank_i and s_R
// is a learned query/result relevance probability.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qreform/agents.hpp"
#include "qreform/metrics.hpp"
#include "qreform/nn.hpp"
#include "qreform/search.hpp"

namespace qreform::aggregator {

enum class ScoreVariant {
  product,          // s_A * s_R
  rank_only,        // s_A
  relevance_only,   // s_R
  count_rank,       // s_A counts lists containing the result, times s_R
  concat_features,  // s_A * s_R with a model over [q; a]
};

const char* to_string(ScoreVariant v);
ScoreVariant parse_score_variant(const std::string& s);

// One reformulation's retrieved list, best first.
struct ResultList {
  std::string agent_id;
  std::vector<std::string> doc_ids;
};

struct CandidateResult {
  std::string doc_id;
  TokenSeq tokens;
  std::vector<std::size_t> ranks;  // per input list; 0 = not retrieved
  double s_a = 0.0;
  double s_r = 0.5;
  double score = 0.0;
};

// Unique results in first-appearance order. With `count_rank` each list
// that contains a result adds 1 instead of 1/rank. Lists from the identity
// agent add candidates but leave s_A untouched.
std::vector<CandidateResult> dedupe_and_rank_score(std::span<const ResultList> lists,
                                                   bool count_rank = false);

// Fills `tokens` with the first `max_tokens` body tokens of each document.
void attach_tokens(std::vector<CandidateResult>& candidates, const search::Corpus& corpus,
                   std::size_t max_tokens);

// ---------------------------------------------------------------------------

struct RelevanceModel {
  nn::EncoderConfig encoder;
  nn::PairFeatures features = nn::PairFeatures::full;
  std::size_t hidden_dim = 64;
  nn::ModelParams params;

  static RelevanceModel create(const nn::EncoderConfig& encoder, nn::PairFeatures features,
                               std::size_t hidden_dim, std::uint64_t seed);

  // Writes `<path>` (parameters) and `<path>.json` (shape).
  void save(const std::string& path) const;
  static RelevanceModel load(const std::string& path);
};

// s_R for one candidate. Throws std::invalid_argument on empty tokens.
double relevance_score(std::span<const TokenId> q0, const CandidateResult& candidate,
                       const RelevanceModel& model);

// Sets s_R of every candidate to the mean over `models`.
void score_relevance(std::vector<CandidateResult>& candidates, std::span<const TokenId> q0,
                     std::span<const RelevanceModel* const> models);

// Sets `score` per the variant, sorts by (score desc, doc_id asc) and keeps
// the top k.
std::vector<CandidateResult> final_ranking(std::vector<CandidateResult> candidates,
                                           ScoreVariant variant, std::size_t k);

// final_ranking after replacing s_R by the mean of the models' s_R.
std::vector<CandidateResult> ensemble_aggregators(std::span<const RelevanceModel* const> models,
                                                  std::span<const TokenId> q0,
                                                  std::vector<CandidateResult> candidates,
                                                  ScoreVariant variant, std::size_t k);

// ---------------------------------------------------------------------------
// Training

struct AggregatorTrainConfig {
  nn::EncoderConfig encoder;
  nn::PairFeatures features = nn::PairFeatures::full;
  std::size_t hidden_dim = 64;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  std::size_t max_doc_tokens = 64;
  std::size_t negative_cap = 0;  // 0 keeps every negative
};

struct TrainingSet {
  std::vector<nn::PairGroup> groups;
  std::vector<std::string> qids;
  // Queries without any candidate or without a positive one.
  std::vector<std::string> excluded;
};

// One group per query from the agent logs: candidates are the union of the
// logged lists, labelled by qrels membership. `queries` maps qid to q0 text.
TrainingSet build_training_set(std::span<const agents::AgentLogRecord> records,
                               const search::Qrels& qrels,
                               const std::map<std::string, std::string>& queries,
                               const search::Corpus& corpus, const AggregatorTrainConfig& cfg,
                               std::uint64_t seed);

struct TrainedAggregator {
  RelevanceModel model;
  std::vector<double> loss_curve;  // mean per-query loss per epoch
};

// Minimizes the per-query summed cross-entropy, averaged over each batch.
// Throws NumericError on a non-finite loss.
TrainedAggregator train_aggregator(const TrainingSet& data, const AggregatorTrainConfig& cfg,
                                   std::uint64_t seed);

// Groups log records by qid into aggregator inputs, preserving log order.
std::map<std::string, std::vector<ResultList>> group_log(
    std::span<const agents::AgentLogRecord> records);

}  // namespace qreform::aggregator
