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

// Reformulation sub-agents. A sub-agent appends terms drawn from the
// documents its original query retrieves: at each step it either picks one
// not-yet-used candidate term or stops. Term logits come from a small MLP
// over (term features, term embedding, query-embedding interaction); the
// stop logit is an affine function of the step index.

#pragma once

#include <array>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qreform/nn.hpp"
#include "qreform/search.hpp"

namespace qreform::agents {

// bias, normalized max tf-idf, normalized idf, 1/best source rank, fraction
// of retrieved documents containing the term, BM25-score-weighted coverage.
inline constexpr std::size_t kTermFeatures = 6;

struct CandidateTerm {
  TokenId term;
  std::array<double, kTermFeatures> features;
};

struct CandidatePool {
  std::vector<CandidateTerm> terms;
  bool empty() const noexcept { return terms.empty(); }
  std::size_t size() const noexcept { return terms.size(); }
};

// Union of the top-m tf-idf terms of each of the top-k documents retrieved
// with q0, in order of first appearance. Empty when nothing is retrieved.
CandidatePool build_candidate_pool(std::span<const TokenId> q0,
                                   const search::InvertedIndex& index, std::size_t k_docs,
                                   std::size_t m_terms);

enum class DecodeMethod { identity, greedy, sample, beam, ensemble, external };

const char* to_string(DecodeMethod m);
DecodeMethod parse_decode_method(const std::string& s);

struct Reformulation {
  TokenSeq q0;
  TokenSeq added;
  std::string agent_id;
  DecodeMethod method = DecodeMethod::greedy;
  double log_prob = 0.0;
  std::vector<std::size_t> actions;  // pool indices of `added`

  TokenSeq full() const;
};

inline constexpr const char* kIdentityAgentId = "identity";

Reformulation identity_agent(std::span<const TokenId> q0);

// ---------------------------------------------------------------------------

struct PolicyConfig {
  std::size_t vocab_size = 1;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
};

// Scores of one decision problem (one query and its pool).
struct ActionScores {
  std::vector<double> term_logits;
  double stop_bias = 0.0;
  double stop_slope = 0.0;

  double stop_logit(std::size_t step, std::size_t t_max) const;
};

class Policy {
 public:
  Policy(PolicyConfig cfg, std::uint64_t seed);
  Policy(PolicyConfig cfg, nn::ModelParams params);

  const PolicyConfig& config() const noexcept { return cfg_; }
  nn::ModelParams& params() noexcept { return params_; }
  const nn::ModelParams& params() const noexcept { return params_; }

  struct Cache {
    std::vector<double> query_mean;
    std::size_t query_count = 0;
    TokenSeq query_tokens;
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
  };

  ActionScores score(std::span<const TokenId> q0, const CandidatePool& pool,
                     Cache* cache = nullptr) const;
  // Accumulates parameter gradients from dL/d(scores).
  void backward(const Cache& cache, const CandidatePool& pool, std::span<const double> dlogits,
                double dstop_bias, double dstop_slope);

 private:
  std::vector<double> term_input(const CandidateTerm& term,
                                 std::span<const double> query_mean) const;

  PolicyConfig cfg_;
  nn::ModelParams params_;
};

// ---------------------------------------------------------------------------
// Decoding. At step t < t_max with unused terms remaining the action set is
// {unused terms} ∪ {stop}; otherwise stopping is forced and costs log 1 = 0.

struct DecodeOptions {
  DecodeMethod method = DecodeMethod::greedy;
  std::size_t t_max = 10;
  std::size_t beam_width = 20;
  std::size_t n_samples = 1;  // sample mode
};

// Exact log-probability of taking `actions` in order and then stopping.
double sequence_log_prob(const ActionScores& scores, std::span<const std::size_t> actions,
                         std::size_t t_max);
// d(weight * log p)/d(scores), accumulated into the outputs.
void sequence_log_prob_grad(const ActionScores& scores, std::span<const std::size_t> actions,
                            std::size_t t_max, double weight, std::span<double> dlogits,
                            double& dstop_bias, double& dstop_slope);

std::vector<Reformulation> decode_scores(const ActionScores& scores, const CandidatePool& pool,
                                         std::span<const TokenId> q0, const DecodeOptions& opts,
                                         Rng* rng = nullptr);
std::vector<Reformulation> decode(const Policy& policy, const CandidatePool& pool,
                                  std::span<const TokenId> q0, const DecodeOptions& opts,
                                  Rng* rng = nullptr);

// Greedy decoding of the per-step average of the policies' action
// distributions.
Reformulation ensemble_decode(std::span<const Policy* const> policies, const CandidatePool& pool,
                              std::span<const TokenId> q0, std::size_t t_max);
Reformulation ensemble_decode_scores(std::span<const ActionScores> scores,
                                     const CandidatePool& pool, std::span<const TokenId> q0,
                                     std::size_t t_max);

// ---------------------------------------------------------------------------
// REINFORCE

struct TrainingQuery {
  std::string qid;
  TokenSeq q0;
  CandidatePool pool;
  search::RelevantSet relevant;
};

struct ReinforceConfig {
  std::size_t n_samples = 8;
  std::size_t t_max = 10;
  std::size_t reward_k = 10;
  double baseline_decay = 0.99;
};

struct BaselineState {
  double value = 0.0;
  bool initialized = false;
  void update(double reward, double decay);
};

struct FrozenSample {
  const TrainingQuery* query;
  std::vector<std::size_t> actions;
  double reward;
};

// Mean over samples of -(r - b) log p(actions).
double surrogate_loss(const Policy& policy, std::span<const FrozenSample> samples,
                      double baseline, std::size_t t_max);
// Overwrites the gradient buffers with d(surrogate_loss)/dparams and
// returns the loss.
double surrogate_backprop(Policy& policy, std::span<const FrozenSample> samples, double baseline,
                          std::size_t t_max);

// Reward of a full query for one training query. The default queries the
// environment and returns Recall@reward_k.
using RewardFn = std::function<double(std::span<const TokenId>, const TrainingQuery&)>;
RewardFn environment_reward(const search::InvertedIndex& index, std::size_t reward_k);

struct StepStats {
  double mean_reward = 0.0;
  double surrogate = 0.0;
};

// Samples n_samples reformulations per query, scores them, applies one
// optimizer step on the surrogate and then folds the rewards into the
// moving-average baseline.
StepStats reinforce_step(Policy& policy, nn::Optimizer& optimizer,
                         std::span<const TrainingQuery* const> batch, const RewardFn& reward,
                         const ReinforceConfig& cfg, BaselineState& baseline, Rng& rng);

struct AgentTrainConfig {
  PolicyConfig policy;
  ReinforceConfig reinforce;
  std::size_t updates = 300;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
};

struct TrainedAgent {
  Policy policy;
  std::vector<double> reward_curve;  // mean sampled reward per update
};

// Trains one sub-agent on `data` (duplicates allowed, as in bootstrap
// samples). Optionally starts from `init` instead of a fresh policy.
TrainedAgent train_agent(const AgentTrainConfig& cfg, std::span<const TrainingQuery> data,
                         const RewardFn& reward, std::uint64_t seed,
                         const Policy* init = nullptr);

// ---------------------------------------------------------------------------
// Results exchanged with the aggregator.

struct AgentResult {
  std::string qid;
  Reformulation reformulation;
  search::RankedList ranked;
  double reward = 0.0;
};

// One JSON-lines record of an AgentResult log.
struct AgentLogRecord {
  std::string qid;
  std::string agent_id;
  std::string reformulation;
  std::vector<std::string> ranked_doc_ids;
  double reward = 0.0;
};

AgentLogRecord to_log_record(const AgentResult& r, const search::Corpus& corpus);
std::string to_jsonl(const AgentLogRecord& r);
AgentLogRecord parse_log_record(const std::string& line);
void write_agent_log(const std::string& path, std::span<const AgentLogRecord> records);
std::vector<AgentLogRecord> read_agent_log(const std::string& path);

// Runs an external reformulator: q0 text on stdin, one reformulation per
// output line.
class ExternalReformulator {
 public:
  explicit ExternalReformulator(std::string command) : command_(std::move(command)) {}
  std::vector<std::string> reformulate(const std::string& q0) const;

 private:
  std::string command_;
};

}  // namespace qreform::agents
