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

// Experiment arms, their evaluation and the report files.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "qreform/agents.hpp"
#include "qreform/aggregator.hpp"
#include "qreform/config.hpp"
#include "qreform/dataset.hpp"
#include "qreform/partition.hpp"

namespace qreform::pipeline {

enum class ArmKind {
  bm25,
  prf,
  rm3,
  rl_rnn,
  ensemble,        // N full-data agents, averaged per-step distributions
  full,            // N full-data agents + aggregator
  bagging,         // N bootstrap agents + aggregator
  sub,             // N partition agents + aggregator
  sub_pretrained,  // partition agents fine-tuned from RL-RNN + aggregator
  full_ensemble_aggregators,
  rnn_greedy_agg,
  rnn_sampled_agg,
  rnn_beam_agg,
};

struct ArmSpec {
  ArmKind kind;
  std::string name;  // with N substituted, e.g. "RL-4-Sub"
};

// Accepts the generic ("RL-N-Sub") or the concrete ("RL-4-Sub") spelling.
// Throws ConfigError.
ArmSpec parse_arm(const std::string& name, std::size_t n_agents);
std::string arm_name(ArmKind kind, std::size_t n_agents);
bool uses_aggregator(ArmKind kind);

// Synthetic data for `data_seed`, or the files named by the config.
data::Dataset load_dataset(const ExperimentConfig& cfg, std::uint64_t data_seed);
// corpus.jsonl, train.tsv, dev.tsv, test.tsv, qrels.tsv, synonyms.tsv.
void write_synthetic(const synth::SyntheticData& data, const std::string& dir);

// Runs fn(0..n-1) on up to `threads` workers. The first exception by index
// is rethrown after all workers finish.
void parallel_for(std::size_t threads, std::size_t n, const std::function<void(std::size_t)>& fn);

// 64-bit FNV-1a, used to derive seeds from names.
std::uint64_t name_hash(const std::string& s);

// ---------------------------------------------------------------------------

struct RankingScores {
  double recall = 0.0;  // Recall@depth
  double map = 0.0;
  double mrr = 0.0;
  double rprec = 0.0;
  double ndcg = 0.0;
};

RankingScores score_ranking(std::span<const DocIndex> ranked, const search::RelevantSet& relevant,
                            std::size_t depth);

struct QueryOutcome {
  std::string qid;
  RankingScores scores;
  std::optional<double> oracle;
};

struct DiversityRow {
  double pcos = 0.0;
  double pbleu = 0.0;
  double pinc = 0.0;
  double length_std = 0.0;
};

struct AblationRow {
  aggregator::ScoreVariant variant;
  double dev = 0.0;  // Recall@depth
  double test = 0.0;
};

struct SweepPoint {
  std::size_t n_agents = 0;
  double oracle = 0.0;
  double score = 0.0;
};

struct ArmResult {
  std::string name;
  ArmKind kind = ArmKind::bm25;
  std::string selection;  // grid point chosen on dev, if any
  RankingScores dev, test;
  std::vector<QueryOutcome> test_queries;
  std::optional<double> test_oracle;
  std::optional<DiversityRow> diversity;
  std::vector<AblationRow> ablation;
  std::vector<SweepPoint> sweep;
  std::vector<double> aggregator_loss;
  // Arm-private outputs (logs, run file), file name -> content.
  std::map<std::string, std::string> files;
};

struct ArmFailure {
  std::string arm;
  std::string message;
  int code = 1;
};

struct SeedReport {
  std::uint64_t data_seed = 0;
  std::uint64_t train_seed = 0;
  std::size_t depth = 10;
  std::vector<ArmResult> arms;
  std::vector<ArmFailure> failures;
  std::vector<partition::PartitionReport> partitions;

  const ArmResult* find(ArmKind kind) const;
};

enum class Split { train, dev, test };
const char* to_string(Split s);
Split parse_split(const std::string& s);

// One dataset and a cache of trained agents shared by the arms. Every agent
// is seeded from its name, so an arm computes the same numbers whether or
// not other arms ran before it.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::uint64_t data_seed, std::uint64_t train_seed);
  Experiment(ExperimentConfig cfg, data::Dataset dataset, std::uint64_t data_seed,
             std::uint64_t train_seed);

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const data::Dataset& dataset() const noexcept { return ds_; }
  const std::vector<const data::Query*>& split(Split s) const;

  // Failures of one arm are recorded in the report, not thrown. With a
  // non-empty `out_dir` the report files are written there.
  SeedReport run(const std::vector<std::string>& arms, const std::string& out_dir = "");
  ArmResult run_arm(const ArmSpec& arm);

  // Out-of-partition study over the given strategies with n_agents partitions.
  std::vector<partition::PartitionReport> partition_study(
      const std::vector<partition::Strategy>& strategies);

  // Partition of the training queries (in split order) used by `s`.
  const partition::Partition& partition_for(partition::Strategy s);

  // Agent names of an arm; trains whatever is missing from the cache.
  std::vector<std::string> arm_agents(ArmKind kind);
  const agents::Policy& agent(const std::string& name);
  void put_agent(const std::string& name, agents::Policy policy);
  bool has_agent(const std::string& name) const;

  // identity + every agent reformulation of the arm for each query.
  std::vector<agents::AgentLogRecord> arm_log(ArmKind kind, Split split);

  // Trains the arm's aggregator on its training log.
  aggregator::TrainedAggregator train_arm_aggregator(
      ArmKind kind, const std::vector<agents::AgentLogRecord>& train_log,
      nn::PairFeatures features = nn::PairFeatures::full, std::uint64_t salt = 0);

  // Aggregated ranking of each logged query.
  struct AggregatedQuery {
    std::string qid;
    std::vector<aggregator::CandidateResult> ranking;
    double oracle = 0.0;
  };
  std::vector<AggregatedQuery> aggregate(const std::vector<agents::AgentLogRecord>& log,
                                         std::span<const aggregator::RelevanceModel* const> models,
                                         aggregator::ScoreVariant variant);

 private:
  using Query = data::Query;
  struct AgentJob {
    std::string name;
    std::vector<std::size_t> data;  // indices into the training queries
    std::size_t updates;
    std::string init;  // name of a starting policy, or empty
  };

  void ensure_agents(const std::vector<AgentJob>& jobs);
  partition::Matrix query_features(partition::Strategy s);
  const partition::Matrix& word_vectors();
  const agents::CandidatePool& pool(const Query& q);
  std::vector<agents::Reformulation> reformulate(const std::string& agent_name, const Query& q,
                                                 const agents::DecodeOptions& opts);
  std::vector<agents::AgentLogRecord> log_for(
      const std::vector<std::string>& agents, const agents::DecodeOptions& opts, Split split,
      std::vector<metrics::ReformulationSet>* sets = nullptr);
  agents::DecodeOptions arm_decode(ArmKind kind) const;
  std::vector<std::string> sub_agents(partition::Strategy s, bool pretrained);
  ArmResult aggregated(const ArmSpec& arm, const std::vector<std::string>& agents,
                       bool full_report);
  RankingScores mean_scores(const std::vector<AggregatedQuery>& qs,
                            std::vector<QueryOutcome>* per_query);
  ArmResult run_ranker(const ArmSpec& arm,
                       const std::function<TokenSeq(const Query&)>& reformulate_query);
  const Query& query(const std::string& qid) const;

  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  ExperimentConfig cfg_;
  data::Dataset ds_;
  std::uint64_t data_seed_;
  std::uint64_t train_seed_;
  std::vector<agents::TrainingQuery> training_;
  std::map<Split, std::vector<const Query*>> splits_;
  std::map<std::string, const Query*> by_qid_;
  std::map<const Query*, agents::CandidatePool> pools_;
  std::map<std::string, std::unique_ptr<agents::Policy>> agents_;
  std::map<partition::Strategy, partition::Partition> partitions_;
  std::optional<partition::Matrix> word_vectors_;
  mutable std::mutex mu_;
};

// Runs every configured seed into <out_dir>/seed-<s>/ and writes
// <out_dir>/summary.tsv.
std::vector<SeedReport> run_all(const ExperimentConfig& cfg, const std::string& out_dir);

struct StabilityReport {
  std::vector<std::uint64_t> train_seeds;
  std::string single_arm, multi_arm;
  std::vector<double> single, multi;  // test Recall@depth x 100
  double single_variance = 0.0;       // sample variance
  double multi_variance = 0.0;
  double ratio = 0.0;                 // multi / single

  std::string to_tsv() const;
  std::string to_json() const;
};

// Fixed data (first configured seed); training seeds data_seed + i.
StabilityReport stability_report(const ExperimentConfig& cfg, std::size_t n_seeds);

// ---------------------------------------------------------------------------
// Report files. Numbers are printed with six decimals.

std::string results_tsv(const SeedReport& r);
std::string ablation_tsv(const SeedReport& r);
// Includes the reference row of the original AQA-10-Sub as a comment.
std::string diversity_tsv(const SeedReport& r);
std::string sweep_dat(const ArmResult& arm);
std::string summary_json(const SeedReport& r);
void write_report(const SeedReport& r, const std::string& dir);

// Writes `files` into `dir` through a temporary sibling directory that is
// renamed into place.
void write_dir_atomically(const std::string& dir,
                          const std::map<std::string, std::string>& files);

}  // namespace qreform::pipeline
