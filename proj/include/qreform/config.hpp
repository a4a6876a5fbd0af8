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

// Experiment configuration. A JSON document selects a preset ("desk" or
// "full") and overrides any field; unknown keys are rejected.
//
// {
//   "preset": "desk",
//   "seeds": [0, 1, 2, 3, 4],
//   "threads": 1,
//   "n_agents": 4,
//   "partition": "random",
//   "reward_k": 10,
//   "depth": 10,
//   "arms": ["BM25", "PRF", "RM3", "RL-RNN", "RL-N-Sub"],
//   "corpus": {"synthetic": {...}} | {"files": {"dir": "data/"}},
//   "bm25": {"k1": 1.2, "b": 0.75},
//   "baselines": {"prf_n_grid": [...], "prf_k_grid": [...],
//                 "rm3_n_terms_grid": [...], "rm3_lambda": 0.65,
//                 "rm3_mu": 1500, "rm3_fb_docs": 10},
//   "sub_agents": {"mini_batch_size", "optimizer", "learning_rate",
//                  "updates", "n_samples", "t_max", "pool_docs",
//                  "pool_terms", "embed_dim", "hidden_dim",
//                  "baseline_decay", "pretrained_updates"},
//   "decode": {"method": "greedy", "beam_width": 20, "n_samples": 20},
//   "aggregator": {"filter_sizes", "kernels", "D", "embed_dim",
//                  "learning_rate", "mini_batch_size", "epochs", "dropout",
//                  "optimizer", "max_doc_tokens", "negative_cap",
//                  "shared_embedding"}
// }

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qreform/agents.hpp"
#include "qreform/aggregator.hpp"
#include "qreform/baselines.hpp"
#include "qreform/partition.hpp"
#include "qreform/search.hpp"
#include "qreform/synth.hpp"

namespace qreform::pipeline {

struct BaselineGrid {
  std::vector<std::size_t> prf_n{0, 1, 3, 5, 10};
  std::vector<std::size_t> prf_k{1, 3, 5, 10};
  std::vector<std::size_t> rm3_n_terms{10, 25, 50, 100};
  double rm3_lambda = 0.65;
  double rm3_mu = 1500.0;
  std::size_t rm3_fb_docs = 10;
};

struct SubAgentSettings {
  std::size_t mini_batch_size = 32;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  double learning_rate = 1e-2;
  std::size_t updates = 300;
  std::size_t n_samples = 8;
  std::size_t t_max = 10;
  std::size_t pool_docs = 10;
  std::size_t pool_terms = 20;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  double baseline_decay = 0.99;
  // Fine-tuning updates of the pretrained variant.
  std::size_t pretrained_updates = 100;
};

struct DecodeSettings {
  agents::DecodeMethod method = agents::DecodeMethod::greedy;
  std::size_t beam_width = 20;
  std::size_t n_samples = 20;
};

struct AggregatorSettings {
  std::vector<std::size_t> filter_sizes{9, 3};
  std::vector<std::size_t> kernels{32, 32};
  std::size_t D = 64;
  std::size_t embed_dim = 32;
  double learning_rate = 1e-3;
  std::size_t mini_batch_size = 64;
  std::size_t epochs = 5;
  double dropout = 0.0;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  std::size_t max_doc_tokens = 64;
  std::size_t negative_cap = 0;
  bool shared_embedding = true;

  nn::EncoderConfig encoder(std::size_t vocab_size) const;
  aggregator::AggregatorTrainConfig train_config(std::size_t vocab_size,
                                                 nn::PairFeatures features) const;
};

struct CorpusSource {
  // Empty: generate from `synthetic` with the run's data seed. Otherwise a
  // directory with corpus.jsonl, train.tsv, dev.tsv, test.tsv, qrels.tsv.
  std::string files_dir;
  synth::SyntheticSpec synthetic;
};

struct ExperimentConfig {
  std::string preset = "desk";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t threads = 1;
  std::size_t n_agents = 4;
  partition::Strategy partition = partition::Strategy::random;
  std::size_t reward_k = 10;
  std::size_t depth = 10;  // retrieval and evaluation cutoff
  std::vector<std::string> arms{"BM25",     "PRF",      "RM3",          "RL-RNN",
                                "RL-N-Full", "RL-N-Sub"};
  CorpusSource corpus;
  search::Bm25Params bm25;
  BaselineGrid baselines;
  SubAgentSettings sub_agents;
  DecodeSettings decode;
  AggregatorSettings aggregator;

  // Throws ConfigError.
  void validate() const;

  agents::AgentTrainConfig agent_train_config(std::size_t vocab_size) const;
  agents::DecodeOptions decode_options() const;

  static ExperimentConfig desk();
  // Full-scale retrieval settings, N = 10.
  static ExperimentConfig full();
};

// Throws ConfigError on malformed JSON, unknown keys or invalid values.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace qreform::pipeline
