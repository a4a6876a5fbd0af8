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

// Small hand-made corpora and helpers shared by the unit tests.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qreform/agents.hpp"
#include "qreform/nn.hpp"
#include "qreform/search.hpp"

namespace fixture {

struct Env {
  std::shared_ptr<qreform::search::Corpus> corpus;
  std::shared_ptr<const qreform::search::InvertedIndex> index;

  qreform::TokenSeq q(const std::string& text) const { return corpus->lookup(text); }
  qreform::TokenId id(const std::string& word) const { return *corpus->vocab().find(word); }
  qreform::DocIndex doc(const std::string& doc_id) const { return *corpus->find(doc_id); }

  std::vector<oracle::Bm25Doc> raw() const {
    std::vector<oracle::Bm25Doc> out;
    for (std::size_t d = 0; d < corpus->size(); ++d) {
      const auto& x = corpus->doc(static_cast<qreform::DocIndex>(d));
      out.push_back({x.doc_id, x.tokens});
    }
    return out;
  }
};

// Documents are named d0, d1, ... in order.
inline Env make_env(const std::vector<std::string>& texts) {
  Env e;
  e.corpus = std::make_shared<qreform::search::Corpus>();
  for (std::size_t i = 0; i < texts.size(); ++i) e.corpus->add_document("d" + std::to_string(i), texts[i]);
  e.index = std::make_shared<const qreform::search::InvertedIndex>(
      qreform::search::InvertedIndex::build(e.corpus));
  return e;
}

// The three-document corpus used by several hand checks.
inline Env hand_corpus() {
  return make_env({"apple banana apple cherry", "banana date banana banana elder",
                   "cherry fig apple grape grape"});
}

inline void randomize(qreform::nn::ModelParams& p, qreform::Rng& rng, double scale) {
  for (std::size_t i = 0; i < p.count(); ++i) {
    for (auto& v : p.value(i).values) v = qreform::normal(rng, scale);
  }
}

inline qreform::TokenSeq random_tokens(qreform::Rng& rng, std::size_t len, std::size_t vocab) {
  qreform::TokenSeq out(len);
  for (auto& t : out) t = static_cast<qreform::TokenId>(qreform::uniform_index(rng, vocab));
  return out;
}

// Pool over terms 0..n-1 with random features (bias feature kept at 1).
inline qreform::agents::CandidatePool random_pool(qreform::Rng& rng, std::size_t n) {
  qreform::agents::CandidatePool pool;
  for (std::size_t i = 0; i < n; ++i) {
    qreform::agents::CandidateTerm t{static_cast<qreform::TokenId>(i), {}};
    t.features[0] = 1.0;
    for (std::size_t f = 1; f < t.features.size(); ++f) t.features[f] = qreform::uniform01(rng);
    pool.terms.push_back(t);
  }
  return pool;
}

// One query, a pool of `arms` terms, reward 1 only for appending term
// `good`. Trains with REINFORCE and records P(good) after every step.
struct BanditRun {
  std::vector<double> prob;  // after each step
  std::size_t first_above = 0;  // 1-based step where prob > threshold, 0 if never
};

inline BanditRun run_bandit(std::uint64_t seed, std::size_t steps = 500, double threshold = 0.9) {
  using namespace qreform::agents;
  qreform::Rng rng(seed);
  TrainingQuery q{"bandit", {5}, random_pool(rng, 5), {}};
  const std::size_t good = 2;
  Policy policy(PolicyConfig{8, 8, 16}, qreform::derive_seed(seed, 1));
  auto opt = qreform::nn::make_optimizer(qreform::nn::OptimizerKind::adam, 1e-2);
  ReinforceConfig cfg;
  cfg.t_max = 1;
  cfg.n_samples = 8;
  BaselineState baseline;
  const RewardFn reward = [&](std::span<const qreform::TokenId> full, const TrainingQuery&) {
    return std::find(full.begin(), full.end(), q.pool.terms[good].term) != full.end() ? 1.0 : 0.0;
  };
  const TrainingQuery* batch[] = {&q};
  BanditRun out;
  for (std::size_t s = 0; s < steps; ++s) {
    reinforce_step(policy, *opt, batch, reward, cfg, baseline, rng);
    const std::size_t path[] = {good};
    const double p = std::exp(sequence_log_prob(policy.score(q.q0, q.pool), path, cfg.t_max));
    out.prob.push_back(p);
    if (out.first_above == 0 && p > threshold) out.first_above = s + 1;
  }
  return out;
}

}  // namespace fixture
