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

// Non-learned reformulators: pseudo-relevance-feedback term expansion and
// the RM3 relevance model.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "qreform/search.hpp"

namespace qreform::baselines {

struct PrfConfig {
  std::size_t n_terms = 5;  // per feedback document
  std::size_t k_docs = 3;
};

struct Rm3Config {
  double lambda = 0.65;
  double mu = 1500.0;  // Dirichlet pseudo-count
  std::size_t n_terms = 100;
  std::size_t fb_docs = 10;

  void validate() const;
};

struct ExpansionConfig {
  PrfConfig prf;
  Rm3Config rm3;
};

// tf(t,d) * ln(N / df(t)).
double tfidf(const search::InvertedIndex& index, TokenId t, std::uint32_t tf);

// Terms of one document by descending tf-idf (ties by word), at most n.
std::vector<TokenId> top_tfidf_terms(const search::InvertedIndex& index, DocIndex d,
                                     std::size_t n);

// q0 followed by the top-n tf-idf terms of each of the top-k documents
// retrieved with q0. Each expansion term is added once.
TokenSeq prf_expand(std::span<const TokenId> q0, const search::InvertedIndex& index,
                    std::size_t n, std::size_t k);

struct TermProb {
  TokenId term;
  double prob;
};

// P(t|q0) for every vocabulary term, with the feedback document weights
// P(d) P(q0|d) normalized over the feedback set. Sorted by probability
// descending, ties by word. Throws DataError("no feedback documents") when
// q0 retrieves nothing. Query terms absent from the collection are ignored;
// if every feedback likelihood is zero (mu = 0) the weights are uniform.
std::vector<TermProb> rm3_distribution(std::span<const TokenId> q0,
                                       const search::InvertedIndex& index, const Rm3Config& cfg);

// The n_terms most probable terms under rm3_distribution.
TokenSeq rm3_expand(std::span<const TokenId> q0, const search::InvertedIndex& index,
                    const Rm3Config& cfg);

// term <TAB> probability, one line per term, for grid-search tooling.
std::string expansion_trace_tsv(std::span<const TermProb> dist, const search::Corpus& corpus,
                                std::size_t limit);

}  // namespace qreform::baselines
