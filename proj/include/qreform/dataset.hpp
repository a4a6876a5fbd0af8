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

// A corpus, its index and the query splits, ready for experiments.

#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qreform/search.hpp"

namespace qreform::data {

struct Query {
  std::string qid;
  std::string text;
  TokenSeq tokens;
  search::RelevantSet relevant;
};

struct Dataset {
  std::shared_ptr<const search::Corpus> corpus;
  std::shared_ptr<const search::InvertedIndex> index;
  std::vector<Query> train, dev, test;
  search::Qrels qrels;
  std::map<std::string, std::string> query_text;
  // Queries dropped because none of their judged documents is in the corpus.
  std::vector<std::string> dropped;

  std::size_t vocab_size() const { return corpus->vocab().size(); }
};

// Queries are encoded before the index is frozen, so words that only occur
// in queries still get token ids.
Dataset build_dataset(std::span<const search::RawDocument> docs,
                      std::span<const search::RawQuery> train,
                      std::span<const search::RawQuery> dev,
                      std::span<const search::RawQuery> test, const search::Qrels& qrels,
                      const search::TokenizerOptions& tokenizer = {},
                      const search::Bm25Params& bm25 = {});

}  // namespace qreform::data
