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

// Synthetic retrieval benchmark with a vocabulary gap.
//
// Documents belong to topics. A topic owns a handful of subject words drawn
// from a shared pool, so one subject word is ambiguous between topics.
// Documents mix their topic's subject words with Zipfian background words
// and a few document-private rare words. A query is built from subject
// words of one document; each word is swapped, at the corruption rate, for
// a synonym that never occurs in any document. Every document of the
// query's topic is relevant.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qreform/search.hpp"

namespace qreform::synth {

struct SyntheticSpec {
  std::size_t n_topics = 200;
  std::size_t docs_per_topic = 10;
  std::size_t subject_pool = 600;  // also the synonym table size
  std::size_t topic_words = 12;
  std::size_t background_vocab = 2000;
  double zipf_exponent = 1.0;
  std::size_t doc_len_min = 40;
  std::size_t doc_len_max = 80;
  double topic_rate = 0.25;  // share of subject-word tokens in a document
  double noise_rate = 0.05;  // share of document-private tokens
  std::size_t noise_words_per_doc = 3;
  std::size_t query_terms = 4;
  double corruption_rate = 0.5;
  std::size_t n_train = 500;
  std::size_t n_dev = 100;
  std::size_t n_test = 100;

  void validate() const;
};

struct SyntheticData {
  std::vector<search::RawDocument> docs;
  std::vector<search::RawQuery> train, dev, test;
  search::Qrels qrels;
  std::map<std::string, std::string> synonyms;  // subject word -> synonym
};

// Throws ConfigError when the spec is inconsistent, e.g. when the synonym
// table cannot give every topic its subject words.
SyntheticData synth_corpus(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace qreform::synth
