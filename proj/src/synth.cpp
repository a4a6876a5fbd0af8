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

#include "qreform/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "qreform/error.hpp"

namespace qreform::synth {

void SyntheticSpec::validate() const {
  if (n_topics < 1 || docs_per_topic < 1) throw ConfigError("synthetic corpus needs topics and docs");
  if (topic_words < 1 || topic_words > subject_pool) {
    throw ConfigError("subject pool (synonym table) is smaller than topic_words");
  }
  if (background_vocab < 1) throw ConfigError("background_vocab must be >= 1");
  if (doc_len_min < 1 || doc_len_max < doc_len_min) throw ConfigError("bad document length range");
  if (!(topic_rate >= 0.0 && noise_rate >= 0.0 && topic_rate + noise_rate <= 1.0)) {
    throw ConfigError("topic_rate + noise_rate must lie in [0, 1]");
  }
  if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) {
    throw ConfigError("corruption_rate must lie in [0, 1]");
  }
  if (query_terms < 1) throw ConfigError("query_terms must be >= 1");
  if (n_train + n_dev + n_test == 0) throw ConfigError("no queries requested");
}

namespace {

std::string name(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%zu", prefix, i);
  return buf;
}

// Inverse-CDF sampler over fixed weights.
class Categorical {
 public:
  explicit Categorical(std::vector<double> w) : cdf_(std::move(w)) {
    std::partial_sum(cdf_.begin(), cdf_.end(), cdf_.begin());
  }
  std::size_t draw(Rng& rng) const {
    const double u = uniform01(rng) * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

std::vector<double> zipf_weights(std::size_t n, double s) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), s);
  return w;
}

}  // namespace

SyntheticData synth_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  SyntheticData out;

  // Topic word lists with a Zipfian in-topic preference.
  std::vector<std::vector<std::size_t>> topic_words(spec.n_topics);
  std::vector<std::size_t> pool(spec.subject_pool);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (auto& words : topic_words) {
    shuffle(pool, rng);
    words.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.topic_words));
  }
  const Categorical in_topic(zipf_weights(spec.topic_words, 0.7));
  const Categorical background(zipf_weights(spec.background_vocab, spec.zipf_exponent));
  for (std::size_t w = 0; w < spec.subject_pool; ++w) out.synonyms[name('s', w)] = name('y', w);

  const std::size_t n_docs = spec.n_topics * spec.docs_per_topic;
  std::vector<std::size_t> id_perm(n_docs);
  std::iota(id_perm.begin(), id_perm.end(), std::size_t{0});
  shuffle(id_perm, rng);

  std::vector<std::vector<std::size_t>> docs_of_topic(spec.n_topics);
  // Subject-word counts per document, for building queries.
  std::vector<std::vector<std::size_t>> subject_counts(n_docs);
  char idbuf[32];
  for (std::size_t t = 0; t < spec.n_topics; ++t) {
    for (std::size_t k = 0; k < spec.docs_per_topic; ++k) {
      const std::size_t d = out.docs.size();
      const std::size_t len =
          spec.doc_len_min + uniform_index(rng, spec.doc_len_max - spec.doc_len_min + 1);
      subject_counts[d].assign(spec.topic_words, 0);
      std::string text;
      for (std::size_t i = 0; i < len; ++i) {
        const double u = uniform01(rng);
        std::string w;
        if (u < spec.topic_rate) {
          const std::size_t j = in_topic.draw(rng);
          ++subject_counts[d][j];
          w = name('s', topic_words[t][j]);
        } else if (u < spec.topic_rate + spec.noise_rate && spec.noise_words_per_doc > 0) {
          w = name('n', d * spec.noise_words_per_doc + uniform_index(rng, spec.noise_words_per_doc));
        } else {
          w = name('b', background.draw(rng));
        }
        if (!text.empty()) text += ' ';
        text += w;
      }
      std::snprintf(idbuf, sizeof idbuf, "D%05zu", id_perm[d]);
      out.docs.push_back({idbuf, std::move(text)});
      docs_of_topic[t].push_back(d);
    }
  }

  const std::size_t n_queries = spec.n_train + spec.n_dev + spec.n_test;
  std::vector<search::RawQuery> queries;
  for (std::size_t q = 0; q < n_queries; ++q) {
    const std::size_t t = uniform_index(rng, spec.n_topics);
    const std::size_t d = docs_of_topic[t][uniform_index(rng, spec.docs_per_topic)];
    // Distinct subject words of the source document, drawn by count; topped
    // up from the topic's list when the document has too few.
    std::vector<double> w(subject_counts[d].begin(), subject_counts[d].end());
    std::vector<std::size_t> chosen;
    while (chosen.size() < spec.query_terms && chosen.size() < spec.topic_words) {
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      std::size_t j;
      if (total > 0.0) {
        j = Categorical(w).draw(rng);
      } else {
        std::vector<double> rest(spec.topic_words, 1.0);
        for (auto c : chosen) rest[c] = 0.0;
        j = Categorical(rest).draw(rng);
      }
      w[j] = 0.0;
      chosen.push_back(j);
    }
    std::string text;
    for (auto j : chosen) {
      const std::size_t word = topic_words[t][j];
      const bool swap = uniform01(rng) < spec.corruption_rate;
      if (!text.empty()) text += ' ';
      text += name(swap ? 'y' : 's', word);
    }
    char qbuf[32];
    std::snprintf(qbuf, sizeof qbuf, "Q%04zu", q);
    queries.push_back({qbuf, std::move(text)});
    auto& rel = out.qrels[qbuf];
    for (auto dd : docs_of_topic[t]) rel.push_back(out.docs[dd].doc_id);
    std::sort(rel.begin(), rel.end());
  }
  // Queries are generated in random topic order already; the split is by
  // position.
  out.train.assign(queries.begin(), queries.begin() + static_cast<std::ptrdiff_t>(spec.n_train));
  out.dev.assign(queries.begin() + static_cast<std::ptrdiff_t>(spec.n_train),
                 queries.begin() + static_cast<std::ptrdiff_t>(spec.n_train + spec.n_dev));
  out.test.assign(queries.begin() + static_cast<std::ptrdiff_t>(spec.n_train + spec.n_dev),
                  queries.end());
  return out;
}

}  // namespace qreform::synth
