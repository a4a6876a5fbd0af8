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

#include "qreform/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "qreform/error.hpp"

namespace qreform::metrics {

namespace {

void require_relevant(const RelevantSet& relevant) {
  if (relevant.empty()) throw std::invalid_argument("metric undefined for empty relevant set");
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<DocIndex> doc_ids(const search::RankedList& ranked) {
  std::vector<DocIndex> out;
  out.reserve(ranked.size());
  for (const auto& sd : ranked) out.push_back(sd.doc);
  return out;
}

double recall_at_k(std::span<const DocIndex> ranked, const RelevantSet& relevant, std::size_t k) {
  require_relevant(relevant);
  const std::size_t n = std::min(k, ranked.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += relevant.contains(ranked[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double average_precision(std::span<const DocIndex> ranked, const RelevantSet& relevant) {
  require_relevant(relevant);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (relevant.contains(ranked[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

double r_precision(std::span<const DocIndex> ranked, const RelevantSet& relevant) {
  require_relevant(relevant);
  const std::size_t r = relevant.size();
  const std::size_t n = std::min(r, ranked.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += relevant.contains(ranked[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(r);
}

double reciprocal_rank(std::span<const DocIndex> ranked, const RelevantSet& relevant) {
  require_relevant(relevant);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (relevant.contains(ranked[i])) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

double ndcg(std::span<const DocIndex> ranked, const RelevantSet& relevant) {
  require_relevant(relevant);
  double dcg = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (relevant.contains(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
  }
  double ideal = 0.0;
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    ideal += 1.0 / std::log2(static_cast<double>(i + 2));
  }
  return dcg / ideal;
}

double token_f1(std::span<const TokenId> prediction, std::span<const TokenId> truth) {
  if (truth.empty()) throw std::invalid_argument("token_f1: empty truth");
  if (prediction.empty()) return 0.0;
  std::unordered_map<TokenId, long> counts;
  for (auto t : truth) ++counts[t];
  long common = 0;
  for (auto t : prediction) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(prediction.size());
  const double r = static_cast<double>(common) / static_cast<double>(truth.size());
  return 2.0 * p * r / (p + r);
}

double oracle_score(const std::vector<std::vector<double>>& candidate_scores) {
  if (candidate_scores.empty()) return 0.0;
  double total = 0.0;
  for (const auto& q : candidate_scores) {
    if (q.empty()) throw std::invalid_argument("oracle_score: query without candidates");
    total += *std::max_element(q.begin(), q.end());
  }
  return total / static_cast<double>(candidate_scores.size());
}

double oracle_recall(std::span<const DocIndex> candidates, const RelevantSet& relevant,
                     std::size_t k) {
  require_relevant(relevant);
  std::unordered_set<DocIndex> seen;
  std::size_t hits = 0;
  for (auto d : candidates) {
    if (seen.insert(d).second && relevant.contains(d)) ++hits;
  }
  return static_cast<double>(std::min(hits, k)) / static_cast<double>(relevant.size());
}

// ---------------------------------------------------------------------------

namespace {

using NGram = std::vector<TokenId>;

std::map<NGram, long> ngram_counts(std::span<const TokenId> s, std::size_t n) {
  std::map<NGram, long> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[NGram(s.begin() + i, s.begin() + i + n)];
  return out;
}

std::set<NGram> ngram_set(std::span<const TokenId> s, std::size_t n) {
  std::set<NGram> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace(s.begin() + i, s.begin() + i + n);
  return out;
}

template <class PairFn>
double mean_pairwise(std::span<const ReformulationSet> sets, PairFn fn) {
  if (sets.empty()) throw std::invalid_argument("diversity metric over zero sets");
  double total = 0.0;
  for (const auto& set : sets) {
    if (set.size() < 2) {
      throw std::invalid_argument("diversity metric needs >= 2 reformulations per query");
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (std::size_t j = 0; j < set.size(); ++j) {
        if (i == j) continue;
        sum += fn(set[i], set[j]);
        ++pairs;
      }
    }
    total += sum / static_cast<double>(pairs);
  }
  return total / static_cast<double>(sets.size());
}

}  // namespace

double cosine_counts(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::unordered_map<TokenId, double> ca, cb;
  for (auto t : a) ca[t] += 1.0;
  for (auto t : b) cb[t] += 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, v] : ca) {
    na += v * v;
    auto it = cb.find(t);
    if (it != cb.end()) dot += v * it->second;
  }
  for (const auto& [t, v] : cb) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double sentence_bleu(std::span<const TokenId> hypothesis, std::span<const TokenId> reference) {
  constexpr std::size_t kMaxOrder = 4;
  if (hypothesis.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const auto hyp = ngram_counts(hypothesis, n);
    const auto ref = ngram_counts(reference, n);
    long matched = 0, total = 0;
    for (const auto& [g, c] : hyp) {
      total += c;
      auto it = ref.find(g);
      if (it != ref.end()) matched += std::min(c, it->second);
    }
    double p;
    if (n == 1) {
      if (matched == 0) return 0.0;
      p = static_cast<double>(matched) / static_cast<double>(total);
    } else {
      p = static_cast<double>(matched + 1) / static_cast<double>(total + 1);
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(kMaxOrder));
}

double pinc_pair(std::span<const TokenId> q, std::span<const TokenId> q_prime,
                 std::size_t max_order) {
  double sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t k = 1; k <= max_order; ++k) {
    const auto ref = ngram_set(q_prime, k);
    if (ref.empty()) continue;
    const auto cand = ngram_set(q, k);
    std::size_t overlap = 0;
    for (const auto& g : ref) overlap += cand.count(g);
    sum += 1.0 - static_cast<double>(overlap) / static_cast<double>(ref.size());
    ++orders;
  }
  return orders == 0 ? 0.0 : sum / static_cast<double>(orders);
}

double pcos(std::span<const ReformulationSet> sets) {
  return 100.0 * mean_pairwise(sets, [](const TokenSeq& a, const TokenSeq& b) {
           return cosine_counts(a, b);
         });
}

double pbleu(std::span<const ReformulationSet> sets) {
  return 100.0 * mean_pairwise(sets, [](const TokenSeq& a, const TokenSeq& b) {
           return sentence_bleu(a, b);
         });
}

double pinc(std::span<const ReformulationSet> sets) {
  return 100.0 * mean_pairwise(sets, [](const TokenSeq& a, const TokenSeq& b) {
           return pinc_pair(a, b);
         });
}

double length_std(std::span<const ReformulationSet> sets) {
  if (sets.empty()) throw std::invalid_argument("length_std over zero sets");
  double total = 0.0;
  for (const auto& set : sets) {
    if (set.size() < 2) throw std::invalid_argument("length_std needs >= 2 reformulations");
    double mean = 0.0;
    for (const auto& q : set) mean += static_cast<double>(q.size());
    mean /= static_cast<double>(set.size());
    double var = 0.0;
    for (const auto& q : set) {
      const double d = static_cast<double>(q.size()) - mean;
      var += d * d;
    }
    total += std::sqrt(var / static_cast<double>(set.size()));
  }
  return total / static_cast<double>(sets.size());
}

// ---------------------------------------------------------------------------

PartitionMetrics partition_metrics(const std::vector<std::vector<double>>& s) {
  const std::size_t n = s.size();
  if (n < 3) throw std::invalid_argument("partition metrics need N >= 3 partitions");
  for (const auto& row : s) {
    if (row.size() != n) throw std::invalid_argument("partition score matrix must be square");
  }
  PartitionMetrics m;
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) mean += s[i][j];
    }
    mean /= static_cast<double>(n - 1);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = s[i][j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n - 2);
    m.oop_score += mean;
    m.oop_variance += var;
    m.oop_error += s[i][i] - mean;
  }
  const double inv = 1.0 / static_cast<double>(n);
  m.oop_score *= inv;
  m.oop_variance *= inv;
  m.oop_error *= inv;
  return m;
}

// ---------------------------------------------------------------------------

std::map<std::string, double> EvalResult::macro() const {
  std::map<std::string, double> out;
  for (const auto& name : metric_names) {
    double sum = 0.0;
    for (const auto& [qid, vals] : per_query) sum += vals.at(name);
    out[name] = per_query.empty() ? 0.0 : sum / static_cast<double>(per_query.size());
  }
  return out;
}

std::string EvalResult::to_tsv() const {
  std::ostringstream os;
  os << "metric\tvalue\n";
  const auto m = macro();
  for (const auto& name : metric_names) os << name << '\t' << fmt6(m.at(name)) << '\n';
  os << "num_queries\t" << per_query.size() << '\n';
  return os.str();
}

std::string EvalResult::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json macro_j;
  const auto m = macro();
  for (const auto& name : metric_names) macro_j[name] = m.at(name);
  j["num_queries"] = per_query.size();
  j["macro"] = macro_j;
  nlohmann::ordered_json pq;
  for (const auto& [qid, vals] : per_query) {
    nlohmann::ordered_json row;
    for (const auto& name : metric_names) row[name] = vals.at(name);
    pq[qid] = row;
  }
  j["per_query"] = pq;
  return j.dump(2);
}

EvalResult evaluate_run(const Run& run, const search::Qrels& qrels,
                        std::span<const std::size_t> recall_ks, bool complete) {
  EvalResult res;
  res.metric_names = {"MAP", "R-Prec", "MRR", "NDCG"};
  for (auto k : recall_ks) res.metric_names.push_back("R@" + std::to_string(k));
  for (const auto& [qid, rel_docs] : qrels) {
    if (rel_docs.empty()) continue;
    if (!complete && run.count(qid) == 0) continue;
    // Intern doc ids locally so the ranked-list metrics work on indices.
    std::unordered_map<std::string, DocIndex> ids;
    auto intern = [&](const std::string& d) {
      auto [it, inserted] = ids.emplace(d, static_cast<DocIndex>(ids.size()));
      return it->second;
    };
    std::vector<DocIndex> rel;
    for (const auto& d : rel_docs) rel.push_back(intern(d));
    const RelevantSet relevant(std::move(rel));
    std::vector<DocIndex> ranked;
    if (auto it = run.find(qid); it != run.end()) {
      std::unordered_set<DocIndex> seen;
      for (const auto& d : it->second) {
        const auto idx = intern(d);
        if (seen.insert(idx).second) ranked.push_back(idx);
      }
    }
    auto& row = res.per_query[qid];
    row["MAP"] = average_precision(ranked, relevant);
    row["R-Prec"] = r_precision(ranked, relevant);
    row["MRR"] = reciprocal_rank(ranked, relevant);
    row["NDCG"] = ndcg(ranked, relevant);
    for (auto k : recall_ks) row["R@" + std::to_string(k)] = recall_at_k(ranked, relevant, k);
  }
  return res;
}

Run read_run_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open run file " + path);
  struct Row {
    long rank;
    std::string doc;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string qid, doc;
    long rank = 0;
    double score = 0.0;
    if (!(ls >> qid >> doc >> rank >> score)) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected 'qid<TAB>doc_id<TAB>rank<TAB>score'");
    }
    rows[qid].push_back({rank, doc});
  }
  Run run;
  for (auto& [qid, rs] : rows) {
    std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
    auto& out = run[qid];
    for (auto& r : rs) out.push_back(std::move(r.doc));
  }
  return run;
}

void write_run_tsv(const std::string& path,
                   const std::map<std::string, std::vector<RunEntry>>& run) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& [qid, entries] : run) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      out << qid << '\t' << entries[i].doc_id << '\t' << (i + 1) << '\t'
          << fmt6(entries[i].score) << '\n';
    }
  }
}

}  // namespace qreform::metrics
