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

#include "qreform/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"

#include "qreform/baselines.hpp"
#include "qreform/error.hpp"
#include "qreform/metrics.hpp"

namespace qreform::pipeline {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

struct ArmName {
  ArmKind kind;
  const char* generic;
};

constexpr ArmName kArms[] = {
    {ArmKind::bm25, "BM25"},
    {ArmKind::prf, "PRF"},
    {ArmKind::rm3, "RM3"},
    {ArmKind::rl_rnn, "RL-RNN"},
    {ArmKind::ensemble, "RL-N-Ensemble"},
    {ArmKind::full, "RL-N-Full"},
    {ArmKind::bagging, "RL-N-Bagging"},
    {ArmKind::sub, "RL-N-Sub"},
    {ArmKind::sub_pretrained, "RL-N-Sub-Pretrained"},
    {ArmKind::full_ensemble_aggregators, "RL-N-Full-Ensemble-Aggregators"},
    {ArmKind::rnn_greedy_agg, "RL-RNN-Greedy+Aggregator"},
    {ArmKind::rnn_sampled_agg, "RL-RNN-Sampled+Aggregator"},
    {ArmKind::rnn_beam_agg, "RL-RNN-Beam+Aggregator"},
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("write failed: " + path.string());
}

// Writes through a sibling temporary file and renames it into place.
void write_file_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  write_file(tmp, content);
  fs::rename(tmp, path);
}

std::string safe_name(std::string s) {
  for (auto& c : s) {
    if (c == '/' || c == '#' || c == ' ') c = '_';
  }
  return s;
}

bool is_multi_agent(ArmKind k) {
  return k == ArmKind::full || k == ArmKind::bagging || k == ArmKind::sub ||
         k == ArmKind::sub_pretrained || k == ArmKind::full_ensemble_aggregators;
}

std::string log_text(const std::vector<agents::AgentLogRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    out += agents::to_jsonl(r);
    out += '\n';
  }
  return out;
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

ArmSpec parse_arm(const std::string& name, std::size_t n_agents) {
  const std::string n = std::to_string(n_agents);
  for (const auto& a : kArms) {
    std::string concrete = a.generic;
    if (const auto p = concrete.find("-N-"); p != std::string::npos) {
      concrete.replace(p + 1, 1, n);
    }
    if (name == a.generic || name == concrete) return {a.kind, concrete};
  }
  throw ConfigError("unknown arm '" + name + "'");
}

std::string arm_name(ArmKind kind, std::size_t n_agents) {
  for (const auto& a : kArms) {
    if (a.kind == kind) return parse_arm(a.generic, n_agents).name;
  }
  return "unknown";
}

bool uses_aggregator(ArmKind kind) {
  return is_multi_agent(kind) || kind == ArmKind::rnn_greedy_agg ||
         kind == ArmKind::rnn_sampled_agg || kind == ArmKind::rnn_beam_agg;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void parallel_for(std::size_t threads, std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

data::Dataset load_dataset(const ExperimentConfig& cfg, std::uint64_t data_seed) {
  if (cfg.corpus.files_dir.empty()) {
    const auto sd = synth::synth_corpus(cfg.corpus.synthetic, data_seed);
    return data::build_dataset(sd.docs, sd.train, sd.dev, sd.test, sd.qrels, {}, cfg.bm25);
  }
  const fs::path dir = cfg.corpus.files_dir;
  for (const char* f : {"corpus.jsonl", "train.tsv", "dev.tsv", "test.tsv", "qrels.tsv"}) {
    if (!fs::exists(dir / f)) throw DataError("missing data file " + (dir / f).string());
  }
  const auto docs = search::read_corpus_jsonl((dir / "corpus.jsonl").string());
  const auto train = search::read_queries_tsv((dir / "train.tsv").string());
  const auto dev = search::read_queries_tsv((dir / "dev.tsv").string());
  const auto test = search::read_queries_tsv((dir / "test.tsv").string());
  const auto qrels = search::read_qrels_tsv((dir / "qrels.tsv").string());
  return data::build_dataset(docs, train, dev, test, qrels, {}, cfg.bm25);
}

void write_synthetic(const synth::SyntheticData& data, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path d = dir;
  search::write_corpus_jsonl((d / "corpus.jsonl").string(), data.docs);
  search::write_queries_tsv((d / "train.tsv").string(), data.train);
  search::write_queries_tsv((d / "dev.tsv").string(), data.dev);
  search::write_queries_tsv((d / "test.tsv").string(), data.test);
  search::write_qrels_tsv((d / "qrels.tsv").string(), data.qrels);
  std::string syn;
  for (const auto& [w, s] : data.synonyms) syn += w + "\t" + s + "\n";
  write_file(d / "synonyms.tsv", syn);
}

RankingScores score_ranking(std::span<const DocIndex> ranked, const search::RelevantSet& relevant,
                            std::size_t depth) {
  const auto top = ranked.subspan(0, std::min(depth, ranked.size()));
  RankingScores s;
  s.recall = metrics::recall_at_k(top, relevant, depth);
  s.map = metrics::average_precision(top, relevant);
  s.mrr = metrics::reciprocal_rank(top, relevant);
  s.rprec = metrics::r_precision(top, relevant);
  s.ndcg = metrics::ndcg(top, relevant);
  return s;
}

const ArmResult* SeedReport::find(ArmKind kind) const {
  for (const auto& a : arms) {
    if (a.kind == kind) return &a;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg, std::uint64_t data_seed, std::uint64_t train_seed)
    : Experiment(cfg, load_dataset(cfg, data_seed), data_seed, train_seed) {}

Experiment::Experiment(ExperimentConfig cfg, data::Dataset dataset, std::uint64_t data_seed,
                       std::uint64_t train_seed)
    : cfg_(std::move(cfg)), ds_(std::move(dataset)), data_seed_(data_seed), train_seed_(train_seed) {
  cfg_.validate();
  if (ds_.train.empty()) throw DataError("no training queries");
  for (auto* v : {&ds_.train, &ds_.dev, &ds_.test}) {
    for (const auto& q : *v) by_qid_[q.qid] = &q;
  }
  for (const auto& q : ds_.train) splits_[Split::train].push_back(&q);
  for (const auto& q : ds_.dev) splits_[Split::dev].push_back(&q);
  for (const auto& q : ds_.test) splits_[Split::test].push_back(&q);
  for (const auto& q : ds_.train) {
    training_.push_back({q.qid, q.tokens, pool(q), q.relevant});
  }
}

const std::vector<const data::Query*>& Experiment::split(Split s) const {
  static const std::vector<const data::Query*> empty;
  const auto it = splits_.find(s);
  return it == splits_.end() ? empty : it->second;
}

const data::Query& Experiment::query(const std::string& qid) const {
  const auto it = by_qid_.find(qid);
  if (it == by_qid_.end()) throw DataError("unknown query '" + qid + "'");
  return *it->second;
}

const agents::CandidatePool& Experiment::pool(const Query& q) {
  std::lock_guard lock(mu_);
  auto it = pools_.find(&q);
  if (it == pools_.end()) {
    it = pools_
             .emplace(&q, agents::build_candidate_pool(q.tokens, *ds_.index,
                                                       cfg_.sub_agents.pool_docs,
                                                       cfg_.sub_agents.pool_terms))
             .first;
  }
  return it->second;
}

bool Experiment::has_agent(const std::string& name) const {
  std::lock_guard lock(mu_);
  return agents_.count(name) > 0;
}

void Experiment::put_agent(const std::string& name, agents::Policy policy) {
  std::lock_guard lock(mu_);
  agents_[name] = std::make_unique<agents::Policy>(std::move(policy));
}

const agents::Policy& Experiment::agent(const std::string& name) {
  std::lock_guard lock(mu_);
  const auto it = agents_.find(name);
  if (it == agents_.end()) throw std::invalid_argument("agent '" + name + "' is not trained");
  return *it->second;
}

void Experiment::ensure_agents(const std::vector<AgentJob>& jobs) {
  std::vector<const AgentJob*> todo;
  for (const auto& j : jobs) {
    if (!has_agent(j.name)) todo.push_back(&j);
  }
  if (todo.empty()) return;
  const auto reward = agents::environment_reward(*ds_.index, cfg_.reward_k);
  std::vector<std::unique_ptr<agents::Policy>> trained(todo.size());
  parallel_for(cfg_.threads, todo.size(), [&](std::size_t i) {
    const auto& job = *todo[i];
    auto cfg = cfg_.agent_train_config(ds_.vocab_size());
    cfg.updates = job.updates;
    std::vector<agents::TrainingQuery> data;
    data.reserve(job.data.size());
    for (auto k : job.data) data.push_back(training_[k]);
    const agents::Policy* init = job.init.empty() ? nullptr : &agent(job.init);
    auto result = agents::train_agent(cfg, data, reward,
                                      derive_seed(train_seed_, name_hash(job.name)), init);
    trained[i] = std::make_unique<agents::Policy>(std::move(result.policy));
  });
  std::lock_guard lock(mu_);
  for (std::size_t i = 0; i < todo.size(); ++i) agents_[todo[i]->name] = std::move(trained[i]);
}

const partition::Partition& Experiment::partition_for(partition::Strategy s) {
  if (auto it = partitions_.find(s); it != partitions_.end()) return it->second;
  const std::size_t n = training_.size();
  const std::size_t k = cfg_.n_agents;
  const std::uint64_t seed =
      derive_seed(train_seed_, name_hash(std::string("partition/") + partition::to_string(s)));
  partition::Partition p;
  switch (s) {
    case partition::Strategy::random: p = partition::random_partition(n, k, seed); break;
    case partition::Strategy::bagging: p = partition::bootstrap_partition(n, k, seed); break;
    default: p = partition::kmeans_partition(query_features(s), k, seed, s); break;
  }
  return partitions_.emplace(s, std::move(p)).first->second;
}

namespace {

std::vector<TokenSeq> ppmi_texts(const data::Dataset& ds,
                                 const std::vector<agents::TrainingQuery>& training) {
  std::vector<TokenSeq> texts;
  for (std::size_t d = 0; d < ds.corpus->size(); ++d) {
    texts.push_back(ds.corpus->doc(static_cast<DocIndex>(d)).tokens);
  }
  for (const auto& q : training) texts.push_back(q.q0);
  return texts;
}

}  // namespace

const partition::Matrix& Experiment::word_vectors() {
  std::lock_guard lock(mu_);
  if (!word_vectors_) {
    word_vectors_ = partition::ppmi_embeddings(ppmi_texts(ds_, training_), ds_.vocab_size(),
                                               derive_seed(data_seed_, name_hash("ppmi")));
  }
  return *word_vectors_;
}

partition::Matrix Experiment::query_features(partition::Strategy s) {
  const auto& words = word_vectors();
  std::vector<TokenSeq> questions, answers;
  for (const auto& q : training_) {
    questions.push_back(q.q0);
    TokenSeq a;
    for (auto d : q.relevant.docs()) {
      const auto& toks = ds_.corpus->doc(d).tokens;
      a.insert(a.end(), toks.begin(), toks.end());
    }
    answers.push_back(std::move(a));
  }
  const auto Q = partition::mean_embeddings(questions, words);
  const auto A = partition::mean_embeddings(answers, words);
  if (s == partition::Strategy::kmeans_q) return Q;
  if (s == partition::Strategy::kmeans_a) return A;
  partition::Matrix qa(Q.rows(), Q.cols() + A.cols());
  qa << Q, A;
  return qa;
}

std::vector<std::string> Experiment::sub_agents(partition::Strategy s, bool pretrained) {
  if (pretrained) ensure_agents({{"rl-rnn", {}, cfg_.sub_agents.updates, ""}});
  const auto& p = partition_for(s);
  std::vector<AgentJob> jobs;
  std::vector<std::string> names;
  const std::string prefix =
      std::string(pretrained ? "pretrained/" : "sub/") + partition::to_string(s) + "/";
  for (std::size_t i = 0; i < p.size(); ++i) {
    names.push_back(prefix + std::to_string(i));
    jobs.push_back({names.back(), p.subsets[i],
                    pretrained ? cfg_.sub_agents.pretrained_updates : cfg_.sub_agents.updates,
                    pretrained ? "rl-rnn" : ""});
  }
  ensure_agents(jobs);
  return names;
}

std::vector<std::string> Experiment::arm_agents(ArmKind kind) {
  std::vector<std::size_t> all(training_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::size_t updates = cfg_.sub_agents.updates;
  switch (kind) {
    case ArmKind::rl_rnn:
    case ArmKind::rnn_greedy_agg:
    case ArmKind::rnn_sampled_agg:
    case ArmKind::rnn_beam_agg:
      ensure_agents({{"rl-rnn", all, updates, ""}});
      return {"rl-rnn"};
    case ArmKind::ensemble:
    case ArmKind::full:
    case ArmKind::full_ensemble_aggregators: {
      std::vector<AgentJob> jobs;
      std::vector<std::string> names;
      for (std::size_t i = 0; i < cfg_.n_agents; ++i) {
        names.push_back("full/" + std::to_string(i));
        jobs.push_back({names.back(), all, updates, ""});
      }
      ensure_agents(jobs);
      return names;
    }
    case ArmKind::bagging: {
      const auto& p = partition_for(partition::Strategy::bagging);
      std::vector<AgentJob> jobs;
      std::vector<std::string> names;
      for (std::size_t i = 0; i < p.size(); ++i) {
        names.push_back("bagging/" + std::to_string(i));
        jobs.push_back({names.back(), p.subsets[i], updates, ""});
      }
      ensure_agents(jobs);
      return names;
    }
    case ArmKind::sub: return sub_agents(cfg_.partition, false);
    case ArmKind::sub_pretrained: return sub_agents(cfg_.partition, true);
    default: return {};
  }
}

agents::DecodeOptions Experiment::arm_decode(ArmKind kind) const {
  auto o = cfg_.decode_options();
  switch (kind) {
    case ArmKind::rnn_greedy_agg: o.method = agents::DecodeMethod::greedy; break;
    case ArmKind::rnn_sampled_agg: o.method = agents::DecodeMethod::sample; break;
    case ArmKind::rnn_beam_agg: o.method = agents::DecodeMethod::beam; break;
    default: break;
  }
  return o;
}

std::vector<agents::Reformulation> Experiment::reformulate(const std::string& agent_name,
                                                           const Query& q,
                                                           const agents::DecodeOptions& opts) {
  const auto& policy = agent(agent_name);
  const auto& p = pool(q);
  std::vector<agents::Reformulation> out;
  if (opts.method == agents::DecodeMethod::sample) {
    Rng rng(derive_seed(train_seed_, name_hash("sample/" + agent_name + "/" + q.qid)));
    out = agents::decode(policy, p, q.tokens, opts, &rng);
  } else {
    out = agents::decode(policy, p, q.tokens, opts);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].agent_id = out.size() == 1 ? agent_name : agent_name + "#" + std::to_string(i);
  }
  return out;
}

std::vector<agents::AgentLogRecord> Experiment::log_for(
    const std::vector<std::string>& agent_names, const agents::DecodeOptions& opts, Split s,
    std::vector<metrics::ReformulationSet>* sets) {
  std::vector<agents::AgentLogRecord> out;
  for (const auto* q : split(s)) {
    std::vector<agents::Reformulation> refs{agents::identity_agent(q->tokens)};
    metrics::ReformulationSet set;
    for (const auto& name : agent_names) {
      for (auto& r : reformulate(name, *q, opts)) {
        set.push_back(r.full());
        refs.push_back(std::move(r));
      }
    }
    for (const auto& r : refs) {
      const auto env = search::query_environment(*ds_.index, r.full(), cfg_.depth, q->relevant);
      out.push_back(agents::to_log_record({q->qid, r, env.ranked, env.reward}, *ds_.corpus));
    }
    if (sets && set.size() >= 2) sets->push_back(std::move(set));
  }
  return out;
}

std::vector<agents::AgentLogRecord> Experiment::arm_log(ArmKind kind, Split s) {
  if (kind == ArmKind::ensemble) {
    const auto names = arm_agents(kind);
    std::vector<const agents::Policy*> policies;
    for (const auto& n : names) policies.push_back(&agent(n));
    std::vector<agents::AgentLogRecord> out;
    for (const auto* q : split(s)) {
      auto ens = agents::ensemble_decode(policies, pool(*q), q->tokens, cfg_.sub_agents.t_max);
      for (const auto& r : {agents::identity_agent(q->tokens), ens}) {
        const auto env = search::query_environment(*ds_.index, r.full(), cfg_.depth, q->relevant);
        out.push_back(agents::to_log_record({q->qid, r, env.ranked, env.reward}, *ds_.corpus));
      }
    }
    return out;
  }
  const auto names = arm_agents(kind);
  if (names.empty()) {
    throw ConfigError("arm " + arm_name(kind, cfg_.n_agents) + " has no reformulation agents");
  }
  return log_for(names, arm_decode(kind), s);
}

aggregator::TrainedAggregator Experiment::train_arm_aggregator(
    ArmKind kind, const std::vector<agents::AgentLogRecord>& train_log, nn::PairFeatures features,
    std::uint64_t salt) {
  const auto tc = cfg_.aggregator.train_config(ds_.vocab_size(), features);
  const std::string key = "agg/" + arm_name(kind, cfg_.n_agents);
  const auto tset = aggregator::build_training_set(train_log, ds_.qrels, ds_.query_text,
                                                   *ds_.corpus, tc,
                                                   derive_seed(train_seed_, name_hash(key + "/data")));
  return aggregator::train_aggregator(tset, tc, derive_seed(train_seed_, name_hash(key) + salt));
}

std::vector<Experiment::AggregatedQuery> Experiment::aggregate(
    const std::vector<agents::AgentLogRecord>& log,
    std::span<const aggregator::RelevanceModel* const> models, aggregator::ScoreVariant variant) {
  std::vector<AggregatedQuery> out;
  for (const auto& [qid, lists] : aggregator::group_log(log)) {
    const auto& q = query(qid);
    auto cands =
        aggregator::dedupe_and_rank_score(lists, variant == aggregator::ScoreVariant::count_rank);
    std::vector<DocIndex> all;
    for (const auto& c : cands) {
      const auto d = ds_.corpus->find(c.doc_id);
      if (!d) throw DataError("log mentions unknown document '" + c.doc_id + "'");
      all.push_back(*d);
    }
    AggregatedQuery a;
    a.qid = qid;
    a.oracle = metrics::oracle_recall(all, q.relevant, cfg_.depth);
    aggregator::attach_tokens(cands, *ds_.corpus, cfg_.aggregator.max_doc_tokens);
    if (!models.empty() && !q.tokens.empty()) {
      for (auto& c : cands) {
        if (c.tokens.empty()) continue;
        double sum = 0.0;
        for (const auto* m : models) sum += aggregator::relevance_score(q.tokens, c, *m);
        c.s_r = sum / static_cast<double>(models.size());
      }
    }
    if (!cands.empty()) a.ranking = aggregator::final_ranking(std::move(cands), variant, cfg_.depth);
    out.push_back(std::move(a));
  }
  return out;
}

RankingScores Experiment::mean_scores(const std::vector<AggregatedQuery>& qs,
                                      std::vector<QueryOutcome>* per_query) {
  RankingScores mean;
  for (const auto& a : qs) {
    std::vector<DocIndex> docs;
    for (const auto& c : a.ranking) docs.push_back(*ds_.corpus->find(c.doc_id));
    const auto s = score_ranking(docs, query(a.qid).relevant, cfg_.depth);
    mean.recall += s.recall;
    mean.map += s.map;
    mean.mrr += s.mrr;
    mean.rprec += s.rprec;
    mean.ndcg += s.ndcg;
    if (per_query) per_query->push_back({a.qid, s, a.oracle});
  }
  if (!qs.empty()) {
    const double n = static_cast<double>(qs.size());
    mean.recall /= n;
    mean.map /= n;
    mean.mrr /= n;
    mean.rprec /= n;
    mean.ndcg /= n;
  }
  return mean;
}

ArmResult Experiment::run_ranker(const ArmSpec& arm,
                                 const std::function<TokenSeq(const Query&)>& reformulate_query) {
  ArmResult r;
  r.name = arm.name;
  r.kind = arm.kind;
  std::map<std::string, std::vector<metrics::RunEntry>> run;
  for (Split s : {Split::dev, Split::test}) {
    RankingScores mean;
    const auto& qs = split(s);
    for (const auto* q : qs) {
      const auto tokens = reformulate_query(*q);
      const auto ranked = search::bm25_search(*ds_.index, tokens, cfg_.depth);
      const auto docs = metrics::doc_ids(ranked);
      const auto sc = score_ranking(docs, q->relevant, cfg_.depth);
      mean.recall += sc.recall;
      mean.map += sc.map;
      mean.mrr += sc.mrr;
      mean.rprec += sc.rprec;
      mean.ndcg += sc.ndcg;
      if (s == Split::test) {
        r.test_queries.push_back({q->qid, sc, std::nullopt});
        auto& entries = run[q->qid];
        for (const auto& sd : ranked) entries.push_back({ds_.corpus->doc(sd.doc).doc_id, sd.score});
      }
    }
    if (!qs.empty()) {
      const double n = static_cast<double>(qs.size());
      mean.recall /= n;
      mean.map /= n;
      mean.mrr /= n;
      mean.rprec /= n;
      mean.ndcg /= n;
    }
    (s == Split::dev ? r.dev : r.test) = mean;
  }
  std::string text;
  for (const auto& [qid, entries] : run) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      text += qid + "\t" + entries[i].doc_id + "\t" + std::to_string(i + 1) + "\t" +
              fmt(entries[i].score) + "\n";
    }
  }
  r.files["run.test.tsv"] = text;
  return r;
}

namespace {

std::string aggregated_run_text(const std::vector<Experiment::AggregatedQuery>& qs) {
  std::string text;
  for (const auto& a : qs) {
    for (std::size_t i = 0; i < a.ranking.size(); ++i) {
      text += a.qid + "\t" + a.ranking[i].doc_id + "\t" + std::to_string(i + 1) + "\t" +
              fmt(a.ranking[i].score) + "\n";
    }
  }
  return text;
}

}  // namespace

ArmResult Experiment::aggregated(const ArmSpec& arm, const std::vector<std::string>& agent_names,
                                 bool full_report) {
  using aggregator::ScoreVariant;
  const auto opts = arm_decode(arm.kind);
  std::vector<metrics::ReformulationSet> sets;
  const auto train_log = log_for(agent_names, opts, Split::train);
  const auto dev_log = log_for(agent_names, opts, Split::dev);
  const auto test_log = log_for(agent_names, opts, Split::test, &sets);

  std::vector<aggregator::TrainedAggregator> trained;
  const std::size_t n_models =
      arm.kind == ArmKind::full_ensemble_aggregators ? cfg_.n_agents : 1;
  for (std::size_t i = 0; i < n_models; ++i) {
    trained.push_back(train_arm_aggregator(arm.kind, train_log, nn::PairFeatures::full, i));
  }
  std::vector<const aggregator::RelevanceModel*> models;
  for (const auto& t : trained) models.push_back(&t.model);

  ArmResult r;
  r.name = arm.name;
  r.kind = arm.kind;
  r.aggregator_loss = trained.front().loss_curve;
  const auto test = aggregate(test_log, models, ScoreVariant::product);
  const auto dev = aggregate(dev_log, models, ScoreVariant::product);
  r.test = mean_scores(test, &r.test_queries);
  r.dev = mean_scores(dev, nullptr);
  double oracle = 0.0;
  for (const auto& a : test) oracle += a.oracle;
  r.test_oracle = test.empty() ? 0.0 : oracle / static_cast<double>(test.size());
  if (!sets.empty()) {
    r.diversity = DiversityRow{metrics::pcos(sets), metrics::pbleu(sets), metrics::pinc(sets),
                               metrics::length_std(sets)};
  }
  if (!full_report) return r;

  r.files["log.train.jsonl"] = log_text(train_log);
  r.files["log.dev.jsonl"] = log_text(dev_log);
  r.files["log.test.jsonl"] = log_text(test_log);
  r.files["run.test.tsv"] = aggregated_run_text(test);

  for (auto v : {ScoreVariant::product, ScoreVariant::rank_only, ScoreVariant::relevance_only,
                 ScoreVariant::count_rank}) {
    r.ablation.push_back({v, mean_scores(aggregate(dev_log, models, v), nullptr).recall,
                          mean_scores(aggregate(test_log, models, v), nullptr).recall});
  }
  {
    const auto concat = train_arm_aggregator(arm.kind, train_log, nn::PairFeatures::concat, 0);
    const aggregator::RelevanceModel* m = &concat.model;
    r.ablation.push_back(
        {ScoreVariant::concat_features,
         mean_scores(aggregate(dev_log, std::span(&m, 1), ScoreVariant::product), nullptr).recall,
         mean_scores(aggregate(test_log, std::span(&m, 1), ScoreVariant::product), nullptr).recall});
  }

  if (arm.kind == ArmKind::sub || arm.kind == ArmKind::sub_pretrained) {
    for (std::size_t n = 1; n <= agent_names.size(); ++n) {
      if (n == agent_names.size()) {
        r.sweep.push_back({n, *r.test_oracle, r.test.recall});
        break;
      }
      const std::vector<std::string> first(agent_names.begin(),
                                           agent_names.begin() + static_cast<std::ptrdiff_t>(n));
      const auto tl = log_for(first, opts, Split::train);
      const auto el = log_for(first, opts, Split::test);
      const auto agg = train_arm_aggregator(arm.kind, tl, nn::PairFeatures::full, 1000 + n);
      const aggregator::RelevanceModel* m = &agg.model;
      const auto qs = aggregate(el, std::span(&m, 1), ScoreVariant::product);
      double orc = 0.0;
      for (const auto& a : qs) orc += a.oracle;
      r.sweep.push_back({n, qs.empty() ? 0.0 : orc / static_cast<double>(qs.size()),
                         mean_scores(qs, nullptr).recall});
    }
  }
  return r;
}

ArmResult Experiment::run_arm(const ArmSpec& arm) {
  const auto& index = *ds_.index;
  switch (arm.kind) {
    case ArmKind::bm25:
      return run_ranker(arm, [](const Query& q) { return q.tokens; });
    case ArmKind::prf: {
      // Grid search on dev Recall@depth; the first best point wins ties.
      double best = -1.0;
      std::size_t bn = 0, bk = 1;
      for (auto n : cfg_.baselines.prf_n) {
        for (auto k : cfg_.baselines.prf_k) {
          double sum = 0.0;
          for (const auto* q : split(Split::dev)) {
            const auto ranked =
                search::bm25_search(index, baselines::prf_expand(q->tokens, index, n, k), cfg_.depth);
            sum += metrics::recall_at_k(metrics::doc_ids(ranked), q->relevant, cfg_.depth);
          }
          if (sum > best) {
            best = sum;
            bn = n;
            bk = k;
          }
        }
      }
      auto r = run_ranker(arm, [&](const Query& q) {
        return baselines::prf_expand(q.tokens, index, bn, bk);
      });
      r.selection = "n=" + std::to_string(bn) + ",k=" + std::to_string(bk);
      return r;
    }
    case ArmKind::rm3: {
      baselines::Rm3Config rc;
      rc.lambda = cfg_.baselines.rm3_lambda;
      rc.mu = cfg_.baselines.rm3_mu;
      rc.fb_docs = cfg_.baselines.rm3_fb_docs;
      const auto expand = [&](const Query& q, std::size_t n) {
        if (search::bm25_search(index, q.tokens, 1).empty()) return q.tokens;
        auto c = rc;
        c.n_terms = n;
        return baselines::rm3_expand(q.tokens, index, c);
      };
      double best = -1.0;
      std::size_t bn = cfg_.baselines.rm3_n_terms.front();
      for (auto n : cfg_.baselines.rm3_n_terms) {
        double sum = 0.0;
        for (const auto* q : split(Split::dev)) {
          const auto ranked = search::bm25_search(index, expand(*q, n), cfg_.depth);
          sum += metrics::recall_at_k(metrics::doc_ids(ranked), q->relevant, cfg_.depth);
        }
        if (sum > best) {
          best = sum;
          bn = n;
        }
      }
      auto r = run_ranker(arm, [&](const Query& q) { return expand(q, bn); });
      r.selection = "n_terms=" + std::to_string(bn);
      return r;
    }
    case ArmKind::rl_rnn: {
      arm_agents(arm.kind);
      const auto opts = cfg_.decode_options();
      return run_ranker(arm, [&](const Query& q) { return reformulate("rl-rnn", q, opts)[0].full(); });
    }
    case ArmKind::ensemble: {
      const auto names = arm_agents(arm.kind);
      std::vector<const agents::Policy*> policies;
      for (const auto& n : names) policies.push_back(&agent(n));
      return run_ranker(arm, [&](const Query& q) {
        return agents::ensemble_decode(policies, pool(q), q.tokens, cfg_.sub_agents.t_max).full();
      });
    }
    default: return aggregated(arm, arm_agents(arm.kind), true);
  }
}

SeedReport Experiment::run(const std::vector<std::string>& arms, const std::string& out_dir) {
  std::vector<ArmSpec> specs;
  for (const auto& a : arms) specs.push_back(parse_arm(a, cfg_.n_agents));
  SeedReport report;
  report.data_seed = data_seed_;
  report.train_seed = train_seed_;
  report.depth = cfg_.depth;
  for (const auto& spec : specs) {
    try {
      report.arms.push_back(run_arm(spec));
    } catch (const Error& e) {
      report.failures.push_back({spec.name, e.what(), e.code()});
    } catch (const std::exception& e) {
      report.failures.push_back({spec.name, e.what(), 1});
    }
  }
  if (!out_dir.empty()) write_report(report, out_dir);
  return report;
}

std::vector<partition::PartitionReport> Experiment::partition_study(
    const std::vector<partition::Strategy>& strategies) {
  if (cfg_.n_agents < 3) throw ConfigError("the partition study needs n_agents >= 3");
  std::vector<partition::PartitionReport> out;
  const auto opts = cfg_.decode_options();
  for (auto s : strategies) {
    const auto names = sub_agents(s, false);
    const auto& p = partition_for(s);
    // s_ij: agent i's mean reward on the queries of partition j.
    std::vector<std::vector<double>> reward(names.size(), std::vector<double>(p.size(), 0.0));
    for (std::size_t i = 0; i < names.size(); ++i) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        double sum = 0.0;
        for (auto k : p.subsets[j]) {
          const auto& q = query(training_[k].qid);
          const auto r = reformulate(names[i], q, opts)[0];
          sum += search::query_environment(*ds_.index, r.full(), cfg_.reward_k, q.relevant).reward;
        }
        reward[i][j] = p.subsets[j].empty() ? 0.0 : sum / static_cast<double>(p.subsets[j].size());
      }
    }
    ArmSpec arm{ArmKind::sub, std::string("partition/") + partition::to_string(s)};
    const auto task = aggregated(arm, names, false).test.recall;
    out.push_back(partition::evaluate_partitioning(
        s, names.size(), [&](std::size_t i, std::size_t j) { return reward[i][j]; }, task));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SeedReport> run_all(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::vector<SeedReport> reports;
  for (auto seed : cfg.seeds) {
    Experiment e(cfg, seed, seed);
    const std::string dir =
        out_dir.empty() ? "" : (fs::path(out_dir) / ("seed-" + std::to_string(seed))).string();
    reports.push_back(e.run(cfg.arms, dir));
  }
  if (!out_dir.empty()) {
    std::string text = "arm";
    for (auto seed : cfg.seeds) text += "\tseed-" + std::to_string(seed);
    text += "\tmean\n";
    for (const auto& a : cfg.arms) {
      const auto spec = parse_arm(a, cfg.n_agents);
      text += spec.name;
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& r : reports) {
        const auto* ar = r.find(spec.kind);
        if (ar) {
          text += "\t" + fmt(ar->test.recall);
          sum += ar->test.recall;
          ++n;
        } else {
          text += "\t-";
        }
      }
      text += "\t" + (n ? fmt(sum / static_cast<double>(n)) : std::string("-")) + "\n";
    }
    fs::create_directories(out_dir);
    write_file_atomically(fs::path(out_dir) / "summary.tsv", text);
  }
  return reports;
}

StabilityReport stability_report(const ExperimentConfig& cfg, std::size_t n_seeds) {
  cfg.validate();
  if (n_seeds < 2) throw ConfigError("stability needs at least 2 seeds");
  const std::uint64_t data_seed = cfg.seeds.front();
  const auto ds = load_dataset(cfg, data_seed);
  StabilityReport r;
  const auto single = parse_arm("RL-RNN", cfg.n_agents);
  const auto multi = parse_arm("RL-N-Sub", cfg.n_agents);
  r.single_arm = single.name;
  r.multi_arm = multi.name;
  for (std::size_t i = 0; i < n_seeds; ++i) {
    const std::uint64_t train_seed = data_seed + i;
    Experiment e(cfg, ds, data_seed, train_seed);
    r.train_seeds.push_back(train_seed);
    r.single.push_back(100.0 * e.run_arm(single).test.recall);
    r.multi.push_back(100.0 * e.run_arm(multi).test.recall);
  }
  r.single_variance = sample_variance(r.single);
  r.multi_variance = sample_variance(r.multi);
  r.ratio = r.single_variance > 0.0 ? r.multi_variance / r.single_variance
                                    : (r.multi_variance > 0.0 ? INFINITY : 0.0);
  return r;
}

std::string StabilityReport::to_tsv() const {
  std::string t = "train_seed\t" + single_arm + "\t" + multi_arm + "\n";
  for (std::size_t i = 0; i < train_seeds.size(); ++i) {
    t += std::to_string(train_seeds[i]) + "\t" + fmt(single[i]) + "\t" + fmt(multi[i]) + "\n";
  }
  t += "variance\t" + fmt(single_variance) + "\t" + fmt(multi_variance) + "\n";
  t += "# variance ratio (multi/single)\t" + (std::isfinite(ratio) ? fmt(ratio) : "inf") + "\n";
  t += "# reference F1 variance (single, AQA-10-Sub)\t1.07\t0.20\n";
  return t;
}

std::string StabilityReport::to_json() const {
  Json j;
  j["train_seeds"] = train_seeds;
  j["single_arm"] = single_arm;
  j["multi_arm"] = multi_arm;
  j["single"] = single;
  j["multi"] = multi;
  j["single_variance"] = single_variance;
  j["multi_variance"] = multi_variance;
  j["ratio"] = std::isfinite(ratio) ? Json(ratio) : Json(nullptr);
  j["reference"] = {{"single", 1.07}, {"multi", 0.20}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

namespace {

std::string recall_label(const SeedReport& r) { return "R@" + std::to_string(r.depth); }

}  // namespace

std::string results_tsv(const SeedReport& r) {
  std::string t = "arm\tselection\tdev_" + recall_label(r) + "\t" + recall_label(r) +
                  "\tMAP\tMRR\tR-Prec\tNDCG\tOracle\n";
  for (const auto& a : r.arms) {
    t += a.name + "\t" + (a.selection.empty() ? "-" : a.selection) + "\t" + fmt(a.dev.recall) +
         "\t" + fmt(a.test.recall) + "\t" + fmt(a.test.map) + "\t" + fmt(a.test.mrr) + "\t" +
         fmt(a.test.rprec) + "\t" + fmt(a.test.ndcg) + "\t" +
         (a.test_oracle ? fmt(*a.test_oracle) : "-") + "\n";
  }
  for (const auto& f : r.failures) t += "# failed\t" + f.arm + "\t" + f.message + "\n";
  return t;
}

std::string ablation_tsv(const SeedReport& r) {
  std::string t = "arm\tvariant\tdev_" + recall_label(r) + "\t" + recall_label(r) + "\n";
  for (const auto& a : r.arms) {
    for (const auto& row : a.ablation) {
      t += a.name + "\t" + aggregator::to_string(row.variant) + "\t" + fmt(row.dev) + "\t" +
           fmt(row.test) + "\n";
    }
  }
  return t;
}

std::string diversity_tsv(const SeedReport& r) {
  std::string t = "arm\tpCos\tpBLEU\tPINC\tLength_Std\t" + recall_label(r) + "\n";
  for (const auto& a : r.arms) {
    if (!a.diversity) continue;
    const auto& d = *a.diversity;
    t += a.name + "\t" + fmt(d.pcos) + "\t" + fmt(d.pbleu) + "\t" + fmt(d.pinc) + "\t" +
         fmt(d.length_std) + "\t" + fmt(a.test.recall) + "\n";
  }
  t += "# reference AQA-10-Sub\t14.2\t12.8\t94.5\t11.7\t-\n";
  return t;
}

std::string sweep_dat(const ArmResult& arm) {
  std::string t = "# " + arm.name + "\n# n_agents oracle R@K\n";
  for (const auto& p : arm.sweep) {
    t += std::to_string(p.n_agents) + " " + fmt(p.oracle) + " " + fmt(p.score) + "\n";
  }
  return t;
}

namespace {

Json scores_json(const RankingScores& s) {
  return {{"recall", s.recall}, {"map", s.map}, {"mrr", s.mrr}, {"rprec", s.rprec},
          {"ndcg", s.ndcg}};
}

}  // namespace

std::string summary_json(const SeedReport& r) {
  Json j;
  j["data_seed"] = r.data_seed;
  j["train_seed"] = r.train_seed;
  Json arms = Json::object();
  for (const auto& a : r.arms) {
    Json x;
    x["selection"] = a.selection;
    x["dev"] = scores_json(a.dev);
    x["test"] = scores_json(a.test);
    x["oracle"] = a.test_oracle ? Json(*a.test_oracle) : Json(nullptr);
    if (a.diversity) {
      x["diversity"] = {{"pcos", a.diversity->pcos},
                        {"pbleu", a.diversity->pbleu},
                        {"pinc", a.diversity->pinc},
                        {"length_std", a.diversity->length_std}};
    }
    Json abl = Json::object();
    for (const auto& row : a.ablation) {
      abl[aggregator::to_string(row.variant)] = {{"dev", row.dev}, {"test", row.test}};
    }
    if (!a.ablation.empty()) x["ablation"] = abl;
    if (!a.sweep.empty()) {
      Json sw = Json::array();
      for (const auto& p : a.sweep) {
        sw.push_back({{"n_agents", p.n_agents}, {"oracle", p.oracle}, {"score", p.score}});
      }
      x["sweep"] = sw;
    }
    if (!a.aggregator_loss.empty()) x["aggregator_loss"] = a.aggregator_loss;
    arms[a.name] = x;
  }
  j["arms"] = arms;
  Json failures = Json::array();
  for (const auto& f : r.failures) {
    failures.push_back({{"arm", f.arm}, {"message", f.message}, {"code", f.code}});
  }
  j["failures"] = failures;
  return j.dump(2) + "\n";
}

void write_dir_atomically(const std::string& dir, const std::map<std::string, std::string>& files) {
  const fs::path target = dir;
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  for (const auto& [name, content] : files) write_file(tmp / name, content);
  fs::remove_all(target);
  fs::rename(tmp, target);
}

void write_report(const SeedReport& r, const std::string& dir) {
  const fs::path d = dir;
  fs::create_directories(d / "arms");
  for (const auto& a : r.arms) {
    auto files = a.files;
    Json m;
    m["dev"] = scores_json(a.dev);
    m["test"] = scores_json(a.test);
    Json per = Json::array();
    for (const auto& q : a.test_queries) {
      Json x = scores_json(q.scores);
      x = Json{{"qid", q.qid}, {"scores", x}};
      if (q.oracle) x["oracle"] = *q.oracle;
      per.push_back(x);
    }
    m["per_query"] = per;
    files["metrics.json"] = m.dump(2) + "\n";
    write_dir_atomically((d / "arms" / safe_name(a.name)).string(), files);
  }
  write_file_atomically(d / "results.tsv", results_tsv(r));
  write_file_atomically(d / "ablation.tsv", ablation_tsv(r));
  write_file_atomically(d / "diversity.tsv", diversity_tsv(r));
  write_file_atomically(d / "summary.json", summary_json(r));
  for (const auto& a : r.arms) {
    if (!a.sweep.empty()) {
      write_file_atomically(d / ("sweep-" + safe_name(a.name) + ".dat"), sweep_dat(a));
    }
  }
  if (!r.partitions.empty()) {
    write_file_atomically(d / "partition.tsv", partition::partition_table_tsv(r.partitions));
  }
}

}  // namespace qreform::pipeline
