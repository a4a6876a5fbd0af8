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

#include "qreform/qreform.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "json.hpp"

#include "qreform/error.hpp"
#include "qreform/pipeline.hpp"

namespace fs = std::filesystem;
using qreform::pipeline::ExperimentConfig;
using Json = nlohmann::ordered_json;

struct qr_config {
  ExperimentConfig cfg;
};

struct qr_experiment {
  std::unique_ptr<qreform::pipeline::Experiment> exp;
};

namespace {

thread_local std::string g_last_error;

template <class F>
qr_status guarded(F&& f) {
  try {
    g_last_error.clear();
    return f();
  } catch (const qreform::Error& e) {
    g_last_error = e.what();
    return static_cast<qr_status>(e.code());
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return QR_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return QR_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return QR_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw std::invalid_argument(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<std::string> split_csv(const char* text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw qreform::ConfigError("empty arm list");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw qreform::DataError("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string file_name(const std::string& agent) {
  std::string s = agent;
  for (auto& c : s) {
    if (c == '/') c = '_';
  }
  return s;
}

}  // namespace

extern "C" {

const char* qr_version(void) { return "0.1.0"; }

const char* qr_last_error(void) { return g_last_error.c_str(); }

void qr_string_free(char* s) { std::free(s); }

qr_status qr_config_default(const char* preset, qr_config** out) {
  return guarded([&] {
    require(out, "out");
    const std::string p = preset ? preset : "desk";
    auto c = std::make_unique<qr_config>();
    if (p == "desk") {
      c->cfg = ExperimentConfig::desk();
    } else if (p == "full") {
      c->cfg = ExperimentConfig::full();
    } else {
      throw qreform::ConfigError("unknown preset '" + p + "'");
    }
    *out = c.release();
    return QR_OK;
  });
}

qr_status qr_config_load(const char* path, qr_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto c = std::make_unique<qr_config>();
    c->cfg = qreform::pipeline::load_config(path);
    *out = c.release();
    return QR_OK;
  });
}

qr_status qr_config_parse(const char* json, qr_config** out) {
  return guarded([&] {
    require(json, "json");
    require(out, "out");
    auto c = std::make_unique<qr_config>();
    c->cfg = qreform::pipeline::config_from_json(json);
    *out = c.release();
    return QR_OK;
  });
}

qr_status qr_config_to_json(const qr_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(qreform::pipeline::config_to_json(cfg->cfg));
    return QR_OK;
  });
}

qr_status qr_config_set_seed(qr_config* cfg, uint64_t seed) {
  return guarded([&] {
    require(cfg, "cfg");
    cfg->cfg.seeds = {seed};
    return QR_OK;
  });
}

qr_status qr_config_set_threads(qr_config* cfg, size_t threads) {
  return guarded([&] {
    require(cfg, "cfg");
    if (threads < 1) throw qreform::ConfigError("threads must be >= 1");
    cfg->cfg.threads = threads;
    return QR_OK;
  });
}

qr_status qr_config_set_data_dir(qr_config* cfg, const char* dir) {
  return guarded([&] {
    require(cfg, "cfg");
    require(dir, "dir");
    cfg->cfg.corpus.files_dir = dir;
    return QR_OK;
  });
}

qr_status qr_config_set_arms(qr_config* cfg, const char* arms) {
  return guarded([&] {
    require(cfg, "cfg");
    require(arms, "arms");
    auto list = split_csv(arms);
    for (const auto& a : list) qreform::pipeline::parse_arm(a, cfg->cfg.n_agents);
    cfg->cfg.arms = std::move(list);
    return QR_OK;
  });
}

void qr_config_free(qr_config* cfg) { delete cfg; }

qr_status qr_synth(const qr_config* cfg, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_dir, "out_dir");
    const auto data = qreform::synth::synth_corpus(cfg->cfg.corpus.synthetic, seed);
    qreform::pipeline::write_synthetic(data, out_dir);
    return QR_OK;
  });
}

qr_status qr_run_all(const qr_config* cfg, const char* out_dir) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_dir, "out_dir");
    const auto reports = qreform::pipeline::run_all(cfg->cfg, out_dir);
    for (const auto& r : reports) {
      if (!r.failures.empty()) {
        g_last_error = r.failures.front().arm + ": " + r.failures.front().message;
        return static_cast<qr_status>(r.failures.front().code);
      }
    }
    return QR_OK;
  });
}

qr_status qr_stability(const qr_config* cfg, size_t n_seeds, const char* out_dir) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_dir, "out_dir");
    const auto r = qreform::pipeline::stability_report(cfg->cfg, n_seeds);
    write_text(fs::path(out_dir) / "stability.tsv", r.to_tsv());
    write_text(fs::path(out_dir) / "stability.json", r.to_json());
    return QR_OK;
  });
}

qr_status qr_trec_eval(const char* qrels_path, const char* run_path, const char* recall_ks,
                       int complete, const char* out_dir) {
  return guarded([&] {
    require(qrels_path, "qrels_path");
    require(run_path, "run_path");
    require(out_dir, "out_dir");
    std::vector<std::size_t> ks;
    for (const auto& k : split_csv(recall_ks ? recall_ks : "10")) {
      std::size_t pos = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(k, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != k.size() || v == 0) throw qreform::ConfigError("bad recall cutoff '" + k + "'");
      ks.push_back(v);
    }
    const auto qrels = qreform::search::read_qrels_tsv(qrels_path);
    const auto run = qreform::metrics::read_run_tsv(run_path);
    const auto r = qreform::metrics::evaluate_run(run, qrels, ks, complete != 0);
    write_text(fs::path(out_dir) / "metrics.tsv", r.to_tsv());
    write_text(fs::path(out_dir) / "metrics.json", r.to_json());
    return QR_OK;
  });
}

qr_status qr_experiment_create(const qr_config* cfg, uint64_t seed, qr_experiment** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    auto e = std::make_unique<qr_experiment>();
    e->exp = std::make_unique<qreform::pipeline::Experiment>(cfg->cfg, seed, seed);
    *out = e.release();
    return QR_OK;
  });
}

void qr_experiment_free(qr_experiment* exp) { delete exp; }

qr_status qr_experiment_stats(const qr_experiment* exp, char** out_json) {
  return guarded([&] {
    require(exp, "exp");
    require(out_json, "out_json");
    const auto& ds = exp->exp->dataset();
    Json j;
    j["documents"] = ds.corpus->size();
    j["vocabulary"] = ds.vocab_size();
    j["indexed_terms"] = ds.index->term_count();
    j["total_tokens"] = ds.corpus->total_tokens();
    j["avg_doc_length"] = ds.index->avg_doc_length();
    j["train_queries"] = ds.train.size();
    j["dev_queries"] = ds.dev.size();
    j["test_queries"] = ds.test.size();
    j["dropped_queries"] = ds.dropped.size();
    *out_json = dup_string(j.dump(2) + "\n");
    return QR_OK;
  });
}

qr_status qr_experiment_run(qr_experiment* exp, const char* arms, const char* out_dir) {
  return guarded([&] {
    require(exp, "exp");
    require(out_dir, "out_dir");
    const auto list = arms ? split_csv(arms) : exp->exp->config().arms;
    const auto r = exp->exp->run(list, out_dir);
    if (!r.failures.empty()) {
      g_last_error = r.failures.front().arm + ": " + r.failures.front().message;
      return static_cast<qr_status>(r.failures.front().code);
    }
    return QR_OK;
  });
}

qr_status qr_experiment_train_agents(qr_experiment* exp, const char* arm, const char* dir) {
  return guarded([&] {
    require(exp, "exp");
    require(arm, "arm");
    require(dir, "dir");
    auto& e = *exp->exp;
    const auto spec = qreform::pipeline::parse_arm(arm, e.config().n_agents);
    const auto names = e.arm_agents(spec.kind);
    if (names.empty()) throw qreform::ConfigError(spec.name + " trains no agents");
    fs::create_directories(dir);
    for (const auto& name : names) {
      const auto& p = e.agent(name);
      const fs::path base = fs::path(dir) / file_name(name);
      qreform::nn::save_params(p.params(), base.string() + ".bin");
      Json j;
      j["name"] = name;
      j["vocab_size"] = p.config().vocab_size;
      j["embed_dim"] = p.config().embed_dim;
      j["hidden_dim"] = p.config().hidden_dim;
      write_text(base.string() + ".json", j.dump(2) + "\n");
    }
    return QR_OK;
  });
}

qr_status qr_experiment_load_agents(qr_experiment* exp, const char* dir) {
  return guarded([&] {
    require(exp, "exp");
    require(dir, "dir");
    if (!fs::is_directory(dir)) throw qreform::DataError(std::string("no agent directory ") + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      Json j;
      try {
        j = Json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw qreform::DataError("malformed agent description " + f.string());
      }
      qreform::agents::PolicyConfig pc;
      pc.vocab_size = j.at("vocab_size").get<std::size_t>();
      pc.embed_dim = j.at("embed_dim").get<std::size_t>();
      pc.hidden_dim = j.at("hidden_dim").get<std::size_t>();
      if (pc.vocab_size != exp->exp->dataset().vocab_size()) {
        throw qreform::DataError("agent " + f.string() + " was trained on another vocabulary");
      }
      fs::path bin = f;
      bin.replace_extension(".bin");
      exp->exp->put_agent(j.at("name").get<std::string>(),
                          qreform::agents::Policy(pc, qreform::nn::load_params(bin.string())));
    }
    return QR_OK;
  });
}

qr_status qr_experiment_log(qr_experiment* exp, const char* arm, const char* split,
                            const char* path) {
  return guarded([&] {
    require(exp, "exp");
    require(arm, "arm");
    require(split, "split");
    require(path, "path");
    auto& e = *exp->exp;
    const auto spec = qreform::pipeline::parse_arm(arm, e.config().n_agents);
    const auto log = e.arm_log(spec.kind, qreform::pipeline::parse_split(split));
    const fs::path p = path;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    qreform::agents::write_agent_log(path, log);
    return QR_OK;
  });
}

qr_status qr_experiment_train_aggregator(qr_experiment* exp, const char* log_path,
                                         const char* model_path, char** out_loss) {
  return guarded([&] {
    require(exp, "exp");
    require(log_path, "log_path");
    require(model_path, "model_path");
    auto& e = *exp->exp;
    const auto log = qreform::agents::read_agent_log(log_path);
    const auto trained = e.train_arm_aggregator(qreform::pipeline::ArmKind::sub, log);
    const fs::path p = model_path;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    trained.model.save(model_path);
    if (out_loss) *out_loss = dup_string(Json(trained.loss_curve).dump() + "\n");
    return QR_OK;
  });
}

qr_status qr_experiment_evaluate(qr_experiment* exp, const char* log_path, const char* model_path,
                                 const char* variant, const char* out_dir) {
  return guarded([&] {
    require(exp, "exp");
    require(log_path, "log_path");
    require(model_path, "model_path");
    require(out_dir, "out_dir");
    auto& e = *exp->exp;
    const auto v = qreform::aggregator::parse_score_variant(variant ? variant : "product");
    const auto log = qreform::agents::read_agent_log(log_path);
    const auto model = qreform::aggregator::RelevanceModel::load(model_path);
    if (model.encoder.vocab_size != e.dataset().vocab_size()) {
      throw qreform::DataError("aggregator model was trained on another vocabulary");
    }
    const qreform::aggregator::RelevanceModel* m = &model;
    const auto qs = e.aggregate(log, std::span(&m, 1), v);

    std::map<std::string, const qreform::data::Query*> by_qid;
    for (auto s : {qreform::pipeline::Split::train, qreform::pipeline::Split::dev,
                   qreform::pipeline::Split::test}) {
      for (const auto* q : e.split(s)) by_qid[q->qid] = q;
    }
    std::string run;
    Json per = Json::array();
    qreform::pipeline::RankingScores mean;
    double oracle = 0.0;
    for (const auto& a : qs) {
      std::vector<qreform::DocIndex> docs;
      for (std::size_t i = 0; i < a.ranking.size(); ++i) {
        run += a.qid + "\t" + a.ranking[i].doc_id + "\t" + std::to_string(i + 1) + "\t" +
               fmt(a.ranking[i].score) + "\n";
        docs.push_back(*e.dataset().corpus->find(a.ranking[i].doc_id));
      }
      const auto s =
          qreform::pipeline::score_ranking(docs, by_qid.at(a.qid)->relevant, e.config().depth);
      mean.recall += s.recall;
      mean.map += s.map;
      mean.mrr += s.mrr;
      mean.rprec += s.rprec;
      mean.ndcg += s.ndcg;
      oracle += a.oracle;
      per.push_back({{"qid", a.qid},
                     {"recall", s.recall},
                     {"map", s.map},
                     {"mrr", s.mrr},
                     {"rprec", s.rprec},
                     {"ndcg", s.ndcg},
                     {"oracle", a.oracle}});
    }
    const double n = qs.empty() ? 1.0 : static_cast<double>(qs.size());
    Json j;
    j["variant"] = qreform::aggregator::to_string(v);
    j["queries"] = qs.size();
    j["macro"] = {{"recall", mean.recall / n}, {"map", mean.map / n},   {"mrr", mean.mrr / n},
                  {"rprec", mean.rprec / n},   {"ndcg", mean.ndcg / n}, {"oracle", oracle / n}};
    j["per_query"] = per;
    write_text(fs::path(out_dir) / "run.tsv", run);
    write_text(fs::path(out_dir) / "metrics.json", j.dump(2) + "\n");
    return QR_OK;
  });
}

qr_status qr_experiment_rm3_trace(qr_experiment* exp, const char* qid, size_t limit,
                                  const char* path) {
  return guarded([&] {
    require(exp, "exp");
    require(qid, "qid");
    require(path, "path");
    auto& e = *exp->exp;
    const qreform::data::Query* q = nullptr;
    for (auto s : {qreform::pipeline::Split::train, qreform::pipeline::Split::dev,
                   qreform::pipeline::Split::test}) {
      for (const auto* x : e.split(s)) {
        if (x->qid == qid) q = x;
      }
    }
    if (!q) throw qreform::DataError(std::string("unknown query '") + qid + "'");
    const auto& b = e.config().baselines;
    qreform::baselines::Rm3Config rc;
    rc.lambda = b.rm3_lambda;
    rc.mu = b.rm3_mu;
    rc.fb_docs = b.rm3_fb_docs;
    const auto dist = qreform::baselines::rm3_distribution(q->tokens, *e.dataset().index, rc);
    write_text(path, qreform::baselines::expansion_trace_tsv(dist, *e.dataset().corpus, limit));
    return QR_OK;
  });
}

qr_status qr_experiment_write_partition(qr_experiment* exp, const char* strategy,
                                        const char* path) {
  return guarded([&] {
    require(exp, "exp");
    require(strategy, "strategy");
    require(path, "path");
    auto& e = *exp->exp;
    const auto& p = e.partition_for(qreform::partition::parse_strategy(strategy));
    std::vector<std::string> ids;
    for (const auto* q : e.split(qreform::pipeline::Split::train)) ids.push_back(q->qid);
    const fs::path out = path;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    qreform::partition::write_partition_tsv(path, p, ids);
    return QR_OK;
  });
}

qr_status qr_experiment_partition_study(qr_experiment* exp, const char* out_dir) {
  return guarded([&] {
    require(exp, "exp");
    require(out_dir, "out_dir");
    using qreform::partition::Strategy;
    const auto reports = exp->exp->partition_study(
        {Strategy::random, Strategy::kmeans_q, Strategy::kmeans_a, Strategy::kmeans_qa});
    write_text(fs::path(out_dir) / "partition.tsv",
               qreform::partition::partition_table_tsv(reports));
    return QR_OK;
  });
}

}  // extern "C"
