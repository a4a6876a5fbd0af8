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

#include "qreform/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "qreform/error.hpp"
#include "qreform/pipeline.hpp"

namespace qreform::pipeline {

using Json = nlohmann::ordered_json;

nn::EncoderConfig AggregatorSettings::encoder(std::size_t vocab_size) const {
  nn::EncoderConfig e;
  e.vocab_size = vocab_size;
  e.embed_dim = embed_dim;
  e.cnn_layers.clear();
  for (std::size_t i = 0; i < filter_sizes.size(); ++i) {
    e.cnn_layers.push_back({filter_sizes[i], kernels[i]});
  }
  e.output_dim = D;
  e.shared_embedding = shared_embedding;
  return e;
}

aggregator::AggregatorTrainConfig AggregatorSettings::train_config(
    std::size_t vocab_size, nn::PairFeatures features) const {
  aggregator::AggregatorTrainConfig c;
  c.encoder = encoder(vocab_size);
  c.features = features;
  c.hidden_dim = D;  // W1 is 4D x D
  c.epochs = epochs;
  c.batch_size = mini_batch_size;
  c.lr = learning_rate;
  c.optimizer = optimizer;
  c.max_doc_tokens = max_doc_tokens;
  c.negative_cap = negative_cap;
  return c;
}

void ExperimentConfig::validate() const {
  if (preset != "desk" && preset != "full") throw ConfigError("unknown preset '" + preset + "'");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (n_agents < 1) throw ConfigError("n_agents must be >= 1");
  if (reward_k < 1 || depth < 1) throw ConfigError("reward_k and depth must be >= 1");
  if (arms.empty()) throw ConfigError("arms must not be empty");
  for (const auto& a : arms) parse_arm(a, n_agents);
  if (corpus.files_dir.empty()) corpus.synthetic.validate();
  if (bm25.k1 < 0.0 || bm25.b < 0.0 || bm25.b > 1.0) throw ConfigError("bad BM25 parameters");
  if (baselines.prf_n.empty() || baselines.prf_k.empty() || baselines.rm3_n_terms.empty()) {
    throw ConfigError("baseline grids must not be empty");
  }
  for (auto k : baselines.prf_k) {
    if (k < 1) throw ConfigError("prf_k_grid values must be >= 1");
  }
  baselines::Rm3Config rm3;
  rm3.lambda = baselines.rm3_lambda;
  rm3.mu = baselines.rm3_mu;
  rm3.fb_docs = baselines.rm3_fb_docs;
  for (auto n : baselines.rm3_n_terms) {
    rm3.n_terms = n;
    rm3.validate();
  }
  const auto& s = sub_agents;
  if (s.mini_batch_size < 1 || s.updates < 1 || s.n_samples < 1) {
    throw ConfigError("sub_agents mini_batch_size, updates and n_samples must be >= 1");
  }
  if (!(s.learning_rate > 0.0)) throw ConfigError("sub_agents learning_rate must be > 0");
  if (s.pool_docs < 1 || s.pool_terms < 1 || s.embed_dim < 1 || s.hidden_dim < 1) {
    throw ConfigError("sub_agents sizes must be >= 1");
  }
  if (!(s.baseline_decay >= 0.0 && s.baseline_decay < 1.0)) {
    throw ConfigError("baseline_decay must lie in [0, 1)");
  }
  if (decode.method != agents::DecodeMethod::greedy && decode.method != agents::DecodeMethod::beam &&
      decode.method != agents::DecodeMethod::sample) {
    throw ConfigError("decode method must be greedy, beam or sample");
  }
  if (decode.beam_width < 1 || decode.n_samples < 1) {
    throw ConfigError("beam_width and n_samples must be >= 1");
  }
  const auto& a = aggregator;
  if (a.filter_sizes.size() != a.kernels.size() || a.filter_sizes.empty()) {
    throw ConfigError("aggregator filter_sizes and kernels must have the same non-zero length");
  }
  if (a.dropout != 0.0) throw ConfigError("aggregator dropout is not supported (must be 0)");
  if (!(a.learning_rate > 0.0) || a.mini_batch_size < 1 || a.D < 1 || a.embed_dim < 1 ||
      a.max_doc_tokens < 1) {
    throw ConfigError("bad aggregator settings");
  }
  a.encoder(1).validate();
}

agents::AgentTrainConfig ExperimentConfig::agent_train_config(std::size_t vocab_size) const {
  agents::AgentTrainConfig c;
  c.policy.vocab_size = vocab_size;
  c.policy.embed_dim = sub_agents.embed_dim;
  c.policy.hidden_dim = sub_agents.hidden_dim;
  c.reinforce.n_samples = sub_agents.n_samples;
  c.reinforce.t_max = sub_agents.t_max;
  c.reinforce.reward_k = reward_k;
  c.reinforce.baseline_decay = sub_agents.baseline_decay;
  c.updates = sub_agents.updates;
  c.batch_size = sub_agents.mini_batch_size;
  c.lr = sub_agents.learning_rate;
  c.optimizer = sub_agents.optimizer;
  return c;
}

agents::DecodeOptions ExperimentConfig::decode_options() const {
  agents::DecodeOptions o;
  o.method = decode.method;
  o.t_max = sub_agents.t_max;
  o.beam_width = decode.beam_width;
  o.n_samples = decode.n_samples;
  return o;
}

ExperimentConfig ExperimentConfig::desk() { return {}; }

ExperimentConfig ExperimentConfig::full() {
  ExperimentConfig c;
  c.preset = "full";
  c.n_agents = 10;
  c.reward_k = 40;
  c.depth = 40;
  c.arms = {"BM25",      "PRF",       "RM3",          "RL-RNN",
            "RL-N-Ensemble", "RL-N-Full", "RL-N-Bagging", "RL-N-Sub",
            "RL-N-Sub-Pretrained"};
  c.sub_agents.mini_batch_size = 256;
  c.sub_agents.optimizer = nn::OptimizerKind::adam;
  c.sub_agents.learning_rate = 1e-4;
  c.aggregator.filter_sizes = {9, 3};
  c.aggregator.kernels = {128, 256};
  c.aggregator.D = 512;
  c.aggregator.embed_dim = 300;
  c.aggregator.learning_rate = 1e-4;
  c.aggregator.mini_batch_size = 64;
  c.aggregator.epochs = 100;
  c.aggregator.dropout = 0.0;
  c.aggregator.optimizer = nn::OptimizerKind::adam;
  return c;
}

// ---------------------------------------------------------------------------

namespace {

const char* optimizer_name(nn::OptimizerKind k) {
  return k == nn::OptimizerKind::sgd ? "sgd" : "adam";
}

// Reads members of one JSON object and rejects the ones nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + where_ + "." + k + "'");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad type for '" + where_ + "." + key + "'");
    }
  }
  const Json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_optimizer(ObjectReader& r, const char* key, nn::OptimizerKind& out) {
  std::string name = optimizer_name(out);
  r.get(key, name);
  try {
    out = nn::parse_optimizer(name);
  } catch (const std::exception&) {
    throw ConfigError("unknown optimizer '" + name + "'");
  }
}

void read_synthetic(const Json& j, synth::SyntheticSpec& s) {
  ObjectReader r(j, "corpus.synthetic");
  r.get("n_topics", s.n_topics);
  r.get("docs_per_topic", s.docs_per_topic);
  r.get("subject_pool", s.subject_pool);
  r.get("topic_words", s.topic_words);
  r.get("background_vocab", s.background_vocab);
  r.get("zipf_exponent", s.zipf_exponent);
  r.get("doc_len_min", s.doc_len_min);
  r.get("doc_len_max", s.doc_len_max);
  r.get("topic_rate", s.topic_rate);
  r.get("noise_rate", s.noise_rate);
  r.get("noise_words_per_doc", s.noise_words_per_doc);
  r.get("query_terms", s.query_terms);
  r.get("corruption_rate", s.corruption_rate);
  r.get("n_train", s.n_train);
  r.get("n_dev", s.n_dev);
  r.get("n_test", s.n_test);
}

Json synthetic_json(const synth::SyntheticSpec& s) {
  Json j;
  j["n_topics"] = s.n_topics;
  j["docs_per_topic"] = s.docs_per_topic;
  j["subject_pool"] = s.subject_pool;
  j["topic_words"] = s.topic_words;
  j["background_vocab"] = s.background_vocab;
  j["zipf_exponent"] = s.zipf_exponent;
  j["doc_len_min"] = s.doc_len_min;
  j["doc_len_max"] = s.doc_len_max;
  j["topic_rate"] = s.topic_rate;
  j["noise_rate"] = s.noise_rate;
  j["noise_words_per_doc"] = s.noise_words_per_doc;
  j["query_terms"] = s.query_terms;
  j["corruption_rate"] = s.corruption_rate;
  j["n_train"] = s.n_train;
  j["n_dev"] = s.n_dev;
  j["n_test"] = s.n_test;
  return j;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string preset = "desk";
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("preset must be a string");
    preset = it->get<std::string>();
  }
  ExperimentConfig c;
  if (preset == "desk") {
    c = ExperimentConfig::desk();
  } else if (preset == "full") {
    c = ExperimentConfig::full();
  } else {
    throw ConfigError("unknown preset '" + preset + "'");
  }
  {
    ObjectReader r(j, "config");
    r.get("preset", c.preset);
    r.get("seeds", c.seeds);
    r.get("threads", c.threads);
    r.get("n_agents", c.n_agents);
    std::string strategy = partition::to_string(c.partition);
    r.get("partition", strategy);
    c.partition = partition::parse_strategy(strategy);
    r.get("reward_k", c.reward_k);
    r.get("depth", c.depth);
    r.get("arms", c.arms);
    if (const auto* cj = r.child("corpus")) {
      ObjectReader cr(*cj, "corpus");
      if (const auto* sj = cr.child("synthetic")) read_synthetic(*sj, c.corpus.synthetic);
      if (const auto* fj = cr.child("files")) {
        ObjectReader fr(*fj, "corpus.files");
        fr.get("dir", c.corpus.files_dir);
        if (c.corpus.files_dir.empty()) throw ConfigError("corpus.files.dir must not be empty");
      }
    }
    if (const auto* bj = r.child("bm25")) {
      ObjectReader br(*bj, "bm25");
      br.get("k1", c.bm25.k1);
      br.get("b", c.bm25.b);
    }
    if (const auto* bj = r.child("baselines")) {
      ObjectReader br(*bj, "baselines");
      br.get("prf_n_grid", c.baselines.prf_n);
      br.get("prf_k_grid", c.baselines.prf_k);
      br.get("rm3_n_terms_grid", c.baselines.rm3_n_terms);
      br.get("rm3_lambda", c.baselines.rm3_lambda);
      br.get("rm3_mu", c.baselines.rm3_mu);
      br.get("rm3_fb_docs", c.baselines.rm3_fb_docs);
    }
    if (const auto* sj = r.child("sub_agents")) {
      ObjectReader sr(*sj, "sub_agents");
      auto& s = c.sub_agents;
      sr.get("mini_batch_size", s.mini_batch_size);
      read_optimizer(sr, "optimizer", s.optimizer);
      sr.get("learning_rate", s.learning_rate);
      sr.get("updates", s.updates);
      sr.get("n_samples", s.n_samples);
      sr.get("t_max", s.t_max);
      sr.get("pool_docs", s.pool_docs);
      sr.get("pool_terms", s.pool_terms);
      sr.get("embed_dim", s.embed_dim);
      sr.get("hidden_dim", s.hidden_dim);
      sr.get("baseline_decay", s.baseline_decay);
      sr.get("pretrained_updates", s.pretrained_updates);
    }
    if (const auto* dj = r.child("decode")) {
      ObjectReader dr(*dj, "decode");
      std::string method = agents::to_string(c.decode.method);
      dr.get("method", method);
      try {
        c.decode.method = agents::parse_decode_method(method);
      } catch (const std::exception&) {
        throw ConfigError("unknown decode method '" + method + "'");
      }
      dr.get("beam_width", c.decode.beam_width);
      dr.get("n_samples", c.decode.n_samples);
    }
    if (const auto* aj = r.child("aggregator")) {
      ObjectReader ar(*aj, "aggregator");
      auto& a = c.aggregator;
      ar.get("filter_sizes", a.filter_sizes);
      ar.get("kernels", a.kernels);
      ar.get("D", a.D);
      ar.get("embed_dim", a.embed_dim);
      ar.get("learning_rate", a.learning_rate);
      ar.get("mini_batch_size", a.mini_batch_size);
      ar.get("epochs", a.epochs);
      ar.get("dropout", a.dropout);
      read_optimizer(ar, "optimizer", a.optimizer);
      ar.get("max_doc_tokens", a.max_doc_tokens);
      ar.get("negative_cap", a.negative_cap);
      ar.get("shared_embedding", a.shared_embedding);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  Json j;
  j["preset"] = c.preset;
  j["seeds"] = c.seeds;
  j["threads"] = c.threads;
  j["n_agents"] = c.n_agents;
  j["partition"] = partition::to_string(c.partition);
  j["reward_k"] = c.reward_k;
  j["depth"] = c.depth;
  j["arms"] = c.arms;
  if (c.corpus.files_dir.empty()) {
    j["corpus"]["synthetic"] = synthetic_json(c.corpus.synthetic);
  } else {
    j["corpus"]["files"]["dir"] = c.corpus.files_dir;
  }
  j["bm25"] = {{"k1", c.bm25.k1}, {"b", c.bm25.b}};
  j["baselines"] = {{"prf_n_grid", c.baselines.prf_n},
                    {"prf_k_grid", c.baselines.prf_k},
                    {"rm3_n_terms_grid", c.baselines.rm3_n_terms},
                    {"rm3_lambda", c.baselines.rm3_lambda},
                    {"rm3_mu", c.baselines.rm3_mu},
                    {"rm3_fb_docs", c.baselines.rm3_fb_docs}};
  const auto& s = c.sub_agents;
  j["sub_agents"] = {{"mini_batch_size", s.mini_batch_size},
                     {"optimizer", optimizer_name(s.optimizer)},
                     {"learning_rate", s.learning_rate},
                     {"updates", s.updates},
                     {"n_samples", s.n_samples},
                     {"t_max", s.t_max},
                     {"pool_docs", s.pool_docs},
                     {"pool_terms", s.pool_terms},
                     {"embed_dim", s.embed_dim},
                     {"hidden_dim", s.hidden_dim},
                     {"baseline_decay", s.baseline_decay},
                     {"pretrained_updates", s.pretrained_updates}};
  j["decode"] = {{"method", agents::to_string(c.decode.method)},
                 {"beam_width", c.decode.beam_width},
                 {"n_samples", c.decode.n_samples}};
  const auto& a = c.aggregator;
  j["aggregator"] = {{"filter_sizes", a.filter_sizes},
                     {"kernels", a.kernels},
                     {"D", a.D},
                     {"embed_dim", a.embed_dim},
                     {"learning_rate", a.learning_rate},
                     {"mini_batch_size", a.mini_batch_size},
                     {"epochs", a.epochs},
                     {"dropout", a.dropout},
                     {"optimizer", optimizer_name(a.optimizer)},
                     {"max_doc_tokens", a.max_doc_tokens},
                     {"negative_cap", a.negative_cap},
                     {"shared_embedding", a.shared_embedding}};
  return j.dump(2) + "\n";
}

}  // namespace qreform::pipeline
