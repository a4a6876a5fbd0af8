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

#include "qreform/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "qreform/error.hpp"

namespace qreform::aggregator {

const char* to_string(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::product: return "product";
    case ScoreVariant::rank_only: return "rank_only";
    case ScoreVariant::relevance_only: return "relevance_only";
    case ScoreVariant::count_rank: return "count_rank";
    case ScoreVariant::concat_features: return "concat_features";
  }
  return "unknown";
}

ScoreVariant parse_score_variant(const std::string& s) {
  for (auto v : {ScoreVariant::product, ScoreVariant::rank_only, ScoreVariant::relevance_only,
                 ScoreVariant::count_rank, ScoreVariant::concat_features}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown aggregator variant '" + s + "'");
}

std::vector<CandidateResult> dedupe_and_rank_score(std::span<const ResultList> lists,
                                                   bool count_rank) {
  std::vector<CandidateResult> out;
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < lists.size(); ++i) {
    const auto& ids = lists[i].doc_ids;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto [it, fresh] = pos.emplace(ids[r], out.size());
      if (fresh) {
        CandidateResult c;
        c.doc_id = ids[r];
        c.ranks.assign(lists.size(), 0);
        out.push_back(std::move(c));
      }
      auto& c = out[it->second];
      // A list should not repeat a document; keep its best rank if it does.
      if (c.ranks[i] == 0) c.ranks[i] = r + 1;
    }
  }
  for (auto& c : out) {
    for (std::size_t i = 0; i < lists.size(); ++i) {
      const auto r = c.ranks[i];
      // The identity reformulation contributes candidates but no rank votes.
      if (r == 0 || lists[i].agent_id == agents::kIdentityAgentId) continue;
      c.s_a += count_rank ? 1.0 : 1.0 / static_cast<double>(r);
    }
  }
  return out;
}

void attach_tokens(std::vector<CandidateResult>& candidates, const search::Corpus& corpus,
                   std::size_t max_tokens) {
  for (auto& c : candidates) {
    const auto d = corpus.find(c.doc_id);
    if (!d) throw DataError("unknown document '" + c.doc_id + "'");
    const auto& toks = corpus.doc(*d).tokens;
    c.tokens.assign(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(max_tokens, toks.size())));
  }
}

// ---------------------------------------------------------------------------

RelevanceModel RelevanceModel::create(const nn::EncoderConfig& encoder, nn::PairFeatures features,
                                      std::size_t hidden_dim, std::uint64_t seed) {
  encoder.validate();
  if (hidden_dim < 1) throw ConfigError("aggregator hidden_dim must be >= 1");
  RelevanceModel m{encoder, features, hidden_dim, {}};
  Rng rng(seed);
  nn::add_encoder_params(m.params, encoder, rng);
  nn::add_head_params(m.params, nn::pair_feature_dim(features, encoder.output_dim), hidden_dim,
                      rng);
  return m;
}

void RelevanceModel::save(const std::string& path) const {
  nn::save_params(params, path);
  nlohmann::ordered_json j;
  j["vocab_size"] = encoder.vocab_size;
  j["embed_dim"] = encoder.embed_dim;
  auto layers = nlohmann::json::array();
  for (const auto& l : encoder.cnn_layers) layers.push_back({l.width, l.kernels});
  j["cnn_layers"] = layers;
  j["output_dim"] = encoder.output_dim;
  j["shared_embedding"] = encoder.shared_embedding;
  j["features"] = features == nn::PairFeatures::full ? "full" : "concat";
  j["hidden_dim"] = hidden_dim;
  std::ofstream out(path + ".json");
  if (!out) throw DataError("cannot write " + path + ".json");
  out << j.dump(2) << '\n';
}

RelevanceModel RelevanceModel::load(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw DataError("cannot open " + path + ".json");
  RelevanceModel m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.encoder.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.encoder.embed_dim = j.at("embed_dim").get<std::size_t>();
    m.encoder.cnn_layers.clear();
    for (const auto& l : j.at("cnn_layers")) {
      m.encoder.cnn_layers.push_back({l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>()});
    }
    m.encoder.output_dim = j.at("output_dim").get<std::size_t>();
    m.encoder.shared_embedding = j.at("shared_embedding").get<bool>();
    m.features = j.at("features").get<std::string>() == "concat" ? nn::PairFeatures::concat
                                                                  : nn::PairFeatures::full;
    m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model description: ") + e.what());
  }
  m.params = nn::load_params(path);
  if (m.params.value("emb").rows() != m.encoder.vocab_size) {
    throw DataError("model parameters do not match " + path + ".json");
  }
  return m;
}

double relevance_score(std::span<const TokenId> q0, const CandidateResult& candidate,
                       const RelevanceModel& model) {
  if (candidate.tokens.empty()) throw std::invalid_argument("candidate has no tokens");
  return nn::pair_probability(q0, candidate.tokens, model.params, model.encoder, model.features);
}

void score_relevance(std::vector<CandidateResult>& candidates, std::span<const TokenId> q0,
                     std::span<const RelevanceModel* const> models) {
  if (models.empty()) throw std::invalid_argument("no aggregator models");
  for (auto& c : candidates) {
    double sum = 0.0;
    for (const auto* m : models) sum += relevance_score(q0, c, *m);
    c.s_r = sum / static_cast<double>(models.size());
  }
}

std::vector<CandidateResult> final_ranking(std::vector<CandidateResult> candidates,
                                           ScoreVariant variant, std::size_t k) {
  if (k < 1) throw std::invalid_argument("final_ranking needs k >= 1");
  for (auto& c : candidates) {
    switch (variant) {
      case ScoreVariant::rank_only: c.score = c.s_a; break;
      case ScoreVariant::relevance_only: c.score = c.s_r; break;
      default: c.score = c.s_a * c.s_r; break;
    }
  }
  const auto better = [](const CandidateResult& a, const CandidateResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  };
  const std::size_t keep = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), better);
  candidates.resize(keep);
  return candidates;
}

std::vector<CandidateResult> ensemble_aggregators(std::span<const RelevanceModel* const> models,
                                                  std::span<const TokenId> q0,
                                                  std::vector<CandidateResult> candidates,
                                                  ScoreVariant variant, std::size_t k) {
  score_relevance(candidates, q0, models);
  return final_ranking(std::move(candidates), variant, k);
}

// ---------------------------------------------------------------------------

std::map<std::string, std::vector<ResultList>> group_log(
    std::span<const agents::AgentLogRecord> records) {
  std::map<std::string, std::vector<ResultList>> out;
  for (const auto& r : records) out[r.qid].push_back({r.agent_id, r.ranked_doc_ids});
  return out;
}

TrainingSet build_training_set(std::span<const agents::AgentLogRecord> records,
                               const search::Qrels& qrels,
                               const std::map<std::string, std::string>& queries,
                               const search::Corpus& corpus, const AggregatorTrainConfig& cfg,
                               std::uint64_t seed) {
  TrainingSet out;
  Rng rng(seed);
  for (const auto& [qid, lists] : group_log(records)) {
    const auto qit = queries.find(qid);
    if (qit == queries.end()) throw DataError("log mentions unknown query '" + qid + "'");
    auto cands = dedupe_and_rank_score(lists);
    if (cands.empty()) {
      out.excluded.push_back(qid);
      continue;
    }
    attach_tokens(cands, corpus, cfg.max_doc_tokens);
    std::unordered_set<std::string> rel;
    if (auto it = qrels.find(qid); it != qrels.end()) rel.insert(it->second.begin(), it->second.end());

    nn::PairGroup g;
    g.query = corpus.lookup(qit->second);
    std::vector<nn::LabeledResult> negatives;
    for (auto& c : cands) {
      if (c.tokens.empty()) continue;
      if (rel.count(c.doc_id)) {
        g.results.push_back({std::move(c.tokens), 1.0});
      } else {
        negatives.push_back({std::move(c.tokens), 0.0});
      }
    }
    if (g.results.empty() || g.query.empty()) {
      out.excluded.push_back(qid);
      continue;
    }
    if (cfg.negative_cap > 0 && negatives.size() > cfg.negative_cap) {
      shuffle(negatives, rng);
      negatives.resize(cfg.negative_cap);
    }
    for (auto& n : negatives) g.results.push_back(std::move(n));
    out.groups.push_back(std::move(g));
    out.qids.push_back(qid);
  }
  return out;
}

TrainedAggregator train_aggregator(const TrainingSet& data, const AggregatorTrainConfig& cfg,
                                   std::uint64_t seed) {
  if (data.groups.empty()) throw DataError("no aggregator training queries with a positive result");
  if (cfg.batch_size < 1) throw ConfigError("aggregator batch size must be >= 1");
  TrainedAggregator out{
      RelevanceModel::create(cfg.encoder, cfg.features, cfg.hidden_dim, derive_seed(seed, 0)), {}};
  auto opt = nn::make_optimizer(cfg.optimizer, cfg.lr);
  Rng rng(derive_seed(seed, 1));
  std::vector<std::size_t> order(data.groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<nn::PairGroup> batch;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data.groups[order[i]]);
      const double loss = nn::pair_bce_backprop(batch, out.model.params, cfg.encoder,
                                                cfg.features, nn::Reduction::mean_over_groups);
      epoch_loss += loss * static_cast<double>(end - start);
      opt->step(out.model.params);
    }
    out.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return out;
}

}  // namespace qreform::aggregator
