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

#include "qreform/agents.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

#include "json.hpp"

#include "qreform/baselines.hpp"
#include "qreform/error.hpp"

namespace qreform::agents {

CandidatePool build_candidate_pool(std::span<const TokenId> q0,
                                   const search::InvertedIndex& index, std::size_t k_docs,
                                   std::size_t m_terms) {
  if (k_docs < 1 || m_terms < 1) throw std::invalid_argument("k_docs and m_terms must be >= 1");
  CandidatePool pool;
  const auto ranked = search::bm25_search(index, q0, k_docs);
  if (ranked.empty()) return pool;
  const auto& corpus = index.corpus();

  std::vector<TokenId> order;
  std::unordered_map<TokenId, std::size_t> best_rank;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    for (auto t : baselines::top_tfidf_terms(index, ranked[r].doc, m_terms)) {
      if (best_rank.emplace(t, r + 1).second) order.push_back(t);
    }
  }

  double score_sum = 0.0;
  for (const auto& sd : ranked) score_sum += sd.score;
  const double log_n = std::log(static_cast<double>(std::max<std::size_t>(index.doc_count(), 2)));

  double max_tfidf = 0.0;
  std::vector<double> tfidf_max(order.size(), 0.0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    CandidateTerm ct{order[i], {}};
    double covered = 0.0, weighted = 0.0;
    for (const auto& sd : ranked) {
      const auto tf = corpus.doc(sd.doc).tf(order[i]);
      if (tf == 0) continue;
      covered += 1.0;
      weighted += sd.score;
      tfidf_max[i] = std::max(tfidf_max[i], baselines::tfidf(index, order[i], tf));
    }
    max_tfidf = std::max(max_tfidf, tfidf_max[i]);
    const double df = std::max<double>(index.df(order[i]), 1.0);
    ct.features[0] = 1.0;
    ct.features[2] = std::log(static_cast<double>(index.doc_count()) / df) / log_n;
    ct.features[3] = 1.0 / static_cast<double>(best_rank[order[i]]);
    ct.features[4] = covered / static_cast<double>(ranked.size());
    ct.features[5] = score_sum > 0.0 ? weighted / score_sum : 0.0;
    pool.terms.push_back(ct);
  }
  for (std::size_t i = 0; i < pool.terms.size(); ++i) {
    pool.terms[i].features[1] = max_tfidf > 0.0 ? tfidf_max[i] / max_tfidf : 0.0;
  }
  return pool;
}

const char* to_string(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::identity: return "identity";
    case DecodeMethod::greedy: return "greedy";
    case DecodeMethod::sample: return "sample";
    case DecodeMethod::beam: return "beam";
    case DecodeMethod::ensemble: return "ensemble";
    case DecodeMethod::external: return "external";
  }
  return "unknown";
}

DecodeMethod parse_decode_method(const std::string& s) {
  for (auto m : {DecodeMethod::identity, DecodeMethod::greedy, DecodeMethod::sample,
                 DecodeMethod::beam, DecodeMethod::ensemble, DecodeMethod::external}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown decode method '" + s + "'");
}

TokenSeq Reformulation::full() const {
  TokenSeq out = q0;
  out.insert(out.end(), added.begin(), added.end());
  return out;
}

Reformulation identity_agent(std::span<const TokenId> q0) {
  Reformulation r;
  r.q0.assign(q0.begin(), q0.end());
  r.agent_id = kIdentityAgentId;
  r.method = DecodeMethod::identity;
  return r;
}

// ---------------------------------------------------------------------------

double ActionScores::stop_logit(std::size_t step, std::size_t t_max) const {
  const double frac = t_max > 0 ? static_cast<double>(step) / static_cast<double>(t_max) : 0.0;
  return stop_bias + stop_slope * frac;
}

Policy::Policy(PolicyConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.vocab_size < 1 || cfg_.embed_dim < 1 || cfg_.hidden_dim < 1) {
    throw ConfigError("policy dimensions must be >= 1");
  }
  Rng rng(seed);
  nn::init_normal(params_.add("emb", {cfg_.vocab_size, cfg_.embed_dim}), 0.1, rng);
  nn::init_xavier(params_.add("mlp.w1", {cfg_.hidden_dim, kTermFeatures + 2 * cfg_.embed_dim}),
                  rng);
  params_.add("mlp.b1", {cfg_.hidden_dim});
  nn::init_xavier(params_.add("mlp.w2", {1, cfg_.hidden_dim}), rng);
  params_.add("mlp.b2", {1});
  params_.add("stop", {2});
}

Policy::Policy(PolicyConfig cfg, nn::ModelParams params) : cfg_(cfg), params_(std::move(params)) {
  const auto& emb = params_.value("emb");
  if (emb.rows() != cfg_.vocab_size || emb.cols() != cfg_.embed_dim ||
      params_.value("mlp.w1").rows() != cfg_.hidden_dim) {
    throw DataError("policy checkpoint does not match the policy configuration");
  }
  params_.value("stop");
}

std::vector<double> Policy::term_input(const CandidateTerm& term,
                                       std::span<const double> query_mean) const {
  const std::size_t e = cfg_.embed_dim;
  std::vector<double> x(kTermFeatures + 2 * e, 0.0);
  std::copy(term.features.begin(), term.features.end(), x.begin());
  if (term.term < cfg_.vocab_size) {
    auto row = params_.value("emb").row(term.term);
    for (std::size_t c = 0; c < e; ++c) {
      x[kTermFeatures + c] = row[c];
      x[kTermFeatures + e + c] = row[c] * query_mean[c];
    }
  }
  return x;
}

ActionScores Policy::score(std::span<const TokenId> q0, const CandidatePool& pool,
                           Cache* cache) const {
  const std::size_t e = cfg_.embed_dim;
  const auto& emb = params_.value("emb");
  std::vector<double> qmean(e, 0.0);
  TokenSeq qtokens;
  for (auto t : q0) {
    if (t >= cfg_.vocab_size) continue;
    qtokens.push_back(t);
    auto row = emb.row(t);
    for (std::size_t c = 0; c < e; ++c) qmean[c] += row[c];
  }
  if (!qtokens.empty()) {
    for (auto& v : qmean) v /= static_cast<double>(qtokens.size());
  }

  const auto& w1 = params_.value("mlp.w1");
  const auto& b1 = params_.value("mlp.b1");
  const auto& w2 = params_.value("mlp.w2");
  const auto& b2 = params_.value("mlp.b2");
  ActionScores out;
  out.term_logits.resize(pool.size());
  std::vector<double> pre(cfg_.hidden_dim), hidden(cfg_.hidden_dim);
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t j = 0; j < pool.size(); ++j) {
    auto x = term_input(pool.terms[j], qmean);
    nn::linear_forward(w1, b1, x, pre);
    for (std::size_t h = 0; h < pre.size(); ++h) hidden[h] = pre[h] > 0.0 ? pre[h] : 0.0;
    double logit = 0.0;
    nn::linear_forward(w2, b2, hidden, std::span<double>(&logit, 1));
    out.term_logits[j] = logit;
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(pre);
    }
  }
  const auto& stop = params_.value("stop");
  out.stop_bias = stop.values[0];
  out.stop_slope = stop.values[1];
  if (cache) {
    cache->query_mean = std::move(qmean);
    cache->query_count = qtokens.size();
    cache->query_tokens = std::move(qtokens);
  }
  return out;
}

void Policy::backward(const Cache& cache, const CandidatePool& pool,
                      std::span<const double> dlogits, double dstop_bias, double dstop_slope) {
  const std::size_t e = cfg_.embed_dim;
  const auto& w1 = params_.value("mlp.w1");
  const auto& w2 = params_.value("mlp.w2");
  auto& dw1 = params_.grad("mlp.w1");
  auto& db1 = params_.grad("mlp.b1");
  auto& dw2 = params_.grad("mlp.w2");
  auto& db2 = params_.grad("mlp.b2");
  auto& demb = params_.grad("emb");
  const auto& emb = params_.value("emb");

  std::vector<double> hidden(cfg_.hidden_dim), dpre(cfg_.hidden_dim);
  std::vector<double> dx(kTermFeatures + 2 * e);
  std::vector<double> dqmean(e, 0.0);
  for (std::size_t j = 0; j < pool.size(); ++j) {
    const double g = dlogits[j];
    if (g == 0.0) continue;
    const auto& pre = cache.pre[j];
    for (std::size_t h = 0; h < pre.size(); ++h) hidden[h] = pre[h] > 0.0 ? pre[h] : 0.0;
    std::fill(dpre.begin(), dpre.end(), 0.0);
    nn::linear_backward(w2, hidden, std::span<const double>(&g, 1), dw2, db2, dpre);
    for (std::size_t h = 0; h < pre.size(); ++h) {
      if (pre[h] <= 0.0) dpre[h] = 0.0;
    }
    std::fill(dx.begin(), dx.end(), 0.0);
    nn::linear_backward(w1, cache.inputs[j], dpre, dw1, db1, dx);
    const TokenId term = pool.terms[j].term;
    if (term >= cfg_.vocab_size) continue;
    auto drow = demb.row(term);
    auto row = emb.row(term);
    for (std::size_t c = 0; c < e; ++c) {
      drow[c] += dx[kTermFeatures + c] + dx[kTermFeatures + e + c] * cache.query_mean[c];
      dqmean[c] += dx[kTermFeatures + e + c] * row[c];
    }
  }
  if (cache.query_count > 0) {
    const double inv = 1.0 / static_cast<double>(cache.query_count);
    for (auto t : cache.query_tokens) {
      auto drow = demb.row(t);
      for (std::size_t c = 0; c < e; ++c) drow[c] += dqmean[c] * inv;
    }
  }
  auto& dstop = params_.grad("stop");
  dstop.values[0] += dstop_bias;
  dstop.values[1] += dstop_slope;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kStop = std::numeric_limits<std::size_t>::max();

// Per-step action distributions of one decision problem. Exponentials are
// taken once against a common shift; each step then only re-sums the
// unused terms.
class Stepper {
 public:
  Stepper(const ActionScores& s, std::size_t t_max) : s_(s), t_max_(t_max) {
    shift_ = -std::numeric_limits<double>::infinity();
    for (double l : s.term_logits) shift_ = std::max(shift_, l);
    for (std::size_t t = 0; t < t_max; ++t) shift_ = std::max(shift_, s.stop_logit(t, t_max));
    if (!std::isfinite(shift_)) shift_ = 0.0;
    rebase(shift_);
  }

  // Returns false when stopping is forced (no choice, probability 1).
  bool prepare(const std::vector<char>& used, std::size_t step) {
    const std::size_t n = e_.size();
    std::size_t remaining = 0;
    for (std::size_t j = 0; j < n; ++j) remaining += used[j] ? 0 : 1;
    if (step >= t_max_ || remaining == 0) return false;
    stop_ = s_.stop_logit(step, t_max_);
    for (int attempt = 0; attempt < 2; ++attempt) {
      e_stop_ = std::exp(stop_ - shift_);
      z_ = e_stop_;
      for (std::size_t j = 0; j < n; ++j) {
        if (!used[j]) z_ += e_[j];
      }
      if (std::isfinite(z_) && z_ > 1e-280) break;
      // The common shift is far from the available logits; move it.
      double m = stop_;
      for (std::size_t j = 0; j < n; ++j) {
        if (!used[j]) m = std::max(m, s_.term_logits[j]);
      }
      rebase(m);
    }
    log_z_ = shift_ + std::log(z_);
    return true;
  }

  double log_prob(std::size_t j) const { return s_.term_logits[j] - log_z_; }
  double prob(std::size_t j) const { return e_[j] / z_; }
  double stop_log_prob() const { return stop_ - log_z_; }
  double stop_prob() const { return e_stop_ / z_; }

 private:
  void rebase(double shift) {
    shift_ = shift;
    e_.resize(s_.term_logits.size());
    for (std::size_t j = 0; j < e_.size(); ++j) e_[j] = std::exp(s_.term_logits[j] - shift_);
  }

  const ActionScores& s_;
  std::size_t t_max_;
  double shift_ = 0.0;
  std::vector<double> e_;
  double stop_ = 0.0, e_stop_ = 0.0, z_ = 1.0, log_z_ = 0.0;
};

void check_actions(std::span<const std::size_t> actions, std::size_t pool, std::size_t t_max) {
  if (actions.size() > t_max) throw std::invalid_argument("action sequence longer than t_max");
  std::vector<char> seen(pool, 0);
  for (auto a : actions) {
    if (a >= pool) throw std::out_of_range("action outside the candidate pool");
    if (seen[a]) throw std::invalid_argument("action sequence repeats a term");
    seen[a] = 1;
  }
}

Reformulation make_reformulation(const CandidatePool& pool, std::span<const TokenId> q0,
                                 std::vector<std::size_t> actions, double log_prob,
                                 DecodeMethod method) {
  Reformulation r;
  r.q0.assign(q0.begin(), q0.end());
  for (auto a : actions) r.added.push_back(pool.terms[a].term);
  r.actions = std::move(actions);
  r.log_prob = log_prob;
  r.method = method;
  return r;
}

// Ties go to the lowest pool index; stop wins only when strictly best.
Reformulation greedy_decode(const ActionScores& scores, const CandidatePool& pool,
                            std::span<const TokenId> q0, std::size_t t_max) {
  Stepper st(scores, t_max);
  std::vector<char> used(pool.size(), 0);
  std::vector<std::size_t> actions;
  double logp = 0.0;
  for (std::size_t step = 0; st.prepare(used, step); ++step) {
    std::size_t best = kStop;
    double best_lp = st.stop_log_prob();
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (used[j]) continue;
      const double lp = st.log_prob(j);
      if (best == kStop ? lp >= best_lp : lp > best_lp) {
        best = j;
        best_lp = lp;
      }
    }
    logp += best_lp;
    if (best == kStop) break;
    used[best] = 1;
    actions.push_back(best);
  }
  return make_reformulation(pool, q0, std::move(actions), logp, DecodeMethod::greedy);
}

Reformulation sample_decode(const ActionScores& scores, const CandidatePool& pool,
                            std::span<const TokenId> q0, std::size_t t_max, Rng& rng) {
  Stepper st(scores, t_max);
  std::vector<char> used(pool.size(), 0);
  std::vector<std::size_t> actions;
  double logp = 0.0;
  for (std::size_t step = 0; st.prepare(used, step); ++step) {
    double u = uniform01(rng);
    std::size_t choice = kStop;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (used[j]) continue;
      const double p = st.prob(j);
      if (u < p) {
        choice = j;
        break;
      }
      u -= p;
    }
    if (choice == kStop) {
      logp += st.stop_log_prob();
      break;
    }
    logp += st.log_prob(choice);
    used[choice] = 1;
    actions.push_back(choice);
  }
  return make_reformulation(pool, q0, std::move(actions), logp, DecodeMethod::sample);
}

std::vector<Reformulation> beam_decode(const ActionScores& scores, const CandidatePool& pool,
                                       std::span<const TokenId> q0, std::size_t t_max,
                                       std::size_t width) {
  struct Hyp {
    std::vector<std::size_t> actions;
    std::vector<char> used;
    double logp;
  };
  const auto better = [](const auto& a, const auto& b) {
    if (a.logp != b.logp) return a.logp > b.logp;
    return a.actions < b.actions;
  };
  Stepper st(scores, t_max);
  std::vector<Hyp> live{{{}, std::vector<char>(pool.size(), 0), 0.0}};
  std::vector<Hyp> done;
  for (std::size_t step = 0; !live.empty(); ++step) {
    std::vector<Hyp> next;
    for (auto& h : live) {
      if (!st.prepare(h.used, step)) {
        done.push_back({h.actions, {}, h.logp});
        continue;
      }
      done.push_back({h.actions, {}, h.logp + st.stop_log_prob()});
      for (std::size_t j = 0; j < pool.size(); ++j) {
        if (h.used[j]) continue;
        Hyp x{h.actions, h.used, h.logp + st.log_prob(j)};
        x.actions.push_back(j);
        x.used[j] = 1;
        next.push_back(std::move(x));
      }
    }
    const std::size_t keep = std::min(width, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(),
                      better);
    next.resize(keep);
    // Partial hypotheses only lose probability; drop those that can no
    // longer enter the final top `width`.
    if (done.size() >= width) {
      std::sort(done.begin(), done.end(), better);
      done.resize(width);
      const double floor = done.back().logp;
      std::erase_if(next, [&](const Hyp& h) { return h.logp <= floor; });
    }
    live = std::move(next);
  }
  // The greedy path is always a candidate, so the best beam is never worse
  // than greedy decoding.
  auto g = greedy_decode(scores, pool, q0, t_max);
  done.push_back({g.actions, {}, g.log_prob});
  std::sort(done.begin(), done.end(), better);
  done.erase(std::unique(done.begin(), done.end(),
                         [](const Hyp& a, const Hyp& b) { return a.actions == b.actions; }),
             done.end());
  if (done.size() > width) done.resize(width);
  std::vector<Reformulation> out;
  for (auto& h : done) {
    out.push_back(make_reformulation(pool, q0, std::move(h.actions), h.logp, DecodeMethod::beam));
  }
  return out;
}

}  // namespace

double sequence_log_prob(const ActionScores& scores, std::span<const std::size_t> actions,
                         std::size_t t_max) {
  const std::size_t n = scores.term_logits.size();
  check_actions(actions, n, t_max);
  Stepper st(scores, t_max);
  std::vector<char> used(n, 0);
  double logp = 0.0;
  for (std::size_t step = 0; step <= actions.size(); ++step) {
    if (!st.prepare(used, step)) break;
    if (step == actions.size()) {
      logp += st.stop_log_prob();
      break;
    }
    logp += st.log_prob(actions[step]);
    used[actions[step]] = 1;
  }
  return logp;
}

void sequence_log_prob_grad(const ActionScores& scores, std::span<const std::size_t> actions,
                            std::size_t t_max, double weight, std::span<double> dlogits,
                            double& dstop_bias, double& dstop_slope) {
  const std::size_t n = scores.term_logits.size();
  check_actions(actions, n, t_max);
  Stepper st(scores, t_max);
  std::vector<char> used(n, 0);
  for (std::size_t step = 0; step <= actions.size(); ++step) {
    if (!st.prepare(used, step)) break;
    const bool stopping = step == actions.size();
    for (std::size_t j = 0; j < n; ++j) {
      if (!used[j]) dlogits[j] -= weight * st.prob(j);
    }
    if (!stopping) dlogits[actions[step]] += weight;
    const double gstop = weight * ((stopping ? 1.0 : 0.0) - st.stop_prob());
    dstop_bias += gstop;
    dstop_slope +=
        gstop * (t_max > 0 ? static_cast<double>(step) / static_cast<double>(t_max) : 0.0);
    if (stopping) break;
    used[actions[step]] = 1;
  }
}

std::vector<Reformulation> decode_scores(const ActionScores& scores, const CandidatePool& pool,
                                         std::span<const TokenId> q0, const DecodeOptions& opts,
                                         Rng* rng) {
  if (scores.term_logits.size() != pool.size()) {
    throw std::invalid_argument("scores do not match the candidate pool");
  }
  switch (opts.method) {
    case DecodeMethod::greedy:
      return {greedy_decode(scores, pool, q0, opts.t_max)};
    case DecodeMethod::sample: {
      if (!rng) throw std::invalid_argument("sample decoding needs a random engine");
      std::vector<Reformulation> out;
      for (std::size_t i = 0; i < std::max<std::size_t>(opts.n_samples, 1); ++i) {
        out.push_back(sample_decode(scores, pool, q0, opts.t_max, *rng));
      }
      return out;
    }
    case DecodeMethod::beam:
      if (opts.beam_width < 1) throw std::invalid_argument("beam_width must be >= 1");
      return beam_decode(scores, pool, q0, opts.t_max, opts.beam_width);
    case DecodeMethod::identity:
      return {identity_agent(q0)};
    default:
      throw std::invalid_argument(std::string("decode: unsupported method ") +
                                  to_string(opts.method));
  }
}

std::vector<Reformulation> decode(const Policy& policy, const CandidatePool& pool,
                                  std::span<const TokenId> q0, const DecodeOptions& opts,
                                  Rng* rng) {
  if (opts.method == DecodeMethod::beam && opts.beam_width < 1) {
    throw std::invalid_argument("beam_width must be >= 1");
  }
  return decode_scores(policy.score(q0, pool), pool, q0, opts, rng);
}

Reformulation ensemble_decode_scores(std::span<const ActionScores> scores,
                                     const CandidatePool& pool, std::span<const TokenId> q0,
                                     std::size_t t_max) {
  if (scores.empty()) throw std::invalid_argument("ensemble_decode: no policies");
  const std::size_t n = pool.size();
  std::vector<Stepper> steppers;
  steppers.reserve(scores.size());
  for (const auto& s : scores) steppers.emplace_back(s, t_max);
  std::vector<char> used(n, 0);
  std::vector<std::size_t> actions;
  std::vector<double> avg(n);
  double logp = 0.0;
  const double inv = 1.0 / static_cast<double>(scores.size());
  for (std::size_t step = 0;; ++step) {
    std::fill(avg.begin(), avg.end(), 0.0);
    double avg_stop = 0.0;
    bool forced = false;
    for (auto& st : steppers) {
      if (!st.prepare(used, step)) {
        forced = true;
        break;
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (!used[j]) avg[j] += inv * st.prob(j);
      }
      avg_stop += inv * st.stop_prob();
    }
    if (forced) break;
    std::size_t best = kStop;
    double best_p = avg_stop;
    for (std::size_t j = 0; j < n; ++j) {
      if (!used[j] && (best == kStop ? avg[j] >= best_p : avg[j] > best_p)) {
        best = j;
        best_p = avg[j];
      }
    }
    logp += std::log(best_p);
    if (best == kStop) break;
    used[best] = 1;
    actions.push_back(best);
  }
  return make_reformulation(pool, q0, std::move(actions), logp, DecodeMethod::ensemble);
}

Reformulation ensemble_decode(std::span<const Policy* const> policies, const CandidatePool& pool,
                              std::span<const TokenId> q0, std::size_t t_max) {
  if (policies.empty()) throw std::invalid_argument("ensemble_decode: no policies");
  std::vector<ActionScores> scores;
  for (const auto* p : policies) scores.push_back(p->score(q0, pool));
  auto r = ensemble_decode_scores(scores, pool, q0, t_max);
  r.agent_id = "ensemble";
  return r;
}

// ---------------------------------------------------------------------------

void BaselineState::update(double reward, double decay) {
  if (!initialized) {
    value = reward;
    initialized = true;
    return;
  }
  value = decay * value + (1.0 - decay) * reward;
}

namespace {

// Adds d(scale * sum_s -(r_s - b) log p_s)/dparams for samples of a single
// query, and returns the matching loss contribution.
double accumulate_query(Policy& policy, const TrainingQuery& q, const ActionScores& scores,
                        const Policy::Cache& cache, std::span<const FrozenSample* const> samples,
                        double baseline, std::size_t t_max, double scale) {
  std::vector<double> dlogits(q.pool.size(), 0.0);
  double dstop_b = 0.0, dstop_s = 0.0, loss = 0.0;
  for (const auto* s : samples) {
    const double adv = s->reward - baseline;
    loss -= scale * adv * sequence_log_prob(scores, s->actions, t_max);
    if (adv != 0.0) {
      sequence_log_prob_grad(scores, s->actions, t_max, -scale * adv, dlogits, dstop_b, dstop_s);
    }
  }
  policy.backward(cache, q.pool, dlogits, dstop_b, dstop_s);
  return loss;
}

}  // namespace

double surrogate_loss(const Policy& policy, std::span<const FrozenSample> samples,
                      double baseline, std::size_t t_max) {
  if (samples.empty()) return 0.0;
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const auto scores = policy.score(s.query->q0, s.query->pool);
    loss -= scale * (s.reward - baseline) * sequence_log_prob(scores, s.actions, t_max);
  }
  return loss;
}

double surrogate_backprop(Policy& policy, std::span<const FrozenSample> samples, double baseline,
                          std::size_t t_max) {
  policy.params().zero_grad();
  if (samples.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(samples.size());
  double loss = 0.0;
  std::size_t i = 0;
  while (i < samples.size()) {
    std::size_t j = i;
    std::vector<const FrozenSample*> group;
    while (j < samples.size() && samples[j].query == samples[i].query) group.push_back(&samples[j++]);
    Policy::Cache cache;
    const auto scores = policy.score(samples[i].query->q0, samples[i].query->pool, &cache);
    loss += accumulate_query(policy, *samples[i].query, scores, cache, group, baseline, t_max,
                             scale);
    i = j;
  }
  policy.params().check_finite_grads();
  return loss;
}

RewardFn environment_reward(const search::InvertedIndex& index, std::size_t reward_k) {
  return [&index, reward_k](std::span<const TokenId> query, const TrainingQuery& q) {
    return search::query_environment(index, query, reward_k, q.relevant).reward;
  };
}

StepStats reinforce_step(Policy& policy, nn::Optimizer& optimizer,
                         std::span<const TrainingQuery* const> batch, const RewardFn& reward,
                         const ReinforceConfig& cfg, BaselineState& baseline, Rng& rng) {
  if (cfg.n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  StepStats stats;
  if (batch.empty()) return stats;

  // One forward pass per query serves both sampling and the gradient.
  std::vector<FrozenSample> samples;
  samples.reserve(batch.size() * cfg.n_samples);
  std::vector<ActionScores> scores(batch.size());
  std::vector<Policy::Cache> caches(batch.size());
  std::vector<std::size_t> first(batch.size() + 1, 0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto* q = batch[b];
    scores[b] = policy.score(q->q0, q->pool, &caches[b]);
    first[b] = samples.size();
    DecodeOptions opts{DecodeMethod::sample, cfg.t_max, 1, cfg.n_samples};
    for (auto& r : decode_scores(scores[b], q->pool, q->q0, opts, &rng)) {
      const double rw = reward(r.full(), *q);
      samples.push_back({q, std::move(r.actions), rw});
      stats.mean_reward += rw;
    }
  }
  first[batch.size()] = samples.size();
  stats.mean_reward /= static_cast<double>(samples.size());
  if (!baseline.initialized) baseline.update(stats.mean_reward, cfg.baseline_decay);

  policy.params().zero_grad();
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::vector<const FrozenSample*> group;
    for (std::size_t i = first[b]; i < first[b + 1]; ++i) group.push_back(&samples[i]);
    stats.surrogate += accumulate_query(policy, *batch[b], scores[b], caches[b], group,
                                        baseline.value, cfg.t_max, scale);
  }
  policy.params().check_finite_grads();
  optimizer.step(policy.params());
  for (const auto& s : samples) baseline.update(s.reward, cfg.baseline_decay);
  return stats;
}

TrainedAgent train_agent(const AgentTrainConfig& cfg, std::span<const TrainingQuery> data,
                         const RewardFn& reward, std::uint64_t seed, const Policy* init) {
  if (data.empty()) throw DataError("cannot train an agent on zero queries");
  if (cfg.batch_size < 1) throw ConfigError("agent batch size must be >= 1");
  TrainedAgent out{init ? *init : Policy(cfg.policy, derive_seed(seed, 0)), {}};
  auto opt = nn::make_optimizer(cfg.optimizer, cfg.lr);
  Rng rng(derive_seed(seed, 1));
  BaselineState baseline;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<const TrainingQuery*> batch;
  for (std::size_t u = 0; u < cfg.updates; ++u) {
    batch.clear();
    const std::size_t want = std::min(cfg.batch_size, data.size());
    while (batch.size() < want) {
      if (cursor == order.size()) {
        shuffle(order, rng);
        cursor = 0;
      }
      batch.push_back(&data[order[cursor++]]);
    }
    const auto stats =
        reinforce_step(out.policy, *opt, batch, reward, cfg.reinforce, baseline, rng);
    out.reward_curve.push_back(stats.mean_reward);
  }
  return out;
}

// ---------------------------------------------------------------------------

AgentLogRecord to_log_record(const AgentResult& r, const search::Corpus& corpus) {
  AgentLogRecord rec;
  rec.qid = r.qid;
  rec.agent_id = r.reformulation.agent_id;
  rec.reformulation = corpus.decode(r.reformulation.full());
  for (const auto& sd : r.ranked) rec.ranked_doc_ids.push_back(corpus.doc(sd.doc).doc_id);
  rec.reward = r.reward;
  return rec;
}

std::string to_jsonl(const AgentLogRecord& r) {
  nlohmann::ordered_json j;
  j["qid"] = r.qid;
  j["agent_id"] = r.agent_id;
  j["reformulation"] = r.reformulation;
  j["ranked_doc_ids"] = r.ranked_doc_ids;
  j["reward"] = r.reward;
  return j.dump();
}

AgentLogRecord parse_log_record(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    AgentLogRecord r;
    r.qid = j.at("qid").get<std::string>();
    r.agent_id = j.at("agent_id").get<std::string>();
    r.reformulation = j.at("reformulation").get<std::string>();
    r.ranked_doc_ids = j.at("ranked_doc_ids").get<std::vector<std::string>>();
    r.reward = j.at("reward").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed agent log record: ") + e.what());
  }
}

void write_agent_log(const std::string& path, std::span<const AgentLogRecord> records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& r : records) out << to_jsonl(r) << '\n';
}

std::vector<AgentLogRecord> read_agent_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open agent log " + path);
  std::vector<AgentLogRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.push_back(parse_log_record(line));
  }
  return out;
}

std::vector<std::string> ExternalReformulator::reformulate(const std::string& q0) const {
  char path[] = "/tmp/qreform-extXXXXXX";
  const int fd = ::mkstemp(path);
  if (fd < 0) throw DataError("cannot create temporary file for external reformulator");
  {
    const std::string text = q0 + "\n";
    const auto written = ::write(fd, text.data(), text.size());
    ::close(fd);
    if (written != static_cast<ssize_t>(text.size())) {
      ::unlink(path);
      throw DataError("cannot write temporary file for external reformulator");
    }
  }
  const std::string cmd = command_ + " < " + path;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    ::unlink(path);
    throw DataError("cannot run external reformulator: " + command_);
  }
  std::vector<std::string> out;
  std::string line;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) {
    line += buf;
    if (!line.empty() && line.back() == '\n') {
      line.pop_back();
      if (!line.empty()) out.push_back(line);
      line.clear();
    }
  }
  if (!line.empty()) out.push_back(line);
  const int status = ::pclose(pipe);
  ::unlink(path);
  if (status != 0) throw DataError("external reformulator failed: " + command_);
  return out;
}

}  // namespace qreform::agents
