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

// Straight-line reference implementations used as test oracles. They share
// no code with the library beyond the data types and read raw tokens
// instead of the index structures.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "qreform/nn.hpp"
#include "qreform/search.hpp"
#include "qreform/types.hpp"

namespace oracle {

using qreform::DocIndex;
using qreform::TokenId;
using qreform::TokenSeq;

// ---------------------------------------------------------------------------
// Ranking metrics with binary relevance.

inline bool is_rel(const std::set<DocIndex>& rel, DocIndex d) { return rel.count(d) > 0; }

inline double recall(const std::vector<DocIndex>& ranked, const std::set<DocIndex>& rel,
                     std::size_t k) {
  double hits = 0;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) hits += is_rel(rel, ranked[i]);
  return hits / static_cast<double>(rel.size());
}

inline double average_precision(const std::vector<DocIndex>& ranked,
                                const std::set<DocIndex>& rel) {
  double sum = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!is_rel(rel, ranked[i])) continue;
    double hits_to_here = 0;
    for (std::size_t j = 0; j <= i; ++j) hits_to_here += is_rel(rel, ranked[j]);
    sum += hits_to_here / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(rel.size());
}

inline double r_precision(const std::vector<DocIndex>& ranked, const std::set<DocIndex>& rel) {
  double hits = 0;
  for (std::size_t i = 0; i < rel.size() && i < ranked.size(); ++i) hits += is_rel(rel, ranked[i]);
  return hits / static_cast<double>(rel.size());
}

inline double reciprocal_rank(const std::vector<DocIndex>& ranked, const std::set<DocIndex>& rel) {
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (is_rel(rel, ranked[i])) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

inline double ndcg(const std::vector<DocIndex>& ranked, const std::set<DocIndex>& rel) {
  double dcg = 0, ideal = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (is_rel(rel, ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  for (std::size_t i = 0; i < rel.size(); ++i) ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / ideal;
}

// ---------------------------------------------------------------------------
// BM25 over raw token lists.

struct Bm25Doc {
  std::string id;
  TokenSeq tokens;
};

inline double count_in(const TokenSeq& seq, TokenId t) {
  return static_cast<double>(std::count(seq.begin(), seq.end(), t));
}

inline double bm25_score(const std::vector<Bm25Doc>& docs, const TokenSeq& query, std::size_t d,
                         double k1 = 1.2, double b = 0.75) {
  double total_len = 0;
  for (const auto& x : docs) total_len += static_cast<double>(x.tokens.size());
  const double n = static_cast<double>(docs.size());
  const double avgdl = total_len / n;
  double s = 0;
  for (auto t : query) {
    double df = 0;
    for (const auto& x : docs) df += count_in(x.tokens, t) > 0 ? 1 : 0;
    if (df == 0) continue;
    const double tf = count_in(docs[d].tokens, t);
    if (tf == 0) continue;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    const double len = static_cast<double>(docs[d].tokens.size());
    s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl));
  }
  return s;
}

// Every document with a positive score, (score desc, id asc), top k.
inline std::vector<std::pair<std::size_t, double>> bm25_rank(const std::vector<Bm25Doc>& docs,
                                                             const TokenSeq& query,
                                                             std::size_t k) {
  std::vector<std::pair<std::size_t, double>> all;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    bool matches = false;
    for (auto t : query) matches = matches || count_in(docs[d].tokens, t) > 0;
    if (matches) all.emplace_back(d, bm25_score(docs, query, d));
  }
  std::sort(all.begin(), all.end(), [&](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return docs[x.first].id < docs[y.first].id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// ---------------------------------------------------------------------------
// RM3: P(t|q0) = (1-l) tf(t,q)/|q| + l sum_d w_d P(t|d), with
// w_d = P(q0|d) / sum_d' P(q0|d') over the feedback documents and Dirichlet
// smoothed P(t|d).

inline double dirichlet(const std::vector<Bm25Doc>& docs, TokenId t, std::size_t d, double mu) {
  double coll = 0, total = 0;
  for (const auto& x : docs) {
    coll += count_in(x.tokens, t);
    total += static_cast<double>(x.tokens.size());
  }
  const double pc = coll / total;
  return (count_in(docs[d].tokens, t) + mu * pc) / (static_cast<double>(docs[d].tokens.size()) + mu);
}

inline std::map<TokenId, double> rm3(const std::vector<Bm25Doc>& docs, const TokenSeq& q0,
                                     const std::vector<std::size_t>& feedback, double lambda,
                                     double mu, std::size_t vocab_size) {
  std::vector<double> w;
  double wsum = 0;
  for (auto d : feedback) {
    double p = 1;
    for (auto t : q0) p *= dirichlet(docs, t, d, mu);
    w.push_back(p);
    wsum += p;
  }
  std::map<TokenId, double> out;
  for (TokenId t = 0; t < vocab_size; ++t) {
    const double orig = count_in(q0, t) / static_cast<double>(q0.size());
    double fb = 0;
    for (std::size_t i = 0; i < feedback.size(); ++i) {
      fb += w[i] / wsum * dirichlet(docs, t, feedback[i], mu);
    }
    out[t] = (1 - lambda) * orig + lambda * fb;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diversity measures.

inline std::map<std::vector<TokenId>, int> grams(const TokenSeq& s, std::size_t n) {
  std::map<std::vector<TokenId>, int> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    out[std::vector<TokenId>(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i + n))]++;
  }
  return out;
}

// BLEU up to 4-grams: unsmoothed unigram precision, add-one for higher
// orders, brevity penalty exp(1 - r/c) when c <= r.
inline double bleu(const TokenSeq& hyp, const TokenSeq& ref) {
  if (hyp.empty()) return 0;
  double logp = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = grams(hyp, n), r = grams(ref, n);
    double m = 0, c = 0;
    for (const auto& [g, k] : h) {
      c += k;
      auto it = r.find(g);
      if (it != r.end()) m += std::min(k, it->second);
    }
    if (n == 1 && m == 0) return 0;
    logp += std::log(n == 1 ? m / c : (m + 1) / (c + 1));
  }
  const double c = static_cast<double>(hyp.size()), r = static_cast<double>(ref.size());
  return (c > r ? 1.0 : std::exp(1 - r / c)) * std::exp(logp / 4);
}

inline double cosine(const TokenSeq& a, const TokenSeq& b) {
  std::map<TokenId, double> ca, cb;
  for (auto t : a) ca[t] += 1;
  for (auto t : b) cb[t] += 1;
  double dot = 0, na = 0, nb = 0;
  for (auto& [t, v] : ca) {
    na += v * v;
    if (cb.count(t)) dot += v * cb[t];
  }
  for (auto& [t, v] : cb) nb += v * v;
  return dot / std::sqrt(na * nb);
}

// ---------------------------------------------------------------------------
// Scalar forward passes of the aggregator network.

inline std::vector<double> cnn(const TokenSeq& toks, const qreform::nn::ModelParams& p,
                               const qreform::nn::EncoderConfig& cfg) {
  const long len = static_cast<long>(toks.size());
  std::vector<std::vector<double>> x(toks.size());
  for (long i = 0; i < len; ++i) {
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) x[i].push_back(p.value("emb").at(toks[i], c));
  }
  std::size_t in = cfg.embed_dim;
  for (std::size_t l = 0; l < cfg.cnn_layers.size(); ++l) {
    const auto& w = p.value("conv" + std::to_string(l) + ".w");
    const auto& bias = p.value("conv" + std::to_string(l) + ".b");
    const long width = static_cast<long>(cfg.cnn_layers[l].width);
    const long left = (width - 1) / 2;
    std::vector<std::vector<double>> y(toks.size(), std::vector<double>(cfg.cnn_layers[l].kernels));
    for (long pos = 0; pos < len; ++pos) {
      for (std::size_t k = 0; k < cfg.cnn_layers[l].kernels; ++k) {
        double a = bias.values[k];
        for (long o = 0; o < width; ++o) {
          const long src = pos - left + o;
          if (src < 0 || src >= len) continue;
          for (std::size_t c = 0; c < in; ++c) a += w.at(k, static_cast<std::size_t>(o) * in + c) * x[src][c];
        }
        y[pos][k] = std::max(0.0, a);
      }
    }
    x = y;
    in = cfg.cnn_layers[l].kernels;
  }
  std::vector<double> pooled(in, 0);
  for (const auto& row : x) {
    for (std::size_t c = 0; c < in; ++c) pooled[c] += row[c] / static_cast<double>(len);
  }
  std::vector<double> out(cfg.output_dim);
  for (std::size_t o = 0; o < cfg.output_dim; ++o) {
    out[o] = p.value("cnn_proj.b").values[o];
    for (std::size_t c = 0; c < in; ++c) out[o] += p.value("cnn_proj.w").at(o, c) * pooled[c];
  }
  return out;
}

inline std::vector<double> bow(const TokenSeq& toks, const qreform::nn::ModelParams& p,
                               const qreform::nn::EncoderConfig& cfg) {
  const auto& emb = p.value(cfg.shared_embedding ? "emb" : "bow_emb");
  std::vector<double> out(cfg.output_dim);
  for (std::size_t o = 0; o < cfg.output_dim; ++o) {
    out[o] = p.value("bow_proj.b").values[o];
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) {
      double m = 0;
      for (auto t : toks) m += emb.at(t, c);
      out[o] += p.value("bow_proj.w").at(o, c) * m / static_cast<double>(toks.size());
    }
  }
  return out;
}

inline double head(const std::vector<double>& z, const qreform::nn::ModelParams& p) {
  const auto& w1 = p.value("head.w1");
  double logit = p.value("head.b2").values[0];
  for (std::size_t h = 0; h < w1.rows(); ++h) {
    double a = p.value("head.b1").values[h];
    for (std::size_t i = 0; i < z.size(); ++i) a += w1.at(h, i) * z[i];
    logit += p.value("head.w2").at(0, h) * std::max(0.0, a);
  }
  return 1.0 / (1.0 + std::exp(-logit));
}

inline double pair_prob(const TokenSeq& q, const TokenSeq& a, const qreform::nn::ModelParams& p,
                        const qreform::nn::EncoderConfig& cfg, bool full) {
  const auto fq = cnn(q, p, cfg), fa = bow(a, p, cfg);
  std::vector<double> z(fq.begin(), fq.end());
  z.insert(z.end(), fa.begin(), fa.end());
  if (full) {
    for (std::size_t i = 0; i < fq.size(); ++i) z.push_back(fq[i] - fa[i]);
    for (std::size_t i = 0; i < fq.size(); ++i) z.push_back(fq[i] * fa[i]);
  }
  return head(z, p);
}

// ---------------------------------------------------------------------------
// Central finite differences.

inline double rel_error(double analytic, double numeric) {
  const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / scale;
}

// Largest relative error between the gradient buffers of `params` and
// central differences of `loss`, over every scalar parameter.
inline double max_gradient_error(qreform::nn::ModelParams& params,
                                 const std::function<double()>& loss, double h = 1e-5) {
  double worst = 0;
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& v = params.value(i).values;
    const auto g = params.grad(i).values;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double orig = v[j];
      v[j] = orig + h;
      const double up = loss();
      v[j] = orig - h;
      const double down = loss();
      v[j] = orig;
      worst = std::max(worst, rel_error(g[j], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace oracle
