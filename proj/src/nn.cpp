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

#include "qreform/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "qreform/error.hpp"

namespace qreform::nn {

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  values.assign(n, 0.0);
}

void Tensor::fill(double v) { std::fill(values.begin(), values.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

Tensor& ModelParams::add(const std::string& name, std::vector<std::size_t> shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("zero-sized dimension in parameter " + name);
  }
  index_[name] = entries_.size();
  Tensor grad(shape);
  entries_.push_back({name, Tensor(std::move(shape)), std::move(grad)});
  return entries_.back().value;
}

Tensor& ModelParams::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].value;
}

const Tensor& ModelParams::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].value;
}

Tensor& ModelParams::grad(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].grad;
}

const Tensor& ModelParams::grad(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].grad;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

void ModelParams::check_finite_grads() const {
  for (const auto& e : entries_) {
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient", e.name);
  }
}

void init_xavier(Tensor& t, Rng& rng) {
  const double fan_out = static_cast<double>(t.rows());
  const double fan_in = static_cast<double>(t.size() / t.rows());
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.values) v = (2.0 * uniform01(rng) - 1.0) * limit;
}

void init_normal(Tensor& t, double stddev, Rng& rng) {
  for (auto& v : t.values) v = normal(rng, stddev);
}

void linear_forward(const Tensor& w, const Tensor& b, std::span<const double> x,
                    std::span<double> y) {
  const std::size_t out = w.rows(), in = w.cols();
  if (x.size() != in || y.size() != out || b.size() != out) {
    throw std::invalid_argument("linear_forward: dimension mismatch");
  }
  // Four partial sums keep the dot product pipelined; the summation order is
  // fixed, so results stay reproducible.
  const std::size_t in4 = in - in % 4;
  for (std::size_t r = 0; r < out; ++r) {
    const double* wr = w.values.data() + r * in;
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    for (std::size_t c = 0; c < in4; c += 4) {
      a0 += wr[c] * x[c];
      a1 += wr[c + 1] * x[c + 1];
      a2 += wr[c + 2] * x[c + 2];
      a3 += wr[c + 3] * x[c + 3];
    }
    for (std::size_t c = in4; c < in; ++c) a0 += wr[c] * x[c];
    y[r] = b.values[r] + ((a0 + a1) + (a2 + a3));
  }
}

void linear_backward(const Tensor& w, std::span<const double> x, std::span<const double> dy,
                     Tensor& dw, Tensor& db, std::span<double> dx) {
  const std::size_t out = w.rows(), in = w.cols();
  for (std::size_t r = 0; r < out; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    db.values[r] += g;
    double* dwr = dw.values.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) dwr[c] += g * x[c];
    if (!dx.empty()) {
      const double* wr = w.values.data() + r * in;
      for (std::size_t c = 0; c < in; ++c) dx[c] += g * wr[c];
    }
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------

void EncoderConfig::validate() const {
  if (vocab_size < 1 || embed_dim < 1 || output_dim < 1) {
    throw ConfigError("encoder dimensions must be >= 1");
  }
  if (cnn_layers.empty()) throw ConfigError("encoder needs at least one conv layer");
  for (const auto& l : cnn_layers) {
    if (l.width < 1 || l.kernels < 1) throw ConfigError("conv width/kernels must be >= 1");
  }
}

EncoderConfig EncoderConfig::full(std::size_t vocab_size) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.embed_dim = 300;
  cfg.cnn_layers = {{9, 128}, {3, 256}};
  cfg.output_dim = 512;
  return cfg;
}

EncoderConfig EncoderConfig::desk(std::size_t vocab_size) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab_size;
  return cfg;
}

namespace {

const char* embedding_for_bow(const EncoderConfig& cfg) {
  return cfg.shared_embedding ? "emb" : "bow_emb";
}

void check_tokens(std::span<const TokenId> tokens, const EncoderConfig& cfg) {
  if (tokens.empty()) throw std::invalid_argument("empty input");
  for (auto t : tokens) {
    if (t >= cfg.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

}  // namespace

void add_encoder_params(ModelParams& params, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  init_normal(params.add("emb", {cfg.vocab_size, cfg.embed_dim}), 0.1, rng);
  std::size_t channels = cfg.embed_dim;
  for (std::size_t i = 0; i < cfg.cnn_layers.size(); ++i) {
    const auto& l = cfg.cnn_layers[i];
    const std::string prefix = "conv" + std::to_string(i);
    init_xavier(params.add(prefix + ".w", {l.kernels, l.width * channels}), rng);
    params.add(prefix + ".b", {l.kernels});
    channels = l.kernels;
  }
  init_xavier(params.add("cnn_proj.w", {cfg.output_dim, channels}), rng);
  params.add("cnn_proj.b", {cfg.output_dim});
  if (!cfg.shared_embedding) {
    init_normal(params.add("bow_emb", {cfg.vocab_size, cfg.embed_dim}), 0.1, rng);
  }
  init_xavier(params.add("bow_proj.w", {cfg.output_dim, cfg.embed_dim}), rng);
  params.add("bow_proj.b", {cfg.output_dim});
}

std::vector<double> cnn_encode(std::span<const TokenId> tokens, const ModelParams& params,
                               const EncoderConfig& cfg, CnnCache* cache) {
  check_tokens(tokens, cfg);
  const std::size_t len = tokens.size();
  const Tensor& emb = params.value("emb");

  std::vector<std::vector<double>> acts;
  acts.reserve(cfg.cnn_layers.size() + 1);
  std::vector<double> input(len * cfg.embed_dim);
  for (std::size_t p = 0; p < len; ++p) {
    auto r = emb.row(tokens[p]);
    std::copy(r.begin(), r.end(), input.begin() + p * cfg.embed_dim);
  }
  acts.push_back(std::move(input));

  std::size_t in_ch = cfg.embed_dim;
  for (std::size_t i = 0; i < cfg.cnn_layers.size(); ++i) {
    const auto& spec = cfg.cnn_layers[i];
    const std::string prefix = "conv" + std::to_string(i);
    const Tensor& w = params.value(prefix + ".w");
    const Tensor& b = params.value(prefix + ".b");
    const auto left = static_cast<std::ptrdiff_t>((spec.width - 1) / 2);
    const auto& x = acts.back();
    std::vector<double> y(len * spec.kernels);
    for (std::size_t p = 0; p < len; ++p) {
      for (std::size_t k = 0; k < spec.kernels; ++k) {
        double acc = b.values[k];
        const double* wk = w.values.data() + k * spec.width * in_ch;
        for (std::size_t o = 0; o < spec.width; ++o) {
          const auto src = static_cast<std::ptrdiff_t>(p) + static_cast<std::ptrdiff_t>(o) - left;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const double* xs = x.data() + static_cast<std::size_t>(src) * in_ch;
          const double* wo = wk + o * in_ch;
          for (std::size_t c = 0; c < in_ch; ++c) acc += wo[c] * xs[c];
        }
        y[p * spec.kernels + k] = acc > 0.0 ? acc : 0.0;
      }
    }
    acts.push_back(std::move(y));
    in_ch = spec.kernels;
  }

  std::vector<double> pooled(in_ch, 0.0);
  const auto& last = acts.back();
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t c = 0; c < in_ch; ++c) pooled[c] += last[p * in_ch + c];
  }
  for (auto& v : pooled) v /= static_cast<double>(len);

  std::vector<double> out(cfg.output_dim);
  linear_forward(params.value("cnn_proj.w"), params.value("cnn_proj.b"), pooled, out);
  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->activations = std::move(acts);
    cache->pooled = std::move(pooled);
  }
  return out;
}

void cnn_backward(const CnnCache& cache, std::span<const double> dout, ModelParams& params,
                  const EncoderConfig& cfg) {
  const std::size_t len = cache.tokens.size();
  const std::size_t n_layers = cfg.cnn_layers.size();
  const std::size_t last_ch = cfg.cnn_layers.back().kernels;

  std::vector<double> dpooled(last_ch, 0.0);
  linear_backward(params.value("cnn_proj.w"), cache.pooled, dout, params.grad("cnn_proj.w"),
                  params.grad("cnn_proj.b"), dpooled);

  std::vector<double> dact(len * last_ch);
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t c = 0; c < last_ch; ++c) {
      dact[p * last_ch + c] = dpooled[c] / static_cast<double>(len);
    }
  }

  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& spec = cfg.cnn_layers[li];
    const std::size_t in_ch = li == 0 ? cfg.embed_dim : cfg.cnn_layers[li - 1].kernels;
    const std::string prefix = "conv" + std::to_string(li);
    const Tensor& w = params.value(prefix + ".w");
    Tensor& dw = params.grad(prefix + ".w");
    Tensor& db = params.grad(prefix + ".b");
    const auto& x = cache.activations[li];
    const auto& y = cache.activations[li + 1];
    const auto left = static_cast<std::ptrdiff_t>((spec.width - 1) / 2);
    std::vector<double> dx(len * in_ch, 0.0);
    for (std::size_t p = 0; p < len; ++p) {
      for (std::size_t k = 0; k < spec.kernels; ++k) {
        if (y[p * spec.kernels + k] <= 0.0) continue;
        const double g = dact[p * spec.kernels + k];
        if (g == 0.0) continue;
        db.values[k] += g;
        const std::size_t wbase = k * spec.width * in_ch;
        for (std::size_t o = 0; o < spec.width; ++o) {
          const auto src = static_cast<std::ptrdiff_t>(p) + static_cast<std::ptrdiff_t>(o) - left;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const std::size_t xoff = static_cast<std::size_t>(src) * in_ch;
          for (std::size_t c = 0; c < in_ch; ++c) {
            dw.values[wbase + o * in_ch + c] += g * x[xoff + c];
            dx[xoff + c] += g * w.values[wbase + o * in_ch + c];
          }
        }
      }
    }
    dact = std::move(dx);
  }

  Tensor& demb = params.grad("emb");
  for (std::size_t p = 0; p < len; ++p) {
    auto r = demb.row(cache.tokens[p]);
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) r[c] += dact[p * cfg.embed_dim + c];
  }
}

std::vector<double> bow_encode(std::span<const TokenId> tokens, const ModelParams& params,
                               const EncoderConfig& cfg, BowCache* cache) {
  check_tokens(tokens, cfg);
  const Tensor& emb = params.value(embedding_for_bow(cfg));
  std::vector<double> mean(cfg.embed_dim, 0.0);
  for (auto t : tokens) {
    auto r = emb.row(t);
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) mean[c] += r[c];
  }
  for (auto& v : mean) v /= static_cast<double>(tokens.size());
  std::vector<double> out(cfg.output_dim);
  linear_forward(params.value("bow_proj.w"), params.value("bow_proj.b"), mean, out);
  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->mean = std::move(mean);
  }
  return out;
}

void bow_backward(const BowCache& cache, std::span<const double> dout, ModelParams& params,
                  const EncoderConfig& cfg) {
  std::vector<double> dmean(cfg.embed_dim, 0.0);
  linear_backward(params.value("bow_proj.w"), cache.mean, dout, params.grad("bow_proj.w"),
                  params.grad("bow_proj.b"), dmean);
  Tensor& demb = params.grad(embedding_for_bow(cfg));
  const double inv = 1.0 / static_cast<double>(cache.tokens.size());
  for (auto t : cache.tokens) {
    auto r = demb.row(t);
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) r[c] += dmean[c] * inv;
  }
}

// ---------------------------------------------------------------------------

void add_head_params(ModelParams& params, std::size_t input_dim, std::size_t hidden_dim,
                     Rng& rng) {
  init_xavier(params.add("head.w1", {hidden_dim, input_dim}), rng);
  params.add("head.b1", {hidden_dim});
  init_xavier(params.add("head.w2", {1, hidden_dim}), rng);
  params.add("head.b2", {1});
}

double head_logit(std::span<const double> z, const ModelParams& params, HeadCache* cache) {
  const Tensor& w1 = params.value("head.w1");
  if (z.size() != w1.cols()) {
    throw std::invalid_argument("head input has length " + std::to_string(z.size()) +
                                ", expected " + std::to_string(w1.cols()));
  }
  std::vector<double> pre(w1.rows());
  linear_forward(w1, params.value("head.b1"), z, pre);
  std::vector<double> hidden(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = pre[i] > 0.0 ? pre[i] : 0.0;
  double logit = 0.0;
  linear_forward(params.value("head.w2"), params.value("head.b2"), hidden,
                 std::span<double>(&logit, 1));
  if (cache) {
    cache->z.assign(z.begin(), z.end());
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
    cache->logit = logit;
  }
  return logit;
}

double mlp_sigmoid_head(std::span<const double> z, const ModelParams& params) {
  return sigmoid(head_logit(z, params));
}

void head_backward(const HeadCache& cache, double dlogit, ModelParams& params,
                   std::span<double> dz) {
  std::vector<double> dhidden(cache.hidden.size(), 0.0);
  linear_backward(params.value("head.w2"), cache.hidden, std::span<const double>(&dlogit, 1),
                  params.grad("head.w2"), params.grad("head.b2"), dhidden);
  for (std::size_t i = 0; i < dhidden.size(); ++i) {
    if (cache.pre[i] <= 0.0) dhidden[i] = 0.0;
  }
  linear_backward(params.value("head.w1"), cache.z, dhidden, params.grad("head.w1"),
                  params.grad("head.b1"), dz);
}

// ---------------------------------------------------------------------------

std::size_t pair_feature_dim(PairFeatures mode, std::size_t d) {
  return mode == PairFeatures::full ? 4 * d : 2 * d;
}

std::vector<double> pair_features(std::span<const double> q, std::span<const double> a,
                                  PairFeatures mode) {
  const std::size_t d = q.size();
  if (a.size() != d) throw std::invalid_argument("pair_features: encoding sizes differ");
  std::vector<double> z(pair_feature_dim(mode, d));
  for (std::size_t i = 0; i < d; ++i) {
    z[i] = q[i];
    z[d + i] = a[i];
    if (mode == PairFeatures::full) {
      z[2 * d + i] = q[i] - a[i];
      z[3 * d + i] = q[i] * a[i];
    }
  }
  return z;
}

void pair_features_backward(std::span<const double> q, std::span<const double> a,
                            std::span<const double> dz, PairFeatures mode,
                            std::span<double> dq, std::span<double> da) {
  const std::size_t d = q.size();
  for (std::size_t i = 0; i < d; ++i) {
    dq[i] += dz[i];
    da[i] += dz[d + i];
    if (mode == PairFeatures::full) {
      dq[i] += dz[2 * d + i] + dz[3 * d + i] * a[i];
      da[i] += -dz[2 * d + i] + dz[3 * d + i] * q[i];
    }
  }
}

double pair_bce_backprop(std::span<const PairGroup> batch, ModelParams& params,
                         const EncoderConfig& cfg, PairFeatures mode, Reduction reduction) {
  params.zero_grad();
  if (batch.empty()) return 0.0;
  const double scale =
      reduction == Reduction::sum ? 1.0 : 1.0 / static_cast<double>(batch.size());
  const std::size_t d = cfg.output_dim;
  double total = 0.0;
  for (const auto& group : batch) {
    CnnCache qcache;
    const auto q = cnn_encode(group.query, params, cfg, &qcache);
    std::vector<double> dq(d, 0.0);
    for (const auto& res : group.results) {
      BowCache acache;
      const auto a = bow_encode(res.tokens, params, cfg, &acache);
      const auto z = pair_features(q, a, mode);
      HeadCache hcache;
      const double logit = head_logit(z, params, &hcache);
      const double y = res.label;
      const double loss = y * softplus(-logit) + (1.0 - y) * softplus(logit);
      if (!std::isfinite(loss)) throw NumericError("non-finite loss", "head.w2");
      total += scale * loss;
      const double dlogit = scale * (sigmoid(logit) - y);
      std::vector<double> dz(z.size(), 0.0);
      head_backward(hcache, dlogit, params, dz);
      std::vector<double> da(d, 0.0);
      pair_features_backward(q, a, dz, mode, dq, da);
      bow_backward(acache, da, params, cfg);
    }
    cnn_backward(qcache, dq, params, cfg);
  }
  if (!std::isfinite(total)) throw NumericError("non-finite loss", "batch");
  params.check_finite_grads();
  return total;
}

double pair_probability(std::span<const TokenId> query, std::span<const TokenId> result,
                        const ModelParams& params, const EncoderConfig& cfg, PairFeatures mode) {
  const auto q = cnn_encode(query, params, cfg);
  const auto a = bow_encode(result, params, cfg);
  return mlp_sigmoid_head(pair_features(q, a, mode), params);
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(double lr) : lr_(lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw std::invalid_argument("learning rate must be a positive finite number");
  }
}

void Sgd::step(ModelParams& params) {
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params.value(i).values;
    auto& g = params.grad(i).values;
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] -= lr_ * g[k];
      g[k] = 0.0;
    }
  }
}

void Adam::step(ModelParams& params) {
  if (m_.size() != params.count()) {
    m_.assign(params.count(), {});
    v_.assign(params.count(), {});
    for (std::size_t i = 0; i < params.count(); ++i) {
      m_[i].assign(params.value(i).size(), 0.0);
      v_[i].assign(params.value(i).size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params.value(i).values;
    auto& g = params.grad(i).values;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gk;
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gk * gk;
      p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEpsilon);
      g[k] = 0.0;
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr) {
  if (kind == OptimizerKind::sgd) return std::make_unique<Sgd>(lr);
  return std::make_unique<Adam>(lr);
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd" || name == "SGD") return OptimizerKind::sgd;
  if (name == "adam" || name == "ADAM" || name == "Adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'Q', 'R', 'P', 'A', 'R', 'A', 'M', 'S'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw DataError("truncated parameter checkpoint");
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_params(const ModelParams& params, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.count()));
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& name = params.name(i);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = params.value(i).shape;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_le<std::uint64_t>(out, d);
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    for (double v : params.value(i).values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_le<std::uint64_t>(out, bits);
    }
  }
  if (!out) throw DataError("failed to write parameter checkpoint");
}

void save_params(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  save_params(params, out);
}

ModelParams load_params(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("not a parameter checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in);
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get_le<std::uint32_t>(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("truncated parameter checkpoint");
    const auto rank = get_le<std::uint32_t>(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    params.add(name, shape);
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    for (double& v : params.value(i).values) {
      const auto bits = get_le<std::uint64_t>(in);
      std::memcpy(&v, &bits, sizeof v);
    }
  }
  return params;
}

ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return load_params(in);
}

}  // namespace qreform::nn
