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

// Minimal neural toolkit: dense tensors, a named parameter store with
// gradient buffers, the query CNN encoder, the bag-of-words result encoder,
// the two-layer sigmoid scoring head, hand-derived backward passes, and
// SGD/Adam. Everything is float64 and single-threaded per ModelParams.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qreform/types.hpp"

namespace qreform::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;  // row-major

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.size() > 1 ? shape[1] : 1; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols(), cols()};
  }

  void fill(double v);
  bool all_finite() const;
};

// Ordered name -> (value, grad) store. Insertion order is the
// serialization order.
class ModelParams {
 public:
  Tensor& add(const std::string& name, std::vector<std::size_t> shape);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;

  std::size_t count() const noexcept { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }
  Tensor& grad(std::size_t i) { return entries_[i].grad; }
  const Tensor& grad(std::size_t i) const { return entries_[i].grad; }

  std::size_t scalar_count() const;
  void zero_grad();
  // Throws NumericError naming the first parameter whose gradient is not finite.
  void check_finite_grads() const;

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

void init_xavier(Tensor& t, Rng& rng);
void init_normal(Tensor& t, double stddev, Rng& rng);

// y = W x + b with W of shape [out, in].
void linear_forward(const Tensor& w, const Tensor& b, std::span<const double> x,
                    std::span<double> y);
// Accumulates dW, db and (when dx is non-empty) dx += W^T dy.
void linear_backward(const Tensor& w, std::span<const double> x, std::span<const double> dy,
                     Tensor& dw, Tensor& db, std::span<double> dx);

double sigmoid(double x);
// log(1 + exp(x)) without overflow.
double softplus(double x);

// ---------------------------------------------------------------------------
// Encoders

struct ConvLayerSpec {
  std::size_t width = 3;
  std::size_t kernels = 32;
};

struct EncoderConfig {
  std::size_t vocab_size = 1;
  std::size_t embed_dim = 32;
  std::vector<ConvLayerSpec> cnn_layers{{9, 32}, {3, 32}};
  std::size_t output_dim = 64;  // D
  // f_CNN and f_BOW read the same embedding table when set.
  bool shared_embedding = true;

  void validate() const;

  // Filter widths (9, 3), kernels (128, 256), D = 512.
  static EncoderConfig full(std::size_t vocab_size);
  static EncoderConfig desk(std::size_t vocab_size);
};

// Registers emb, conv{i}.w/b, cnn_proj.w/b, [bow_emb], bow_proj.w/b.
void add_encoder_params(ModelParams& params, const EncoderConfig& cfg, Rng& rng);

struct CnnCache {
  TokenSeq tokens;
  // activations[0] is the embedded input; activations[i] the ReLU output of
  // conv layer i. Each is positions x channels, row-major.
  std::vector<std::vector<double>> activations;
  std::vector<double> pooled;
};

// embed -> per layer (zero-padded 'same' 1-D conv, ReLU) -> mean over
// positions -> linear projection to D.
std::vector<double> cnn_encode(std::span<const TokenId> tokens, const ModelParams& params,
                               const EncoderConfig& cfg, CnnCache* cache = nullptr);
// Accumulates parameter gradients given dL/d(output).
void cnn_backward(const CnnCache& cache, std::span<const double> dout, ModelParams& params,
                  const EncoderConfig& cfg);

struct BowCache {
  TokenSeq tokens;
  std::vector<double> mean;
};

std::vector<double> bow_encode(std::span<const TokenId> tokens, const ModelParams& params,
                               const EncoderConfig& cfg, BowCache* cache = nullptr);
void bow_backward(const BowCache& cache, std::span<const double> dout, ModelParams& params,
                  const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Scoring head: sigma(W2 ReLU(W1 z + b1) + b2).

void add_head_params(ModelParams& params, std::size_t input_dim, std::size_t hidden_dim,
                     Rng& rng);

struct HeadCache {
  std::vector<double> z;
  std::vector<double> pre;     // W1 z + b1
  std::vector<double> hidden;  // ReLU(pre)
  double logit = 0.0;
};

// Logit before the sigmoid.
double head_logit(std::span<const double> z, const ModelParams& params,
                  HeadCache* cache = nullptr);
double mlp_sigmoid_head(std::span<const double> z, const ModelParams& params);
void head_backward(const HeadCache& cache, double dlogit, ModelParams& params,
                   std::span<double> dz);

// ---------------------------------------------------------------------------
// Query/result pair model.

enum class PairFeatures {
  full,    // [q; a; q - a; q * a]
  concat,  // [q; a]
};

std::size_t pair_feature_dim(PairFeatures mode, std::size_t d);
std::vector<double> pair_features(std::span<const double> q, std::span<const double> a,
                                  PairFeatures mode);
// Scatters dL/dz back onto the two encodings (accumulating).
void pair_features_backward(std::span<const double> q, std::span<const double> a,
                            std::span<const double> dz, PairFeatures mode,
                            std::span<double> dq, std::span<double> da);

struct LabeledResult {
  TokenSeq tokens;
  double label = 0.0;  // 1 relevant, 0 not
};

// One query with its candidate results; the CNN encoding of the query is
// computed once per group.
struct PairGroup {
  TokenSeq query;
  std::vector<LabeledResult> results;
};

enum class Reduction {
  sum,              // sum over every (query, result) term
  mean_over_groups  // per-query sums averaged over the groups
};

// Binary cross-entropy of the pair model over `batch`. Gradient buffers are
// overwritten with dLoss/dparam. Throws NumericError when the loss or a
// gradient is not finite.
double pair_bce_backprop(std::span<const PairGroup> batch, ModelParams& params,
                         const EncoderConfig& cfg, PairFeatures mode,
                         Reduction reduction = Reduction::sum);

// Forward-only probability for one pair.
double pair_probability(std::span<const TokenId> query, std::span<const TokenId> result,
                        const ModelParams& params, const EncoderConfig& cfg, PairFeatures mode);

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { sgd, adam };

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies one update from the gradient buffers and clears them.
  virtual void step(ModelParams& params) = 0;
  double learning_rate() const noexcept { return lr_; }

 protected:
  explicit Optimizer(double lr);
  double lr_;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : Optimizer(lr) {}
  void step(ModelParams& params) override;
};

class Adam final : public Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit Adam(double lr) : Optimizer(lr) {}
  void step(ModelParams& params) override;

 private:
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr);
OptimizerKind parse_optimizer(const std::string& name);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers and reals little-endian):
//   8 bytes  magic "QRPARAMS"
//   u32      format version (1)
//   u32      tensor count T
//   T times: u32 name length, name bytes (UTF-8), u32 rank R, R x u64 dims
//   then, tensor by tensor in the same order, every value as IEEE-754 f64.

void save_params(const ModelParams& params, std::ostream& out);
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(std::istream& in);
ModelParams load_params(const std::string& path);

}  // namespace qreform::nn
