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

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "qreform/error.hpp"
#include "qreform/nn.hpp"

using namespace qreform;
using namespace qreform::nn;

namespace {

EncoderConfig small_encoder(std::size_t vocab, bool shared = true) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 4;
  c.cnn_layers = {{3, 5}, {2, 3}};
  c.output_dim = 6;
  c.shared_embedding = shared;
  return c;
}

ModelParams pair_model(const EncoderConfig& c, PairFeatures f, std::size_t hidden, Rng& rng) {
  ModelParams p;
  add_encoder_params(p, c, rng);
  add_head_params(p, pair_feature_dim(f, c.output_dim), hidden, rng);
  return p;
}

std::vector<PairGroup> random_batch(Rng& rng, std::size_t vocab, std::size_t groups) {
  std::vector<PairGroup> batch;
  for (std::size_t g = 0; g < groups; ++g) {
    PairGroup pg;
    pg.query = fixture::random_tokens(rng, 1 + uniform_index(rng, 5), vocab);
    const std::size_t n = 1 + uniform_index(rng, 3);
    for (std::size_t i = 0; i < n; ++i) {
      pg.results.push_back({fixture::random_tokens(rng, 1 + uniform_index(rng, 6), vocab),
                            static_cast<double>(uniform_index(rng, 2))});
    }
    batch.push_back(pg);
  }
  return batch;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("zero parameters give a zero encoding and a one-half head") {
  Rng rng(1);
  const auto c = small_encoder(10);
  auto p = pair_model(c, PairFeatures::full, 5, rng);
  for (std::size_t i = 0; i < p.count(); ++i) p.value(i).fill(0.0);
  const TokenSeq q{1, 2, 3};
  for (double v : cnn_encode(q, p, c)) CHECK(v == 0.0);
  for (double v : bow_encode(q, p, c)) CHECK(v == 0.0);
  CHECK(pair_probability(q, q, p, c, PairFeatures::full) == 0.5);
}

TEST_CASE("single-token input pools its only position") {
  Rng rng(2);
  const auto c = small_encoder(10);
  auto p = pair_model(c, PairFeatures::full, 5, rng);
  fixture::randomize(p, rng, 0.5);
  CnnCache cache;
  const TokenSeq one{7};
  cnn_encode(one, p, c, &cache);
  const auto& last = cache.activations.back();
  REQUIRE(last.size() == cache.pooled.size());
  for (std::size_t i = 0; i < last.size(); ++i) CHECK(cache.pooled[i] == last[i]);
}

TEST_CASE("forward passes match the scalar re-implementation") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const bool shared = trial % 2 == 0;
    const auto c = small_encoder(12, shared);
    const auto mode = trial % 3 == 0 ? PairFeatures::concat : PairFeatures::full;
    auto p = pair_model(c, mode, 7, rng);
    fixture::randomize(p, rng, 0.4);
    const auto q = fixture::random_tokens(rng, 1 + uniform_index(rng, 8), 12);
    const auto a = fixture::random_tokens(rng, 1 + uniform_index(rng, 8), 12);
    const auto fq = cnn_encode(q, p, c);
    const auto want_q = oracle::cnn(q, p, c);
    for (std::size_t i = 0; i < fq.size(); ++i) CHECK(fq[i] == doctest::Approx(want_q[i]).epsilon(1e-12));
    const auto fa = bow_encode(a, p, c);
    const auto want_a = oracle::bow(a, p, c);
    for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fa[i] == doctest::Approx(want_a[i]).epsilon(1e-12));
    CHECK(pair_probability(q, a, p, c, mode) ==
          doctest::Approx(oracle::pair_prob(q, a, p, c, mode == PairFeatures::full)).epsilon(1e-12));
  }
}

TEST_CASE("bag of words ignores order and repetition, the CNN does not ignore order") {
  Rng rng(4);
  const auto c = small_encoder(10);
  auto p = pair_model(c, PairFeatures::full, 5, rng);
  fixture::randomize(p, rng, 0.5);
  const TokenSeq x{1, 2, 3, 4}, y{4, 2, 1, 3};
  const auto bx = bow_encode(x, p, c), by = bow_encode(y, p, c);
  for (std::size_t i = 0; i < bx.size(); ++i) CHECK(bx[i] == doctest::Approx(by[i]).epsilon(1e-14));
  const auto b1 = bow_encode(TokenSeq{5}, p, c), b3 = bow_encode(TokenSeq{5, 5, 5}, p, c);
  for (std::size_t i = 0; i < b1.size(); ++i) CHECK(b1[i] == doctest::Approx(b3[i]).epsilon(1e-14));
  const auto cx = cnn_encode(x, p, c), cy = cnn_encode(y, p, c);
  double diff = 0;
  for (std::size_t i = 0; i < cx.size(); ++i) diff += std::fabs(cx[i] - cy[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("two-token bag of words projects the mean embedding") {
  Rng rng(5);
  const auto c = small_encoder(10);
  auto p = pair_model(c, PairFeatures::full, 5, rng);
  fixture::randomize(p, rng, 0.5);
  const auto out = bow_encode(TokenSeq{2, 6}, p, c);
  for (std::size_t o = 0; o < c.output_dim; ++o) {
    double want = p.value("bow_proj.b").values[o];
    for (std::size_t k = 0; k < c.embed_dim; ++k) {
      want += p.value("bow_proj.w").at(o, k) * (p.value("emb").at(2, k) + p.value("emb").at(6, k)) / 2;
    }
    CHECK(out[o] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("encoders reject empty and out-of-vocabulary input") {
  Rng rng(6);
  const auto c = small_encoder(10);
  auto p = pair_model(c, PairFeatures::full, 5, rng);
  CHECK_THROWS_WITH_AS(cnn_encode(TokenSeq{}, p, c), "empty input", std::invalid_argument);
  CHECK_THROWS_AS(bow_encode(TokenSeq{}, p, c), std::invalid_argument);
  CHECK_THROWS_AS(cnn_encode(TokenSeq{10}, p, c), std::out_of_range);
}

TEST_CASE("head output stays inside (0, 1) and checks its input width") {
  Rng rng(7);
  ModelParams p;
  add_head_params(p, 8, 4, rng);
  fixture::randomize(p, rng, 1.0);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> z(8);
    for (auto& v : z) v = normal(rng, 3.0);
    const double s = mlp_sigmoid_head(z, p);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    CHECK(s == doctest::Approx(oracle::head(z, p)).epsilon(1e-12));
  }
  // Far from zero the sigmoid rounds to 0 or 1 in double precision but stays finite.
  for (int i = 0; i < 50; ++i) {
    std::vector<double> z(8);
    for (auto& v : z) v = normal(rng, 1e3);
    const double s = mlp_sigmoid_head(z, p);
    CHECK(std::isfinite(s));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  CHECK_THROWS(mlp_sigmoid_head(std::vector<double>(7, 0.0), p));
}

TEST_CASE("pair cross-entropy gradients match central differences") {
  Rng rng(8);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = small_encoder(9, trial % 2 == 0);
    const auto mode = trial % 4 == 3 ? PairFeatures::concat : PairFeatures::full;
    auto p = pair_model(c, mode, 5, rng);
    fixture::randomize(p, rng, 0.5);
    const auto batch = random_batch(rng, 9, 3);
    const auto red = trial % 2 == 0 ? Reduction::sum : Reduction::mean_over_groups;
    pair_bce_backprop(batch, p, c, mode, red);
    ModelParams probe = p;
    const double err = oracle::max_gradient_error(p, [&] {
      for (std::size_t i = 0; i < p.count(); ++i) probe.value(i).values = p.value(i).values;
      return pair_bce_backprop(batch, probe, c, mode, red);
    });
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("zero network on balanced labels: loss n ln 2 and output-bias gradient sum(0.5 - y)") {
  Rng rng(9);
  const auto c = small_encoder(6);
  auto p = pair_model(c, PairFeatures::full, 4, rng);
  for (std::size_t i = 0; i < p.count(); ++i) p.value(i).fill(0.0);
  PairGroup g{{1, 2}, {{{3}, 1.0}, {{4}, 0.0}, {{5}, 1.0}, {{1}, 0.0}}};
  const std::vector<PairGroup> batch{g};
  const double loss = pair_bce_backprop(batch, p, c, PairFeatures::full);
  CHECK(loss == doctest::Approx(4 * std::log(2.0)).epsilon(1e-14));
  CHECK(p.grad("head.b2").values[0] == doctest::Approx(0.0));
  PairGroup pos{{1, 2}, {{{3}, 1.0}, {{4}, 1.0}, {{5}, 0.0}}};
  pair_bce_backprop(std::vector<PairGroup>{pos}, p, c, PairFeatures::full);
  CHECK(p.grad("head.b2").values[0] == doctest::Approx(3 * 0.5 - 2.0));
}

TEST_CASE("duplicating a batch doubles the summed loss and gradients") {
  Rng rng(10);
  const auto c = small_encoder(9);
  auto p = pair_model(c, PairFeatures::full, 5, rng);
  fixture::randomize(p, rng, 0.5);
  auto batch = random_batch(rng, 9, 3);
  const double l1 = pair_bce_backprop(batch, p, c, PairFeatures::full);
  const ModelParams g1 = p;
  auto twice = batch;
  twice.insert(twice.end(), batch.begin(), batch.end());
  const double l2 = pair_bce_backprop(twice, p, c, PairFeatures::full);
  CHECK(l2 == doctest::Approx(2 * l1).epsilon(1e-12));
  for (std::size_t i = 0; i < p.count(); ++i) {
    for (std::size_t j = 0; j < p.grad(i).size(); ++j) {
      CHECK(p.grad(i).values[j] == doctest::Approx(2 * g1.grad(i).values[j]).epsilon(1e-10));
    }
  }
}

TEST_CASE("non-finite loss raises a numeric error naming a parameter") {
  Rng rng(11);
  const auto c = small_encoder(9);
  auto p = pair_model(c, PairFeatures::full, 5, rng);
  p.value("head.b2").values[0] = std::numeric_limits<double>::quiet_NaN();
  const auto batch = random_batch(rng, 9, 1);
  try {
    pair_bce_backprop(batch, p, c, PairFeatures::full);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK_FALSE(e.where().empty());
    CHECK(e.code() == 4);
  }
}

TEST_CASE("optimizers") {
  ModelParams p;
  p.add("w", {3});
  p.value("w").values = {1.0, -2.0, 0.5};

  SUBCASE("zero gradients leave parameters unchanged") {
    Sgd sgd(0.1);
    Adam adam(0.1);
    sgd.step(p);
    adam.step(p);
    CHECK(p.value("w").values == std::vector<double>{1.0, -2.0, 0.5});
  }
  SUBCASE("sgd subtracts lr times the gradient and clears it") {
    p.grad("w").values = {0.5, -1.0, 2.0};
    Sgd(0.1).step(p);
    CHECK(p.value("w").values[0] == doctest::Approx(0.95));
    CHECK(p.value("w").values[1] == doctest::Approx(-1.9));
    CHECK(p.value("w").values[2] == doctest::Approx(0.3));
    for (double g : p.grad("w").values) CHECK(g == 0.0);
  }
  SUBCASE("first adam step is lr * g / (|g| + eps)") {
    const std::vector<double> g{0.5, -1e-3, 2.0};
    p.grad("w").values = g;
    Adam(0.01).step(p);
    const std::vector<double> start{1.0, -2.0, 0.5};
    for (std::size_t i = 0; i < 3; ++i) {
      // m_hat = g, v_hat = g^2 after bias correction.
      const double want = start[i] - 0.01 * g[i] / (std::fabs(g[i]) + Adam::kEpsilon);
      CHECK(p.value("w").values[i] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("second adam step follows the moment recursions") {
    Adam adam(0.01);
    const double g1 = 0.3, g2 = -0.7;
    p.grad("w").values = {g1, 0, 0};
    adam.step(p);
    p.grad("w").values = {g2, 0, 0};
    adam.step(p);
    const double m = (0.1 * 0.9 * g1 + 0.1 * g2) / (1 - 0.81);
    const double v = (0.001 * 0.999 * g1 * g1 + 0.001 * g2 * g2) / (1 - 0.999 * 0.999);
    const double first = 1.0 - 0.01 * g1 / (std::fabs(g1) + 1e-8);
    CHECK(p.value("w").values[0] == doctest::Approx(first - 0.01 * m / (std::sqrt(v) + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("non-positive learning rates are rejected") {
    CHECK_THROWS_AS(Sgd(0.0), std::invalid_argument);
    CHECK_THROWS_AS(Adam(-1.0), std::invalid_argument);
  }
}

TEST_CASE("training is bit-identical for a fixed seed") {
  auto run = [] {
    Rng rng(12);
    const auto c = small_encoder(9);
    auto p = pair_model(c, PairFeatures::full, 5, rng);
    const auto batch = random_batch(rng, 9, 4);
    Adam adam(0.01);
    for (int i = 0; i < 5; ++i) {
      pair_bce_backprop(batch, p, c, PairFeatures::full);
      adam.step(p);
    }
    return p;
  };
  const auto a = run(), b = run();
  for (std::size_t i = 0; i < a.count(); ++i) CHECK(a.value(i).values == b.value(i).values);
}

TEST_CASE("checkpoint layout and round trip") {
  Rng rng(13);
  ModelParams p;
  add_head_params(p, 3, 2, rng);
  fixture::randomize(p, rng, 1.0);
  std::stringstream buf;
  save_params(p, buf);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 8) == "QRPARAMS");
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);
  CHECK(static_cast<unsigned char>(bytes[12]) == 4);
  // Header: magic, version, count, then per tensor name + rank + dims.
  std::size_t header = 16;
  for (std::size_t i = 0; i < p.count(); ++i) {
    header += 4 + p.name(i).size() + 4 + 8 * p.value(i).shape.size();
  }
  CHECK(bytes.size() == header + 8 * p.scalar_count());
  const auto q = load_params(buf);
  REQUIRE(q.count() == p.count());
  for (std::size_t i = 0; i < p.count(); ++i) {
    CHECK(q.name(i) == p.name(i));
    CHECK(q.value(i).shape == p.value(i).shape);
    CHECK(q.value(i).values == p.value(i).values);
  }
  std::stringstream bad("NOTPARAMS");
  CHECK_THROWS_AS(load_params(bad), DataError);
}

}  // TEST_SUITE
