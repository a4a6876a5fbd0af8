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

#include "qreform/partition.hpp"

#include <Eigen/SVD>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "qreform/error.hpp"

namespace qreform::partition {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::bagging: return "bagging";
    case Strategy::kmeans_q: return "kmeans-Q";
    case Strategy::kmeans_a: return "kmeans-A";
    case Strategy::kmeans_qa: return "kmeans-QA";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& s) {
  for (auto v : {Strategy::random, Strategy::bagging, Strategy::kmeans_q, Strategy::kmeans_a,
                 Strategy::kmeans_qa}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown partition strategy '" + s + "'");
}

Partition random_partition(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("partition count must be >= 1");
  if (k > n) throw std::invalid_argument("more partitions than items");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(order, rng);
  Partition p{Strategy::random, Clusters(k)};
  for (std::size_t i = 0; i < n; ++i) p.subsets[i % k].push_back(order[i]);
  return p;
}

Partition bootstrap_partition(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("partition count must be >= 1");
  Rng rng(seed);
  Partition p{Strategy::bagging, Clusters(k)};
  for (auto& s : p.subsets) {
    s.reserve(n);
    for (std::size_t i = 0; i < n; ++i) s.push_back(uniform_index(rng, n));
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t nearest(const Matrix& centers, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

std::size_t distinct_rows(const Matrix& f) {
  std::set<std::vector<double>> seen;
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(f.cols()));
    for (Eigen::Index c = 0; c < f.cols(); ++c) row[static_cast<std::size_t>(c)] = f(r, c);
    seen.insert(std::move(row));
  }
  return seen.size();
}

}  // namespace

Clusters minibatch_kmeans(const Matrix& features, std::size_t k, Rng& rng,
                          const KMeansOptions& opts) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (features.cols() < 1) throw std::invalid_argument("k-means needs feature dim >= 1");
  if (k < 2) throw std::invalid_argument("k-means needs k >= 2");
  if (distinct_rows(features) < k) throw DataError("fewer distinct feature vectors than clusters");

  // k-means++ seeding.
  Matrix centers(static_cast<Eigen::Index>(k), features.cols());
  centers.row(0) = features.row(static_cast<Eigen::Index>(uniform_index(rng, n)));
  std::vector<double> d2(n);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c; ++j) {
        best = std::min(best, (features.row(static_cast<Eigen::Index>(i)) -
                               centers.row(static_cast<Eigen::Index>(j)))
                                  .squaredNorm());
      }
      d2[i] = best;
      total += best;
    }
    double u = uniform01(rng) * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    while (d2[pick] <= 0.0) --pick;
    centers.row(static_cast<Eigen::Index>(c)) = features.row(static_cast<Eigen::Index>(pick));
  }

  // Sculley's mini-batch updates with per-center learning rates 1/count.
  std::vector<double> counts(k, 0.0);
  const std::size_t b = std::min(opts.batch_size, n);
  std::vector<std::size_t> batch(b), assign(b);
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    for (std::size_t i = 0; i < b; ++i) {
      batch[i] = uniform_index(rng, n);
      assign[i] = nearest(centers, features.row(static_cast<Eigen::Index>(batch[i])));
    }
    for (std::size_t i = 0; i < b; ++i) {
      const auto c = static_cast<Eigen::Index>(assign[i]);
      counts[assign[i]] += 1.0;
      const double eta = 1.0 / counts[assign[i]];
      centers.row(c) =
          (1.0 - eta) * centers.row(c) + eta * features.row(static_cast<Eigen::Index>(batch[i]));
    }
  }

  Clusters out(k);
  for (std::size_t i = 0; i < n; ++i) {
    out[nearest(centers, features.row(static_cast<Eigen::Index>(i)))].push_back(i);
  }
  return out;
}

namespace {

struct Centroids {
  Matrix sum;
  std::vector<std::size_t> count;

  Centroids(const Clusters& cl, const Matrix& f)
      : sum(Matrix::Zero(static_cast<Eigen::Index>(cl.size()), f.cols())), count(cl.size(), 0) {
    for (std::size_t c = 0; c < cl.size(); ++c) {
      for (auto i : cl[c]) add(c, f.row(static_cast<Eigen::Index>(i)));
    }
  }
  void add(std::size_t c, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    sum.row(static_cast<Eigen::Index>(c)) += x;
    ++count[c];
  }
  void remove(std::size_t c, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    sum.row(static_cast<Eigen::Index>(c)) -= x;
    --count[c];
  }
  // Squared distance to the centroid; +inf for an empty cluster.
  double dist(std::size_t c, const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    if (count[c] == 0) return std::numeric_limits<double>::infinity();
    return (sum.row(static_cast<Eigen::Index>(c)) / static_cast<double>(count[c]) - x)
        .squaredNorm();
  }
};

}  // namespace

BalanceResult balance_clusters(Clusters clusters, const Matrix& features, std::size_t m,
                               Rng& rng) {
  if (m < 1) throw std::invalid_argument("balance_clusters needs m >= 1");
  const std::size_t k = clusters.size();
  std::size_t n = 0;
  for (const auto& c : clusters) n += c.size();
  if (m * k < n) throw std::invalid_argument("m * clusters is smaller than the item count");

  BalanceResult res;
  Centroids cent(clusters, features);
  const auto move = [&](std::size_t pos, std::size_t from, std::size_t to) {
    const std::size_t item = clusters[from][pos];
    clusters[from].erase(clusters[from].begin() + static_cast<std::ptrdiff_t>(pos));
    clusters[to].push_back(item);
    const auto x = features.row(static_cast<Eigen::Index>(item));
    cent.remove(from, x);
    cent.add(to, x);
    res.moves.push_back({item, from, to});
  };
  const auto by_size_desc = [&](std::size_t a, std::size_t b) {
    if (clusters[a].size() != clusters[b].size()) return clusters[a].size() > clusters[b].size();
    return a < b;
  };

  std::vector<std::size_t> remaining(k);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::vector<std::size_t> processed;
  while (!remaining.empty()) {
    std::sort(remaining.begin(), remaining.end(), by_size_desc);
    const std::size_t cur = remaining.front();
    remaining.erase(remaining.begin());
    while (clusters[cur].size() > m) {
      const std::size_t pos = uniform_index(rng, clusters[cur].size());
      const auto x = features.row(static_cast<Eigen::Index>(clusters[cur][pos]));
      std::size_t target;
      if (remaining.empty()) {
        res.used_fallback = true;
        target = *std::min_element(processed.begin(), processed.end(),
                                   [&](std::size_t a, std::size_t b) {
                                     if (clusters[a].size() != clusters[b].size()) {
                                       return clusters[a].size() < clusters[b].size();
                                     }
                                     return a < b;
                                   });
      } else {
        target = remaining.front();
        double best = cent.dist(target, x);
        for (auto r : remaining) {
          const double d = cent.dist(r, x);
          if (d < best) {
            best = d;
            target = r;
          }
        }
      }
      move(pos, cur, target);
      std::sort(remaining.begin(), remaining.end(), by_size_desc);
    }
    processed.push_back(cur);
  }

  // Top-up pass for clusters left below floor(n/k).
  const std::size_t floor_size = n / k;
  for (;;) {
    std::size_t under = k;
    for (std::size_t c = 0; c < k; ++c) {
      if (clusters[c].size() < floor_size) {
        under = c;
        break;
      }
    }
    if (under == k) break;
    std::size_t donor = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (clusters[c].size() > clusters[donor].size()) donor = c;
    }
    std::size_t pos = 0;
    if (cent.count[under] == 0) {
      pos = uniform_index(rng, clusters[donor].size());
    } else {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < clusters[donor].size(); ++i) {
        const double d = cent.dist(under, features.row(static_cast<Eigen::Index>(clusters[donor][i])));
        if (d < best) {
          best = d;
          pos = i;
        }
      }
    }
    move(pos, donor, under);
  }
  res.clusters = std::move(clusters);
  return res;
}

Partition kmeans_partition(const Matrix& features, std::size_t k, std::uint64_t seed,
                           Strategy tag, const KMeansOptions& opts) {
  Rng rng(seed);
  auto raw = minibatch_kmeans(features, k, rng, opts);
  const auto n = static_cast<std::size_t>(features.rows());
  auto balanced = balance_clusters(std::move(raw), features, (n + k - 1) / k, rng);
  for (auto& c : balanced.clusters) std::sort(c.begin(), c.end());
  return {tag, std::move(balanced.clusters)};
}

double within_cluster_ss(const Matrix& features, const Clusters& clusters) {
  double total = 0.0;
  for (const auto& c : clusters) {
    if (c.empty()) continue;
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(features.cols());
    for (auto i : c) mean += features.row(static_cast<Eigen::Index>(i));
    mean /= static_cast<double>(c.size());
    for (auto i : c) total += (features.row(static_cast<Eigen::Index>(i)) - mean).squaredNorm();
  }
  return total;
}

// ---------------------------------------------------------------------------

Matrix ppmi_embeddings(const std::vector<TokenSeq>& texts, std::size_t vocab_size,
                       std::uint64_t seed, const EmbeddingOptions& opts) {
  if (vocab_size == 0 || opts.dim == 0) throw std::invalid_argument("empty embedding shape");
  std::unordered_map<std::uint64_t, double> pairs;
  std::vector<double> marg(vocab_size, 0.0);
  double total = 0.0;
  for (const auto& t : texts) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] >= vocab_size) continue;
      const std::size_t hi = std::min(t.size(), i + opts.window + 1);
      for (std::size_t j = i + 1; j < hi; ++j) {
        if (t[j] >= vocab_size) continue;
        pairs[(std::uint64_t{t[i]} << 32) | t[j]] += 1.0;
        pairs[(std::uint64_t{t[j]} << 32) | t[i]] += 1.0;
        marg[t[i]] += 1.0;
        marg[t[j]] += 1.0;
        total += 2.0;
      }
    }
  }
  std::vector<std::pair<std::uint64_t, double>> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& [key, c] : sorted) {
    const auto a = static_cast<std::size_t>(key >> 32);
    const auto b = static_cast<std::size_t>(key & 0xffffffffu);
    const double pmi = std::log(c * total / (marg[a] * marg[b]));
    if (pmi > 0.0) trip.emplace_back(static_cast<int>(a), static_cast<int>(b), pmi);
  }
  const auto v = static_cast<Eigen::Index>(vocab_size);
  Eigen::SparseMatrix<double> a(v, v);
  a.setFromTriplets(trip.begin(), trip.end());

  const auto rank = static_cast<Eigen::Index>(std::min(opts.dim, vocab_size));
  const auto l = std::min<Eigen::Index>(v, rank + static_cast<Eigen::Index>(opts.oversample));
  Rng rng(seed);
  Matrix omega(v, l);
  for (Eigen::Index j = 0; j < l; ++j) {
    for (Eigen::Index i = 0; i < v; ++i) omega(i, j) = normal(rng, 1.0);
  }
  const auto orthonormal = [&](const Matrix& y) -> Matrix {
    Eigen::HouseholderQR<Matrix> qr(y);
    return qr.householderQ() * Matrix::Identity(y.rows(), y.cols());
  };
  // The PPMI matrix is symmetric, so A^T = A in the power iterations.
  Matrix q = orthonormal(a * omega);
  for (std::size_t it = 0; it < opts.power_iterations; ++it) q = orthonormal(a * orthonormal(a * q));
  const Matrix bt = a * q;  // (Q^T A)^T
  Eigen::BDCSVD<Matrix> svd(bt, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Matrix emb = Matrix::Zero(v, static_cast<Eigen::Index>(opts.dim));
  const auto& s = svd.singularValues();
  for (Eigen::Index c = 0; c < rank && c < s.size(); ++c) {
    emb.col(c) = svd.matrixU().col(c) * std::sqrt(s(c));
  }
  return emb;
}

Matrix mean_embeddings(const std::vector<TokenSeq>& texts, const Matrix& words) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(texts.size()), words.cols());
  for (std::size_t r = 0; r < texts.size(); ++r) {
    std::size_t used = 0;
    for (auto t : texts[r]) {
      if (static_cast<Eigen::Index>(t) >= words.rows()) continue;
      out.row(static_cast<Eigen::Index>(r)) += words.row(static_cast<Eigen::Index>(t));
      ++used;
    }
    if (used > 0) out.row(static_cast<Eigen::Index>(r)) /= static_cast<double>(used);
  }
  return out;
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated matrix file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void write_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::uint64_t bits;
      const double v = m(r, c);
      std::memcpy(&bits, &v, 8);
      put_u64(out, bits);
    }
  }
}

Matrix read_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  const auto rows = get_u64(in);
  const auto cols = get_u64(in);
  if (rows > (1u << 28) || cols > (1u << 20)) throw DataError("implausible matrix shape in " + path);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto bits = get_u64(in);
      double v;
      std::memcpy(&v, &bits, 8);
      m(r, c) = v;
    }
  }
  return m;
}

void write_partition_tsv(const std::string& path, const Partition& p,
                         const std::vector<std::string>& ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t s = 0; s < p.subsets.size(); ++s) {
    for (auto i : p.subsets[s]) out << ids.at(i) << '\t' << s << '\n';
  }
}

// ---------------------------------------------------------------------------

PartitionReport evaluate_partitioning(Strategy strategy, std::size_t n,
                                      const std::function<double(std::size_t, std::size_t)>& score,
                                      double task_score) {
  PartitionReport r{strategy, std::vector<std::vector<double>>(n, std::vector<double>(n)), {},
                    task_score};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) r.scores[i][j] = score(i, j);
  }
  r.metrics = metrics::partition_metrics(r.scores);
  return r;
}

std::string partition_table_tsv(const std::vector<PartitionReport>& reports) {
  std::ostringstream os;
  os << "strategy\tE_i[e_i]\tE_i[E_j[s_ij]]\tE_i[V_j[s_ij]]\ttask_score\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\t%.6f\t%.6f\n", to_string(r.strategy),
                  r.metrics.oop_error, r.metrics.oop_score, r.metrics.oop_variance, r.task_score);
    os << buf;
  }
  return os.str();
}

}  // namespace qreform::partition
