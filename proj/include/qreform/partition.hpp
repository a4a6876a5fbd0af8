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

// Splitting the training queries between sub-agents.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qreform/metrics.hpp"
#include "qreform/types.hpp"

namespace qreform::partition {

enum class Strategy { random, bagging, kmeans_q, kmeans_a, kmeans_qa };

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

// Subsets hold indices into the caller's item list.
struct Partition {
  Strategy strategy = Strategy::random;
  std::vector<std::vector<std::size_t>> subsets;

  std::size_t size() const noexcept { return subsets.size(); }
};

// Uniform shuffle, then round-robin. Throws std::invalid_argument unless
// 1 <= k <= n.
Partition random_partition(std::size_t n, std::size_t k, std::uint64_t seed);

// k independent with-replacement samples of size n.
Partition bootstrap_partition(std::size_t n, std::size_t k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Balanced k-means. Features are one row per item.

using Matrix = Eigen::MatrixXd;
using Clusters = std::vector<std::vector<std::size_t>>;

struct KMeansOptions {
  std::size_t batch_size = 256;
  std::size_t iterations = 100;
};

// Mini-batch k-means with k-means++ seeding; returns the raw (unbalanced)
// clusters. Throws DataError when there are fewer distinct rows than k.
Clusters minibatch_kmeans(const Matrix& features, std::size_t k, Rng& rng,
                          const KMeansOptions& opts = {});

struct BalanceMove {
  std::size_t item;
  std::size_t from;
  std::size_t to;
};

struct BalanceResult {
  Clusters clusters;
  std::vector<BalanceMove> moves;
  // Overflow of the last cluster had no remaining cluster to go to.
  bool used_fallback = false;
};

// Greedy balancing. Clusters are visited largest first; while the current
// one holds more than m items a uniformly chosen item moves to the remaining
// cluster with the nearest centroid. Only oversized clusters are trimmed;
// the variant
//   while |c| < m: move an item from c to its nearest cluster
// never terminates, since the loop shrinks the cluster it tests.
//
// A final pass tops up clusters below floor(n/k) from the largest cluster,
// which the greedy pass alone cannot guarantee. Throws std::invalid_argument
// when m * k < n.
BalanceResult balance_clusters(Clusters clusters, const Matrix& features, std::size_t m,
                               Rng& rng);

// minibatch_kmeans + balance_clusters with m = ceil(n/k).
Partition kmeans_partition(const Matrix& features, std::size_t k, std::uint64_t seed,
                           Strategy tag, const KMeansOptions& opts = {});

double within_cluster_ss(const Matrix& features, const Clusters& clusters);

// ---------------------------------------------------------------------------
// Query features.

struct EmbeddingOptions {
  std::size_t dim = 64;
  std::size_t window = 2;
  std::size_t oversample = 10;
  std::size_t power_iterations = 2;
};

// Word vectors from a truncated randomized SVD of the PPMI co-occurrence
// matrix; one row per token id below vocab_size.
Matrix ppmi_embeddings(const std::vector<TokenSeq>& texts, std::size_t vocab_size,
                       std::uint64_t seed, const EmbeddingOptions& opts = {});

// Mean word vector per text (zero for empty or fully out-of-range texts).
Matrix mean_embeddings(const std::vector<TokenSeq>& texts, const Matrix& words);

// Binary matrix file: u64 rows, u64 dim, then rows*dim little-endian f64.
void write_matrix(const std::string& path, const Matrix& m);
Matrix read_matrix(const std::string& path);

// qid <TAB> subset index. Bagging partitions repeat qids.
void write_partition_tsv(const std::string& path, const Partition& p,
                         const std::vector<std::string>& ids);

// ---------------------------------------------------------------------------
// Out-of-partition evaluation.

struct PartitionReport {
  Strategy strategy;
  std::vector<std::vector<double>> scores;  // s[i][j]
  metrics::PartitionMetrics metrics;
  double task_score = 0.0;
};

// Fills s[i][j] = score(i, j) for an n x n grid and derives the metrics.
PartitionReport evaluate_partitioning(Strategy strategy, std::size_t n,
                                      const std::function<double(std::size_t, std::size_t)>& score,
                                      double task_score);

// One row per report: strategy, E_i[e_i], E_i[E_{j!=i}[s_ij]],
// E_i[V_{j!=i}[s_ij]], task score.
std::string partition_table_tsv(const std::vector<PartitionReport>& reports);

}  // namespace qreform::partition
