#pragma once

#include <cstdint>
#include <vector>

#include "knnattn/matrix.hpp"
#include "knnattn/mips.hpp"
#include "knnattn/oracle.hpp"

namespace knnattn {

enum class IndexBackend { exact, lsh };
enum class ForwardEstimator { mom, weighted };

struct ForwardConfig {
  int k = 0;    // 0 -> ceil(sqrt(n))
  int ell = 0;  // weighted estimator spill size; 0 with k = n means exact
  double epsilon = 0.1;
  double delta = 0.1;
  ForwardEstimator estimator = ForwardEstimator::weighted;
  IndexBackend index = IndexBackend::exact;
  uint64_t seed = 0;
  double cutoff_slack = 0.0;  // lowered Gumbel cutoff for approximate indices
  LshParams lsh;
};

struct ApproxOutput {
  Matrix o_hat;
  std::vector<long long> row_sample_counts;
  std::vector<long long> row_spill_totals;
  /// Set when an analysis precondition (e.g. the ||V||_inf bound) does not
  /// hold for the supplied data; the estimate is still produced.
  bool guarantee_void = false;
};

/// Median-of-means kNN attention: per (i, j), a boosted mean of V_{kj} draws
/// with k sampled from D_i by lazy Gumbel sampling.
ApproxOutput knn_attention_mom(const AttentionProblem& p, const ForwardConfig& cfg);

/// Weighted top-k + spill estimator. Per row, the top-k set S_i and a
/// uniform spill sample T_i of size ell share all d output columns:
///   O_hat = [sum_S e^Z V + ((n-k)/ell) sum_T e^Z V]
///         / [sum_S e^Z     + ((n-k)/ell) sum_T e^Z]
/// with per-row max-score subtraction. k = n reproduces exact attention.
ApproxOutput knn_attention_weighted(const AttentionProblem& p, const ForwardConfig& cfg);

/// Smallest k = ell satisfying k^2 l >= 8 n^2 eps^-2 log(4/delta) and
/// k l >= 2 n eps^-2 log(2/delta), clamped to n. A clamped k = n returns
/// ell = 0 (the estimator is then exact and needs no spill).
std::pair<int, int> choose_parameters(int n, double epsilon, double delta);

}  // namespace knnattn
