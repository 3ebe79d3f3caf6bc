#pragma once

#include <span>
#include <vector>

#include "knnattn/core.hpp"
#include "knnattn/matrix.hpp"
#include "knnattn/mips.hpp"
#include "knnattn/rng.hpp"

namespace knnattn {

/// The k candidate indices with the largest scores Z_{ij} = <q_i, k_j> for
/// one query row, plus the scores themselves and their minimum.
struct TopKSet {
  int row = 0;
  std::vector<int> indices;
  std::vector<double> scores;
  double s_min = 0.0;
};

/// Exact sampler for the softmax distribution D_i over key indices,
/// realizing Gumbel noise only on the top-k scores plus a Binomially-sized
/// spill set of large-noise outsiders.
///
/// With an exact top-k set and zero cutoff slack every draw is an exact
/// softmax sample. An approximate index is tolerated by lowering the cutoff
/// through `cutoff_slack`. Immutable after construction; concurrent callers
/// bring their own RngStream.
class SoftmaxRowSampler {
 public:
  /// `universe` is the number of admissible key indices (i+1 under causal
  /// masking, n otherwise); the top-k set must be drawn from that prefix.
  SoftmaxRowSampler(const Matrix& keys, std::vector<double> query, TopKSet top,
                    int universe, double cutoff_slack = 0.0);

  /// One exact draw from D_i. Steps: Gumbel noise on S_i, cutoff
  /// B = max(Z+G) - S_min - slack, Binomial spill count over the complement,
  /// conditional Gumbels on the spill set, argmax over the union.
  int sample(RngStream& rng) const;

  /// Same draw, also reporting the spill count m.
  std::pair<int, long long> sample_with_spill(RngStream& rng) const;

  const TopKSet& top() const { return top_; }
  int universe() const { return universe_; }

 private:
  const Matrix* keys_;
  std::vector<double> query_;
  TopKSet top_;
  int universe_;
  double cutoff_slack_;
  bool covers_all_;
};

int lazy_gumbel_sample(const SoftmaxRowSampler& sampler, RngStream& rng);

/// Builds the TopKSet for one query row from a MIPS index. Scores are the
/// raw inner products <q, k_j>. `universe` restricts candidates to indices
/// < universe when positive.
TopKSet build_top_k_set(const KnnIndex& index, const Matrix& keys, std::span<const double> query,
                        int k, int row, int universe = 0);

/// Monte-Carlo mean of the spill count m over `trials` re-noisings of the
/// given score vector with its exact top-k set.
double expected_spill_count(std::span<const double> scores, int k, int trials, RngStream& rng);

/// One draw with probability weights_i / sum(weights) via prefix sums and
/// binary search. Throws DegenerateWeights if all weights are zero. Never
/// returns an index of zero weight.
int cdf_sample(std::span<const double> weights, RngStream& rng);

/// Reusable O(log n) sampler over fixed nonnegative weights.
class CdfSampler {
 public:
  explicit CdfSampler(std::span<const double> weights);
  int sample(RngStream& rng) const;
  double total() const { return prefix_.empty() ? 0.0 : prefix_.back(); }

 private:
  std::vector<double> prefix_;
};

/// Prefix-sum tables (Sigma_j)_l = sum_{s<=l} Q_{sj} * dO_{s,:} for each
/// output column j, plus the column totals E_j = (Sigma_j)_n. O(n d^2)
/// time and space.
struct CdfTables {
  int n = 0;
  int d = 0;
  std::vector<Matrix> sigma;  // d tables, each n x d; row l-1 holds (Sigma_j)_l

  std::span<const double> prefix(int j, int l) const { return sigma[j].row(l - 1); }
  std::span<const double> column_total(int j) const { return sigma[j].row(n - 1); }
};

CdfTables build_cdf_tables(const Matrix& Q, const Matrix& dO);

/// Nonnegative upper bound on the negativity shift applied to the Y values.
struct ShiftBound {
  double m = 0.0;
};

/// One draw of k in [n] with probability proportional to
/// Y_{kj} + M, where Y_{kj} = Q_{kj} * <dO_{k,:}, v_row>. Prefix values are
/// evaluated lazily as l*M + <v_row, (Sigma_j)_l> in O(d) per binary-search
/// probe. Throws DegenerateWeights when the normalizer is non-positive
/// (the shift bound is too small).
int sample_shifted_y(const CdfTables& tables, std::span<const double> v_row, int j, ShiftBound M,
                     RngStream& rng);

/// The normalizer N_j = <v_row, E_j> + n*M of the shifted-Y distribution.
double shifted_y_normalizer(const CdfTables& tables, std::span<const double> v_row, int j,
                            ShiftBound M);

}  // namespace knnattn
