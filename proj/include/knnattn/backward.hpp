#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "knnattn/matrix.hpp"
#include "knnattn/mips.hpp"
#include "knnattn/oracle.hpp"
#include "knnattn/sampling.hpp"

namespace knnattn {

/// Sampling/evaluation handle over the row-stochastic attention matrix P.
/// Holds Q, K, a MIPS index and one lazy-Gumbel sampler per row; P itself is
/// never materialized. Row sampling is exact; a single entry P_{ik} is
/// evaluated in O(d) against precomputed per-row log-partitions.
class RowStochasticAccess {
 public:
  /// k = 0 picks ceil(sqrt(n)) top scores per row.
  RowStochasticAccess(const Matrix& Q, const Matrix& K, int k = 0, uint64_t index_seed = 0);

  int n() const { return static_cast<int>(samplers_.size()); }

  /// One exact draw from D_i.
  int sample_row(int i, RngStream& rng) const { return samplers_[i].sample(rng); }

  /// P_{ik} = exp(<q_i, k_k> - logZ_i).
  double p_entry(int i, int k) const;

  const SoftmaxRowSampler& sampler(int i) const { return samplers_[i]; }

 private:
  const Matrix* Q_;
  const Matrix* K_;
  std::unique_ptr<KnnIndex> index_;
  std::vector<SoftmaxRowSampler> samplers_;
  std::vector<double> log_z_;
};

struct BackwardConfig {
  double epsilon = 0.1;
  double delta = 0.1;
  int k = 0;                 // top-k size for the row samplers; 0 -> ceil(sqrt(n))
  uint64_t seed = 0;
  long long walk_count = 0;  // 0 -> max(2 lg n, ln(n^2 d)) * eps^-2
  /// Overrides the per-estimator median-of-means sample total when positive
  /// (speed knob for iterative callers); 0 derives it from epsilon/delta.
  long long expectation_samples = 0;
  /// Boundedness caps backing the median-of-means variance bounds for the
  /// D^Q / D^K expectation estimators. Inputs exceeding a cap still get an
  /// estimate but the returned budget is tagged guarantee_void.
  double cap_k_inf = 1.0;   // on ||K||_inf
  double cap_dp_inf = 1.0;  // on max_{i,k} |<dO_i, V_k>|
};

/// Per-entry additive error bounds recorded alongside an estimate. The
/// harness asserts them; the estimators never do.
struct ErrorBudget {
  Matrix per_entry;
  bool guarantee_void = false;
};

/// Walk count max(2 lg n, ln(n^2 d)) * eps^-2 (union-bound variant).
long long default_walk_count(int n, int d, double epsilon);

/// Markov-chain estimate of P^T x for x >= 0: N two-step draws (source
/// i ~ x_i / <x,1>, destination k ~ D_i), histogram normalized by N and
/// rescaled by <x,1>. x = 0 returns the zero vector exactly.
std::vector<double> approx_pos_prod(const RowStochasticAccess& P, std::span<const double> x,
                                    double epsilon, RngStream& rng, long long walks = 0);

/// Signed extension: shifts by M = max(0, -min x), runs approx_pos_prod on
/// x + M and subtracts M * s_hat, where s_hat is a prior estimate of P^T 1.
std::vector<double> estimate_product(const RowStochasticAccess& P, std::span<const double> x,
                                     double epsilon, std::span<const double> s_hat, RngStream& rng,
                                     long long walks = 0);

/// s_hat ~ P^T 1^n, shared by the column estimators; ||s_hat - P^T 1||_inf
/// <= eps * n with the default walk count.
std::vector<double> estimate_row_sums(const RowStochasticAccess& P, double epsilon, RngStream& rng,
                                      long long walks = 0);

/// dV estimate, one estimate_product per column of dO. Budget column j is
/// e_V(j) = eps * <dO_{:,j} + M_j, 1> + 2 n eps M_j.
std::pair<Matrix, ErrorBudget> estimate_dv(const AttentionProblem& p, const Matrix& dO,
                                           const BackwardConfig& cfg);

/// dQ estimate via the three softmax expectations under D_i:
/// E1 = E[D^P_{ik} K_{kj}], E2 = E[K_{kj}], E3 = E[D^P_{ik}], returning
/// E1_hat - E2_hat * E3_hat per entry. One draw set per row is shared across
/// the three estimators and all d columns. Budget eps + eps^2 +
/// eps (|E2_hat| + |E3_hat|).
std::pair<Matrix, ErrorBudget> estimate_dq(const AttentionProblem& p, const Matrix& dO,
                                           const BackwardConfig& cfg);

/// Nonnegative shift covering -min Y over Y^{(i)}_{kj} = Q_{kj} <dO_k, V_i>.
/// Exact (O(n^2 d)) up to exact_cap rows, Cauchy-Schwarz bound beyond.
ShiftBound compute_dk_shift(const AttentionProblem& p, const Matrix& dO, int exact_cap = 8192);

/// Part A of dK: A_{ij} = (P^T)_{i,:} Y^{(i)}_{:,j} estimated by hit
/// counting over N draws of (k ~ Y^{(i)}_{:,j} + M, l ~ D_k).
Matrix estimate_dk_part_a(const AttentionProblem& p, const Matrix& dO,
                          const RowStochasticAccess& P, const CdfTables& tables, ShiftBound M,
                          std::span<const double> s_hat, const BackwardConfig& cfg);

/// Part B of dK: X_{kj} = Q_{kj} <D^P_{k,:}, P_{k,:}> with one
/// median-of-means D_hat_k per row shared across columns, then one
/// estimate_product per column.
Matrix estimate_dk_part_b(const AttentionProblem& p, const Matrix& dO,
                          const RowStochasticAccess& P, std::span<const double> s_hat,
                          const BackwardConfig& cfg);

/// dK estimate A_hat - B_tilde with the combined recorded budget.
std::pair<Matrix, ErrorBudget> estimate_dk(const AttentionProblem& p, const Matrix& dO,
                                           const BackwardConfig& cfg);

}  // namespace knnattn
