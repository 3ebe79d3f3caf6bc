#include "knnattn/backward.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>

#include "knnattn/core.hpp"
#include "knnattn/errors.hpp"

namespace knnattn {
namespace {

double median_of_group_means(const std::vector<double>& values, long long groups) {
  assert(!values.empty());
  // constant draws (single-support distributions) stay bit-exact
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); }))
    return values.front();
  groups = std::clamp<long long>(groups, 1, static_cast<long long>(values.size()));
  std::vector<double> means(static_cast<size_t>(groups));
  size_t per = values.size() / groups, extra = values.size() % groups, pos = 0;
  for (long long g = 0; g < groups; ++g) {
    size_t len = per + (static_cast<size_t>(g) < extra ? 1 : 0);
    double s = std::accumulate(values.begin() + pos, values.begin() + pos + len, 0.0);
    means[g] = s / static_cast<double>(len);
    pos += len;
  }
  auto mid = means.begin() + means.size() / 2;
  std::nth_element(means.begin(), mid, means.end());
  if (means.size() % 2 == 1) return *mid;
  double hi = *mid;
  double lo = *std::max_element(means.begin(), mid);
  return 0.5 * (lo + hi);
}

/// Sample/group counts shared by the D^Q / D^K expectation estimators.
struct MoMPlan {
  long long total;
  long long groups;
};

MoMPlan expectation_plan(const BackwardConfig& cfg, double variance_bound) {
  MoMConfig mom;
  mom.epsilon = cfg.epsilon;
  mom.delta = cfg.delta / 3.0;
  mom.variance_bound = std::max(variance_bound, 1e-12);
  long long total = std::max<long long>(mom.total_samples(), 1);
  if (cfg.expectation_samples > 0) total = cfg.expectation_samples;
  long long groups = std::clamp<long long>(mom.group_count(), 1, total);
  return {total, groups};
}

bool caps_exceeded(const AttentionProblem& p, const Matrix& dO, const BackwardConfig& cfg) {
  if (p.K.max_abs() > cfg.cap_k_inf) return true;
  double dp_bound = static_cast<double>(p.d()) * dO.max_abs() * p.V.max_abs();
  return dp_bound > cfg.cap_dp_inf;
}

}  // namespace

RowStochasticAccess::RowStochasticAccess(const Matrix& Q, const Matrix& K, int k,
                                         uint64_t index_seed) {
  (void)index_seed;
  Q_ = &Q;
  K_ = &K;
  const int n = Q.rows();
  if (k <= 0) k = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  k = std::min(k, n);
  index_ = build_exact_index(augment_keys(K));
  samplers_.reserve(n);
  log_z_.resize(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> q(Q.row(i).begin(), Q.row(i).end());
    TopKSet top = build_top_k_set(*index_, K, q, k, i, n);
    // Exact log-partition (O(nd) per row, never stores the row).
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) m = std::max(m, dot(q, K.row(j)));
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(dot(q, K.row(j)) - m);
    log_z_[i] = m + std::log(z);
    samplers_.emplace_back(K, std::move(q), std::move(top), n);
  }
}

double RowStochasticAccess::p_entry(int i, int k) const {
  return std::exp(dot(Q_->row(i), K_->row(k)) - log_z_[i]);
}

long long default_walk_count(int n, int d, double epsilon) {
  double lg = n > 1 ? 2.0 * std::log2(static_cast<double>(n)) : 2.0;
  double ub = std::log(static_cast<double>(n) * n * std::max(d, 1));
  return std::max<long long>(
      1, static_cast<long long>(std::ceil(std::max(lg, ub) / (epsilon * epsilon))));
}

std::vector<double> approx_pos_prod(const RowStochasticAccess& P, std::span<const double> x,
                                    double epsilon, RngStream& rng, long long walks) {
  const int n = P.n();
  assert(static_cast<int>(x.size()) == n);
  std::vector<double> out(n, 0.0);
  double total = std::accumulate(x.begin(), x.end(), 0.0);
  if (total <= 0.0) return out;  // P^T 0 = 0 exactly
  if (walks <= 0) walks = default_walk_count(n, 1, epsilon);

  CdfSampler source(x);
  std::vector<long long> hist(n, 0);
  for (long long t = 0; t < walks; ++t) {
    int i = source.sample(rng);
    ++hist[P.sample_row(i, rng)];
  }
  for (int k = 0; k < n; ++k)
    out[k] = static_cast<double>(hist[k]) / static_cast<double>(walks) * total;
  return out;
}

std::vector<double> estimate_product(const RowStochasticAccess& P, std::span<const double> x,
                                     double epsilon, std::span<const double> s_hat, RngStream& rng,
                                     long long walks) {
  const int n = P.n();
  double m = 0.0;
  for (double v : x) m = std::min(m, v);
  double shift = -m;  // max(0, -min x)
  std::vector<double> shifted(x.begin(), x.end());
  for (double& v : shifted) v += shift;
  std::vector<double> out = approx_pos_prod(P, shifted, epsilon, rng, walks);
  if (shift > 0.0)
    for (int k = 0; k < n; ++k) out[k] -= shift * s_hat[k];
  return out;
}

std::vector<double> estimate_row_sums(const RowStochasticAccess& P, double epsilon, RngStream& rng,
                                      long long walks) {
  std::vector<double> ones(P.n(), 1.0);
  return approx_pos_prod(P, ones, epsilon, rng, walks);
}

std::pair<Matrix, ErrorBudget> estimate_dv(const AttentionProblem& p, const Matrix& dO,
                                           const BackwardConfig& cfg) {
  const int n = p.n(), d = dO.cols();
  RowStochasticAccess P(p.Q, p.K, cfg.k, cfg.seed);
  long long walks = cfg.walk_count > 0 ? cfg.walk_count : default_walk_count(n, d, cfg.epsilon);

  RngStream root(cfg.seed, 2);
  RngStream s_rng = root.substream(0);
  std::vector<double> s_hat = estimate_row_sums(P, cfg.epsilon, s_rng, walks);

  Matrix dv(n, d);
  ErrorBudget budget;
  budget.per_entry = Matrix(n, d);
  for (int j = 0; j < d; ++j) {
    std::vector<double> x = dO.col(j);
    double col_sum = std::accumulate(x.begin(), x.end(), 0.0);
    double mj = 0.0;
    for (double v : x) mj = std::min(mj, v);
    mj = -mj;
    // Each column replays the same substream so the output column is a pure
    // function of the column data (column-permutation equivariance).
    RngStream col_rng = root.substream(1);
    std::vector<double> col = estimate_product(P, x, cfg.epsilon, s_hat, col_rng, walks);
    double ev = cfg.epsilon * col_sum + 2.0 * n * cfg.epsilon * mj;
    for (int i = 0; i < n; ++i) {
      dv(i, j) = col[i];
      budget.per_entry(i, j) = ev;
    }
  }
  return {std::move(dv), std::move(budget)};
}

std::pair<Matrix, ErrorBudget> estimate_dq(const AttentionProblem& p, const Matrix& dO,
                                           const BackwardConfig& cfg) {
  const int n = p.n(), d = p.d();
  if (n == 1) {
    // P = [1] makes D^P - <D^P, P> vanish identically; dQ is exactly zero.
    ErrorBudget budget;
    budget.per_entry = Matrix(1, d);
    return {Matrix(1, d), std::move(budget)};
  }
  RowStochasticAccess P(p.Q, p.K, cfg.k, cfg.seed);

  double var1 = cfg.cap_dp_inf * cfg.cap_k_inf;
  var1 *= var1;
  double var2 = cfg.cap_k_inf * cfg.cap_k_inf;
  double var3 = cfg.cap_dp_inf * cfg.cap_dp_inf;
  MoMPlan plan = expectation_plan(cfg, std::max({var1, var2, var3}));

  Matrix dq(n, d);
  ErrorBudget budget;
  budget.per_entry = Matrix(n, d);
  budget.guarantee_void = caps_exceeded(p, dO, cfg);

  RngStream root(cfg.seed, 3);
  std::vector<int> draws(static_cast<size_t>(plan.total));
  std::vector<double> dp(static_cast<size_t>(plan.total));
  std::vector<double> vals(static_cast<size_t>(plan.total));
  for (int i = 0; i < n; ++i) {
    RngStream row_rng = root.substream(static_cast<uint64_t>(i));
    for (long long t = 0; t < plan.total; ++t) {
      int k = P.sample_row(i, row_rng);
      draws[t] = k;
      dp[t] = dot(dO.row(i), p.V.row(k));  // D^P_{ik} on the fly, O(d)
    }
    double e3 = median_of_group_means(dp, plan.groups);
    for (int j = 0; j < d; ++j) {
      for (long long t = 0; t < plan.total; ++t) vals[t] = dp[t] * p.K(draws[t], j);
      double e1 = median_of_group_means(vals, plan.groups);
      for (long long t = 0; t < plan.total; ++t) vals[t] = p.K(draws[t], j);
      double e2 = median_of_group_means(vals, plan.groups);
      dq(i, j) = e1 - e2 * e3;
      budget.per_entry(i, j) =
          cfg.epsilon + cfg.epsilon * cfg.epsilon + cfg.epsilon * (std::abs(e2) + std::abs(e3));
    }
  }
  return {std::move(dq), std::move(budget)};
}

ShiftBound compute_dk_shift(const AttentionProblem& p, const Matrix& dO, int exact_cap) {
  const int n = p.n(), d = p.d();
  if (n > exact_cap) {
    // Cauchy-Schwarz fallback: |Y^{(i)}_{kj}| <= ||Q||_inf ||dO_k|| ||V_i||.
    double qmax = p.Q.max_abs(), do_norm = 0.0, v_norm = 0.0;
    for (int k = 0; k < n; ++k) {
      do_norm = std::max(do_norm, std::sqrt(dot(dO.row(k), dO.row(k))));
      v_norm = std::max(v_norm, std::sqrt(dot(p.V.row(k), p.V.row(k))));
    }
    return {qmax * do_norm * v_norm};
  }
  std::vector<double> q_min(n), q_max(n);
  for (int k = 0; k < n; ++k) {
    auto r = p.Q.row(k);
    q_min[k] = *std::min_element(r.begin(), r.end());
    q_max[k] = *std::max_element(r.begin(), r.end());
  }
  double y_min = 0.0;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double dp = dot(dO.row(k), p.V.row(i));
      y_min = std::min(y_min, dp >= 0.0 ? dp * q_min[k] : dp * q_max[k]);
    }
  (void)d;
  return {-y_min};
}

Matrix estimate_dk_part_a(const AttentionProblem& p, const Matrix& dO,
                          const RowStochasticAccess& P, const CdfTables& tables, ShiftBound M,
                          std::span<const double> s_hat, const BackwardConfig& cfg) {
  (void)dO;  // already folded into the prefix tables
  const int n = p.n(), d = p.d();
  long long walks = cfg.walk_count > 0 ? cfg.walk_count : default_walk_count(n, d, cfg.epsilon);
  Matrix a(n, d);
  RngStream root(cfg.seed, 4);
  for (int i = 0; i < n; ++i) {
    auto v_row = p.V.row(i);
    RngStream row_rng = root.substream(static_cast<uint64_t>(i));
    for (int j = 0; j < d; ++j) {
      double norm = shifted_y_normalizer(tables, v_row, j, M);
      if (norm <= 0.0) {
        if (norm == 0.0) {
          // all shifted weights vanish: sum_k P_ki (Y_kj + M) = 0
          a(i, j) = -M.m * s_hat[i];
          continue;
        }
        throw DegenerateWeights("shifted-Y normalizer negative; shift bound too small");
      }
      long long hits = 0;
      for (long long t = 0; t < walks; ++t) {
        int k = sample_shifted_y(tables, v_row, j, M, row_rng);
        if (P.sample_row(k, row_rng) == i) ++hits;
      }
      a(i, j) = static_cast<double>(hits) / static_cast<double>(walks) * norm - M.m * s_hat[i];
    }
  }
  return a;
}

Matrix estimate_dk_part_b(const AttentionProblem& p, const Matrix& dO,
                          const RowStochasticAccess& P, std::span<const double> s_hat,
                          const BackwardConfig& cfg) {
  const int n = p.n(), d = p.d();
  long long walks = cfg.walk_count > 0 ? cfg.walk_count : default_walk_count(n, d, cfg.epsilon);
  double var = cfg.cap_dp_inf * cfg.cap_dp_inf;
  MoMPlan plan = expectation_plan(cfg, var);

  RngStream root(cfg.seed, 5);
  // D_hat_k ~ <D^P_{k,:}, P_{k,:}>, one estimate per row shared across j.
  std::vector<double> d_hat(n);
  std::vector<double> vals(static_cast<size_t>(plan.total));
  for (int k = 0; k < n; ++k) {
    RngStream row_rng = root.substream(static_cast<uint64_t>(k));
    for (long long t = 0; t < plan.total; ++t) {
      int s = P.sample_row(k, row_rng);
      vals[t] = dot(dO.row(k), p.V.row(s));
    }
    d_hat[k] = median_of_group_means(vals, plan.groups);
  }

  Matrix b(n, d);
  std::vector<double> x(n);
  for (int j = 0; j < d; ++j) {
    for (int k = 0; k < n; ++k) x[k] = p.Q(k, j) * d_hat[k];  // X_hat on demand
    RngStream col_rng = root.substream(static_cast<uint64_t>(n) + j);
    std::vector<double> col = estimate_product(P, x, cfg.epsilon, s_hat, col_rng, walks);
    for (int i = 0; i < n; ++i) b(i, j) = col[i];
  }
  return b;
}

std::pair<Matrix, ErrorBudget> estimate_dk(const AttentionProblem& p, const Matrix& dO,
                                           const BackwardConfig& cfg) {
  const int n = p.n(), d = p.d();
  if (n == 1) {
    // A and B coincide exactly when P = [1] (dK is identically zero)
    ErrorBudget budget;
    budget.per_entry = Matrix(1, d);
    return {Matrix(1, d), std::move(budget)};
  }
  RowStochasticAccess P(p.Q, p.K, cfg.k, cfg.seed);
  long long walks = cfg.walk_count > 0 ? cfg.walk_count : default_walk_count(n, d, cfg.epsilon);

  RngStream root(cfg.seed, 6);
  RngStream s_rng = root.substream(0);
  std::vector<double> s_hat = estimate_row_sums(P, cfg.epsilon, s_rng, walks);
  CdfTables tables = build_cdf_tables(p.Q, dO);
  ShiftBound M = compute_dk_shift(p, dO);

  Matrix a = estimate_dk_part_a(p, dO, P, tables, M, s_hat, cfg);
  Matrix b = estimate_dk_part_b(p, dO, P, s_hat, cfg);

  // Recompute Part B's shared row estimates only for the recorded budget.
  double var = cfg.cap_dp_inf * cfg.cap_dp_inf;
  MoMPlan plan = expectation_plan(cfg, var);
  RngStream b_root(cfg.seed, 5);
  std::vector<double> d_hat(n);
  std::vector<double> vals(static_cast<size_t>(plan.total));
  for (int k = 0; k < n; ++k) {
    RngStream row_rng = b_root.substream(static_cast<uint64_t>(k));
    for (long long t = 0; t < plan.total; ++t) {
      int s = P.sample_row(k, row_rng);
      vals[t] = dot(dO.row(k), p.V.row(s));
    }
    d_hat[k] = median_of_group_means(vals, plan.groups);
  }

  ErrorBudget budget;
  budget.per_entry = Matrix(n, d);
  budget.guarantee_void = caps_exceeded(p, dO, cfg);
  const double eps = cfg.epsilon;
  for (int j = 0; j < d; ++j) {
    double x_sum = 0.0, x_min = 0.0;
    for (int k = 0; k < n; ++k) {
      double xv = p.Q(k, j) * d_hat[k];
      x_sum += xv;
      x_min = std::min(x_min, xv);
    }
    double mx = -x_min;
    for (int i = 0; i < n; ++i) {
      auto v_row = p.V.row(i);
      double y_sum = dot(v_row, tables.column_total(j));  // <Y^{(i)}_{:,j}, 1>
      double part_a = std::max(0.0, eps * (y_sum + n * M.m)) + eps * n * M.m;
      double part_b = std::max(0.0, eps * (s_hat[i] + x_sum + n * mx)) + eps * eps * n +
                      eps * n * mx;
      budget.per_entry(i, j) = part_a + part_b;
    }
  }

  a -= b;
  return {std::move(a), std::move(budget)};
}

}  // namespace knnattn
