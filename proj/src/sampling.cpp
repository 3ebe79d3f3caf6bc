#include "knnattn/sampling.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "knnattn/errors.hpp"

namespace knnattn {

SoftmaxRowSampler::SoftmaxRowSampler(const Matrix& keys, std::vector<double> query, TopKSet top,
                                     int universe, double cutoff_slack)
    : keys_(&keys),
      query_(std::move(query)),
      top_(std::move(top)),
      universe_(universe),
      cutoff_slack_(cutoff_slack) {
  assert(!top_.indices.empty());
  assert(static_cast<int>(top_.indices.size()) <= universe_);
  assert(cutoff_slack_ >= 0.0);
  covers_all_ = static_cast<int>(top_.indices.size()) >= universe_;
}

std::pair<int, long long> SoftmaxRowSampler::sample_with_spill(RngStream& rng) const {
  const int k = static_cast<int>(top_.indices.size());
  int best = -1;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < k; ++t) {
    double v = top_.scores[t] + gumbel_sample(rng);
    if (v > best_val || (v == best_val && top_.indices[t] < best)) {
      best_val = v;
      best = top_.indices[t];
    }
  }
  if (covers_all_) return {best, 0};

  double cutoff = best_val - top_.s_min - cutoff_slack_;
  double p_exceed = -std::expm1(-std::exp(-cutoff));
  long long m = binomial_sample(rng, universe_ - k, p_exceed);
  if (m == 0) return {best, 0};

  std::vector<int> spill =
      sample_k_distinct_excluding(rng, universe_, top_.indices, static_cast<int>(m));
  for (int j : spill) {
    double v = dot(query_, keys_->row(j)) + gumbel_sample_conditional_above(rng, cutoff);
    if (v > best_val || (v == best_val && j < best)) {
      best_val = v;
      best = j;
    }
  }
  return {best, m};
}

int SoftmaxRowSampler::sample(RngStream& rng) const { return sample_with_spill(rng).first; }

int lazy_gumbel_sample(const SoftmaxRowSampler& sampler, RngStream& rng) {
  return sampler.sample(rng);
}

TopKSet build_top_k_set(const KnnIndex& index, const Matrix& keys, std::span<const double> query,
                        int k, int row, int universe) {
  auto q_aug = augment_query(query);
  TopKSet s;
  s.row = row;
  s.indices = index.query(q_aug, k, universe);
  s.scores.reserve(s.indices.size());
  s.s_min = std::numeric_limits<double>::infinity();
  for (int j : s.indices) {
    double z = dot(query, keys.row(j));
    s.scores.push_back(z);
    s.s_min = std::min(s.s_min, z);
  }
  return s;
}

double expected_spill_count(std::span<const double> scores, int k, int trials, RngStream& rng) {
  const int n = static_cast<int>(scores.size());
  assert(k <= n && k >= 1);
  if (k >= n) return 0.0;

  // Exact top-k of the fixed score vector, lower index on ties.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  double s_min = std::numeric_limits<double>::infinity();
  for (int t = 0; t < k; ++t) s_min = std::min(s_min, scores[order[t]]);

  double total = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    double max_noisy = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < k; ++t) max_noisy = std::max(max_noisy, scores[order[t]] + gumbel_sample(rng));
    double cutoff = max_noisy - s_min;
    double p_exceed = -std::expm1(-std::exp(-cutoff));
    total += static_cast<double>(binomial_sample(rng, n - k, p_exceed));
  }
  return total / trials;
}

CdfSampler::CdfSampler(std::span<const double> weights) {
  prefix_.resize(weights.size());
  double acc = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    assert(weights[i] >= 0.0);
    acc += weights[i];
    prefix_[i] = acc;
  }
}

int CdfSampler::sample(RngStream& rng) const {
  double tot = total();
  if (tot <= 0.0) throw DegenerateWeights("cdf_sample: all weights are zero");
  double x = rng.uniform_open01() * tot;
  auto it = std::upper_bound(prefix_.begin(), prefix_.end(), x);
  if (it == prefix_.end()) --it;  // x landed on the total due to rounding
  return static_cast<int>(it - prefix_.begin());
}

int cdf_sample(std::span<const double> weights, RngStream& rng) {
  return CdfSampler(weights).sample(rng);
}

CdfTables build_cdf_tables(const Matrix& Q, const Matrix& dO) {
  assert(Q.rows() == dO.rows() && Q.cols() == dO.cols());
  const int n = Q.rows(), d = Q.cols();
  CdfTables tables;
  tables.n = n;
  tables.d = d;
  tables.sigma.reserve(d);
  for (int j = 0; j < d; ++j) {
    Matrix sig(n, d);
    for (int l = 0; l < n; ++l) {
      double q = Q(l, j);
      for (int t = 0; t < d; ++t) sig(l, t) = (l > 0 ? sig(l - 1, t) : 0.0) + q * dO(l, t);
    }
    tables.sigma.push_back(std::move(sig));
  }
  return tables;
}

double shifted_y_normalizer(const CdfTables& tables, std::span<const double> v_row, int j,
                            ShiftBound M) {
  return dot(v_row, tables.column_total(j)) + static_cast<double>(tables.n) * M.m;
}

int sample_shifted_y(const CdfTables& tables, std::span<const double> v_row, int j, ShiftBound M,
                     RngStream& rng) {
  const int n = tables.n;
  double norm = shifted_y_normalizer(tables, v_row, j, M);
  if (norm <= 0.0)
    throw DegenerateWeights("sample_shifted_y: non-positive normalizer (shift bound too small?)");

  double x = rng.uniform_open01() * norm;
  auto cum = [&](int l) {  // prefix mass through the first l entries, 1-based
    return static_cast<double>(l) * M.m + dot(v_row, tables.prefix(j, l));
  };
  // Smallest l with cum(l) > x; strict comparison skips zero-weight atoms.
  int lo = 1, hi = n;
  while (lo < hi) {
    int mid = lo + (hi - lo) / 2;
    if (cum(mid) > x)
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo - 1;
}

}  // namespace knnattn
