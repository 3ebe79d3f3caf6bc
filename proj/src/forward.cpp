#include "knnattn/forward.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "knnattn/core.hpp"
#include "knnattn/sampling.hpp"

namespace knnattn {
namespace {

std::unique_ptr<KnnIndex> build_index(const AttentionProblem& p, const ForwardConfig& cfg) {
  AugmentedKeys aug = augment_keys(p.K);
  if (cfg.index == IndexBackend::lsh) return build_lsh_index(std::move(aug), cfg.lsh);
  return build_exact_index(std::move(aug));
}

int effective_k(const ForwardConfig& cfg, int n) {
  int k = cfg.k > 0 ? cfg.k : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  return std::min(k, n);
}

}  // namespace

ApproxOutput knn_attention_mom(const AttentionProblem& p, const ForwardConfig& cfg) {
  const int n = p.n(), d = p.d();
  auto index = build_index(p, cfg);
  const int k = effective_k(cfg, n);
  const double v_inf = p.V.max_abs();

  ApproxOutput out;
  out.o_hat = Matrix(n, d);
  out.row_sample_counts.assign(n, 0);
  out.row_spill_totals.assign(n, 0);
  // Theorem-level analysis assumes ||V||_inf = O(log n); flag when violated.
  out.guarantee_void = v_inf > std::max(1.0, std::log(static_cast<double>(std::max(n, 2))));

  MoMConfig mom;
  mom.epsilon = cfg.epsilon;
  mom.delta = cfg.delta / (static_cast<double>(n) * d);  // union bound over entries
  mom.variance_bound = std::max(v_inf * v_inf, 1e-12);

  RngStream root(cfg.seed, 0);
  for (int i = 0; i < n; ++i) {
    int universe = p.causal ? i + 1 : n;
    int ki = std::min(k, universe);
    std::vector<double> q(p.Q.row(i).begin(), p.Q.row(i).end());
    TopKSet top = build_top_k_set(*index, p.K, q, ki, i, universe);
    SoftmaxRowSampler sampler(p.K, q, std::move(top), universe, cfg.cutoff_slack);

    RngStream row_rng = root.substream(static_cast<uint64_t>(i));
    for (int j = 0; j < d; ++j) {
      RngStream entry_rng = row_rng.substream(static_cast<uint64_t>(j));
      long long draws = 0, spills = 0;
      auto draw_value = [&](RngStream& r) {
        auto [idx, m] = sampler.sample_with_spill(r);
        ++draws;
        spills += m;
        return p.V(idx, j);
      };
      out.o_hat(i, j) = median_of_means(draw_value, mom, entry_rng);
      out.row_sample_counts[i] += draws;
      out.row_spill_totals[i] += spills;
    }
  }
  return out;
}

ApproxOutput knn_attention_weighted(const AttentionProblem& p, const ForwardConfig& cfg) {
  const int n = p.n(), d = p.d();
  auto index = build_index(p, cfg);
  const int k = effective_k(cfg, n);

  ApproxOutput out;
  out.o_hat = Matrix(n, d);
  out.row_sample_counts.assign(n, 0);
  out.row_spill_totals.assign(n, 0);

  RngStream root(cfg.seed, 1);
  std::vector<double> num(d);
  for (int i = 0; i < n; ++i) {
    int universe = p.causal ? i + 1 : n;
    int ki = std::min(k, universe);
    int ell = std::min(cfg.ell, universe - ki);
    std::vector<double> q(p.Q.row(i).begin(), p.Q.row(i).end());
    TopKSet top = build_top_k_set(*index, p.K, q, ki, i, universe);

    std::vector<int> spill;
    if (ell > 0) {
      RngStream row_rng = root.substream(static_cast<uint64_t>(i));
      spill = sample_k_distinct_excluding(row_rng, universe, top.indices, ell);
    }
    out.row_sample_counts[i] = ki + ell;
    out.row_spill_totals[i] = ell;

    std::vector<double> spill_scores(spill.size());
    double score_max = *std::max_element(top.scores.begin(), top.scores.end());
    for (size_t t = 0; t < spill.size(); ++t) {
      spill_scores[t] = dot(q, p.K.row(spill[t]));
      score_max = std::max(score_max, spill_scores[t]);
    }

    double denom = 0.0;
    std::fill(num.begin(), num.end(), 0.0);
    for (size_t t = 0; t < top.indices.size(); ++t) {
      double w = std::exp(top.scores[t] - score_max);
      denom += w;
      auto v = p.V.row(top.indices[t]);
      for (int j = 0; j < d; ++j) num[j] += w * v[j];
    }
    if (ell > 0) {
      double up = static_cast<double>(universe - ki) / static_cast<double>(ell);
      for (size_t t = 0; t < spill.size(); ++t) {
        double w = up * std::exp(spill_scores[t] - score_max);
        denom += w;
        auto v = p.V.row(spill[t]);
        for (int j = 0; j < d; ++j) num[j] += w * v[j];
      }
    }
    for (int j = 0; j < d; ++j) out.o_hat(i, j) = num[j] / denom;
  }
  return out;
}

std::pair<int, int> choose_parameters(int n, double epsilon, double delta) {
  assert(epsilon > 0.0 && delta > 0.0 && delta < 1.0);
  const double nn = static_cast<double>(n);
  const double c1 = 8.0 * nn * nn / (epsilon * epsilon) * std::log(4.0 / delta);
  const double c2 = 2.0 * nn / (epsilon * epsilon) * std::log(2.0 / delta);
  // k = ell: conditions reduce to k^3 >= c1 and k^2 >= c2.
  double k_real = std::max(std::cbrt(c1), std::sqrt(c2));
  int k = static_cast<int>(std::ceil(k_real));
  if (k >= n) return {n, 0};
  return {k, k};
}

}  // namespace knnattn
