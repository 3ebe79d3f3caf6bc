#include "knnattn/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_set>

#include "knnattn/errors.hpp"

namespace knnattn {

double gumbel_sample(RngStream& rng, const GumbelParams& params) {
  double u = rng.uniform_open01();
  return params.mu - params.beta * std::log(-std::log(u));
}

double gumbel_sample_conditional_above(RngStream& rng, double cutoff) {
  if (std::isinf(cutoff) && cutoff < 0.0) return gumbel_sample(rng);
  // U uniform on (F(cutoff), 1) with F(x) = exp(-exp(-x)); written through the
  // tail p = 1 - F(cutoff) so that -log(u) keeps precision when F is near 1.
  double tail = -std::expm1(-std::exp(-cutoff));
  double u = rng.uniform_open01();
  double neg_log_u = -std::log1p(-u * tail);
  return -std::log(neg_log_u);
}

long long binomial_sample(RngStream& rng, long long trials, double p) {
  if (trials <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return trials;
  std::binomial_distribution<long long> dist(trials, p);
  return dist(rng.engine());
}

std::vector<int> sample_k_distinct_excluding(RngStream& rng, int universe_size,
                                             const std::vector<int>& excluded, int m) {
  std::unordered_set<int> banned(excluded.begin(), excluded.end());
  long long available = universe_size - static_cast<long long>(banned.size());
  if (m > available)
    throw InsufficientPopulation("sample_k_distinct_excluding: m exceeds remaining population");
  if (m <= 0) return {};

  std::vector<int> out;
  out.reserve(m);
  if (2LL * m < available) {
    // Sparse draw: rejection against the banned + already-drawn sets.
    std::unordered_set<int> taken;
    std::uniform_int_distribution<int> pick(0, universe_size - 1);
    while (static_cast<int>(out.size()) < m) {
      int c = pick(rng.engine());
      if (banned.count(c) || !taken.insert(c).second) continue;
      out.push_back(c);
    }
  } else {
    // Dense draw: partial Fisher-Yates over the materialized complement.
    std::vector<int> pool;
    pool.reserve(available);
    for (int i = 0; i < universe_size; ++i)
      if (!banned.count(i)) pool.push_back(i);
    for (int t = 0; t < m; ++t) {
      std::uniform_int_distribution<int> pick(t, static_cast<int>(pool.size()) - 1);
      std::swap(pool[t], pool[pick(rng.engine())]);
      out.push_back(pool[t]);
    }
  }
  return out;
}

long long MoMConfig::total_samples() const {
  double r = mean_lower_bound ? variance_bound / (*mean_lower_bound * *mean_lower_bound)
                              : variance_bound;
  double k = (sample_constant / (epsilon * epsilon)) * std::log(2.0 / delta) * std::max(r, 1e-12);
  return std::max(1LL, static_cast<long long>(std::ceil(k)));
}

long long MoMConfig::group_count() const {
  return std::max(1LL, static_cast<long long>(std::ceil(group_factor * std::log(2.0 / delta))));
}

double median_of_means(const std::function<double(RngStream&)>& sampler, const MoMConfig& cfg,
                       RngStream& rng) {
  long long total = cfg.total_samples();
  long long groups = std::min(cfg.group_count(), total);
  long long per_group = (total + groups - 1) / groups;

  std::vector<double> means(groups);
  for (long long g = 0; g < groups; ++g) {
    double acc = 0.0;
    for (long long s = 0; s < per_group; ++s) acc += sampler(rng);
    means[g] = acc / static_cast<double>(per_group);
  }
  auto mid = means.begin() + groups / 2;
  std::nth_element(means.begin(), mid, means.end());
  if (groups % 2 == 1) return *mid;
  double hi = *mid;
  double lo = *std::max_element(means.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace knnattn
