#pragma once

// Small statistical helpers shared by the test suites.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline std::vector<double> normalize(std::vector<double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

inline std::vector<double> histogram_freq(std::span<const int> draws, int n) {
  std::vector<double> f(n, 0.0);
  for (int d : draws) f[d] += 1.0;
  for (double& v : f) v /= static_cast<double>(draws.size());
  return f;
}

inline double chi_square_stat(std::span<const long long> counts, std::span<const double> probs,
                              long long total) {
  double stat = 0.0;
  for (size_t i = 0; i < counts.size(); ++i) {
    double expected = probs[i] * static_cast<double>(total);
    double diff = static_cast<double>(counts[i]) - expected;
    stat += diff * diff / expected;
  }
  return stat;
}

// Kolmogorov-Smirnov statistic of sorted samples against a CDF.
template <typename Cdf>
double ks_stat(std::vector<double> samples, Cdf cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) {
    double f = cdf(samples[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(f - static_cast<double>(i + 1) / n));
  }
  return d;
}
