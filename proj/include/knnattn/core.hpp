#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "knnattn/rng.hpp"

namespace knnattn {

/// Location/scale parameters of a Gumbel distribution; beta must be positive.
struct GumbelParams {
  double mu = 0.0;
  double beta = 1.0;
};

/// Euler-Mascheroni constant, the mean of a standard Gumbel variate.
inline constexpr double kEulerGamma = 0.57721566490153286;

/// Inverse-CDF Gumbel draw: mu - beta * ln(-ln(U)), U uniform on (0,1).
double gumbel_sample(RngStream& rng, const GumbelParams& params = {});

/// Gumbel(0,1) draw conditioned to exceed `cutoff`. A cutoff of -infinity
/// degenerates to an unconditional draw.
double gumbel_sample_conditional_above(RngStream& rng, double cutoff);

/// Exact Binomial(trials, p) draw. p outside [0,1] is clamped.
long long binomial_sample(RngStream& rng, long long trials, double p);

/// m distinct indices drawn uniformly from [0, universe_size) minus
/// `excluded`. Throws InsufficientPopulation if fewer than m candidates
/// remain. Rejection sampling when the draw is sparse, partial Fisher-Yates
/// over the materialized complement otherwise.
std::vector<int> sample_k_distinct_excluding(RngStream& rng, int universe_size,
                                             const std::vector<int>& excluded, int m);

/// Configuration of the median-of-means boosting combinator.
///
/// Total sample count is ceil((C / epsilon^2) * ln(2/delta) * r) where
/// r = variance_bound / mean_lower_bound^2 in multiplicative mode and
/// r = variance_bound in additive mode. Samples are split into
/// ceil(group_factor * ln(2/delta)) groups and the median group mean is
/// returned.
struct MoMConfig {
  double epsilon = 0.1;
  double delta = 0.1;
  double variance_bound = 1.0;
  /// Present: multiplicative mode. Absent: additive mode.
  std::optional<double> mean_lower_bound;
  double sample_constant = 4.0;  // the universal constant C
  double group_factor = 8.0;

  long long total_samples() const;
  long long group_count() const;
};

/// Median of group means over fresh draws from `sampler`.
double median_of_means(const std::function<double(RngStream&)>& sampler, const MoMConfig& cfg,
                       RngStream& rng);

}  // namespace knnattn
