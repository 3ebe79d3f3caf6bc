#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "knnattn/matrix.hpp"

namespace knnattn {

/// Keys lifted to d+1 dimensions so that every row has squared norm M_norm:
/// row j becomes [k_j, sqrt(M_norm - ||k_j||^2)]. Inner products against
/// zero-padded queries are preserved exactly.
struct AugmentedKeys {
  Matrix k_aug;   // n x (d+1)
  double m_norm;  // max_j ||k_j||^2
};

AugmentedKeys augment_keys(const Matrix& K);

/// [q, 0] in d+1 dimensions.
std::vector<double> augment_query(std::span<const double> q);

/// Immutable top-k inner-product index over a snapshot of augmented keys.
/// Queries never return duplicates; results are sorted by true inner product
/// descending with ties broken toward the lower index. `limit` restricts the
/// candidate set to indices < limit (causal masking); pass a non-positive
/// value for the full set.
class KnnIndex {
 public:
  virtual ~KnnIndex() = default;
  virtual std::vector<int> query(std::span<const double> q_aug, int k, int limit = 0) const = 0;
  int size() const { return keys_.k_aug.rows(); }
  const AugmentedKeys& keys() const { return keys_; }

 protected:
  explicit KnnIndex(AugmentedKeys keys) : keys_(std::move(keys)) {}
  AugmentedKeys keys_;
};

struct LshParams {
  int num_tables = 8;
  int hash_bits = 4;
  uint64_t seed = 0;
};

/// Exact backend: O(n) partial-select scan per query.
std::unique_ptr<KnnIndex> build_exact_index(AugmentedKeys aug);

/// Multi-table random-hyperplane LSH over the norm-equalized keys. Candidate
/// buckets are unioned and exactly re-ranked by true inner product; a query
/// falls back to the exact scan when fewer than k candidates surface.
std::unique_ptr<KnnIndex> build_lsh_index(AugmentedKeys aug, const LshParams& params);

inline std::vector<int> query_topk(const KnnIndex& index, std::span<const double> q_aug, int k,
                                   int limit = 0) {
  return index.query(q_aug, k, limit);
}

}  // namespace knnattn
