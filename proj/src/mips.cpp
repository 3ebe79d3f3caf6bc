#include "knnattn/mips.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <unordered_map>

#include "knnattn/rng.hpp"

namespace knnattn {
namespace {

/// Top-k of `candidates` by inner product against q_aug, descending with
/// lower-index tie break.
std::vector<int> rerank_topk(const AugmentedKeys& keys, std::span<const double> q_aug,
                             std::vector<int> candidates, int k) {
  std::vector<std::pair<double, int>> scored;
  scored.reserve(candidates.size());
  for (int j : candidates) scored.emplace_back(dot(q_aug, keys.k_aug.row(j)), j);
  auto better = [](const std::pair<double, int>& a, const std::pair<double, int>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  int take = std::min<int>(k, static_cast<int>(scored.size()));
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), better);
  std::vector<int> out;
  out.reserve(take);
  for (int t = 0; t < take; ++t) out.push_back(scored[t].second);
  return out;
}

class ExactTopKIndex final : public KnnIndex {
 public:
  explicit ExactTopKIndex(AugmentedKeys keys) : KnnIndex(std::move(keys)) {}

  std::vector<int> query(std::span<const double> q_aug, int k, int limit) const override {
    int n = size();
    int cap = (limit > 0 && limit < n) ? limit : n;
    std::vector<int> all(cap);
    for (int j = 0; j < cap; ++j) all[j] = j;
    return rerank_topk(keys_, q_aug, std::move(all), k);
  }
};

class LshIndex final : public KnnIndex {
 public:
  LshIndex(AugmentedKeys keys, const LshParams& params)
      : KnnIndex(std::move(keys)), params_(params) {
    const int n = size();
    const int dim = keys_.k_aug.cols();
    RngStream rng(params.seed, 0x15b3c0de);
    hyperplanes_.assign(static_cast<size_t>(params.num_tables) * params.hash_bits * dim, 0.0);
    for (double& v : hyperplanes_) v = rng.normal();
    tables_.resize(params.num_tables);
    for (int j = 0; j < n; ++j) {
      auto row = keys_.k_aug.row(j);
      for (int t = 0; t < params.num_tables; ++t) tables_[t][hash_code(t, row)].push_back(j);
    }
  }

  std::vector<int> query(std::span<const double> q_aug, int k, int limit) const override {
    int n = size();
    int cap = (limit > 0 && limit < n) ? limit : n;
    std::vector<int> candidates;
    for (int t = 0; t < params_.num_tables; ++t) {
      auto it = tables_[t].find(hash_code(t, q_aug));
      if (it == tables_[t].end()) continue;
      for (int j : it->second)
        if (j < cap) candidates.push_back(j);
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    if (static_cast<int>(candidates.size()) < std::min(k, cap)) {
      candidates.resize(cap);
      for (int j = 0; j < cap; ++j) candidates[j] = j;
    }
    return rerank_topk(keys_, q_aug, std::move(candidates), k);
  }

 private:
  uint64_t hash_code(int table, std::span<const double> v) const {
    const int dim = static_cast<int>(v.size());
    uint64_t code = 0;
    const double* h =
        hyperplanes_.data() + static_cast<size_t>(table) * params_.hash_bits * dim;
    for (int b = 0; b < params_.hash_bits; ++b, h += dim) {
      double s = 0.0;
      for (int t = 0; t < dim; ++t) s += h[t] * v[t];
      code = (code << 1) | (s >= 0.0 ? 1u : 0u);
    }
    return code;
  }

  LshParams params_;
  std::vector<double> hyperplanes_;
  std::vector<std::unordered_map<uint64_t, std::vector<int>>> tables_;
};

}  // namespace

AugmentedKeys augment_keys(const Matrix& K) {
  const int n = K.rows(), d = K.cols();
  double m_norm = 0.0;
  std::vector<double> sq(n);
  for (int j = 0; j < n; ++j) {
    sq[j] = dot(K.row(j), K.row(j));
    m_norm = std::max(m_norm, sq[j]);
  }
  Matrix aug(n, d + 1);
  for (int j = 0; j < n; ++j) {
    for (int t = 0; t < d; ++t) aug(j, t) = K(j, t);
    aug(j, d) = std::sqrt(std::max(0.0, m_norm - sq[j]));
  }
  return {std::move(aug), m_norm};
}

std::vector<double> augment_query(std::span<const double> q) {
  std::vector<double> out(q.begin(), q.end());
  out.push_back(0.0);
  return out;
}

std::unique_ptr<KnnIndex> build_exact_index(AugmentedKeys aug) {
  return std::make_unique<ExactTopKIndex>(std::move(aug));
}

std::unique_ptr<KnnIndex> build_lsh_index(AugmentedKeys aug, const LshParams& params) {
  assert(params.num_tables >= 1 && params.hash_bits >= 1);
  return std::make_unique<LshIndex>(std::move(aug), params);
}

}  // namespace knnattn
