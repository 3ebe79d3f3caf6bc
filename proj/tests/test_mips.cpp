#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "knnattn/mips.hpp"
#include "knnattn/rng.hpp"

using namespace knnattn;

namespace {

// Full-sort oracle with the same descending-score / lower-index tie-break.
std::vector<int> topk_by_full_sort(const Matrix& K, std::span<const double> q, int k) {
  std::vector<std::pair<double, int>> scored;
  for (int j = 0; j < K.rows(); ++j) scored.emplace_back(dot(q, K.row(j)), j);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> out;
  for (int t = 0; t < std::min<int>(k, scored.size()); ++t) out.push_back(scored[t].second);
  return out;
}

}  // namespace

TEST_CASE("augmentation pads the max-norm row with zero") {
  Matrix K(2, 2);
  K(0, 0) = 3;
  K(0, 1) = 4;  // norm^2 = 25, the max
  K(1, 0) = 1;
  K(1, 1) = 0;
  AugmentedKeys aug = augment_keys(K);
  CHECK(aug.m_norm == doctest::Approx(25.0));
  CHECK(aug.k_aug(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("zero key gets the full norm budget") {
  Matrix K(2, 2);
  K(0, 0) = 2;  // norm^2 = 4
  AugmentedKeys aug = augment_keys(K);
  CHECK(aug.m_norm == doctest::Approx(4.0));
  CHECK(aug.k_aug(1, 0) == 0.0);
  CHECK(aug.k_aug(1, 1) == 0.0);
  CHECK(aug.k_aug(1, 2) == doctest::Approx(2.0));
}

TEST_CASE("augmentation preserves inner products and equalizes norms") {
  RngStream rng(40, 0);
  Matrix K = Matrix::random_uniform(50, 8, -2, 2, rng);
  AugmentedKeys aug = augment_keys(K);
  Matrix q = Matrix::random_uniform(1, 8, -2, 2, rng);
  std::vector<double> qa = augment_query(q.row(0));
  CHECK(qa.size() == 9);
  for (int j = 0; j < 50; ++j) {
    CHECK(dot(qa, aug.k_aug.row(j)) == doctest::Approx(dot(q.row(0), K.row(j))).epsilon(1e-12));
    CHECK(dot(aug.k_aug.row(j), aug.k_aug.row(j)) == doctest::Approx(aug.m_norm).epsilon(1e-9));
    CHECK(aug.k_aug(j, 8) >= 0.0);
  }
}

TEST_CASE("query augmentation basics") {
  std::vector<double> zero(3, 0.0);
  auto za = augment_query(zero);
  CHECK(za == std::vector<double>{0, 0, 0, 0});
  std::vector<double> e1{1, 0, 0};
  CHECK(augment_query(e1) == std::vector<double>{1, 0, 0, 0});
  std::vector<double> q{0.3, -0.7, 2.0};
  auto qa = augment_query(q);
  CHECK(dot(qa, qa) == doctest::Approx(dot(std::span<const double>(q), q)));
}

TEST_CASE("exact index on a single key") {
  Matrix K(1, 2);
  K(0, 0) = 1;
  auto idx = build_exact_index(augment_keys(K));
  std::vector<double> q{0.5, 0.5, 0.0};
  CHECK(idx->query(q, 3) == std::vector<int>{0});
}

TEST_CASE("exact index ranks the aligned basis key first") {
  Matrix K(3, 3);
  K(0, 1) = 2;
  K(1, 0) = 3;  // aligned with e_1 and largest
  K(2, 2) = 1;
  auto idx = build_exact_index(augment_keys(K));
  std::vector<double> q{1, 0, 0};
  auto got = idx->query(augment_query(q), 1);
  CHECK(got == std::vector<int>{1});
}

TEST_CASE("exact index equals the full-sort oracle") {
  RngStream rng(41, 0);
  Matrix K = Matrix::random_uniform(200, 6, -1, 1, rng);
  auto idx = build_exact_index(augment_keys(K));
  for (int rep = 0; rep < 10; ++rep) {
    Matrix q = Matrix::random_uniform(1, 6, -1, 1, rng);
    auto got = idx->query(augment_query(q.row(0)), 14);
    CHECK(got == topk_by_full_sort(K, q.row(0), 14));
  }
}

TEST_CASE("k >= n returns all indices sorted by inner product") {
  RngStream rng(42, 0);
  Matrix K = Matrix::random_uniform(12, 3, -1, 1, rng);
  auto idx = build_exact_index(augment_keys(K));
  Matrix q = Matrix::random_uniform(1, 3, -1, 1, rng);
  auto got = idx->query(augment_query(q.row(0)), 50);
  CHECK(got == topk_by_full_sort(K, q.row(0), 12));
  std::set<int> s(got.begin(), got.end());
  CHECK(s.size() == 12);
}

TEST_CASE("ties break toward the lower index") {
  Matrix K(6, 2);
  for (int i = 0; i < 6; ++i) K(i, 0) = 1.0;  // all keys identical
  auto idx = build_exact_index(augment_keys(K));
  std::vector<double> q{1, 0, 0};
  CHECK(idx->query(q, 3) == std::vector<int>{0, 1, 2});
}

TEST_CASE("returned scores dominate excluded scores") {
  RngStream rng(43, 0);
  Matrix K = Matrix::random_uniform(100, 4, -1, 1, rng);
  auto idx = build_exact_index(augment_keys(K));
  Matrix q = Matrix::random_uniform(1, 4, -1, 1, rng);
  auto qa = augment_query(q.row(0));
  auto got = idx->query(qa, 10);
  std::set<int> in(got.begin(), got.end());
  double min_in = 1e300, max_out = -1e300;
  for (int j = 0; j < 100; ++j) {
    double s = dot(q.row(0), K.row(j));
    if (in.count(j)) min_in = std::min(min_in, s);
    else max_out = std::max(max_out, s);
  }
  CHECK(min_in >= max_out);
}

TEST_CASE("causal limit restricts candidates to the prefix") {
  RngStream rng(44, 0);
  Matrix K = Matrix::random_uniform(30, 4, -1, 1, rng);
  auto idx = build_exact_index(augment_keys(K));
  Matrix q = Matrix::random_uniform(1, 4, -1, 1, rng);
  auto got = idx->query(augment_query(q.row(0)), 5, 7);
  CHECK(got.size() == 5);
  for (int j : got) CHECK(j < 7);
}

TEST_CASE("saturated lsh recalls the true top-k") {
  RngStream rng(45, 0);
  Matrix K = Matrix::random_uniform(16, 4, -1, 1, rng);
  LshParams params;
  params.hash_bits = 1;
  params.num_tables = 32;
  params.seed = 5;
  auto lsh = build_lsh_index(augment_keys(K), params);
  auto exact = build_exact_index(augment_keys(K));
  int hits = 0, total = 0;
  for (int rep = 0; rep < 20; ++rep) {
    Matrix q = Matrix::random_uniform(1, 4, -1, 1, rng);
    auto qa = augment_query(q.row(0));
    auto truth = exact->query(qa, 4);
    auto got = lsh->query(qa, 4);
    std::set<int> s(got.begin(), got.end());
    CHECK(s.size() == got.size());  // no duplicates
    for (int t : truth) {
      ++total;
      hits += s.count(t);
    }
  }
  CHECK(static_cast<double>(hits) / total >= 0.95);
}

TEST_CASE("lsh on a single key") {
  Matrix K(1, 3);
  K(0, 1) = 1;
  LshParams params;
  auto lsh = build_lsh_index(augment_keys(K), params);
  std::vector<double> q{0, 1, 0, 0};
  CHECK(lsh->query(q, 2) == std::vector<int>{0});
}

TEST_CASE("lsh keeps cluster queries inside the cluster") {
  RngStream rng(46, 0);
  const int n = 100, d = 6, half = 50;
  Matrix K(n, d);
  for (int i = 0; i < n; ++i) {
    double center = i < half ? 10.0 : -10.0;
    for (int j = 0; j < d; ++j) K(i, j) = center + rng.uniform(-0.5, 0.5);
  }
  LshParams params;
  params.hash_bits = 2;
  params.num_tables = 16;
  params.seed = 9;
  auto lsh = build_lsh_index(augment_keys(K), params);
  auto exact = build_exact_index(augment_keys(K));
  int hits = 0, total = 0, same_cluster = 0, returned = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> q(d);
    for (double& v : q) v = 10.0 + rng.uniform(-0.5, 0.5);
    auto qa = augment_query(q);
    auto truth = exact->query(qa, 10);
    auto got = lsh->query(qa, 10);
    std::set<int> s(got.begin(), got.end());
    for (int t : truth) {
      ++total;
      hits += s.count(t);
    }
    for (int g : got) {
      ++returned;
      same_cluster += g < half;
    }
    // re-ranked: sorted by true inner product, descending
    for (size_t t = 1; t < got.size(); ++t)
      CHECK(dot(qa, lsh->keys().k_aug.row(got[t - 1])) >=
            dot(qa, lsh->keys().k_aug.row(got[t])) - 1e-12);
  }
  CHECK(static_cast<double>(hits) / total >= 0.9);
  CHECK(same_cluster == returned);
}
