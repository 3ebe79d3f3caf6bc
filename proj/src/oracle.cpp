#include "knnattn/oracle.hpp"

#include <cassert>
#include <cmath>
#include <limits>

namespace knnattn::oracle {

Matrix attention_weights(const AttentionProblem& p) {
  const int n = p.n();
  Matrix scores(n, n);
  for (int i = 0; i < n; ++i) {
    int limit = p.causal ? i + 1 : n;
    double row_max = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < limit; ++j) {
      scores(i, j) = dot(p.Q.row(i), p.K.row(j));
      row_max = std::max(row_max, scores(i, j));
    }
    double denom = 0.0;
    for (int j = 0; j < limit; ++j) {
      scores(i, j) = std::exp(scores(i, j) - row_max);
      denom += scores(i, j);
    }
    for (int j = 0; j < limit; ++j) scores(i, j) /= denom;
    for (int j = limit; j < n; ++j) scores(i, j) = 0.0;
  }
  return scores;
}

Matrix exact_attention(const AttentionProblem& p) {
  assert(p.Q.rows() == p.K.rows() && p.K.rows() == p.V.rows());
  assert(p.Q.cols() == p.K.cols() && p.K.cols() == p.V.cols());
  Matrix P = attention_weights(p);
  const int n = p.n(), d = p.d();
  Matrix out(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double w = P(i, k);
      if (w == 0.0) continue;
      for (int j = 0; j < d; ++j) out(i, j) += w * p.V(k, j);
    }
  return out;
}

Matrix exact_dp(const Matrix& dO, const Matrix& V) {
  assert(dO.cols() == V.cols());
  const int n = dO.rows(), m = V.rows();
  Matrix dp(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) dp(i, j) = dot(dO.row(i), V.row(j));
  return dp;
}

GradientSet exact_gradients(const AttentionProblem& p, const Matrix& dO) {
  const int n = p.n(), d = p.d();
  Matrix P = attention_weights(p);
  Matrix DP = exact_dp(dO, p.V);

  GradientSet g{Matrix(n, d), Matrix(n, d), Matrix(n, d)};

  // dV = P^T dO
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i) {
      double w = P(i, k);
      if (w == 0.0) continue;
      for (int j = 0; j < d; ++j) g.dV(k, j) += w * dO(i, j);
    }

  // dS_{ik} = P_{ik} (D^P_{ik} - <D^P_{i,:}, P_{i,:}>), then chain into Q, K.
  std::vector<double> row_inner(n);
  for (int i = 0; i < n; ++i) row_inner[i] = dot(DP.row(i), P.row(i));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double ds = P(i, k) * (DP(i, k) - row_inner[i]);
      if (ds == 0.0) continue;
      for (int j = 0; j < d; ++j) {
        g.dQ(i, j) += ds * p.K(k, j);
        g.dK(k, j) += ds * p.Q(i, j);
      }
    }
  return g;
}

GradientSet finite_diff_gradients(const AttentionProblem& p,
                                  const std::function<double(const Matrix&)>& loss, double h) {
  assert(h > 0.0);
  const int n = p.n(), d = p.d();
  GradientSet g{Matrix(n, d), Matrix(n, d), Matrix(n, d)};
  AttentionProblem work = p;

  auto central = [&](Matrix& target, Matrix& grad) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        double saved = target(i, j);
        target(i, j) = saved + h;
        double up = loss(exact_attention(work));
        target(i, j) = saved - h;
        double down = loss(exact_attention(work));
        target(i, j) = saved;
        grad(i, j) = (up - down) / (2.0 * h);
      }
  };
  central(work.Q, g.dQ);
  central(work.K, g.dK);
  central(work.V, g.dV);
  return g;
}

}  // namespace knnattn::oracle
