#pragma once

#include <functional>

#include "knnattn/matrix.hpp"

namespace knnattn {

/// A (Q, K, V) attention instance. Any 1/sqrt(d) scaling is expected to be
/// folded into K by the caller before construction.
struct AttentionProblem {
  Matrix Q;
  Matrix K;
  Matrix V;
  bool causal = false;

  int n() const { return Q.rows(); }
  int d() const { return Q.cols(); }
};

struct GradientSet {
  Matrix dQ;
  Matrix dK;
  Matrix dV;
};

namespace oracle {

/// Row-stochastic softmax of Q K^T, computed with per-row max subtraction.
/// Causal mode zeroes the strictly upper triangle (row 0 attends to key 0
/// only). O(n^2 d) time and space.
Matrix attention_weights(const AttentionProblem& p);

/// Exact attention output P V. O(n^2 d).
Matrix exact_attention(const AttentionProblem& p);

/// D^P_{ij} = <dO_{i,:}, V_{j,:}>, the n x n gradient of the loss with
/// respect to the attention weights.
Matrix exact_dp(const Matrix& dO, const Matrix& V);

/// Closed-form gradients, materializing P:
///   dV = P^T dO
///   dQ_{ij} = sum_k P_{ik} (D^P_{ik} - <D^P_{i,:}, P_{i,:}>) K_{kj}
///   dK_{ij} = sum_k P_{ki} (D^P_{ki} - <D^P_{k,:}, P_{k,:}>) Q_{kj}
GradientSet exact_gradients(const AttentionProblem& p, const Matrix& dO);

/// Entry-wise central-difference gradient of loss(exact_attention(.)) with
/// respect to each of Q, K, V.
GradientSet finite_diff_gradients(const AttentionProblem& p,
                                  const std::function<double(const Matrix&)>& loss,
                                  double h = 1e-5);

}  // namespace oracle
}  // namespace knnattn
