#include "knnattn/matrix.hpp"

#include "knnattn/rng.hpp"

namespace knnattn {

Matrix Matrix::random_uniform(int rows, int cols, double lo, double hi, RngStream& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

Matrix Matrix::random_normal(int rows, int cols, RngStream& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace knnattn
