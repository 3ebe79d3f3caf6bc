#include "knnattn/rng.hpp"
#include "knnattn/matrix.hpp"


namespace knnattn {
namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 make_engine(uint64_t seed, uint64_t stream_id) {
  // Four mixed words give the Mersenne twister a well-spread initial state.
  uint64_t a = splitmix64(seed);
  uint64_t b = splitmix64(a ^ splitmix64(stream_id));
  uint64_t c = splitmix64(b ^ 0xd1b54a32d192ed03ULL);
  uint64_t d = splitmix64(c ^ 0x2545f4914f6cdd1dULL);
  std::seed_seq seq{static_cast<uint32_t>(a), static_cast<uint32_t>(a >> 32),
                    static_cast<uint32_t>(b), static_cast<uint32_t>(b >> 32),
                    static_cast<uint32_t>(c), static_cast<uint32_t>(c >> 32),
                    static_cast<uint32_t>(d), static_cast<uint32_t>(d >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(uint64_t seed, uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

RngStream RngStream::substream(uint64_t id) const {
  return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(id + 0x9e3779b97f4a7c15ULL)));
}

double RngStream::uniform_open01() {
  // 53-bit mantissa draw; 0 is re-drawn, 1 is unreachable.
  for (;;) {
    double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    if (u > 0.0 && u < 1.0) return u;
  }
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform_open01(); }

double RngStream::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

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
