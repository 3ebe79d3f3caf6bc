#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "knnattn/bench.hpp"
#include "knnattn/errors.hpp"

using namespace knnattn;

namespace {

ExperimentSpec small_error_spec() {
  ExperimentSpec spec;
  spec.experiment = "error-vs-k";
  spec.n_list = {32};
  spec.d = 3;
  spec.b_list = {1.0};
  spec.k_list = {4, 32};
  spec.seeds = {5};
  return spec;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("spec validation catches malformed requests") {
  ExperimentSpec bad = small_error_spec();
  bad.experiment = "nonsense";
  CHECK_THROWS_AS(validate_spec(bad), InvalidSpec);
  bad = small_error_spec();
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(validate_spec(bad), InvalidSpec);
  bad = small_error_spec();
  bad.seeds.clear();
  CHECK_THROWS_AS(validate_spec(bad), InvalidSpec);
  bad = small_error_spec();
  bad.loss = "hinge";
  CHECK_THROWS_AS(validate_spec(bad), InvalidSpec);
  CHECK_NOTHROW(validate_spec(small_error_spec()));
}

TEST_CASE("k = n rows report near-zero error") {
  auto rows = run_error_vs_k(small_error_spec());
  bool saw_full = false;
  for (const auto& r : rows)
    if (r.k == 32 && r.metric == "max_abs_err") {
      saw_full = true;
      CHECK(r.value <= 1e-10);
    }
  CHECK(saw_full);
}

TEST_CASE("B = 0 inputs give exactly zero error") {
  ExperimentSpec spec = small_error_spec();
  spec.b_list = {0.0};
  for (const auto& r : run_error_vs_k(spec)) CHECK(r.value <= 1e-10);
}

TEST_CASE("exact path refuses n beyond the oracle cap") {
  ExperimentSpec spec = small_error_spec();
  spec.n_list = {64};
  spec.oracle_cap = 32;
  CHECK_THROWS_AS(run_error_vs_k(spec), OracleTooLarge);
}

TEST_CASE("identical specs produce byte-identical tables") {
  ExperimentSpec spec = small_error_spec();
  auto a = run_error_vs_k(spec);
  auto b = run_error_vs_k(spec);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(format_row(a[i]) == format_row(b[i]));
}

TEST_CASE("csv output is append-only with a single header") {
  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "knnattn_bench_test.csv";
  fs::remove(path);
  auto rows = run_error_vs_k(small_error_spec());
  write_rows(path.string(), rows);
  std::string first = slurp(path.string());
  write_rows(path.string(), rows);
  std::string second = slurp(path.string());
  CHECK(second.substr(0, first.size()) == first);  // never mutates earlier content
  CHECK(second.find(kCsvHeader) == second.rfind(kCsvHeader));
  CHECK(first.substr(0, std::string(kCsvHeader).size()) == kCsvHeader);
  fs::remove(path);
}

TEST_CASE("runtime experiment emits timings for both paths under the cap") {
  ExperimentSpec spec;
  spec.experiment = "runtime-vs-n";
  spec.n_list = {64, 128};
  spec.d = 4;
  spec.seeds = {3};
  auto rows = run_runtime_vs_n(spec);
  int weighted = 0, exact = 0;
  for (const auto& r : rows) {
    if (r.metric == "wall_ms_weighted") ++weighted;
    if (r.metric == "wall_ms_exact") ++exact;
    CHECK(r.value >= 0.0);
  }
  CHECK(weighted == 2);
  CHECK(exact == 2);
}

TEST_CASE("log-log slope of a quadratic is two") {
  std::vector<double> ns{1024, 2048, 4096};
  std::vector<double> vals;
  for (double n : ns) vals.push_back(3.0 * n * n);
  CHECK(log_log_slope(ns, vals) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("grad-bounds emits fractions in range") {
  ExperimentSpec spec;
  spec.experiment = "grad-bounds";
  spec.n_list = {24};
  spec.d = 3;
  spec.b_list = {0.5};
  spec.seeds = {11};
  auto rows = run_grad_bounds(spec);
  CHECK(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.value >= 0.0);
    CHECK(r.value <= 1.0);
  }
}

TEST_CASE("zero learning rate freezes the loss") {
  ExperimentSpec spec;
  spec.experiment = "grad-descent";
  spec.n_list = {16};
  spec.d = 3;
  spec.lr_list = {0.0};
  spec.iterations = 5;
  spec.seeds = {2};
  auto rows = run_grad_descent(spec);
  double first = -1.0;
  for (const auto& r : rows) {
    if (r.metric != "loss_exact") continue;
    if (first < 0) first = r.value;
    CHECK(r.value == first);
  }
}

TEST_CASE("exact-gradient descent on MSE is monotone for small rates") {
  ExperimentSpec spec;
  spec.experiment = "grad-descent";
  spec.n_list = {16};
  spec.d = 3;
  spec.lr_list = {0.05};
  spec.iterations = 30;
  spec.seeds = {4};
  auto rows = run_grad_descent(spec);
  double prev = 1e300;
  for (const auto& r : rows) {
    if (r.metric != "loss_exact") continue;
    CHECK(r.value <= prev + 1e-12);
    prev = r.value;
  }
}

TEST_CASE("run_experiment dispatches and rejects unknown tags") {
  auto rows = run_experiment(small_error_spec());
  CHECK(!rows.empty());
  ExperimentSpec bad = small_error_spec();
  bad.experiment = "mystery";
  CHECK_THROWS_AS(run_experiment(bad), InvalidSpec);
}
