#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knnattn/forward.hpp"
#include "knnattn/matrix.hpp"
#include "knnattn/oracle.hpp"

namespace knnattn {

/// One experiment request as assembled from CLI flags.
struct ExperimentSpec {
  std::string experiment;  // error-vs-k | runtime-vs-n | grad-bounds | grad-descent
  std::vector<int> n_list{256};
  int d = 8;
  std::vector<double> b_list{1.0};  // inputs uniform on [-B, B]
  std::vector<int> k_list;          // empty -> per-experiment default
  double epsilon = 0.1;
  double delta = 0.1;
  std::vector<double> lr_list{0.1};
  std::string loss = "mse";  // mse | cross-entropy
  std::vector<uint64_t> seeds{1};
  int reps = 1;
  int iterations = 200;  // grad-descent only
  std::string out_path;
  bool causal = false;
  IndexBackend index = IndexBackend::exact;
  ForwardEstimator estimator = ForwardEstimator::weighted;
  bool prefold_scale = true;  // fold 1/sqrt(d) into K at generation time
  int oracle_cap = 4096;
};

/// One CSV row: experiment,n,d,B,k,l,epsilon,delta,lr,loss,seed,rep,metric,value,wall_ms
struct ResultRow {
  std::string experiment;
  int n = 0;
  int d = 0;
  double b = 0.0;
  int k = 0;
  int l = 0;
  double epsilon = 0.0;
  double delta = 0.0;
  double lr = 0.0;
  std::string loss;
  uint64_t seed = 0;
  int rep = 0;
  std::string metric;
  double value = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kCsvHeader =
    "experiment,n,d,B,k,l,epsilon,delta,lr,loss,seed,rep,metric,value,wall_ms";

std::string format_row(const ResultRow& row);

/// Appends rows to `path`, writing the header first when the file is new or
/// empty. Existing rows are never rewritten.
void write_rows(const std::string& path, const std::vector<ResultRow>& rows);

/// Throws InvalidSpec on structural problems (empty lists, bad tags, eps <= 0).
void validate_spec(const ExperimentSpec& spec);

/// Random problem with uniform [-B, B] entries (normal = false) or standard
/// normal entries; prefold scales K by 1/sqrt(d).
AttentionProblem make_problem(int n, int d, double b, uint64_t seed, bool normal, bool prefold,
                              bool causal);

/// Guarded exact oracle: throws OracleTooLarge when n exceeds cap.
Matrix exact_attention_capped(const AttentionProblem& p, int cap);

std::vector<ResultRow> run_error_vs_k(const ExperimentSpec& spec);
std::vector<ResultRow> run_runtime_vs_n(const ExperimentSpec& spec);
std::vector<ResultRow> run_grad_bounds(const ExperimentSpec& spec);
std::vector<ResultRow> run_grad_descent(const ExperimentSpec& spec);

/// Dispatch on spec.experiment, validate, run, append to spec.out_path when
/// it is non-empty, and return the rows.
std::vector<ResultRow> run_experiment(const ExperimentSpec& spec);

/// Least-squares slope of log2(value) against log2(n) — the scaling exponent
/// read off a runtime table.
double log_log_slope(const std::vector<double>& ns, const std::vector<double>& values);

}  // namespace knnattn
