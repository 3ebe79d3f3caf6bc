#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "knnattn/bench.hpp"
#include "knnattn/errors.hpp"

using knnattn::ExperimentSpec;

namespace {

void add_common_flags(CLI::App* cmd, ExperimentSpec& spec, std::string& index_name,
                      std::string& estimator_name) {
  cmd->add_option("--n", spec.n_list, "sequence lengths");
  cmd->add_option("--d", spec.d, "head dimension");
  cmd->add_option("--B", spec.b_list, "input range half-widths (uniform on [-B, B])");
  cmd->add_option("--k", spec.k_list, "top-k sizes");
  cmd->add_option("--epsilon", spec.epsilon, "accuracy parameter");
  cmd->add_option("--delta", spec.delta, "failure probability");
  cmd->add_option("--lr", spec.lr_list, "learning rates");
  cmd->add_option("--loss", spec.loss, "loss: mse | cross-entropy");
  cmd->add_option("--seeds", spec.seeds, "rng seeds");
  cmd->add_option("--reps", spec.reps, "repetitions per parameter point");
  cmd->add_option("--iters", spec.iterations, "gradient-descent iterations");
  cmd->add_option("--out", spec.out_path, "output CSV path (appended)");
  cmd->add_flag("--causal", spec.causal, "causal masking");
  cmd->add_option("--index", index_name, "index backend: exact | lsh")
      ->check(CLI::IsMember({"exact", "lsh"}));
  cmd->add_option("--estimator", estimator_name, "forward estimator: mom | weighted")
      ->check(CLI::IsMember({"mom", "weighted"}));
  cmd->add_flag("--no-prefold-scale", [&spec](int64_t) { spec.prefold_scale = false; },
                "skip folding 1/sqrt(d) into K");
  cmd->add_option("--oracle-cap", spec.oracle_cap, "max n for exact O(n^2) comparisons");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sub-quadratic attention benchmark runner"};
  app.require_subcommand(1);

  ExperimentSpec spec;
  std::string index_name = "exact", estimator_name = "weighted";
  for (const char* tag : {"error-vs-k", "runtime-vs-n", "grad-bounds", "grad-descent"}) {
    CLI::App* cmd = app.add_subcommand(tag);
    add_common_flags(cmd, spec, index_name, estimator_name);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  spec.experiment = app.get_subcommands().front()->get_name();
  spec.index = index_name == "lsh" ? knnattn::IndexBackend::lsh : knnattn::IndexBackend::exact;
  spec.estimator = estimator_name == "mom" ? knnattn::ForwardEstimator::mom
                                           : knnattn::ForwardEstimator::weighted;

  try {
    std::vector<knnattn::ResultRow> rows = knnattn::run_experiment(spec);
    if (spec.out_path.empty()) {
      std::puts(knnattn::kCsvHeader);
      for (const auto& r : rows) std::puts(knnattn::format_row(r).c_str());
    } else {
      std::fprintf(stderr, "wrote %zu rows to %s\n", rows.size(), spec.out_path.c_str());
    }
  } catch (const knnattn::OracleTooLarge& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const knnattn::InvalidSpec& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
