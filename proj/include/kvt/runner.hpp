#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "kvt/run_config.hpp"
#include "kvt/training.hpp"

namespace kvt {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitDivergence = 2, kExitIo = 3 };

struct SweepResult {
  ExitCode status = kExitOk;
  std::vector<RunReport> reports;  // completed runs only
  std::vector<std::string> failures;
};

/// Directory name for one run of the sweep: <task>_<variant>_s<seed>.
std::string run_dir_name(const RunConfig& config, const AttentionKind& kind);

/// Executes every variant in `config.attention` in order. Layout under
/// out_dir: config.txt, summary.csv and per-run directories holding
/// config.txt, loss.csv (flushed per record), metrics.csv, cost.csv,
/// model.ckpt and attention maps. A diverged run is reported and the sweep
/// continues; configuration and I/O errors propagate.
SweepResult run_sweep(const RunConfig& config, std::ostream& progress);

/// run_sweep with errors mapped to exit codes and messages written to `err`.
int run(const RunConfig& config, std::ostream& progress, std::ostream& err);

}  // namespace kvt
