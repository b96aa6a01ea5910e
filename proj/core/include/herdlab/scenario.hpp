#pragma once

#include <filesystem>
#include <string>

#include "herdlab/config.hpp"

namespace herdlab::scenario {

/// Exit codes shared with the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitSolverFailure = 3;
inline constexpr int kExitComparisonFailure = 4;

struct RunResult {
  int exit_code = kExitOk;
  std::string error;
  std::filesystem::path manifest_path;
};

/// Executes the configured scenario, writing all data products plus
/// manifest.json (parameters, version, timings, stopping reasons, artifact
/// checksums) into cfg.output_dir. Failures are recorded in the manifest and
/// reflected in the exit code; this function does not throw.
RunResult run(const RunConfig& cfg);

struct CompareOptions {
  double abs_tol = 0.0;
  double rel_tol = 0.0;
};

struct CompareReport {
  bool ok = false;
  std::string detail;  // names the first offending cell when not ok
  std::size_t cells_compared = 0;
  double max_abs_diff = 0.0;
};

/// Per-cell comparison of two CSV files under the same schema.
/// Throws std::runtime_error on schema mismatch or unreadable files.
CompareReport compare_against_reference(const std::filesystem::path& produced,
                                        const std::filesystem::path& reference,
                                        const CompareOptions& opts);

/// FNV-1a 64-bit checksum of a file, as a fixed-width hex string.
std::string file_checksum(const std::filesystem::path& path);

/// Worker cap for scenario fan-out: HERDLAB_THREADS or hardware concurrency.
int worker_threads();

}  // namespace herdlab::scenario
