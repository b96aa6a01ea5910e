#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "herdlab/continuation.hpp"
#include "herdlab/model.hpp"
#include "herdlab/time_integrator.hpp"

namespace herdlab {

enum class Scenario { Simulate, Continue, Switch, Homotopy, Predict, DecayMap };

const char* to_string(Scenario s);

/// Full description of one run. Loaded from TOML (primary) or JSON; unknown
/// keys are fatal so parameter-name typos cannot pass silently.
struct RunConfig {
  Scenario scenario = Scenario::Predict;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 12345;

  ModelParams params;
  int n_cells = 200;

  // simulate
  TimeStepperConfig stepper;
  double perturbation_amplitude = 0.0;
  int perturbation_mode = 1;
  int snapshot_every = 0;  // 0: no per-step state snapshots

  // continue / switch / homotopy
  ContinuationConfig continuation;
  ActiveParameter parameter = ActiveParameter::Delta;
  double range_min = 0.0;
  double range_max = 0.0;
  int direction = +1;
  int switch_detection_index = 0;     // which detection to switch at
  double homotopy_delta_fixed = 0.0;  // delta held fixed during the rho run

  // predict
  int predict_n_max = 9;

  // decay-map
  double decay_delta_min = -3.9;
  double decay_delta_max = 2.0;
  int decay_delta_points = 300;
  std::vector<double> decay_alphas = {0.2, 1.0, 10.0};

  /// Throws std::invalid_argument naming the failing invariant.
  void validate() const;
};

namespace config {

struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Loads .toml or .json (by extension), applies overrides of the form
/// "section.key=value", validates strictly, and returns the config.
RunConfig load(const std::filesystem::path& path,
               const std::vector<std::string>& overrides = {});

/// Builds a config from documented defaults plus overrides only.
RunConfig load_defaults(const std::vector<std::string>& overrides);

/// Serializes back to TOML; save followed by load is the identity.
void save(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace config
}  // namespace herdlab
