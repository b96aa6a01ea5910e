#include "herdlab/scenario.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <future>
#include <numbers>
#include <thread>

#include "herdlab/bifurcation.hpp"
#include "herdlab/continuation.hpp"
#include "herdlab/csv.hpp"
#include "herdlab/grid.hpp"
#include "herdlab/time_integrator.hpp"

namespace herdlab::scenario {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

class Stopwatch {
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();

 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }
};

/// Collects artifacts and assembles manifest.json at the end of a run.
struct RunContext {
  const RunConfig& cfg;
  std::filesystem::path dir;
  json manifest;
  std::vector<std::string> warnings;
  Stopwatch total;

  explicit RunContext(const RunConfig& c) : cfg(c), dir(c.output_dir) {
    std::filesystem::create_directories(dir);
    manifest["tool"] = "herdlab";
    manifest["version"] = kVersion;
    manifest["scenario"] = to_string(cfg.scenario);
    manifest["seed"] = cfg.seed;
    manifest["artifacts"] = json::array();
    manifest["timings_ms"] = json::object();
  }

  std::filesystem::path path(const std::string& rel) { return dir / rel; }

  void record_artifact(const std::filesystem::path& p) {
    json a;
    a["path"] = std::filesystem::relative(p, dir).string();
    a["bytes"] = static_cast<std::uint64_t>(std::filesystem::file_size(p));
    a["fnv1a64"] = file_checksum(p);
    manifest["artifacts"].push_back(a);
  }

  void write_csv(const csv::Table& t, const std::string& rel) {
    const auto p = path(rel);
    std::filesystem::create_directories(p.parent_path());
    csv::write(t, p);
    record_artifact(p);
  }

  void timing(const std::string& key, double ms) {
    manifest["timings_ms"][key] = ms;
  }

  void finish(int exit_code, const std::string& error) {
    manifest["timings_ms"]["total"] = total.ms();
    manifest["warnings"] = warnings;
    manifest["exit_code"] = exit_code;
    if (!error.empty()) manifest["error"] = error;
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
  }
};

json params_to_json(const ModelParams& p) {
  json j;
  j["delta"] = p.delta;
  j["kappa"] = p.kappa;
  j["alpha"] = p.alpha;
  j["length"] = p.length;
  j["rho"] = p.rho;
  j["u1_mean"] = p.u1_mean;
  j["c_sobolev"] = p.c_sobolev;
  j["c_lipschitz"] = p.c_lipschitz;
  auto nl = [](const Nonlinearity& n) {
    json v;
    v["kind"] = (n.kind == Nonlinearity::Kind::Logistic) ? "logistic" : "power";
    if (n.kind == Nonlinearity::Kind::PowerAB) {
      v["a"] = n.a;
      v["b"] = n.b;
    }
    return v;
  };
  j["g"] = nl(p.g_fn);
  j["f"] = nl(p.f_fn);
  return j;
}

StateField initial_state(const RunConfig& cfg, RunContext& ctx) {
  Grid g(cfg.n_cells, cfg.params.length);
  auto [u1s, u2s] = model::steady_state(cfg.params);
  StateField s = StateField::constant(g, u1s, u2s);
  double a = cfg.perturbation_amplitude;
  const double room = std::min(u1s - 0.05, 0.95 - u1s);
  if (a > room) {
    ctx.warnings.push_back("perturbation amplitude capped at " +
                           std::to_string(room) + " to keep u1 in (0.05,0.95)");
    a = room;
  }
  for (int i = 0; i < g.n_cells; ++i) {
    s.u1[i] += a * std::cos(cfg.perturbation_mode * std::numbers::pi *
                            g.cell_center(i) / cfg.params.length);
  }
  return s;
}

csv::Table branch_table(const Branch& b) {
  csv::Table t;
  t.header = {"index",        "parameter", "l2_norm", "sigma_min",
              "n_interfaces", "is_bifurcation"};
  for (std::size_t i = 0; i < b.points.size(); ++i) {
    const auto& p = b.points[i];
    t.rows.push_back({static_cast<double>(i), p.parameter_value, p.l2_norm,
                      p.smallest_singular_value,
                      static_cast<double>(p.n_interfaces),
                      p.is_bifurcation ? 1.0 : 0.0});
  }
  return t;
}

csv::Table detection_table(const std::vector<Detection>& ds) {
  csv::Table t;
  t.header = {"index", "parameter", "sigma_min", "is_fold"};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    t.rows.push_back({static_cast<double>(i), ds[i].parameter_value,
                      ds[i].sigma_min, ds[i].is_fold ? 1.0 : 0.0});
  }
  return t;
}

void write_branch_products(RunContext& ctx, const Branch& b,
                           const std::string& stem) {
  ctx.write_csv(branch_table(b), stem + ".csv");
  for (std::size_t i = 0; i < b.points.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_solutions/solution_%06zu.csv",
                  stem.c_str(), i);
    const auto p = ctx.path(name);
    std::filesystem::create_directories(p.parent_path());
    grid_ops::write_state_csv(b.points[i].state, p);
    ctx.record_artifact(p);
  }
  ctx.manifest["branches"][stem] = {
      {"points", b.points.size()},
      {"stop_reason", to_string(b.stop_reason)},
      {"stop_note", b.stop_note},
  };
}

/// Marks branch points as bifurcations when a refined detection sits between
/// them (diagnostic column of the branch CSV).
void tag_bifurcations(Branch* b, const std::vector<Detection>& ds) {
  for (const auto& d : ds) {
    if (d.is_fold) continue;
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < b->points.size(); ++i) {
      const double gap = std::abs(b->points[i].parameter_value -
                                  d.parameter_value);
      if (gap < best) {
        best = gap;
        arg = i;
      }
    }
    if (!b->points.empty()) b->points[arg].is_bifurcation = true;
  }
}

// --- scenario bodies ---------------------------------------------------------

void run_predict(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Stopwatch sw;
  const auto preds = bifurcation::predict(cfg.params, cfg.predict_n_max);

  json out = json::array();
  for (const auto& b : preds) {
    json j;
    j["mode_index"] = b.mode_index;
    j["mu_n"] = b.mu_n;
    j["delta_b"] = b.delta_b;
    j["delta_b_rho0"] = b.delta_b_rho0;
    j["amplitude_u1"] = b.amplitude_u1;
    j["wavenumber"] = b.wavenumber;
    out.push_back(j);
  }
  const auto jp = ctx.path("predictions.json");
  std::ofstream(jp, std::ios::binary) << out.dump(2) << "\n";
  ctx.record_artifact(jp);

  // Table-1 layout: one row per formula, one column per mode.
  csv::Table t;
  t.header = {"formula"};
  for (const auto& b : preds) t.header.push_back("n" + std::to_string(b.mode_index));
  std::vector<double> rho0_row{0.0}, rho_row{1.0};
  for (const auto& b : preds) {
    rho0_row.push_back(b.delta_b_rho0);
    rho_row.push_back(b.delta_b);
  }
  t.rows = {rho0_row, rho_row};
  ctx.write_csv(t, "table1.csv");
  ctx.manifest["notes"] = {
      {"table1_rows", "formula 0: rho = 0 values; formula 1: with rho"}};
  ctx.timing("predict", sw.ms());
  ctx.manifest["alpha_regime"] = [&] {
    switch (bifurcation::alpha_regime(cfg.params)) {
      case AlphaRegime::Large: return "large";
      case AlphaRegime::Small: return "small";
      default: return "boundary";
    }
  }();
}

void run_simulate(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Stopwatch sw;
  const StateField init = initial_state(cfg, ctx);
  TimeStepperConfig stepper = cfg.stepper;
  const Trajectory traj = time_integrator::evolve(init, cfg.params, stepper);
  ctx.timing("evolve", sw.ms());

  csv::Table t;
  t.header = {"time", "H", "relative_entropy", "dissipation", "mass_u1"};
  for (const auto& s : traj.samples) {
    t.rows.push_back({s.time, s.report.entropy, s.report.relative_entropy,
                      s.report.dissipation, s.report.mass_u1});
  }
  ctx.write_csv(t, "trajectory.csv");

  if (cfg.snapshot_every > 0) {
    for (std::size_t i = 0; i < traj.samples.size();
         i += static_cast<std::size_t>(cfg.snapshot_every)) {
      char name[48];
      std::snprintf(name, sizeof(name), "states/state_%06zu.csv", i);
      const auto p = ctx.path(name);
      std::filesystem::create_directories(p.parent_path());
      grid_ops::write_state_csv(traj.samples[i].state, p);
      ctx.record_artifact(p);
    }
  }
  const auto fp = ctx.path("final_state.csv");
  grid_ops::write_state_csv(traj.samples.back().state, fp);
  ctx.record_artifact(fp);

  for (const auto& w : traj.warnings) ctx.warnings.push_back(w);
  try {
    ctx.manifest["fitted_decay_rate"] = time_integrator::fit_decay_rate(traj);
  } catch (const std::exception& e) {
    ctx.manifest["fitted_decay_rate"] = nullptr;
    ctx.warnings.push_back(std::string("decay fit unavailable: ") + e.what());
  }
  if (!traj.completed) {
    throw continuation::newton_error("simulate aborted: " + traj.error);
  }
}

void run_continue(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Stopwatch sw;
  Grid g(cfg.n_cells, cfg.params.length);
  auto [u1s, u2s] = model::steady_state(cfg.params);
  Branch branch = continuation::continue_branch(
      StateField::constant(g, u1s, u2s), cfg.params, cfg.parameter,
      {cfg.range_min, cfg.range_max}, cfg.direction, cfg.continuation);
  ctx.timing("continue", sw.ms());

  Stopwatch sd;
  std::vector<std::string> warnings;
  const auto detections =
      continuation::detect_branch_points(branch, cfg.continuation, &warnings);
  for (auto& w : warnings) ctx.warnings.push_back(w);
  tag_bifurcations(&branch, detections);
  ctx.timing("detect", sd.ms());

  write_branch_products(ctx, branch, "branch");
  ctx.write_csv(detection_table(detections), "detections.csv");
  ctx.manifest["stop_reason"] = to_string(branch.stop_reason);
  ctx.manifest["stop_note"] = branch.stop_note;
}

void run_switch(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Stopwatch sw;
  Grid g(cfg.n_cells, cfg.params.length);
  auto [u1s, u2s] = model::steady_state(cfg.params);
  Branch trunk = continuation::continue_branch(
      StateField::constant(g, u1s, u2s), cfg.params, cfg.parameter,
      {cfg.range_min, cfg.range_max}, cfg.direction, cfg.continuation);
  const auto detections =
      continuation::detect_branch_points(trunk, cfg.continuation);
  tag_bifurcations(&trunk, detections);
  ctx.timing("trunk", sw.ms());

  write_branch_products(ctx, trunk, "trunk");
  ctx.write_csv(detection_table(detections), "detections.csv");
  if (detections.empty() ||
      cfg.switch_detection_index >= static_cast<int>(detections.size())) {
    throw continuation::newton_error(
        "switch: requested detection index " +
        std::to_string(cfg.switch_detection_index) + " but only " +
        std::to_string(detections.size()) + " detections found");
  }
  const Detection& at = detections[cfg.switch_detection_index];
  ctx.manifest["switched_at"] = at.parameter_value;

  // The two branching directions are independent; fan them out.
  auto trace_dir = [&](int dir) {
    return continuation::switch_branch(at, dir, cfg.params, cfg.parameter,
                                       {cfg.range_min, cfg.range_max},
                                       cfg.continuation);
  };
  Stopwatch s2;
  Branch plus, minus;
  if (worker_threads() > 1) {
    auto fut = std::async(std::launch::async, trace_dir, +1);
    minus = trace_dir(-1);
    plus = fut.get();
  } else {
    plus = trace_dir(+1);
    minus = trace_dir(-1);
  }
  ctx.timing("switch", s2.ms());
  write_branch_products(ctx, plus, "branch_plus");
  write_branch_products(ctx, minus, "branch_minus");
}

void run_homotopy(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Stopwatch sw;
  Grid g(cfg.n_cells, cfg.params.length);
  auto [u1s, u2s] = model::steady_state(cfg.params);

  // Leg 1: trace the homogeneous branch in delta and switch onto the
  // nonhomogeneous family at the requested detection.
  Branch trunk = continuation::continue_branch(
      StateField::constant(g, u1s, u2s), cfg.params, ActiveParameter::Delta,
      {cfg.range_min, cfg.range_max}, cfg.direction, cfg.continuation);
  const auto detections =
      continuation::detect_branch_points(trunk, cfg.continuation);
  ctx.write_csv(detection_table(detections), "detections.csv");
  if (detections.empty() ||
      cfg.switch_detection_index >= static_cast<int>(detections.size())) {
    throw continuation::newton_error("homotopy: no usable detection to switch at");
  }
  const Detection& at = detections[cfg.switch_detection_index];
  ctx.manifest["switched_at"] = at.parameter_value;

  // Leg 2: follow the switched branch to the target delta.
  const double lo = std::min(cfg.homotopy_delta_fixed, at.parameter_value);
  const double hi = std::max(cfg.homotopy_delta_fixed, at.parameter_value);
  Branch delta_leg = continuation::switch_branch(
      at, +1, cfg.params, ActiveParameter::Delta, {lo, hi}, cfg.continuation);
  if (delta_leg.stop_reason != StopReason::RangeBoundary) {
    // try the other branching direction before giving up
    delta_leg = continuation::switch_branch(at, -1, cfg.params,
                                            ActiveParameter::Delta, {lo, hi},
                                            cfg.continuation);
  }
  write_branch_products(ctx, delta_leg, "delta_branch");
  if (delta_leg.stop_reason != StopReason::RangeBoundary ||
      std::abs(delta_leg.points.back().parameter_value -
               cfg.homotopy_delta_fixed) > 1e-9 * (1.0 + std::abs(hi))) {
    throw continuation::newton_error(
        "homotopy: switched branch did not reach delta = " +
        std::to_string(cfg.homotopy_delta_fixed) + " (" +
        delta_leg.stop_note + ")");
  }
  ctx.timing("delta_leg", sw.ms());

  // Leg 3: continuation in rho down to zero at fixed delta.
  Stopwatch s3;
  ModelParams at_target = cfg.params;
  at_target.delta = cfg.homotopy_delta_fixed;
  const auto hres = continuation::homotopy_rho_to_zero(
      delta_leg.points.back().state, at_target, cfg.continuation);
  ctx.timing("rho_leg", s3.ms());
  write_branch_products(ctx, hres.branch, "rho_branch");
  ctx.manifest["homotopy_note"] = hres.note;
  ctx.manifest["reached_rho_zero"] = hres.reached_zero;
  if (!hres.reached_zero) {
    throw continuation::newton_error("homotopy: " + hres.note);
  }
  ctx.manifest["final_residual_inf_norm"] = hres.final_residual_norm;
  const auto fp = ctx.path("final_state.csv");
  grid_ops::write_state_csv(hres.final_state, fp);
  ctx.record_artifact(fp);
}

void run_decay_map(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Stopwatch sw;
  std::vector<double> grid;
  grid.reserve(cfg.decay_delta_points);
  for (int i = 0; i < cfg.decay_delta_points; ++i) {
    const double d = cfg.decay_delta_min +
                     (cfg.decay_delta_max - cfg.decay_delta_min) * i /
                         (cfg.decay_delta_points - 1);
    if (std::abs(d) < 1e-9) continue;  // delta = 0 excluded
    ModelParams probe = cfg.params;
    probe.delta = d;
    const double dstar = -probe.kappa / probe.gamma();
    if (d <= dstar) continue;  // outside the admissible range
    grid.push_back(d);
  }

  struct Row {
    double alpha;
    CriticalDeltas cd;
  };
  std::vector<Row> rows(cfg.decay_alphas.size());
  const int workers =
      std::min<int>(worker_threads(), static_cast<int>(rows.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < rows.size();
         i = next.fetch_add(1)) {
      ModelParams p = cfg.params;
      p.alpha = cfg.decay_alphas[i];
      rows[i] = {p.alpha, model::decay_region(p, grid)};
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  ctx.timing("decay_map", sw.ms());

  csv::Table t;
  t.header = {"alpha", "interval_index", "delta_lo", "delta_hi"};
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.cd.decay_intervals.size(); ++k) {
      t.rows.push_back({row.alpha, static_cast<double>(k),
                        row.cd.decay_intervals[k].first,
                        row.cd.decay_intervals[k].second});
    }
  }
  ctx.write_csv(t, "decay_map.csv");

  // Plot data for the dissipation-constant curve delta0*epsilon1(delta).
  csv::Table curve;
  curve.header = {"delta", "delta0_epsilon1"};
  for (double d : grid) {
    ModelParams p = cfg.params;
    p.delta = d;
    curve.rows.push_back({d, model::delta0(p) * model::epsilon1(p)});
  }
  ctx.write_csv(curve, "dissipation_curve.csv");

  ModelParams p = cfg.params;
  const CriticalDeltas cd = model::decay_region(p, grid);
  ctx.manifest["delta_star"] = cd.delta_star;
  ctx.manifest["delta_d"] = cd.delta_d;
}

}  // namespace

int worker_threads() {
  if (const char* env = std::getenv("HERDLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checksum: cannot open " + path.string());
  std::uint64_t h = 0xCBF29CE484222325ull;
  char buf[1 << 15];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ull;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(h));
  return hex;
}

RunResult run(const RunConfig& cfg) {
  RunResult res;
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    res.exit_code = kExitValidation;
    res.error = e.what();
    return res;
  }

  RunContext ctx(cfg);
  ctx.manifest["params"] = params_to_json(cfg.params);
  ctx.manifest["n_cells"] = cfg.n_cells;
  res.manifest_path = ctx.dir / "manifest.json";

  // Echo the effective configuration next to the data products.
  try {
    config::save(cfg, ctx.path("config_echo.toml"));
    ctx.record_artifact(ctx.path("config_echo.toml"));
  } catch (const std::exception& e) {
    ctx.warnings.push_back(std::string("config echo failed: ") + e.what());
  }

  try {
    switch (cfg.scenario) {
      case Scenario::Predict: run_predict(ctx); break;
      case Scenario::Simulate: run_simulate(ctx); break;
      case Scenario::Continue: run_continue(ctx); break;
      case Scenario::Switch: run_switch(ctx); break;
      case Scenario::Homotopy: run_homotopy(ctx); break;
      case Scenario::DecayMap: run_decay_map(ctx); break;
    }
    ctx.finish(kExitOk, "");
  } catch (const std::invalid_argument& e) {
    res.exit_code = kExitValidation;
    res.error = e.what();
    ctx.finish(res.exit_code, res.error);
  } catch (const std::exception& e) {
    res.exit_code = kExitSolverFailure;
    res.error = e.what();
    ctx.finish(res.exit_code, res.error);
  }
  return res;
}

CompareReport compare_against_reference(const std::filesystem::path& produced,
                                        const std::filesystem::path& reference,
                                        const CompareOptions& opts) {
  const csv::Table a = csv::read(produced);
  const csv::Table b = csv::read(reference);
  if (a.header != b.header) {
    throw std::runtime_error("compare: header mismatch between " +
                             produced.string() + " and " + reference.string());
  }
  if (a.rows.size() != b.rows.size()) {
    throw std::runtime_error(
        "compare: row-count mismatch (" + std::to_string(a.rows.size()) +
        " vs " + std::to_string(b.rows.size()) + ")");
  }
  CompareReport rep;
  rep.ok = true;
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    for (std::size_t c = 0; c < a.header.size(); ++c) {
      const double x = a.rows[r][c];
      const double y = b.rows[r][c];
      const double diff = std::abs(x - y);
      rep.max_abs_diff = std::max(rep.max_abs_diff, diff);
      ++rep.cells_compared;
      if (diff > opts.abs_tol + opts.rel_tol * std::abs(y)) {
        if (rep.ok) {
          rep.ok = false;
          rep.detail = "cell (" + std::to_string(r) + ", " + a.header[c] +
                       "): " + csv::format_double(x) + " vs " +
                       csv::format_double(y);
        }
      }
    }
  }
  return rep;
}

}  // namespace herdlab::scenario
