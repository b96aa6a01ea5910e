#include "herdlab/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "herdlab/csv.hpp"

namespace herdlab {

using nlohmann::json;

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::Simulate: return "simulate";
    case Scenario::Continue: return "continue";
    case Scenario::Switch: return "switch";
    case Scenario::Homotopy: return "homotopy";
    case Scenario::Predict: return "predict";
    case Scenario::DecayMap: return "decay-map";
  }
  return "?";
}

void RunConfig::validate() const {
  params.validate();
  if (n_cells < 8) throw std::invalid_argument("grid.n_cells must be >= 8");
  if (output_dir.empty()) {
    throw std::invalid_argument("output_dir must not be empty");
  }
  switch (scenario) {
    case Scenario::Simulate:
      stepper.validate();
      if (stepper.mode == TimeStepMode::EntropyVariables &&
          params.delta == 0.0) {
        throw std::invalid_argument(
            "simulate in entropy mode requires delta != 0 (the entropy "
            "structure is undefined at delta = 0)");
      }
      if (!(stepper.t_final > 0.0)) {
        throw std::invalid_argument("simulate.t_final must be > 0");
      }
      break;
    case Scenario::Continue:
    case Scenario::Switch: {
      if (!(range_min < range_max)) {
        throw std::invalid_argument(
            "continuation range requires from < to");
      }
      const double start = get_parameter(params, parameter);
      if (start < range_min || start > range_max) {
        throw std::invalid_argument(
            "continuation start value lies outside [from, to]");
      }
      if (direction != 1 && direction != -1) {
        throw std::invalid_argument("continuation.direction must be +-1");
      }
      break;
    }
    case Scenario::Homotopy:
      if (!(params.rho > 0.0)) {
        throw std::invalid_argument("homotopy requires rho > 0 at the start");
      }
      if (!(range_min < range_max)) {
        throw std::invalid_argument("continuation range requires from < to");
      }
      break;
    case Scenario::Predict:
      if (predict_n_max < 1) {
        throw std::invalid_argument("predict.n_max must be >= 1");
      }
      break;
    case Scenario::DecayMap:
      if (decay_delta_points < 2) {
        throw std::invalid_argument("decay_map.delta_points must be >= 2");
      }
      if (!(decay_delta_min < decay_delta_max)) {
        throw std::invalid_argument("decay_map range requires min < max");
      }
      if (decay_alphas.empty()) {
        throw std::invalid_argument("decay_map.alphas must not be empty");
      }
      break;
  }
}

namespace config {

namespace {

// --- minimal TOML subset -> json ---------------------------------------------
// Supports: [section] tables one level deep, key = value with strings,
// booleans, numbers and flat arrays, and # comments. Everything the config
// schema uses; anything else is a parse error with a line number.

[[noreturn]] void fail(int line, const std::string& what) {
  throw parse_error("config parse error at line " + std::to_string(line) +
                    ": " + what);
}

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

json parse_scalar(const std::string& tok, int line) {
  if (tok.empty()) fail(line, "empty value");
  if (tok.front() == '"') {
    if (tok.size() < 2 || tok.back() != '"') fail(line, "unterminated string");
    return tok.substr(1, tok.size() - 2);
  }
  if (tok == "true") return true;
  if (tok == "false") return false;
  try {
    std::size_t pos = 0;
    if (tok.find_first_of(".eE") == std::string::npos) {
      const long long v = std::stoll(tok, &pos);
      if (pos == tok.size()) return v;
    }
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) fail(line, "trailing characters in number");
    return v;
  } catch (const std::exception&) {
    fail(line, "cannot parse value '" + tok + "'");
  }
}

json parse_value(const std::string& tok, int line) {
  if (!tok.empty() && tok.front() == '[') {
    if (tok.back() != ']') fail(line, "unterminated array");
    json arr = json::array();
    std::string body = tok.substr(1, tok.size() - 2);
    std::string cur;
    for (char c : body) {
      if (c == ',') {
        if (!strip(cur).empty()) arr.push_back(parse_scalar(strip(cur), line));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!strip(cur).empty()) arr.push_back(parse_scalar(strip(cur), line));
    return arr;
  }
  return parse_scalar(tok, line);
}

std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

json toml_to_json(std::istream& in) {
  json root = json::object();
  json* table = &root;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = strip(strip_comment(line));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail(lineno, "unterminated table header");
      const std::string name = strip(t.substr(1, t.size() - 2));
      if (name.empty() || name.find('.') != std::string::npos) {
        fail(lineno, "unsupported table name '" + name + "'");
      }
      root[name] = json::object();
      table = &root[name];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(lineno, "expected key = value");
    const std::string key = strip(t.substr(0, eq));
    const std::string val = strip(t.substr(eq + 1));
    if (key.empty()) fail(lineno, "empty key");
    if (table->contains(key)) fail(lineno, "duplicate key '" + key + "'");
    (*table)[key] = parse_value(val, lineno);
  }
  return root;
}

// --- strict schema walk -------------------------------------------------------

struct Reader {
  const json& obj;
  std::string scope;
  std::set<std::string> seen;

  Reader(const json& o, std::string s) : obj(o), scope(std::move(s)) {
    if (!obj.is_object()) {
      throw parse_error("config section '" + scope + "' must be a table");
    }
  }

  ~Reader() = default;

  void finish() {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (!seen.count(it.key())) {
        throw parse_error("unknown key '" + scope + it.key() + "'");
      }
    }
  }

  template <typename T>
  void get(const char* key, T* out) {
    seen.insert(key);
    if (!obj.contains(key)) return;
    try {
      *out = obj.at(key).get<T>();
    } catch (const json::exception&) {
      throw parse_error("key '" + scope + key + "' has the wrong type");
    }
  }

  void get_string(const char* key, std::string* out) { get<std::string>(key, out); }
};

Nonlinearity read_nonlinearity(Reader& r, const char* kind_key,
                               const char* a_key, const char* b_key,
                               const std::string& scope) {
  std::string kind = "logistic";
  double a = 1.0, b = 1.0;
  r.get_string(kind_key, &kind);
  r.get(a_key, &a);
  r.get(b_key, &b);
  if (kind == "logistic") return Nonlinearity::logistic();
  if (kind == "power") return Nonlinearity::power(a, b);
  throw parse_error("key '" + scope + kind_key +
                    "' must be 'logistic' or 'power'");
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "simulate") return Scenario::Simulate;
  if (s == "continue") return Scenario::Continue;
  if (s == "switch") return Scenario::Switch;
  if (s == "homotopy") return Scenario::Homotopy;
  if (s == "predict") return Scenario::Predict;
  if (s == "decay-map") return Scenario::DecayMap;
  throw parse_error("unknown scenario '" + s + "'");
}

ActiveParameter parameter_from_string(const std::string& s) {
  if (s == "delta") return ActiveParameter::Delta;
  if (s == "rho") return ActiveParameter::Rho;
  if (s == "kappa") return ActiveParameter::Kappa;
  if (s == "alpha") return ActiveParameter::Alpha;
  if (s == "length") return ActiveParameter::Length;
  throw parse_error("unknown continuation parameter '" + s + "'");
}

RunConfig from_json(const json& root) {
  RunConfig cfg;
  Reader top(root, "");

  std::string scenario = "predict";
  top.get_string("scenario", &scenario);
  cfg.scenario = scenario_from_string(scenario);
  std::string out_dir = cfg.output_dir.string();
  top.get_string("output_dir", &out_dir);
  cfg.output_dir = out_dir;
  top.get("seed", &cfg.seed);

  top.seen.insert("model");
  if (root.contains("model")) {
    Reader r(root.at("model"), "model.");
    r.get("delta", &cfg.params.delta);
    r.get("kappa", &cfg.params.kappa);
    r.get("alpha", &cfg.params.alpha);
    r.get("length", &cfg.params.length);
    r.get("rho", &cfg.params.rho);
    r.get("u1_mean", &cfg.params.u1_mean);
    r.get("c_sobolev", &cfg.params.c_sobolev);
    r.get("c_lipschitz", &cfg.params.c_lipschitz);
    cfg.params.g_fn = read_nonlinearity(r, "g", "g_power_a", "g_power_b",
                                        "model.");
    cfg.params.f_fn = read_nonlinearity(r, "f", "f_power_a", "f_power_b",
                                        "model.");
    r.finish();
  }

  top.seen.insert("grid");
  if (root.contains("grid")) {
    Reader r(root.at("grid"), "grid.");
    r.get("n_cells", &cfg.n_cells);
    r.finish();
  }

  top.seen.insert("simulate");
  if (root.contains("simulate")) {
    Reader r(root.at("simulate"), "simulate.");
    r.get("tau", &cfg.stepper.tau);
    r.get("eps_reg", &cfg.stepper.eps_reg);
    std::string mode = "entropy";
    r.get_string("mode", &mode);
    if (mode == "entropy") {
      cfg.stepper.mode = TimeStepMode::EntropyVariables;
    } else if (mode == "primal") {
      cfg.stepper.mode = TimeStepMode::Primal;
    } else {
      throw parse_error("simulate.mode must be 'entropy' or 'primal'");
    }
    r.get("newton_tol", &cfg.stepper.newton_tol);
    r.get("newton_max_iter", &cfg.stepper.newton_max_iter);
    r.get("t_final", &cfg.stepper.t_final);
    r.get("perturbation_amplitude", &cfg.perturbation_amplitude);
    r.get("perturbation_mode", &cfg.perturbation_mode);
    r.get("snapshot_every", &cfg.snapshot_every);
    r.finish();
  }

  top.seen.insert("continuation");
  if (root.contains("continuation")) {
    Reader r(root.at("continuation"), "continuation.");
    std::string par = "delta";
    r.get_string("parameter", &par);
    cfg.parameter = parameter_from_string(par);
    r.get("from", &cfg.range_min);
    r.get("to", &cfg.range_max);
    r.get("direction", &cfg.direction);
    r.get("initial_step", &cfg.continuation.initial_step);
    r.get("max_step", &cfg.continuation.max_step);
    r.get("min_step", &cfg.continuation.min_step);
    r.get("tol", &cfg.continuation.tol);
    r.get("max_newton_iter", &cfg.continuation.max_newton_iter);
    r.get("max_points", &cfg.continuation.max_points);
    r.get("dg_floor", &cfg.continuation.dg_floor);
    r.get("dg_detect_guard", &cfg.continuation.dg_detect_guard);
    r.get("detect_refine_tol", &cfg.continuation.detect_refine_tol);
    r.get("track_singular_values", &cfg.continuation.track_singular_values);
    r.get("switch_amplitude_rel", &cfg.continuation.switch_amplitude_rel);
    r.get("switch_max_halvings", &cfg.continuation.switch_max_halvings);
    r.get("switch_detection_index", &cfg.switch_detection_index);
    r.get("homotopy_delta_fixed", &cfg.homotopy_delta_fixed);
    r.finish();
  }

  top.seen.insert("predict");
  if (root.contains("predict")) {
    Reader r(root.at("predict"), "predict.");
    r.get("n_max", &cfg.predict_n_max);
    r.finish();
  }

  top.seen.insert("decay_map");
  if (root.contains("decay_map")) {
    Reader r(root.at("decay_map"), "decay_map.");
    r.get("delta_min", &cfg.decay_delta_min);
    r.get("delta_max", &cfg.decay_delta_max);
    r.get("delta_points", &cfg.decay_delta_points);
    r.get("alphas", &cfg.decay_alphas);
    r.finish();
  }

  top.finish();
  cfg.validate();
  return cfg;
}

void apply_override(json& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw parse_error("override '" + spec + "' must look like key=value");
  }
  const std::string path = strip(spec.substr(0, eq));
  const json value = parse_value(strip(spec.substr(eq + 1)), 0);
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    root[path] = value;
  } else {
    const std::string section = path.substr(0, dot);
    const std::string key = path.substr(dot + 1);
    if (key.find('.') != std::string::npos) {
      throw parse_error("override path '" + path + "' nests too deep");
    }
    if (!root.contains(section)) root[section] = json::object();
    root[section][key] = value;
  }
}

}  // namespace

RunConfig load(const std::filesystem::path& path,
               const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open config file " + path.string());
  json root;
  if (path.extension() == ".json") {
    try {
      root = json::parse(in);
    } catch (const json::parse_error& e) {
      throw parse_error("config parse error in " + path.string() + ": " +
                        e.what());
    }
  } else {
    root = toml_to_json(in);
  }
  for (const auto& o : overrides) apply_override(root, o);
  return from_json(root);
}

RunConfig load_defaults(const std::vector<std::string>& overrides) {
  json root = json::object();
  for (const auto& o : overrides) apply_override(root, o);
  return from_json(root);
}

namespace {

std::string toml_str(const std::string& s) { return '"' + s + '"'; }

}  // namespace

void save(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ostringstream o;
  const auto d = csv::format_double;
  o << "scenario = " << toml_str(to_string(cfg.scenario)) << "\n";
  o << "output_dir = " << toml_str(cfg.output_dir.string()) << "\n";
  o << "seed = " << cfg.seed << "\n\n";

  o << "[model]\n";
  o << "delta = " << d(cfg.params.delta) << "\n";
  o << "kappa = " << d(cfg.params.kappa) << "\n";
  o << "alpha = " << d(cfg.params.alpha) << "\n";
  o << "length = " << d(cfg.params.length) << "\n";
  o << "rho = " << d(cfg.params.rho) << "\n";
  o << "u1_mean = " << d(cfg.params.u1_mean) << "\n";
  o << "c_sobolev = " << d(cfg.params.c_sobolev) << "\n";
  o << "c_lipschitz = " << d(cfg.params.c_lipschitz) << "\n";
  for (const auto& [fn, key, ak, bk] :
       {std::tuple{&cfg.params.g_fn, "g", "g_power_a", "g_power_b"},
        std::tuple{&cfg.params.f_fn, "f", "f_power_a", "f_power_b"}}) {
    if (fn->kind == Nonlinearity::Kind::Logistic) {
      o << key << " = \"logistic\"\n";
    } else {
      o << key << " = \"power\"\n";
      o << ak << " = " << d(fn->a) << "\n";
      o << bk << " = " << d(fn->b) << "\n";
    }
  }

  o << "\n[grid]\n";
  o << "n_cells = " << cfg.n_cells << "\n";

  o << "\n[simulate]\n";
  o << "tau = " << d(cfg.stepper.tau) << "\n";
  o << "eps_reg = " << d(cfg.stepper.eps_reg) << "\n";
  o << "mode = "
    << (cfg.stepper.mode == TimeStepMode::EntropyVariables ? "\"entropy\""
                                                           : "\"primal\"")
    << "\n";
  o << "newton_tol = " << d(cfg.stepper.newton_tol) << "\n";
  o << "newton_max_iter = " << cfg.stepper.newton_max_iter << "\n";
  o << "t_final = " << d(cfg.stepper.t_final) << "\n";
  o << "perturbation_amplitude = " << d(cfg.perturbation_amplitude) << "\n";
  o << "perturbation_mode = " << cfg.perturbation_mode << "\n";
  o << "snapshot_every = " << cfg.snapshot_every << "\n";

  o << "\n[continuation]\n";
  o << "parameter = " << toml_str(to_string(cfg.parameter)) << "\n";
  o << "from = " << d(cfg.range_min) << "\n";
  o << "to = " << d(cfg.range_max) << "\n";
  o << "direction = " << cfg.direction << "\n";
  o << "initial_step = " << d(cfg.continuation.initial_step) << "\n";
  o << "max_step = " << d(cfg.continuation.max_step) << "\n";
  o << "min_step = " << d(cfg.continuation.min_step) << "\n";
  o << "tol = " << d(cfg.continuation.tol) << "\n";
  o << "max_newton_iter = " << cfg.continuation.max_newton_iter << "\n";
  o << "max_points = " << cfg.continuation.max_points << "\n";
  o << "dg_floor = " << d(cfg.continuation.dg_floor) << "\n";
  o << "dg_detect_guard = " << d(cfg.continuation.dg_detect_guard) << "\n";
  o << "detect_refine_tol = " << d(cfg.continuation.detect_refine_tol) << "\n";
  o << "track_singular_values = "
    << (cfg.continuation.track_singular_values ? "true" : "false") << "\n";
  o << "switch_amplitude_rel = " << d(cfg.continuation.switch_amplitude_rel)
    << "\n";
  o << "switch_max_halvings = " << cfg.continuation.switch_max_halvings << "\n";
  o << "switch_detection_index = " << cfg.switch_detection_index << "\n";
  o << "homotopy_delta_fixed = " << d(cfg.homotopy_delta_fixed) << "\n";

  o << "\n[predict]\n";
  o << "n_max = " << cfg.predict_n_max << "\n";

  o << "\n[decay_map]\n";
  o << "delta_min = " << d(cfg.decay_delta_min) << "\n";
  o << "delta_max = " << d(cfg.decay_delta_max) << "\n";
  o << "delta_points = " << cfg.decay_delta_points << "\n";
  o << "alphas = [";
  for (std::size_t i = 0; i < cfg.decay_alphas.size(); ++i) {
    if (i) o << ", ";
    o << d(cfg.decay_alphas[i]);
  }
  o << "]\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw parse_error("cannot write config file " + path.string());
  out << o.str();
}

}  // namespace config
}  // namespace herdlab
