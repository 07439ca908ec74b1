#include "swe/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "swe/deep_linear.hpp"
#include "swe/regression.hpp"
#include "swe/stacked_net.hpp"
#include "swe/stats.hpp"

namespace swe::lab {

using nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += '\n';
    out += l;
  }
  return out;
}

constexpr ExperimentKind kAllKinds[] = {ExperimentKind::Dln, ExperimentKind::Regress,
                                        ExperimentKind::Stacked, ExperimentKind::Sweep,
                                        ExperimentKind::Scan};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(join_lines(problems)), problems_(std::move(problems)) {}

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Dln: return "dln";
    case ExperimentKind::Regress: return "regress";
    case ExperimentKind::Stacked: return "stacked";
    case ExperimentKind::Sweep: return "sweep";
    case ExperimentKind::Scan: return "scan";
  }
  return "?";
}

ExperimentKind parse_kind(std::string_view text) {
  for (ExperimentKind k : kAllKinds)
    if (to_string(k) == text) return k;
  throw ConfigError({"experiment: unknown kind '" + std::string(text) +
                     "' (expected dln, regress, stacked, sweep or scan)"});
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  const char* env = std::getenv("SWE_LAB_OUT");
  c.out = (env && *env) ? env : "swe_lab_out";
  switch (kind) {
    case ExperimentKind::Dln:
      c.schedule = {"always_shared", 1'000'000, std::nullopt, std::nullopt};
      break;
    case ExperimentKind::Regress:
      c.schedule = {"swe", 500, 100, std::nullopt};
      break;
    case ExperimentKind::Stacked:
    case ExperimentKind::Sweep:
      c.schedule = {"swe", 2000, 200, std::nullopt};
      break;
    case ExperimentKind::Scan:
      c.seeds.resize(20);
      std::iota(c.seeds.begin(), c.seeds.end(), std::uint64_t{0});
      break;
  }
  if (kind == ExperimentKind::Regress) {
    c.seeds.resize(20);
    std::iota(c.seeds.begin(), c.seeds.end(), std::uint64_t{0});
  }
  if (kind == ExperimentKind::Stacked || kind == ExperimentKind::Sweep) {
    c.seeds.resize(10);
    std::iota(c.seeds.begin(), c.seeds.end(), std::uint64_t{0});
  }
  return c;
}

// --- parsing -------------------------------------------------------------------

namespace {

// Collects every violation instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

  bool object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    fail(path, "expected an object");
    return false;
  }

  void keys(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
        fail(join(path, it.key()), "unknown field");
      }
    }
  }

  static std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
  }

  static std::string index(const std::string& path, std::size_t i) {
    return path + "[" + std::to_string(i) + "]";
  }

  bool read(const json& j, const std::string& path, std::string& out) {
    if (!j.is_string()) return fail(path, "expected a string"), false;
    out = j.get<std::string>();
    return true;
  }
  bool read(const json& j, const std::string& path, bool& out) {
    if (!j.is_boolean()) return fail(path, "expected true or false"), false;
    out = j.get<bool>();
    return true;
  }
  bool read(const json& j, const std::string& path, double& out) {
    if (!j.is_number()) return fail(path, "expected a number"), false;
    out = j.get<double>();
    return true;
  }
  bool read(const json& j, const std::string& path, std::uint64_t& out) {
    if (j.is_number_unsigned()) {
      out = j.get<std::uint64_t>();
      return true;
    }
    if (j.is_number_integer()) return fail(path, "must be non-negative"), false;
    return fail(path, "expected a non-negative integer"), false;
  }
  template <class T>
  bool read(const json& j, const std::string& path, std::vector<T>& out) {
    if (!j.is_array()) return fail(path, "expected an array"), false;
    std::vector<T> v(j.size());
    bool ok = true;
    for (std::size_t i = 0; i < j.size(); ++i) ok = read(j[i], index(path, i), v[i]) && ok;
    if (ok) out = std::move(v);
    return ok;
  }
  bool read(const json& j, const std::string& path, std::pair<std::size_t, std::size_t>& out) {
    if (!j.is_array() || j.size() != 2) return fail(path, "expected [A, B]"), false;
    std::uint64_t a = 0, b = 0;
    const bool ok = read(j[0], index(path, 0), a) & read(j[1], index(path, 1), b);
    if (ok) out = {a, b};
    return ok;
  }
  template <class T>
  bool read(const json& j, const std::string& path, std::optional<T>& out) {
    if (j.is_null()) {
      out.reset();
      return true;
    }
    T v{};
    if (!read(j, path, v)) return false;
    out = std::move(v);
    return true;
  }

  template <class T>
  void field(const json& obj, const std::string& path, std::string_view key, T& out) {
    auto it = obj.find(std::string(key));
    if (it != obj.end()) read(*it, join(path, key), out);
  }
};

std::vector<std::string> sections_for(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Dln: return {"dln"};
    case ExperimentKind::Regress: return {"regress"};
    case ExperimentKind::Stacked: return {"stacked"};
    case ExperimentKind::Sweep: return {"stacked", "sweep"};
    case ExperimentKind::Scan: return {"scan"};
  }
  return {};
}

void read_target(Reader& r, const json& j, const std::string& path, TargetConfig& t) {
  if (!r.object(j, path)) return;
  r.keys(j, path, {"kind", "alpha", "eigenvalues", "rotation_seed", "rho", "perturbation_seed"});
  r.field(j, path, "kind", t.kind);
  r.field(j, path, "alpha", t.alpha);
  r.field(j, path, "eigenvalues", t.eigenvalues);
  r.field(j, path, "rotation_seed", t.rotation_seed);
  r.field(j, path, "rho", t.rho);
  r.field(j, path, "perturbation_seed", t.perturbation_seed);
}

void read_sections(Reader& r, const json& root, ExperimentConfig& c) {
  const auto allowed = sections_for(c.kind);
  for (const char* name : {"dln", "regress", "stacked", "sweep", "scan"}) {
    if (!root.contains(name)) continue;
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
      r.fail(name, "section not used by " + std::string(to_string(c.kind)) + " experiments");
    }
  }
  if (auto it = root.find("dln"); it != root.end() && r.object(*it, "dln")) {
    const json& j = *it;
    r.keys(j, "dln", {"L", "d", "init", "pipeline", "target", "loss_threshold", "record_every",
                      "check_contraction", "check_envelope", "check_bound"});
    auto& d = c.dln;
    r.field(j, "dln", "L", d.L);
    r.field(j, "dln", "d", d.d);
    r.field(j, "dln", "init", d.init);
    r.field(j, "dln", "pipeline", d.pipeline);
    if (j.contains("target")) read_target(r, j["target"], "dln.target", d.target);
    r.field(j, "dln", "loss_threshold", d.loss_threshold);
    r.field(j, "dln", "record_every", d.record_every);
    r.field(j, "dln", "check_contraction", d.check_contraction);
    r.field(j, "dln", "check_envelope", d.check_envelope);
    r.field(j, "dln", "check_bound", d.check_bound);
  }
  if (auto it = root.find("regress"); it != root.end() && r.object(*it, "regress")) {
    const json& j = *it;
    r.keys(j, "regress", {"L", "n", "m_test", "block", "compare_baseline", "record_every"});
    auto& g = c.regress;
    r.field(j, "regress", "L", g.L);
    r.field(j, "regress", "n", g.n);
    r.field(j, "regress", "m_test", g.m_test);
    r.field(j, "regress", "block", g.block);
    r.field(j, "regress", "compare_baseline", g.compare_baseline);
    r.field(j, "regress", "record_every", g.record_every);
  }
  if (auto it = root.find("stacked"); it != root.end() && r.object(*it, "stacked")) {
    const json& j = *it;
    r.keys(j, "stacked", {"L", "d", "batch", "n_train", "n_test", "task_seed", "teacher_scale",
                          "init_scale", "record_every", "compare_mode", "check_ties"});
    auto& s = c.stacked;
    r.field(j, "stacked", "L", s.L);
    r.field(j, "stacked", "d", s.d);
    r.field(j, "stacked", "batch", s.batch);
    r.field(j, "stacked", "n_train", s.n_train);
    r.field(j, "stacked", "n_test", s.n_test);
    r.field(j, "stacked", "task_seed", s.task_seed);
    r.field(j, "stacked", "teacher_scale", s.teacher_scale);
    r.field(j, "stacked", "init_scale", s.init_scale);
    r.field(j, "stacked", "record_every", s.record_every);
    r.field(j, "stacked", "compare_mode", s.compare_mode);
    r.field(j, "stacked", "check_ties", s.check_ties);
  }
  if (auto it = root.find("sweep"); it != root.end() && r.object(*it, "sweep")) {
    const json& j = *it;
    r.keys(j, "sweep", {"kind", "fractions", "shapes"});
    r.field(j, "sweep", "kind", c.sweep.kind);
    r.field(j, "sweep", "fractions", c.sweep.fractions);
    r.field(j, "sweep", "shapes", c.sweep.shapes);
  }
  if (auto it = root.find("scan"); it != root.end() && r.object(*it, "scan")) {
    const json& j = *it;
    r.keys(j, "scan", {"L_grid", "n_grid"});
    r.field(j, "scan", "L_grid", c.scan.L_grid);
    r.field(j, "scan", "n_grid", c.scan.n_grid);
  }
}

std::size_t depth_of(const ExperimentConfig& c) {
  switch (c.kind) {
    case ExperimentKind::Dln: return c.dln.L;
    case ExperimentKind::Regress: return c.regress.L;
    case ExperimentKind::Stacked:
    case ExperimentKind::Sweep: return c.stacked.L;
    case ExperimentKind::Scan: return 0;
  }
  return 0;
}

void check_positive(std::vector<std::string>& errs, const std::string& path, std::size_t v) {
  if (v == 0) errs.push_back(path + ": must be positive");
}

void check_mode(std::vector<std::string>& errs, const std::string& path, const std::string& mode) {
  try {
    (void)parse_mode(mode);
  } catch (const std::invalid_argument&) {
    errs.push_back(path + ": unknown mode '" + mode +
                   "' (expected swe, no_sharing, always_shared, repara or symmetric_stem_swe)");
  }
}

std::vector<std::string> violations(const ExperimentConfig& c) {
  std::vector<std::string> errs;
  if (c.out.empty()) errs.push_back("out: must be a non-empty path");
  if (c.seeds.empty()) errs.push_back("seeds: must list at least one seed");
  {
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < c.seeds.size(); ++i)
      if (!seen.insert(c.seeds[i]).second)
        errs.push_back("seeds[" + std::to_string(i) + "]: duplicate seed " + std::to_string(c.seeds[i]));
  }
  if (c.eta && !(std::isfinite(*c.eta) && *c.eta > 0.0)) errs.push_back("eta: must be positive and finite");

  const std::size_t L = depth_of(c);
  if (c.kind != ExperimentKind::Scan) {
    const auto& s = c.schedule;
    check_mode(errs, "schedule.mode", s.mode);
    check_positive(errs, "schedule.steps", s.steps);
    if (s.untie && *s.untie > s.steps) {
      errs.push_back("schedule.untie (" + std::to_string(*s.untie) + ") exceeds schedule.steps (" +
                     std::to_string(s.steps) + ")");
    }
    if (s.unit) {
      const auto [a, b] = *s.unit;
      if (a == 0 || b == 0 || a * b != L) {
        errs.push_back("schedule.unit: " + std::to_string(a) + "x" + std::to_string(b) +
                       " does not cover depth L = " + std::to_string(L));
      } else if (a != 1 && (s.mode == "repara" || s.mode == "symmetric_stem_swe")) {
        errs.push_back("schedule.unit: mode " + s.mode + " requires unit size A = 1");
      }
    }
  }

  switch (c.kind) {
    case ExperimentKind::Dln: {
      const auto& d = c.dln;
      check_positive(errs, "dln.L", d.L);
      check_positive(errs, "dln.d", d.d);
      check_positive(errs, "dln.record_every", d.record_every);
      if (d.init != "identity" && d.init != "zas")
        errs.push_back("dln.init: expected identity or zas, got '" + d.init + "'");
      if (d.pipeline != "single" && d.pipeline != "two_phase")
        errs.push_back("dln.pipeline: expected single or two_phase, got '" + d.pipeline + "'");
      if (!(d.loss_threshold > 0.0 && d.loss_threshold < 1.0))
        errs.push_back("dln.loss_threshold: must lie in (0, 1)");
      const auto& t = d.target;
      if (t.kind == "alpha_identity") {
        if (!(std::isfinite(t.alpha) && t.alpha > 0.0)) errs.push_back("dln.target.alpha: must be positive");
      } else if (t.kind == "spd_spectrum" || t.kind == "near_spd") {
        if (!t.eigenvalues.empty() && t.eigenvalues.size() != d.d) {
          errs.push_back("dln.target.eigenvalues: " + std::to_string(t.eigenvalues.size()) +
                         " values for d = " + std::to_string(d.d));
        }
        for (std::size_t i = 0; i < t.eigenvalues.size(); ++i)
          if (!(std::isfinite(t.eigenvalues[i]) && t.eigenvalues[i] > 0.0))
            errs.push_back("dln.target.eigenvalues[" + std::to_string(i) + "]: must be positive");
        if (t.kind == "near_spd" && !(t.rho >= 0.0 && t.rho <= 1.0 / 3.0))
          errs.push_back("dln.target.rho: must lie in [0, 1/3]");
      } else {
        errs.push_back("dln.target.kind: expected alpha_identity, spd_spectrum or near_spd, got '" +
                       t.kind + "'");
      }
      if (d.pipeline == "single" && t.kind == "near_spd") {
        if (d.check_contraction) errs.push_back("dln.check_contraction: needs an SPD target");
        if (d.check_envelope) errs.push_back("dln.check_envelope: needs an SPD target");
      }
      if (d.pipeline == "two_phase" && d.init != "identity")
        errs.push_back("dln.init: two_phase starts from identity");
      break;
    }
    case ExperimentKind::Regress: {
      const auto& g = c.regress;
      check_positive(errs, "regress.L", g.L);
      check_positive(errs, "regress.n", g.n);
      check_positive(errs, "regress.record_every", g.record_every);
      if (g.block > g.L) errs.push_back("regress.block: exceeds regress.L");
      break;
    }
    case ExperimentKind::Stacked:
    case ExperimentKind::Sweep: {
      const auto& s = c.stacked;
      check_positive(errs, "stacked.L", s.L);
      check_positive(errs, "stacked.d", s.d);
      check_positive(errs, "stacked.batch", s.batch);
      check_positive(errs, "stacked.n_train", s.n_train);
      check_positive(errs, "stacked.record_every", s.record_every);
      if (!(std::isfinite(s.teacher_scale) && s.teacher_scale >= 0.0))
        errs.push_back("stacked.teacher_scale: must be non-negative");
      if (!(std::isfinite(s.init_scale) && s.init_scale >= 0.0))
        errs.push_back("stacked.init_scale: must be non-negative");
      if (!s.compare_mode.empty()) check_mode(errs, "stacked.compare_mode", s.compare_mode);
      if (c.kind == ExperimentKind::Sweep) {
        const auto& w = c.sweep;
        if (w.kind == "untie") {
          if (w.fractions.empty()) errs.push_back("sweep.fractions: must not be empty");
          for (std::size_t i = 0; i < w.fractions.size(); ++i)
            if (!(w.fractions[i] >= 0.0 && w.fractions[i] <= 1.0))
              errs.push_back("sweep.fractions[" + std::to_string(i) + "]: must lie in [0, 1]");
        } else if (w.kind == "grouping") {
          for (std::size_t i = 0; i < w.shapes.size(); ++i) {
            const auto [a, b] = w.shapes[i];
            if (a == 0 || b == 0 || a * b != s.L)
              errs.push_back("sweep.shapes[" + std::to_string(i) + "]: " + std::to_string(a) + "x" +
                             std::to_string(b) + " does not cover depth L = " + std::to_string(s.L));
          }
        } else {
          errs.push_back("sweep.kind: expected untie or grouping, got '" + w.kind + "'");
        }
      }
      break;
    }
    case ExperimentKind::Scan: {
      if (c.scan.L_grid.empty()) errs.push_back("scan.L_grid: must not be empty");
      if (c.scan.n_grid.empty()) errs.push_back("scan.n_grid: must not be empty");
      for (std::size_t i = 0; i < c.scan.L_grid.size(); ++i)
        check_positive(errs, "scan.L_grid[" + std::to_string(i) + "]", c.scan.L_grid[i]);
      for (std::size_t i = 0; i < c.scan.n_grid.size(); ++i)
        check_positive(errs, "scan.n_grid[" + std::to_string(i) + "]", c.scan.n_grid[i]);
      break;
    }
  }
  return errs;
}

}  // namespace

void validate(const ExperimentConfig& config) {
  auto errs = violations(config);
  if (!errs.empty()) throw ConfigError(std::move(errs));
}

ExperimentConfig parse_config(std::string_view json_text, std::optional<ExperimentKind> expected) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("(root): JSON parse error: ") + e.what()});
  }
  Reader r;
  if (!r.object(root, "(root)")) throw ConfigError(r.errors);

  ExperimentKind kind;
  if (auto it = root.find("experiment"); it != root.end()) {
    std::string name;
    if (!r.read(*it, "experiment", name)) throw ConfigError(r.errors);
    kind = parse_kind(name);
    if (expected && *expected != kind) {
      throw ConfigError({"experiment: config is '" + name + "' but the command is '" +
                         std::string(to_string(*expected)) + "'"});
    }
  } else if (expected) {
    kind = *expected;
  } else {
    throw ConfigError({"experiment: missing"});
  }

  ExperimentConfig c = default_config(kind);
  if (kind == ExperimentKind::Scan) {
    r.keys(root, "", {"experiment", "out", "seeds", "scan"});
  } else {
    r.keys(root, "", {"experiment", "out", "seeds", "schedule", "eta", "dln", "regress", "stacked",
                      "sweep", "scan"});
  }
  r.field(root, "", "out", c.out);
  r.field(root, "", "seeds", c.seeds);
  if (auto it = root.find("schedule"); it != root.end() && kind != ExperimentKind::Scan &&
                                       r.object(*it, "schedule")) {
    r.keys(*it, "schedule", {"mode", "steps", "untie", "unit"});
    r.field(*it, "schedule", "mode", c.schedule.mode);
    r.field(*it, "schedule", "steps", c.schedule.steps);
    r.field(*it, "schedule", "untie", c.schedule.untie);
    r.field(*it, "schedule", "unit", c.schedule.unit);
  }
  if (auto it = root.find("eta"); it != root.end() && kind != ExperimentKind::Scan) {
    if (it->is_string() && it->get<std::string>() == "auto") {
      c.eta.reset();
    } else if (it->is_number()) {
      c.eta = it->get<double>();
    } else {
      r.fail("eta", "expected \"auto\" or a number");
    }
  }
  read_sections(r, root, c);

  auto errs = std::move(r.errors);
  if (errs.empty()) errs = violations(c);
  if (!errs.empty()) throw ConfigError(std::move(errs));
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<ExperimentKind> expected) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError({"(file): cannot read " + path.string() + ": " + e.what()});
  }
  return parse_config(text, expected);
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = std::string(to_string(c.kind));
  j["out"] = c.out;
  j["seeds"] = c.seeds;
  if (c.kind != ExperimentKind::Scan) {
    json s;
    s["mode"] = c.schedule.mode;
    s["steps"] = c.schedule.steps;
    s["untie"] = c.schedule.untie ? json(*c.schedule.untie) : json(nullptr);
    s["unit"] = c.schedule.unit ? json::array({c.schedule.unit->first, c.schedule.unit->second})
                                : json(nullptr);
    j["schedule"] = s;
    j["eta"] = c.eta ? json(*c.eta) : json("auto");
  }
  switch (c.kind) {
    case ExperimentKind::Dln: {
      const auto& d = c.dln;
      const auto& t = d.target;
      j["dln"] = {{"L", d.L},
                  {"d", d.d},
                  {"init", d.init},
                  {"pipeline", d.pipeline},
                  {"target",
                   {{"kind", t.kind},
                    {"alpha", t.alpha},
                    {"eigenvalues", t.eigenvalues},
                    {"rotation_seed", t.rotation_seed},
                    {"rho", t.rho},
                    {"perturbation_seed", t.perturbation_seed}}},
                  {"loss_threshold", d.loss_threshold},
                  {"record_every", d.record_every},
                  {"check_contraction", d.check_contraction},
                  {"check_envelope", d.check_envelope},
                  {"check_bound", d.check_bound}};
      break;
    }
    case ExperimentKind::Regress: {
      const auto& g = c.regress;
      j["regress"] = {{"L", g.L},         {"n", g.n},
                      {"m_test", g.m_test}, {"block", g.block},
                      {"compare_baseline", g.compare_baseline}, {"record_every", g.record_every}};
      break;
    }
    case ExperimentKind::Sweep: {
      json shapes = json::array();
      for (const auto& [a, b] : c.sweep.shapes) shapes.push_back({a, b});
      j["sweep"] = {{"kind", c.sweep.kind}, {"fractions", c.sweep.fractions}, {"shapes", shapes}};
      [[fallthrough]];
    }
    case ExperimentKind::Stacked: {
      const auto& s = c.stacked;
      j["stacked"] = {{"L", s.L},
                      {"d", s.d},
                      {"batch", s.batch},
                      {"n_train", s.n_train},
                      {"n_test", s.n_test},
                      {"task_seed", s.task_seed},
                      {"teacher_scale", s.teacher_scale},
                      {"init_scale", s.init_scale},
                      {"record_every", s.record_every},
                      {"compare_mode", s.compare_mode},
                      {"check_ties", s.check_ties}};
      break;
    }
    case ExperimentKind::Scan:
      j["scan"] = {{"L_grid", c.scan.L_grid}, {"n_grid", c.scan.n_grid}};
      break;
  }
  return j.dump(2) + "\n";
}

void apply_overrides(ExperimentConfig& c, const Overrides& o) {
  std::vector<std::string> errs;
  if (o.L) {
    switch (c.kind) {
      case ExperimentKind::Dln: c.dln.L = *o.L; break;
      case ExperimentKind::Regress: c.regress.L = *o.L; break;
      case ExperimentKind::Stacked:
      case ExperimentKind::Sweep: c.stacked.L = *o.L; break;
      case ExperimentKind::Scan: c.scan.L_grid = {*o.L}; break;
    }
  }
  if (o.d) {
    if (c.kind == ExperimentKind::Dln) c.dln.d = *o.d;
    else if (c.kind == ExperimentKind::Stacked || c.kind == ExperimentKind::Sweep) c.stacked.d = *o.d;
    else errs.push_back("--d: not used by " + std::string(to_string(c.kind)) + " experiments");
  }
  const bool scheduled = c.kind != ExperimentKind::Scan;
  if (o.steps) {
    if (scheduled) c.schedule.steps = *o.steps;
    else errs.push_back("--steps: not used by scan experiments");
  }
  if (o.untie) {
    if (scheduled) c.schedule.untie = *o.untie;
    else errs.push_back("--untie: not used by scan experiments");
  }
  if (o.eta) {
    if (!scheduled) {
      errs.push_back("--eta: not used by scan experiments");
    } else if (*o.eta == "auto") {
      c.eta.reset();
    } else {
      try {
        std::size_t used = 0;
        const double v = std::stod(*o.eta, &used);
        if (used != o.eta->size()) throw std::invalid_argument("trailing text");
        c.eta = v;
      } catch (const std::exception&) {
        errs.push_back("--eta: expected auto or a number, got '" + *o.eta + "'");
      }
    }
  }
  if (o.seed) c.seeds = {*o.seed};
  if (o.out) c.out = *o.out;
  if (!errs.empty()) throw ConfigError(std::move(errs));
  validate(c);
}

std::string defaults_help() {
  return R"(Config files are strict JSON; unknown fields are rejected. Top level:
  experiment   dln | regress | stacked | sweep | scan (must match the subcommand)
  out          output directory (default: $SWE_LAB_OUT, else swe_lab_out)
  seeds        list of seeds (dln: [0]; regress, scan: 0..19; stacked, sweep: 0..9)
  schedule     {mode, steps, untie, unit}; untie null means untie = steps,
               unit null means [1, L]. Modes: swe, no_sharing, always_shared,
               repara, symmetric_stem_swe.
                 dln:           always_shared, steps 1000000, untie null
                 regress:       swe, steps 500, untie 100
                 stacked/sweep: swe, steps 2000, untie 200
  eta          "auto" (default) or a number. auto means: dln, the step-size
               bound for the init (ZAS bound, else the shared discrete bound);
               regress, 1/lambda_max of the MSE Hessian; stacked/sweep, 0.05.
Sections:
  dln      L 4, d 4, init identity|zas, pipeline single|two_phase,
           target {kind spd_spectrum|alpha_identity|near_spd, alpha 2,
           eigenvalues [] (evenly spaced over [0.5, 2]), rotation_seed 0,
           rho 0.3, perturbation_seed 0}, loss_threshold 1e-10,
           record_every 1, check_contraction/check_envelope/check_bound true.
           Target seeds are offset by the run seed. two_phase ignores the
           check_* flags and checks the phase-1 endpoint and convergence.
  regress  L 200, n 120, m_test 1000, block 0 (L/2), compare_baseline true,
           record_every 1
  stacked  L 8, d 16, batch 32, n_train 512, n_test 512, task_seed 1,
           teacher_scale 1, init_scale 0.5, record_every 50,
           compare_mode "" (none), check_ties true
  sweep    kind untie|grouping, fractions [0, 0.05, 0.1, 0.2, 0.5, 1],
           shapes [] (every [A, B] with A*B = L)
  scan     L_grid [50, 100, 200, 400], n_grid [25, 50, 100, 200]
Exit codes: 0 ok, 1 bound check failed, 2 config error, 3 numerical failure.)";
}

// --- summaries -----------------------------------------------------------------

Aggregate summarize(const std::vector<Trace>& traces) {
  if (traces.empty()) throw std::invalid_argument("summarize: no traces");
  const auto& cols = traces.front().columns();
  for (const Trace& t : traces) {
    if (t.columns() != cols) throw std::invalid_argument("summarize: trace schemas differ");
    if (t.empty()) throw std::invalid_argument("summarize: empty trace");
  }
  Aggregate a;
  for (std::size_t c = 1; c < cols.size(); ++c) {
    std::vector<double> v;
    for (const Trace& t : traces)
      if (const auto& cell = t.back()[c]) v.push_back(*cell);
    a.columns.push_back(cols[c]);
    if (v.empty()) {
      const double nan = std::nan("");
      a.median.push_back(nan);
      a.q25.push_back(nan);
      a.q75.push_back(nan);
    } else {
      a.median.push_back(median(v));
      a.q25.push_back(quantile(v, 0.25));
      a.q75.push_back(quantile(v, 0.75));
    }
  }
  return a;
}

std::vector<double> paired_ratios(const std::vector<Trace>& a, const std::vector<Trace>& b,
                                  std::string_view column) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_ratios: run counts differ");
  std::vector<double> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].back()[a[i].column_index(column)];
    const auto y = b[i].back()[b[i].column_index(column)];
    if (!x || !y) throw std::invalid_argument("paired_ratios: empty final cell in " + std::string(column));
    out.push_back(*x / *y);
  }
  return out;
}

// --- running -------------------------------------------------------------------

bool RunReport::checks_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckOutcome& c) { return c.passed; });
}

std::string RunReport::to_text() const {
  std::ostringstream out;
  out << "config:\n" << config_json << "\nper-seed:\n";
  for (const auto& s : seeds) {
    out << "  seed " << s.seed;
    for (const auto& [k, v] : s.metrics) out << "  " << k << "=" << format_double(v);
    out << "\n";
  }
  out << "aggregates:\n";
  for (const auto& [k, v] : aggregates) out << "  " << k << " = " << format_double(v) << "\n";
  out << "checks:\n";
  if (checks.empty()) out << "  (none requested)\n";
  for (const auto& c : checks)
    out << "  " << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": ")
        << c.detail << "\n";
  out << "result: " << (checks_passed() ? "PASS" : "FAIL") << "\n";
  return out.str();
}

namespace {

std::string seed_file(std::uint64_t seed, std::string_view suffix = "") {
  return std::to_string(seed) + std::string(suffix) + ".csv";
}

// Rows: one per statistic and group, columns as in the traces.
std::string summary_csv(const std::vector<std::pair<std::string, Aggregate>>& groups,
                        const std::vector<std::pair<std::string, std::vector<double>>>& paired) {
  std::ostringstream out;
  const auto& cols = groups.front().second.columns;
  out << "group,statistic";
  for (const auto& c : cols) out << "," << c;
  out << "\n";
  for (const auto& [name, a] : groups) {
    auto row = [&](const char* stat, const std::vector<double>& v) {
      out << name << "," << stat;
      for (double x : v) out << "," << format_double(x);
      out << "\n";
    };
    row("median", a.median);
    row("q25", a.q25);
    row("q75", a.q75);
  }
  for (const auto& [name, v] : paired) {
    out << name << ",median_ratio";
    for (double x : v) out << "," << format_double(x);
    out << "\n";
  }
  return out.str();
}

std::vector<std::pair<std::string, std::vector<double>>> paired_rows(
    const std::string& label, const std::vector<Trace>& a, const std::vector<Trace>& b) {
  std::vector<double> medians;
  for (std::size_t c = 1; c < a.front().columns().size(); ++c)
    medians.push_back(median(paired_ratios(a, b, a.front().columns()[c])));
  return {{label, medians}};
}

std::size_t unit_depth(const ExperimentConfig& c) { return depth_of(c); }

SweSchedule build_schedule(const ExperimentConfig& c, std::string_view mode, double eta) {
  const std::size_t L = unit_depth(c);
  const std::size_t untie = c.schedule.untie.value_or(c.schedule.steps);
  SweSchedule s = SweSchedule::make(parse_mode(mode), L, c.schedule.steps, untie, eta);
  if (c.schedule.unit) s.unit = UnitShape{c.schedule.unit->first, c.schedule.unit->second};
  return s;
}

dln::TargetSpec target_spec(const ExperimentConfig& c, std::uint64_t seed) {
  const auto& t = c.dln.target;
  dln::TargetSpec spec;
  spec.dim = c.dln.d;
  std::vector<double> eig = t.eigenvalues;
  if (eig.empty()) {
    eig.resize(c.dln.d);
    for (std::size_t i = 0; i < eig.size(); ++i)
      eig[i] = eig.size() == 1 ? 1.0 : 0.5 + 1.5 * static_cast<double>(i) / static_cast<double>(eig.size() - 1);
  }
  if (t.kind == "alpha_identity") {
    spec.kind = dln::AlphaIdentity{t.alpha};
  } else if (t.kind == "spd_spectrum") {
    spec.kind = dln::SpdSpectrum{eig, t.rotation_seed + seed};
  } else {
    spec.kind = dln::NearSpd{dln::SpdSpectrum{eig, t.rotation_seed + seed}, t.rho,
                             t.perturbation_seed + seed};
  }
  spec.validate();
  return spec;
}

struct Outputs {
  std::filesystem::path dir;
  void write(const std::string& name, std::string_view text) const { write_text_file(dir / name, text); }
};

std::string check_detail(const dln::CheckResult& r) {
  std::string s = std::to_string(r.steps_checked) + " steps checked";
  if (r.first_violation) s += ", first violation at step " + std::to_string(*r.first_violation);
  return s;
}

void run_dln(const ExperimentConfig& c, const Outputs& out, RunReport& report) {
  const auto& d = c.dln;
  std::vector<Trace> traces;
  std::vector<double> final_rel, steps;
  std::map<std::string, dln::CheckResult> merged;
  auto merge = [&](const std::string& name, const dln::CheckResult& r) {
    auto& m = merged[name];
    m.requested = m.requested || r.requested;
    m.steps_checked += r.steps_checked;
    if (!m.first_violation) m.first_violation = r.first_violation;
  };
  bool two_phase_ok = true;
  std::string two_phase_detail;

  for (std::uint64_t seed : c.seeds) {
    const Matrix phi = target_spec(c, seed).build();
    SeedSummary summary{seed, {}};
    if (d.pipeline == "two_phase") {
      dln::TwoPhaseOptions opt;
      opt.phase1_max_steps = c.schedule.steps;
      opt.final_threshold_rel = d.loss_threshold;
      opt.record_every = d.record_every;
      const auto res = dln::train_symmetric_two_phase(phi, d.L, opt);
      // Phase-2 steps continue the phase-1 step count in one trace.
      Trace t(dln::dln_trace_columns());
      for (const auto& row : res.phase1.trace.rows()) t.add_row(row);
      const double offset = static_cast<double>(res.phase1.steps);
      for (const auto& row : res.phase2.trace.rows()) {
        if (*row[0] == 0.0) continue;
        auto r = row;
        r[0] = *r[0] + offset;
        t.add_row(std::move(r));
      }
      out.write(seed_file(seed), to_csv(t));
      traces.push_back(std::move(t));
      const double rel = res.phase2.final_loss / res.initial_loss;
      summary.metrics = {{"phase1_steps", static_cast<double>(res.phase1.steps)},
                         {"phase2_steps", static_cast<double>(res.phase2.steps)},
                         {"phase1_symmetric_gap", res.phase1_symmetric_gap},
                         {"antisymmetric_norm", res.antisymmetric_norm},
                         {"final_loss_rel", rel}};
      final_rel.push_back(rel);
      steps.push_back(static_cast<double>(res.phase1.steps + res.phase2.steps));
      if (!res.phase1_ok() || !res.converged()) {
        two_phase_ok = false;
        if (two_phase_detail.empty())
          two_phase_detail = "seed " + std::to_string(seed) + (res.phase1_ok() ? " did not converge"
                                                                               : " phase-1 endpoint off");
      }
    } else {
      const auto init = d.init == "zas" ? dln::InitKind::Zas : dln::InitKind::Identity;
      dln::StopRule stop;
      stop.max_steps = c.schedule.steps;
      stop.loss_threshold_rel = d.loss_threshold;
      dln::TrainOptions opt;
      opt.record_every = d.record_every;
      opt.check_contraction = d.check_contraction;
      opt.check_envelope = d.check_envelope;
      opt.check_bound = d.check_bound;
      const SweSchedule sched = build_schedule(c, c.schedule.mode, c.eta.value_or(1.0));
      const auto run = dln::train_dln(phi, init, sched, c.eta, stop, opt);
      out.write(seed_file(seed), to_csv(run.trace));
      traces.push_back(run.trace);
      summary.metrics = {{"eta", run.eta},
                         {"steps", static_cast<double>(run.steps)},
                         {"initial_loss", run.initial_loss},
                         {"final_loss", run.final_loss},
                         {"converged", run.converged ? 1.0 : 0.0}};
      final_rel.push_back(run.final_loss / run.initial_loss);
      steps.push_back(static_cast<double>(run.steps));
      if (d.check_contraction) merge("contraction", run.contraction);
      if (d.check_envelope) merge("eigenvalue_envelope", run.envelope);
      if (d.check_bound) merge("loss_bound", run.bound);
    }
    report.seeds.push_back(std::move(summary));
  }
  for (const auto& [name, r] : merged) report.checks.push_back({name, r.passed(), check_detail(r)});
  if (d.pipeline == "two_phase") {
    report.checks.push_back({"two_phase", two_phase_ok,
                             two_phase_ok ? "all seeds converged" : two_phase_detail});
  }
  report.aggregates = {{"median_steps", median(steps)}, {"median_final_loss_rel", median(final_rel)}};
  out.write("summary.csv", summary_csv({{c.schedule.mode, summarize(traces)}}, {}));
}

void run_regress(const ExperimentConfig& c, const Outputs& out, RunReport& report) {
  const auto& g = c.regress;
  const bool baseline = g.compare_baseline && c.schedule.mode != "no_sharing";
  std::vector<Trace> main_traces, base_traces;
  std::vector<double> test, base_test, ratio;
  regress::RegressionOptions opt{g.block, g.record_every};
  for (std::uint64_t seed : c.seeds) {
    const auto problem = regress::make_problem(g.L, g.n, g.m_test, seed);
    const double eta = c.eta.value_or(regress::default_eta(problem));
    const auto run = regress::train_regression(problem, build_schedule(c, c.schedule.mode, eta), opt);
    out.write(seed_file(seed), to_csv(run.trace));
    SeedSummary s{seed,
                  {{"eta", eta},
                   {"initial_train_mse", run.initial_train_mse},
                   {"final_train_mse", run.final_train_mse},
                   {"final_test_mse", run.final_test_mse}}};
    test.push_back(run.final_test_mse);
    if (!run.w_at_untie.empty()) {
      const auto [head, tail] = regress::block_means(run.w_at_untie, g.block == 0 ? g.L / 2 : g.block);
      s.metrics.push_back({"head_mean_at_untie", head});
      s.metrics.push_back({"tail_mean_at_untie", tail});
    }
    main_traces.push_back(run.trace);
    if (baseline) {
      const auto base = regress::train_regression(problem, build_schedule(c, "no_sharing", eta), opt);
      out.write(seed_file(seed, "_baseline"), to_csv(base.trace));
      s.metrics.push_back({"baseline_final_train_mse", base.final_train_mse});
      s.metrics.push_back({"baseline_final_test_mse", base.final_test_mse});
      s.metrics.push_back({"test_mse_ratio", run.final_test_mse / base.final_test_mse});
      base_test.push_back(base.final_test_mse);
      ratio.push_back(run.final_test_mse / base.final_test_mse);
      base_traces.push_back(base.trace);
    }
    report.seeds.push_back(std::move(s));
  }
  report.aggregates.push_back({"median_final_test_mse", median(test)});
  std::vector<std::pair<std::string, Aggregate>> groups = {{c.schedule.mode, summarize(main_traces)}};
  std::vector<std::pair<std::string, std::vector<double>>> paired;
  if (baseline) {
    report.aggregates.push_back({"median_baseline_final_test_mse", median(base_test)});
    report.aggregates.push_back({"median_test_mse_ratio_swe_over_gd", median(ratio)});
    groups.push_back({"no_sharing", summarize(base_traces)});
    paired = paired_rows(c.schedule.mode + "/no_sharing", main_traces, base_traces);
  }
  out.write("summary.csv", summary_csv(groups, paired));
}

stacked::TaskConfig task_config(const StackedConfig& s) {
  return {s.L, s.d, s.n_train, s.n_test, s.teacher_scale, s.task_seed};
}

stacked::StackedOptions stacked_options(const StackedConfig& s, std::uint64_t seed) {
  stacked::StackedOptions o;
  o.batch = s.batch;
  o.init_scale = s.init_scale;
  o.seed = seed;
  o.record_every = s.record_every;
  o.check_ties = s.check_ties;
  return o;
}

constexpr double kStackedEta = 0.05;

void run_stacked(const ExperimentConfig& c, const Outputs& out, RunReport& report) {
  const auto& s = c.stacked;
  const auto task = stacked::make_task(task_config(s));
  const double eta = c.eta.value_or(kStackedEta);
  std::vector<Trace> main_traces, cmp_traces;
  std::vector<double> test, cmp_test;
  std::size_t tie_checks = 0;
  std::optional<std::pair<std::uint64_t, std::size_t>> tie_violation;
  for (std::uint64_t seed : c.seeds) {
    auto opt = stacked_options(s, seed);
    // Also record the step just before untying.
    const std::size_t untie = c.schedule.untie.value_or(c.schedule.steps);
    if (untie >= 1) opt.record_steps.push_back(untie - 1);
    const auto run = stacked::train_stacked(task, build_schedule(c, c.schedule.mode, eta), opt);
    out.write(seed_file(seed), to_csv(run.trace));
    SeedSummary sum{seed, {{"final_train_mse", run.final_train_mse}, {"final_test_mse", run.final_test_mse}}};
    tie_checks += run.tie_checks;
    if (run.tie_violation && !tie_violation) tie_violation = {{seed, *run.tie_violation}};
    test.push_back(run.final_test_mse);
    main_traces.push_back(run.trace);
    if (!s.compare_mode.empty()) {
      const auto cmp = stacked::train_stacked(task, build_schedule(c, s.compare_mode, eta), opt);
      out.write(seed_file(seed, "_compare"), to_csv(cmp.trace));
      sum.metrics.push_back({"compare_final_test_mse", cmp.final_test_mse});
      cmp_test.push_back(cmp.final_test_mse);
      cmp_traces.push_back(cmp.trace);
      tie_checks += cmp.tie_checks;
      if (cmp.tie_violation && !tie_violation) tie_violation = {{seed, *cmp.tie_violation}};
    }
    report.seeds.push_back(std::move(sum));
  }
  report.aggregates.push_back({"median_final_test_mse", median(test)});
  std::vector<std::pair<std::string, Aggregate>> groups = {{c.schedule.mode, summarize(main_traces)}};
  std::vector<std::pair<std::string, std::vector<double>>> paired;
  if (!s.compare_mode.empty()) {
    report.aggregates.push_back({"median_compare_final_test_mse", median(cmp_test)});
    groups.push_back({"compare:" + s.compare_mode, summarize(cmp_traces)});
    paired = paired_rows(c.schedule.mode + "/" + s.compare_mode, main_traces, cmp_traces);
  }
  if (s.check_ties) {
    std::string detail = std::to_string(tie_checks) + " shared steps checked";
    if (tie_violation)
      detail += ", seed " + std::to_string(tie_violation->first) + " broke ties at step " +
                std::to_string(tie_violation->second);
    report.checks.push_back({"tie_classes", !tie_violation, detail});
  }
  out.write("summary.csv", summary_csv(groups, paired));
}

void run_sweep(const ExperimentConfig& c, const Outputs& out, RunReport& report) {
  const auto& s = c.stacked;
  const auto task = stacked::make_task(task_config(s));
  const double eta = c.eta.value_or(kStackedEta);
  auto base = stacked_options(s, 0);
  base.check_ties = false;
  stacked::SweepTable table;
  if (c.sweep.kind == "untie") {
    table = stacked::untie_sweep(task, c.schedule.steps, eta, c.sweep.fractions, c.seeds, base);
  } else {
    std::vector<UnitShape> shapes;
    for (const auto& [a, b] : c.sweep.shapes) shapes.push_back({a, b});
    if (shapes.empty())
      for (std::size_t a = s.L; a >= 1; --a)
        if (s.L % a == 0) shapes.push_back({a, s.L / a});
    table = stacked::grouping_sweep(task, c.schedule.steps, c.schedule.untie.value_or(c.schedule.steps),
                                    eta, shapes, c.seeds, base);
  }
  for (std::uint64_t seed : c.seeds) {
    std::ostringstream csv;
    csv << "config,seed,final_test_mse\n";
    SeedSummary sum{seed, {}};
    for (const auto& r : table.rows) {
      if (r.seed != seed) continue;
      csv << r.config << "," << r.seed << "," << format_double(r.final_test_mse) << "\n";
      sum.metrics.push_back({r.config, r.final_test_mse});
    }
    out.write(seed_file(seed), csv.str());
    report.seeds.push_back(std::move(sum));
  }
  std::ostringstream summary;
  summary << "config,median_final_test_mse\n";
  for (const auto& r : table.summary) {
    summary << r.config << "," << format_double(r.median_final_test_mse) << "\n";
    report.aggregates.push_back({"median_final_test_mse[" + r.config + "]", r.median_final_test_mse});
  }
  out.write("summary.csv", summary.str());
}

void run_scan(const ExperimentConfig& c, const Outputs& out, RunReport& report) {
  const auto scan = regress::prop1_error_scan(c.scan.L_grid, c.scan.n_grid, c.seeds);
  std::string header;
  for (const auto& col : regress::scan_columns()) header += (header.empty() ? "" : ",") + col;
  for (std::uint64_t seed : c.seeds) {
    std::ostringstream csv;
    csv << header << "\n";
    SeedSummary sum{seed, {}};
    for (const auto& r : scan.rows) {
      if (r.seed != seed) continue;
      csv << r.dim << "," << r.samples << "," << r.seed << "," << format_double(r.err_stem) << ","
          << format_double(r.stem_norm) << "," << format_double(r.ratio_sqrt) << "\n";
      sum.metrics.push_back({"err_stem[L=" + std::to_string(r.dim) + ",n=" + std::to_string(r.samples) + "]",
                             r.err_stem});
    }
    out.write(seed_file(seed), csv.str());
    report.seeds.push_back(std::move(sum));
  }
  std::ostringstream summary;
  summary << "L,n,median_err_stem,median_stem_norm,ratio_sqrt_L_over_n\n";
  for (std::size_t L : c.scan.L_grid)
    for (std::size_t n : c.scan.n_grid)
      summary << L << "," << n << "," << format_double(regress::cell_median_error(scan, L, n)) << ","
              << format_double(regress::cell_median_stem_norm(scan, L, n)) << ","
              << format_double(std::sqrt(static_cast<double>(L) / static_cast<double>(n))) << "\n";
  out.write("summary.csv", summary.str());
  report.aggregates.push_back({"log_log_slope", scan.slope});
}

}  // namespace

RunReport run(const ExperimentConfig& config) {
  validate(config);
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.config_json = config_to_json(config);
  report.directory = std::filesystem::path(config.out) / std::string(to_string(config.kind));
  std::filesystem::create_directories(report.directory);
  const Outputs out{report.directory};
  switch (config.kind) {
    case ExperimentKind::Dln: run_dln(config, out, report); break;
    case ExperimentKind::Regress: run_regress(config, out, report); break;
    case ExperimentKind::Stacked: run_stacked(config, out, report); break;
    case ExperimentKind::Sweep: run_sweep(config, out, report); break;
    case ExperimentKind::Scan: run_scan(config, out, report); break;
  }
  out.write("report.txt", report.to_text());
  report.wall_clock = std::chrono::steady_clock::now() - start;
  return report;
}

}  // namespace swe::lab
