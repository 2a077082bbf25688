#include "fiberflow/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fiberflow/holonomy.hpp"
#include "fiberflow/kato.hpp"
#include "fiberflow/oracle.hpp"
#include "fiberflow/paths.hpp"
#include "fiberflow/semigroup.hpp"

namespace fiberflow::cli {
namespace {

using Json = nlohmann::ordered_json;

enum class Kind { Text, Real, Count, Integer, Seed, Flag };

struct Key {
  std::string name;
  Kind kind = Kind::Text;
  /// Empty optional: the key is required. An empty string means "unset".
  std::optional<std::string> fallback;
  std::string help;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct Outcome {
  Json labels = Json::array();
  Json values = Json::array();
  Json stderrs = Json::array();
  std::optional<double> aliveFraction;
  Json report = Json::object();
  bool passed = true;
  Table table;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<double> parseReal(const std::string& text) {
  double value = 0.0;
  const char* first = text.data();
  if (!text.empty() && text[0] == '+') ++first;
  const auto res = std::from_chars(first, text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || std::isnan(value)) return std::nullopt;
  return value;
}

std::optional<std::uint64_t> parseUnsigned(const std::string& text) {
  std::uint64_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec == std::errc() && res.ptr == text.data() + text.size()) return value;
  // Also accept integral reals such as 1e5.
  const auto real = parseReal(text);
  if (real && *real >= 0.0 && *real < 9.2e18 && *real == std::floor(*real)) return static_cast<std::uint64_t>(*real);
  return std::nullopt;
}

std::string canonical(const Key& key, const std::string& raw) {
  const std::string text = trim(raw);
  if (text.empty()) {
    if (key.fallback && key.fallback->empty()) return text;
    throw UsageError(key.name + ": empty value");
  }
  auto bad = [&](const std::string& what) -> UsageError {
    return UsageError(key.name + ": expected " + what + ", got '" + text + "'");
  };
  switch (key.kind) {
    case Kind::Text: return text;
    case Kind::Real: {
      const auto v = parseReal(text);
      if (!v) throw bad("a number");
      return formatNumber(*v);
    }
    case Kind::Count: {
      const auto v = parseUnsigned(text);
      if (!v || *v == 0) throw bad("a positive integer");
      return std::to_string(*v);
    }
    case Kind::Seed: {
      const auto v = parseUnsigned(text);
      if (!v) throw bad("an unsigned integer");
      return std::to_string(*v);
    }
    case Kind::Integer: {
      int v = 0;
      const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
      if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw bad("an integer");
      return std::to_string(v);
    }
    case Kind::Flag: {
      if (text == "true" || text == "1" || text == "yes") return "true";
      if (text == "false" || text == "0" || text == "no") return "false";
      throw bad("true or false");
    }
  }
  return text;
}

/// Typed, key-named access to a RunConfig.
class Settings {
 public:
  explicit Settings(const RunConfig& config) : config_(&config) {}

  [[nodiscard]] const std::string& text(const std::string& key) const {
    const auto it = config_->values.find(key);
    if (it == config_->values.end()) throw Error(key + ": not a key of " + config_->command);
    return it->second;
  }
  [[nodiscard]] bool has(const std::string& key) const {
    const auto it = config_->values.find(key);
    return it != config_->values.end() && !it->second.empty();
  }
  [[nodiscard]] double real(const std::string& key) const { return *parseReal(text(key)); }
  [[nodiscard]] double positive(const std::string& key) const {
    const double v = real(key);
    if (!(v > 0.0) || !std::isfinite(v)) throw UsageError(key + ": must be positive and finite");
    return v;
  }
  [[nodiscard]] std::uint64_t count(const std::string& key) const { return *parseUnsigned(text(key)); }
  [[nodiscard]] int integer(const std::string& key) const { return std::stoi(text(key)); }
  [[nodiscard]] int atLeast(const std::string& key, int lowest) const {
    const int v = integer(key);
    if (v < lowest) throw UsageError(key + ": must be at least " + std::to_string(lowest));
    return v;
  }
  [[nodiscard]] bool flag(const std::string& key) const { return text(key) == "true"; }
  [[nodiscard]] const RunConfig& config() const { return *config_; }

 private:
  const RunConfig* config_;
};

/// Runs f, re-throwing library errors as usage errors that name `key`.
template <class F>
auto keyed(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    if (what.rfind(key + ":", 0) == 0) throw UsageError(what);
    throw UsageError(key + ": " + what);
  }
}

// ------------------------------------------------------------- value parsers

Json parseJson(const std::string& key, const std::string& text) {
  return keyed(key, [&] { return Json::parse(text); });
}

std::vector<double> numbersOf(const std::string& key, const Json& j) {
  if (!j.is_array()) throw UsageError(key + ": expected a list of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw UsageError(key + ": expected a list of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<double> numberList(const Settings& s, const std::string& key) {
  const auto values = numbersOf(key, parseJson(key, s.text(key)));
  if (values.empty()) throw UsageError(key + ": list is empty");
  return values;
}

ManifoldModel manifoldOf(const Settings& s) {
  return keyed("manifold", [&] { return parseManifold(s.text("manifold")); });
}

Point pointFrom(const std::string& key, const std::vector<double>& coords, const ManifoldModel& model) {
  return keyed(key, [&] {
    const Point p = model.makePoint(std::span<const double>(coords.data(), coords.size()));
    model.validate(p);
    return p;
  });
}

Point pointOf(const Settings& s, const std::string& key, const ManifoldModel& model) {
  if (s.text(key) == "origin") return model.origin();
  const Point p = pointFrom(key, numbersOf(key, parseJson(key, s.text(key))), model);
  if (!model.inside(p)) throw UsageError(key + ": point lies outside " + model.describe());
  return p;
}

struct Segment {
  std::vector<double> from;
  std::vector<double> to;
  int n = 0;
};

std::optional<Segment> segmentOf(const std::string& key, const Json& j) {
  if (!j.is_object()) return std::nullopt;
  for (const auto& [name, value] : j.items())
    if (name != "from" && name != "to" && name != "n") throw UsageError(key + ": unknown field '" + name + "'");
  if (!j.contains("from") || !j.contains("to") || !j.contains("n"))
    throw UsageError(key + ": a segment needs from, to and n");
  Segment seg{numbersOf(key, j["from"]), numbersOf(key, j["to"]), 0};
  if (!j["n"].is_number_integer() || j["n"].get<int>() < 2) throw UsageError(key + ": n must be an integer >= 2");
  seg.n = j["n"].get<int>();
  if (seg.from.size() != seg.to.size()) throw UsageError(key + ": from and to differ in length");
  return seg;
}

/// A JSON list of coordinate lists, or {"from": [...], "to": [...], "n": N}.
std::vector<Point> gridOf(const Settings& s, const std::string& key, const ManifoldModel& model) {
  const Json j = parseJson(key, s.text(key));
  std::vector<Point> points;
  if (const auto seg = segmentOf(key, j)) {
    for (int i = 0; i < seg->n; ++i) {
      const double w = static_cast<double>(i) / (seg->n - 1);
      std::vector<double> c(seg->from.size());
      for (std::size_t d = 0; d < c.size(); ++d) c[d] = (1.0 - w) * seg->from[d] + w * seg->to[d];
      points.push_back(pointFrom(key, c, model));
    }
  } else {
    if (!j.is_array() || j.empty()) throw UsageError(key + ": expected a list of points or a segment");
    for (const auto& p : j) points.push_back(pointFrom(key, numbersOf(key, p), model));
  }
  return points;
}

BundleSpec bundleOf(const Settings& s, const ManifoldModel& model) {
  const int rank = s.integer("bundle-rank");
  if (rank < 1 || rank > kMaxRank) throw UsageError("bundle-rank: must be in [1, 16]");
  const OneForm beta = keyed("beta", [&] { return parseOneForm(s.text("beta"), model); });
  std::string connection = s.text("connection");
  if (connection == "auto") connection = beta.isZero() ? "trivial" : "magnetic";
  if (connection == "trivial") {
    if (!beta.isZero()) throw UsageError("beta: a nonzero 1-form needs connection magnetic");
    return BundleSpec::trivial(rank);
  }
  if (connection == "magnetic") {
    if (rank != 1) throw UsageError("bundle-rank: magnetic bundles have rank 1");
    return keyed("beta", [&] { return BundleSpec::magnetic(beta); });
  }
  if (connection == "levi-civita") {
    if (!beta.isZero()) throw UsageError("beta: only magnetic connections take a 1-form");
    if (rank != 2) throw UsageError("bundle-rank: the Levi-Civita bundle has rank 2");
    return keyed("connection", [&] { return BundleSpec::leviCivita(model); });
  }
  throw UsageError("connection: expected auto, trivial, magnetic or levi-civita, got '" + connection + "'");
}

PotentialSpec potentialOf(const Settings& s, const ManifoldModel& model, int rank) {
  return keyed("potential", [&] { return parsePotential(s.text("potential"), model, rank); });
}

ScalarPotential scalarPotentialOf(const Settings& s, const ManifoldModel& model) {
  const PotentialSpec v = potentialOf(s, model, 1);
  if (!v.scalarPart()) throw UsageError("potential: this command needs a scalar potential");
  return *v.scalarPart();
}

SectionSpec sectionOf(const Settings& s, const ManifoldModel& model, int rank) {
  std::string text = s.text("section");
  if (text == "auto") text = model.isCompact() ? "one()" : "gaussian(s=1)";
  return keyed("section", [&] { return parseSection(text, model, rank); });
}

MonteCarloSpec monteCarloOf(const Settings& s) {
  MonteCarloSpec mc;
  mc.h = s.positive("h");
  mc.n = s.count("n");
  mc.seed = s.count("seed");
  mc.workers = s.atLeast("workers", 1);
  return mc;
}

// ------------------------------------------------------------------ outcome

Json complexJson(cd z) { return Json::array({z.real(), z.imag()}); }

void addEstimate(Outcome& o, const Estimate& e, const std::string& label) {
  for (Eigen::Index i = 0; i < e.value.size(); ++i) {
    o.labels.push_back(e.value.size() > 1 ? label + "[" + std::to_string(i) + "]" : label);
    o.values.push_back(complexJson(e.value[i]));
    o.stderrs.push_back(e.stdError[i]);
  }
}

void addNumber(Outcome& o, const std::string& label, double value, std::optional<double> stderr = std::nullopt) {
  o.labels.push_back(label);
  o.values.push_back(value);
  o.stderrs.push_back(stderr ? Json(*stderr) : Json());
}

Json estimateJson(const Estimate& e) {
  Json values = Json::array(), errors = Json::array();
  for (Eigen::Index i = 0; i < e.value.size(); ++i) {
    values.push_back(complexJson(e.value[i]));
    errors.push_back(e.stdError[i]);
  }
  return Json{{"values", values},
              {"stderrs", errors},
              {"nSamples", e.nSamples},
              {"aliveFraction", e.aliveFraction},
              {"dominationViolations", e.dominationViolations}};
}

Json coordsJson(const Point& p) {
  Json c = Json::array();
  for (Eigen::Index i = 0; i < p.coords.size(); ++i) c.push_back(p.coords[i]);
  return c;
}

std::string cell(const Json& j) {
  if (j.is_null()) return "";
  if (j.is_number_float()) return formatNumber(j.get<double>());
  if (j.is_string()) return j.get<std::string>();
  return j.dump();
}

Table defaultTable(const Outcome& o) {
  Table t;
  const bool complex = std::any_of(o.values.begin(), o.values.end(), [](const Json& v) { return v.is_array(); });
  t.header = complex ? std::vector<std::string>{"label", "re", "im", "stderr"}
                     : std::vector<std::string>{"label", "value", "stderr"};
  for (std::size_t i = 0; i < o.values.size(); ++i) {
    std::vector<std::string> row{cell(o.labels[i])};
    if (complex) {
      const Json& v = o.values[i];
      row.push_back(cell(v.is_array() ? v[0] : v));
      row.push_back(v.is_array() ? cell(v[1]) : "0");
    } else {
      row.push_back(cell(o.values[i]));
    }
    row.push_back(cell(o.stderrs[i]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void writeCsv(std::ostream& out, const Table& table) {
  auto quoted = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << quoted(table.header[i]);
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << quoted(row[i]);
    out << '\n';
  }
}

// ----------------------------------------------------------------- commands

Outcome semigroupCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  const auto bundle = bundleOf(s, model);
  const auto v = potentialOf(s, model, bundle.rank());
  const auto f = sectionOf(s, model, bundle.rank());
  const Point x = pointOf(s, "x", model);
  const double t = s.positive("t");
  const auto mc = monteCarloOf(s);
  const bool scalar = bundle.connection() == ConnectionKind::Trivial && bundle.rank() == 1 && v.scalarPart();
  const Estimate e = scalar ? fkScalar(model, *v.scalarPart(), f, x, t, mc) : fkVector(model, bundle, v, f, x, t, mc);
  Outcome o;
  addEstimate(o, e, "Q_t f(x)");
  o.aliveFraction = e.aliveFraction;
  o.report = {{"estimator", scalar ? "scalar" : "vector"},
              {"dominationViolations", e.dominationViolations},
              {"maxDominationExcess", e.maxDominationExcess}};
  o.passed = e.dominationViolations == 0;
  if (s.has("dump-path")) {
    const PathSample path = samplePath(model, bundle, x, t, mc.h, {mc.seed, 0});
    std::ofstream file(s.text("dump-path"));
    if (!file) throw UsageError("dump-path: cannot open '" + s.text("dump-path") + "'");
    writePathCsv(file, path);
  }
  return o;
}

Outcome groundEnergyCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  const auto bundle = bundleOf(s, model);
  const auto v = potentialOf(s, model, bundle.rank());
  const auto f = sectionOf(s, model, bundle.rank());
  std::vector<double> grid;
  if (s.has("t-grid")) {
    grid = numberList(s, "t-grid");
  } else if (s.has("tmax")) {
    const double tmax = s.positive("tmax");
    for (int i = 1; i <= 12; ++i) grid.push_back(tmax * i / 12.0);
  } else {
    throw UsageError("tmax: required unless t-grid is given");
  }
  const auto mc = monteCarloOf(s);
  const auto r = keyed("t-grid", [&] { return groundEnergy(model, bundle, v, f, f, grid, mc); });
  Outcome o;
  addNumber(o, "groundEnergy", r.energy, r.stdError);
  o.aliveFraction = r.aliveFraction;
  o.report = {{"tGrid", r.tGrid},
              {"functional", r.functional},
              {"functionalStderr", r.functionalStderr},
              {"fitFrom", r.fitFrom},
              {"fitResidual", r.fitResidual},
              {"dominationViolations", r.dominationViolations}};
  o.passed = r.dominationViolations == 0;
  o.table.header = {"t", "functional", "stderr"};
  for (std::size_t i = 0; i < r.tGrid.size(); ++i)
    o.table.rows.push_back(
        {formatNumber(r.tGrid[i]), formatNumber(r.functional[i]), formatNumber(r.functionalStderr[i])});
  return o;
}

Outcome resolventCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  const auto bundle = bundleOf(s, model);
  const auto v = potentialOf(s, model, bundle.rank());
  const auto f = sectionOf(s, model, bundle.rank());
  const Point x = pointOf(s, "x", model);
  const double lambda = s.positive("lambda");
  const int k = s.atLeast("k", 1);
  const int nodes = s.atLeast("nodes", 1);
  const auto mc = monteCarloOf(s);
  const auto r = resolventApply(model, bundle, v, f, x, k, lambda, nodes, mc);
  Outcome o;
  addEstimate(o, r.value, "(H + lambda)^-k f(x)");
  o.aliveFraction = r.value.aliveFraction;
  o.report = {{"dominating", estimateJson(r.dominating)},
              {"nodes", r.nodes},
              {"weights", r.weights},
              {"divergingTail", r.divergingTail},
              {"lastNodeShare", r.lastNodeShare},
              {"dominationViolations", r.dominationViolations}};
  o.passed = r.dominationViolations == 0;
  return o;
}

Outcome dominationCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  const auto bundle = bundleOf(s, model);
  const auto v = potentialOf(s, model, bundle.rank());
  const auto f = sectionOf(s, model, bundle.rank());
  const Point x = pointOf(s, "x", model);
  const double t = s.positive("t");
  const auto r = dominationCheck(model, bundle, v, f, x, t, monteCarloOf(s));
  Outcome o;
  addEstimate(o, r.vector, "Q_t f(x)");
  addEstimate(o, r.scalar, "dominating");
  o.aliveFraction = r.vector.aliveFraction;
  o.report = {{"violations", r.violations},
              {"maxExcess", r.maxExcess},
              {"firstViolatingPath", r.firstViolatingPath ? Json(*r.firstViolatingPath) : Json()},
              {"averagedMargin", r.averagedMargin}};
  o.passed = r.passed();
  return o;
}

Json heatNormJson(const HeatNormCheck& c) {
  return Json{{"p", c.p}, {"q", c.q}, {"norm", c.norm}, {"bound", c.bound}, {"passed", c.passed}};
}

Outcome smoothingCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  if (model.kind() != ModelKind::Sphere2) throw UsageError("manifold: smoothing runs on sphere2 models");
  const auto v = potentialOf(s, model, 1);
  const double t = s.positive("t");
  const double q = s.real("q");
  if (!(q >= 2.0)) throw UsageError("q: must be in [2, inf]");
  const int probes = s.atLeast("probes", 1);
  const int degree = s.atLeast("degree", 0);
  const auto grid = keyed("quad-theta", [&] {
    return sphereQuadrature(model, s.atLeast("quad-theta", 2), s.atLeast("quad-phi", 3));
  });
  const auto mc = monteCarloOf(s);
  StreamRng rng({deriveSeed(mc.seed, 0x50524f4245), 0});
  std::vector<SectionSpec> sections;
  for (int i = 0; i < probes; ++i) sections.push_back(probeSection(SphereProbe(model.radius(), degree, rng)));
  const auto r = smoothingNormBound(model, v, t, q, sections, grid, mc);
  Outcome o;
  for (std::size_t i = 0; i < r.probeNorms.size(); ++i)
    addNumber(o, "probe " + std::to_string(i), r.probeNorms[i], r.probeErrors[i]);
  Json norms = Json::array();
  for (const auto& c : r.heatNorms) norms.push_back(heatNormJson(c));
  o.report = {{"ct", r.ct}, {"d", r.d}, {"bound", r.bound}, {"heatNorms", norms}, {"violations", r.violations}};
  o.passed = r.passed();
  return o;
}

Json identityJson(const IdentityReport& r) {
  return Json{{"oneShot", estimateJson(r.oneShot)}, {"nested", estimateJson(r.nested)},
              {"outer", r.outer},                   {"inner", r.inner},
              {"zScore", r.zScore},                 {"maxDifference", r.maxDifference},
              {"boundViolations", r.boundViolations}, {"passed", r.passed}};
}

Outcome identityCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  const auto bundle = bundleOf(s, model);
  const auto v = potentialOf(s, model, bundle.rank());
  const auto f = sectionOf(s, model, bundle.rank());
  const Point x = pointOf(s, "x", model);
  const double split = s.real("s");
  const double t = s.positive("t");
  const std::string mode = s.text("mode");
  if (mode != "both" && mode != "identity" && mode != "perturbation")
    throw UsageError("mode: expected both, identity or perturbation");
  const auto mc = monteCarloOf(s);
  Outcome o;
  auto record = [&](const std::string& name, const IdentityReport& r) {
    addEstimate(o, r.oneShot, name + ".oneShot");
    addEstimate(o, r.nested, name + ".nested");
    o.report[name] = identityJson(r);
    o.passed = o.passed && r.passed;
  };
  if (mode != "perturbation") {
    if (split < 0.0) throw UsageError("s: must be nonnegative");
    record("identity", semigroupIdentityCheck(model, bundle, v, f, split, t, x, mc));
  }
  if (mode != "identity") {
    if (split < 0.0 || split > t) throw UsageError("s: the perturbation formula needs 0 <= s <= t");
    record("perturbation", perturbationFormulaCheck(model, bundle, v, f, split, t, x, mc));
  }
  return o;
}

Outcome continuityCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  const auto bundle = bundleOf(s, model);
  const auto v = potentialOf(s, model, bundle.rank());
  const auto f = sectionOf(s, model, bundle.rank());
  const double t = s.positive("t");
  const auto seg = segmentOf("x-grid", parseJson("x-grid", s.text("x-grid")));
  if (!seg) throw UsageError("x-grid: continuity-scan needs a segment {\"from\": [...], \"to\": [...], \"n\": N}");
  auto coords = [](const std::vector<double>& c) {
    Coords out(static_cast<Eigen::Index>(c.size()));
    for (std::size_t i = 0; i < c.size(); ++i) out[static_cast<Eigen::Index>(i)] = c[i];
    return out;
  };
  const auto sGrid = numberList(s, "s-grid");
  const auto mc = monteCarloOf(s);
  const auto r = continuityScan(model, bundle, v, f, t, coords(seg->from), coords(seg->to), seg->n, sGrid, mc,
                                s.flag("refine"));
  Outcome o;
  for (std::size_t i = 0; i < r.sGrid.size(); ++i)
    addNumber(o, "supDefect s=" + formatNumber(r.sGrid[i]), r.supDefect[i], r.supDefectStderr[i]);
  Json values = Json::array();
  for (const auto& e : r.values) values.push_back(estimateJson(e));
  o.report = {{"sGrid", r.sGrid},
              {"supDefect", r.supDefect},
              {"supDefectStderr", r.supDefectStderr},
              {"defectMonotone", r.defectMonotone},
              {"defectThreshold", r.defectThreshold},
              {"modulus", r.modulus},
              {"refinedModulus", r.refinedModulus},
              {"modulusRatio", r.modulusRatio},
              {"modulusOk", r.modulusOk},
              {"supNorm", r.supNorm},
              {"globalBound", r.globalBound},
              {"boundHolds", r.boundHolds},
              {"gridValues", values}};
  o.passed = r.passed();
  o.table.header = {"s", "supDefect", "stderr"};
  for (std::size_t i = 0; i < r.sGrid.size(); ++i)
    o.table.rows.push_back(
        {formatNumber(r.sGrid[i]), formatNumber(r.supDefect[i]), formatNumber(r.supDefectStderr[i])});
  return o;
}

Json katoJson(const KatoReport& r) {
  Json entries = Json::array(), grid = Json::array();
  for (const auto& e : r.entries)
    entries.push_back(Json{{"t", e.t},
                           {"supIntegral", e.supIntegral},
                           {"argSup", e.argSup},
                           {"refinementDifference", e.refinementDifference},
                           {"converged", e.converged},
                           {"divergentAtZero", e.divergentAtZero}});
  for (const auto& p : r.xGrid) grid.push_back(coordsJson(p));
  return Json{{"tGrid", r.tGrid},
              {"entries", entries},
              {"fittedDecayExponent", r.fittedDecayExponent},
              {"monotone", r.monotone},
              {"verdict", toString(r.verdict)},
              {"upperBound", r.upperBound},
              {"xGrid", grid}};
}

Outcome katoCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  const auto v = scalarPotentialOf(s, model);
  const auto times = s.text("t-grid") == "default" ? defaultKatoTimes() : numberList(s, "t-grid");
  const auto grid = s.text("x-grid") == "default" ? keyed("x-grid", [&] { return defaultKatoGrid(model, v); })
                                                  : gridOf(s, "x-grid", model);
  Outcome o;
  KatoReport report;
  if (s.has("p")) {
    const double p = s.real("p");
    if (!(p >= 1.0)) throw UsageError("p: must be at least 1");
    const auto lp = lpInclusionCheck(model, v, p, times, grid);
    report = lp.report;
    o.report["lp"] = {{"p", p}, {"thresholdSatisfied", lp.thresholdSatisfied}, {"decays", lp.decays()}};
  } else {
    report = katoReport(model, v, times, grid);
  }
  o.report["kato"] = katoJson(report);
  for (const auto& e : report.entries) addNumber(o, "supIntegral t=" + formatNumber(e.t), e.supIntegral);
  o.passed = report.verdict != KatoVerdict::FailsDecay;
  if (s.flag("khasminskii")) {
    const auto k = khasminskiiBound(model, v, grid, numberList(s, "bound-times"), monteCarloOf(s));
    Json means = Json::array();
    for (const auto& e : k.means) means.push_back(estimateJson(e));
    o.report["khasminskii"] = {{"t0", k.constants.t0},
                               {"katoAtT0", k.constants.katoAtT0},
                               {"cv", k.constants.cv},
                               {"prefactor", k.constants.prefactor},
                               {"tGrid", k.tGrid},
                               {"means", means},
                               {"worstMargin", k.worstMargin},
                               {"passed", k.passed}};
    o.passed = o.passed && k.passed;
  }
  o.table.header = {"t", "supIntegral", "refinementDifference", "divergentAtZero"};
  for (const auto& e : report.entries)
    o.table.rows.push_back({formatNumber(e.t), formatNumber(e.supIntegral), formatNumber(e.refinementDifference),
                            e.divergentAtZero ? "true" : "false"});
  return o;
}

Outcome exitTimeCommand(const Settings& s) {
  const auto model = manifoldOf(s);
  const Point x = pointOf(s, "x", model);
  const double r = s.positive("r");
  std::vector<double> times{s.positive("t")};
  if (s.has("t-grid"))
    for (double t : numberList(s, "t-grid")) {
      if (!(t > 0.0)) throw UsageError("t-grid: times must be positive");
      times.push_back(t);
    }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const auto mc = monteCarloOf(s);
  const bool line = model.kind() == ModelKind::Euclidean && model.dimension() == 1;
  Outcome o;
  o.table.header = {"t", "survival", "stderr", "reference", "gridCorrectedReference"};
  Json rows = Json::array();
  double previous = 1.0;
  bool monotone = true, agrees = true;
  for (double t : times) {
    const auto report = exitProbability(model, model.origin(), {x}, r, t, mc.h, mc.n, mc.seed, mc.workers);
    const Estimate& e = report.survival[0];
    addNumber(o, "survival t=" + formatNumber(t), e.real(), e.error());
    monotone = monotone && e.real() <= previous;
    previous = e.real();
    Json row{{"t", t}, {"survival", e.real()}, {"stderr", e.error()}};
    std::vector<std::string> cells{formatNumber(t), formatNumber(e.real()), formatNumber(e.error()), "", ""};
    if (line) {
      // Killing is only monitored on the grid, which moves the barrier out by 0.5826 sqrt(h).
      const double exact = twoSidedSurvival(r, t, x.coords[0]);
      const double corrected = twoSidedSurvival(r + 0.5826 * std::sqrt(mc.h), t, x.coords[0]);
      row["reference"] = exact;
      row["gridCorrectedReference"] = corrected;
      agrees = agrees && std::abs(e.real() - corrected) <= 3.0 * e.error() + 1e-12;
      cells[3] = formatNumber(exact);
      cells[4] = formatNumber(corrected);
    }
    rows.push_back(row);
    o.table.rows.push_back(std::move(cells));
  }
  o.report = {{"times", rows}, {"monotone", monotone}, {"referenceAgrees", line ? Json(agrees) : Json()}};
  o.passed = monotone && agrees;
  return o;
}

Outcome appendixCCommand(const Settings& s) {
  const int trials = s.atLeast("trials", 1);
  const int rank = s.integer("bundle-rank");
  if (rank < 1 || rank > kMaxRank) throw UsageError("bundle-rank: must be in [1, 16]");
  const double t = s.positive("t");
  const double slack = s.real("slack");
  if (!(slack >= 0.0)) throw UsageError("slack: must be nonnegative");
  const auto r = appendixCInequalitySuite(trials, rank, t, s.count("seed"), s.atLeast("cells", 1), slack);
  Outcome o;
  Json checks = Json::array();
  o.table.header = {"check", "checked", "violations", "worstMargin"};
  for (const auto& c : r.checks) {
    addNumber(o, c.name, static_cast<double>(c.violations));
    checks.push_back(Json{{"name", c.name},
                          {"checked", c.checked},
                          {"violations", c.violations},
                          {"worstMargin", c.worstMargin},
                          {"failingTrialSeeds", c.failingTrialSeeds}});
    o.table.rows.push_back(
        {c.name, std::to_string(c.checked), std::to_string(c.violations), formatNumber(c.worstMargin)});
  }
  o.report = {{"trials", r.trials},    {"rank", r.rank},   {"t", r.t},
              {"cells", r.cells},      {"slack", r.slack}, {"totalViolations", r.totalViolations()},
              {"checks", checks}};
  o.passed = r.passed();
  return o;
}

Outcome oracleCommand(const Settings&) {
  Outcome o;
  Json checks = Json::array();
  o.table.header = {"check", "value", "reference", "tolerance", "passed"};
  for (const auto& c : oracleSelfCheck()) {
    addNumber(o, c.name, c.value);
    checks.push_back(Json{{"name", c.name},
                          {"value", c.value},
                          {"reference", c.reference},
                          {"tolerance", c.tolerance},
                          {"passed", c.passed}});
    o.table.rows.push_back({c.name, formatNumber(c.value), formatNumber(c.reference), formatNumber(c.tolerance),
                            c.passed ? "true" : "false"});
    o.passed = o.passed && c.passed;
  }
  o.report = {{"checks", checks}};
  return o;
}

// ------------------------------------------------------------ command table

struct CommandDef {
  std::string name;
  std::string help;
  std::vector<Key> keys;
  Outcome (*action)(const Settings&);
};

std::string defaultSeed() {
  const char* env = std::getenv("FIBERFLOW_SEED");
  if (env == nullptr || *env == '\0') return "0";
  if (!parseUnsigned(trim(env))) throw UsageError(std::string("seed: FIBERFLOW_SEED='") + env + "' is not an unsigned integer");
  return trim(env);
}

std::vector<Key> join(std::initializer_list<std::vector<Key>> parts) {
  std::vector<Key> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

const std::vector<CommandDef>& commands() {
  static const std::vector<CommandDef> table = [] {
    const std::vector<Key> manifold = {{"manifold", Kind::Text, "euclidean(m=1)", "Manifold model"}};
    const std::vector<Key> bundle = {
        {"bundle-rank", Kind::Integer, "1", "Bundle rank d"},
        {"connection", Kind::Text, "auto", "auto, trivial, magnetic or levi-civita"},
        {"beta", Kind::Text, "zero()", "Magnetic 1-form"},
    };
    const std::vector<Key> potential = {{"potential", Kind::Text, "zero()", "Potential expression"}};
    const std::vector<Key> section = {{"section", Kind::Text, "one()", "Section f"}};
    const std::vector<Key> point = {{"x", Kind::Text, "origin", "Start point coordinates"}};
    const std::vector<Key> time = {{"t", Kind::Real, std::nullopt, "Time"}};
    const std::vector<Key> mc = {
        {"h", Kind::Real, "0.001", "Time step"},
        {"n", Kind::Count, "10000", "Number of paths"},
        {"seed", Kind::Seed, "", "Seed (default: FIBERFLOW_SEED or 0)"},
        {"workers", Kind::Integer, "1", "Worker threads"},
    };
    const std::vector<Key> output = {
        {"out", Kind::Text, "-", "Output file (- for stdout)"},
        {"format", Kind::Text, "json", "json or csv"},
    };
    std::vector<CommandDef> defs;
    defs.push_back({"semigroup", "Monte Carlo e^{-tH(V)} f (x)",
                    join({manifold, bundle, potential, section, point, time, mc,
                          {{"dump-path", Kind::Text, "", "CSV file for path 0"}}, output}),
                    semigroupCommand});
    defs.push_back({"ground-energy", "Ground state energy from the decay of <f, e^{-tH} f>",
                    join({manifold, bundle, potential, {{"section", Kind::Text, "auto", "Section f"}},
                          {{"t-grid", Kind::Text, "", "Times (JSON list)"},
                           {"tmax", Kind::Real, "", "Largest time of a 12-point grid"}},
                          mc, output}),
                    groundEnergyCommand});
    defs.push_back({"resolvent", "(H(V) + lambda)^{-k} f (x) by Gauss-Laguerre quadrature",
                    join({manifold, bundle, potential, section, point,
                          {{"lambda", Kind::Real, std::nullopt, "Spectral shift"},
                           {"k", Kind::Integer, "1", "Power"},
                           {"nodes", Kind::Integer, "24", "Quadrature nodes"}},
                          mc, output}),
                    resolventCommand});
    defs.push_back({"domination", "Per-path check of |e^{-tH(V)} f| <= e^{-tH(v)} |f|",
                    join({manifold, bundle, potential, section, point, time, mc, output}), dominationCommand});
    defs.push_back({"smoothing", "L^2 -> L^q smoothing bound on sphere2",
                    join({{{"manifold", Kind::Text, "sphere2(r=1)", "Manifold model"}},
                          potential,
                          time,
                          {{"q", Kind::Real, "2", "Target exponent (inf allowed)"},
                           {"probes", Kind::Integer, "20", "Number of random probes"},
                           {"degree", Kind::Integer, "4", "Largest harmonic degree of a probe"},
                           {"quad-theta", Kind::Integer, "8", "Gauss-Legendre nodes in theta"},
                           {"quad-phi", Kind::Integer, "16", "Trapezoid nodes in phi"}},
                          mc, output}),
                    smoothingCommand});
    defs.push_back({"identity-check", "Semigroup identity and perturbation formula",
                    join({manifold, bundle, potential, section, point,
                          {{"s", Kind::Real, std::nullopt, "Split time"}},
                          time,
                          {{"mode", Kind::Text, "both", "both, identity or perturbation"}},
                          mc, output}),
                    identityCommand});
    defs.push_back({"continuity-scan", "Continuity defect of the holonomy and the global bound",
                    join({manifold, bundle, potential, section, time,
                          {{"x-grid", Kind::Text, std::nullopt, "Segment {\"from\":[..],\"to\":[..],\"n\":N}"},
                           {"s-grid", Kind::Text, "[0.1, 0.01, 0.001]", "Defect times (JSON list)"},
                           {"refine", Kind::Flag, "true", "Also scan the refined grid"}},
                          mc, output}),
                    continuityCommand});
    defs.push_back({"kato-check", "Kato decay check, Lp inclusion and Khas'minskii bound",
                    join({manifold,
                          {{"potential", Kind::Text, std::nullopt, "Scalar potential"},
                           {"t-grid", Kind::Text, "default", "Times (JSON list)"},
                           {"x-grid", Kind::Text, "default", "Points (JSON list or segment)"},
                           {"p", Kind::Real, "", "Declared L^p exponent"},
                           {"khasminskii", Kind::Flag, "false", "Also run the Monte Carlo bound"},
                           {"bound-times", Kind::Text, "[0.25, 0.5, 1]", "Times of the Monte Carlo bound"}},
                          mc, output}),
                    katoCommand});
    defs.push_back({"exit-time", "Survival in a geodesic ball around the origin",
                    join({manifold, point,
                          {{"r", Kind::Real, std::nullopt, "Ball radius"}},
                          time,
                          {{"t-grid", Kind::Text, "", "Further times (JSON list)"}},
                          mc, output}),
                    exitTimeCommand});
    defs.push_back({"validate appendix-c", "Randomized holonomy ODE inequality suite",
                    join({{{"trials", Kind::Integer, "200", "Trials"},
                           {"bundle-rank", Kind::Integer, "4", "Matrix size d"},
                           {"t", Kind::Real, "1", "Time horizon"},
                           {"seed", Kind::Seed, "", "Seed (default: FIBERFLOW_SEED or 0)"},
                           {"cells", Kind::Integer, "64", "Piecewise-constant cells"},
                           {"slack", Kind::Real, "1e-08", "Relative slack"}},
                          output}),
                    appendixCCommand});
    defs.push_back({"validate oracle", "Oracle self-consistency suite", output, oracleCommand});
    return defs;
  }();
  return table;
}

// ---------------------------------------------------------------- parsing

struct Parsed {
  RunConfig config;
  const CommandDef* def = nullptr;
  std::optional<std::string> help;
};

std::map<std::string, std::string> readConfigFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open '" + path + "'");
  std::map<std::string, std::string> values;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: line " + std::to_string(number) + " of '" + path + "' is not key = value");
    const std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      std::string unquoted;
      for (std::size_t i = 1; i + 1 < value.size(); ++i) {
        if (value[i] == '\\' && i + 2 < value.size()) ++i;
        unquoted += value[i];
      }
      value = unquoted;
    }
    if (values.count(key)) throw UsageError(key + ": set twice in config file '" + path + "'");
    values[key] = value;
  }
  return values;
}

Parsed parse(const std::vector<std::string>& args) {
  CLI::App app{"Feynman-Kac Monte Carlo for Schroedinger semigroups on vector bundles", "fiberflow"};
  app.require_subcommand(1);
  // -h would clash with the step size --h.
  app.set_help_flag("--help", "Print help and exit");
  app.option_defaults()->always_capture_default(false);
  CLI::App* validate = nullptr;
  std::vector<std::pair<CLI::App*, const CommandDef*>> leaves;
  std::map<const CommandDef*, std::map<std::string, std::string>> store;
  std::map<const CommandDef*, std::string> configPaths;
  for (const auto& def : commands()) {
    CLI::App* sub = nullptr;
    if (def.name.rfind("validate ", 0) == 0) {
      if (!validate) {
        validate = app.add_subcommand("validate", "Deterministic validation suites");
        validate->require_subcommand(1);
      }
      sub = validate->add_subcommand(def.name.substr(9), def.help);
    } else {
      sub = app.add_subcommand(def.name, def.help);
    }
    auto& values = store[&def];
    for (const auto& key : def.keys) sub->add_option("--" + key.name, values[key.name], key.help);
    sub->add_option("--config", configPaths[&def], "key = value file; flags override it");
    leaves.emplace_back(sub, &def);
  }

  Parsed parsed;
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) throw UsageError(e.what());
    for (const auto& [sub, def] : leaves)
      if (sub->parsed()) parsed.help = sub->help();
    if (!parsed.help) parsed.help = validate && validate->parsed() ? validate->help() : app.help();
    return parsed;
  }

  for (const auto& [sub, def] : leaves) {
    if (!sub->parsed()) continue;
    parsed.def = def;
    parsed.config.command = def->name;
    std::map<std::string, std::string> fromFile;
    if (!configPaths[def].empty()) fromFile = readConfigFile(configPaths[def]);
    for (const auto& [key, value] : fromFile) {
      const bool known = std::any_of(def->keys.begin(), def->keys.end(), [&](const Key& k) { return k.name == key; });
      if (!known) throw UsageError(key + ": unknown key for " + def->name + " in config file '" + configPaths[def] + "'");
    }
    for (const auto& key : def->keys) {
      std::optional<std::string> raw;
      if (sub->count("--" + key.name) > 0) {
        raw = store[def][key.name];
      } else if (const auto it = fromFile.find(key.name); it != fromFile.end()) {
        raw = it->second;
      } else if (key.kind == Kind::Seed) {
        raw = defaultSeed();
      } else if (key.fallback) {
        raw = *key.fallback;
      } else {
        throw UsageError(key.name + ": required; pass --" + key.name + " or set it in the config file");
      }
      parsed.config.values[key.name] = canonical(key, *raw);
    }
  }
  return parsed;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<std::string> RunConfig::toArgs() const {
  std::vector<std::string> args;
  std::istringstream words(command);
  for (std::string w; words >> w;) args.push_back(w);
  for (const auto& [key, value] : values)
    if (!value.empty()) args.push_back("--" + key + "=" + value);
  return args;
}

std::string RunConfig::toConfigText() const {
  std::string text;
  for (const auto& [key, value] : values)
    if (!value.empty()) text += key + " = " + quote(value) + "\n";
  return text;
}

RunConfig parseRunConfig(const std::vector<std::string>& args) {
  Parsed p = parse(args);
  if (p.help) throw UsageError("help requested");
  return p.config;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  Parsed parsed;
  Outcome outcome;
  try {
    parsed = parse(args);
    if (parsed.help) {
      out << *parsed.help;
      return kExitOk;
    }
    const Settings settings(parsed.config);
    const std::string format = settings.text("format");
    if (format != "json" && format != "csv") throw UsageError("format: expected json or csv, got '" + format + "'");
    outcome = parsed.def->action(settings);
  } catch (const std::exception& e) {
    err << "fiberflow: " << e.what() << '\n';
    return kExitUsage;
  }
  const auto& values = parsed.config.values;
  const Settings settings(parsed.config);

  Json doc;
  doc["schema"] = 1;
  doc["command"] = parsed.config.command;
  doc["config"] = Json(values);
  doc["labels"] = outcome.labels;
  doc["values"] = outcome.values;
  doc["stderrs"] = outcome.stderrs;
  doc["aliveFraction"] = outcome.aliveFraction ? Json(*outcome.aliveFraction) : Json();
  doc["seed"] = values.count("seed") ? Json(settings.count("seed")) : Json();
  doc["h"] = values.count("h") ? Json(settings.real("h")) : Json();
  doc["N"] = values.count("n") ? Json(settings.count("n")) : Json();
  doc["passed"] = outcome.passed;
  doc["report"] = outcome.report;
  doc["wallTimeMs"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  std::ofstream file;
  std::ostream* sink = &out;
  if (settings.text("out") != "-") {
    file.open(settings.text("out"));
    if (!file) {
      err << "fiberflow: out: cannot open '" << settings.text("out") << "'\n";
      return kExitUsage;
    }
    sink = &file;
  }
  if (settings.text("format") == "csv") {
    writeCsv(*sink, outcome.table.header.empty() ? defaultTable(outcome) : outcome.table);
  } else {
    *sink << doc.dump(2) << '\n';
  }
  if (!outcome.passed) {
    err << "fiberflow: " << parsed.config.command << ": check failed\n";
    return kExitViolated;
  }
  return kExitOk;
}

}  // namespace fiberflow::cli
