#include "fiberflow/paths.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace fiberflow {

// ----------------------------------------------------------------- TimeGrid

TimeGrid::TimeGrid(double t, double h, std::vector<double> stops) : stops_(std::move(stops)), h_(h) {
  require(std::isfinite(t) && t >= 0.0, "t: must be a finite nonnegative time");
  require(std::isfinite(h) && h > 0.0, "h: must be positive");
  const double tol = 1e-12 * std::max(1.0, t);
  for (double s : stops_) require(s >= -tol && s <= t + tol, "t-grid: observation times must lie in [0, t]");
  times_.push_back(0.0);
  const auto uniform = static_cast<std::int64_t>(std::floor(t / h + 1e-9));
  std::vector<double> candidates;
  candidates.reserve(static_cast<std::size_t>(uniform) + stops_.size() + 1);
  for (std::int64_t k = 1; k <= uniform; ++k) candidates.push_back(std::min(t, static_cast<double>(k) * h));
  for (double s : stops_) candidates.push_back(std::clamp(s, 0.0, t));
  candidates.push_back(t);
  std::sort(candidates.begin(), candidates.end());
  for (double c : candidates)
    if (c - times_.back() > tol) times_.push_back(c);
  if (t > 0.0) times_.back() = t;
  stopOfGrid_.assign(times_.size(), -1);
  for (std::size_t j = 0; j < stops_.size(); ++j) {
    const auto it = std::lower_bound(times_.begin(), times_.end(), stops_[j] - tol);
    require(it != times_.end(), "t-grid: internal error placing observation time");
    stopOfGrid_[static_cast<std::size_t>(it - times_.begin())] = static_cast<int>(j);
  }
}

// ------------------------------------------------------------------- Walker

Walker::Walker(const ManifoldModel& model, TimeGrid grid) : model_(&model), grid_(std::move(grid)) {
  if (grid_.steps() > 0) {
    const double typical = std::sqrt(model.dimension() * grid_.h());
    require(typical <= model.maxStep(),
            "h: typical step sqrt(m h) = " + formatNumber(typical) + " exceeds the max step " +
                formatNumber(model.maxStep()) + " of " + model.describe() + "; shrink h");
  }
}

// --------------------------------------------------------------- PathSample

CMatrix PathSample::transport(std::size_t k) const {
  CMatrix s(rank, rank);
  const std::size_t base = k * static_cast<std::size_t>(rank * rank);
  for (int i = 0; i < rank; ++i)
    for (int j = 0; j < rank; ++j) s(i, j) = transportData[base + static_cast<std::size_t>(i * rank + j)];
  return s;
}

PathSample samplePath(const ManifoldModel& model, const BundleSpec& bundle, const Point& x, double t, double h,
                      RngKey key, std::vector<double> stops) {
  model.validate(x);
  require(model.inside(x), "x: start point lies outside the domain of " + model.describe());
  Walker walker(model, TimeGrid(t, h, std::move(stops)));
  PathSample path;
  path.times = walker.grid().times();
  path.rank = bundle.rank();
  path.h = h;
  path.points.reserve(path.times.size());
  path.steps.reserve(path.times.size());
  path.points.push_back(x);
  const bool trivial = bundle.connection() == ConnectionKind::Trivial;
  struct Recorder {
    PathSample& path;
    const ManifoldModel& model;
    const BundleSpec& bundle;
    bool trivial;
    void step(int, const Point& from, const Coords& xi, const GeodesicStep& geo, double, bool) {
      path.steps.push_back(xi);
      path.points.push_back(geo.end);
      const int d = path.rank;
      if (trivial) {
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) path.transportData.push_back(i == j ? 1.0 : 0.0);
        return;
      }
      const CMatrix s = bundle.stepTransport(model, from, xi);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) path.transportData.push_back(s(i, j));
    }
  } recorder{path, model, bundle, trivial};
  const auto outcome = walker.run(x, key, recorder);
  path.alive = outcome.alive;
  if (!outcome.alive) {
    path.deathIndex = static_cast<std::size_t>(outcome.lastIndex);
    path.times.resize(path.points.size());
  }
  return path;
}

// --------------------------------------------------------- ScalarIntegrator

ScalarIntegrator::ScalarIntegrator(const ScalarPotential& v, double h)
    : v_(&v), cap_(1.0 / h), singular_(v.singular()) {
  require(h > 0.0, "h: must be positive");
}

double ScalarIntegrator::eval(const Point& p) const {
  const double value = v_->value(p);
  if (singular_) {
    if (std::isnan(value)) throw Error("potential " + v_->description + ": NaN value along the path");
    return std::clamp(value, -cap_, cap_);
  }
  if (!std::isfinite(value)) throw Error("potential " + v_->description + ": non-finite value along the path");
  return value;
}

void ScalarIntegrator::start(const Point& x) {
  if (!singular_) last_ = eval(x);
}

double ScalarIntegrator::step(const ManifoldModel& model, const Point& from, const Coords& xi, const Point& to,
                              double dt) {
  if (singular_) {
    double total = 0.0;
    for (double f : kSubstepFractions) total += eval(model.geodesicStep(from, f * xi).end);
    return 0.25 * dt * total;
  }
  const double next = eval(to);
  const double increment = 0.5 * (last_ + next) * dt;
  last_ = next;
  return increment;
}

double integrateScalarAlong(const ManifoldModel& model, const PathSample& path, const ScalarPotential& v) {
  if (path.stepCount() == 0) return 0.0;
  ScalarIntegrator integrator(v, path.h);
  integrator.start(path.points.front());
  const ManifoldModel& base = model.completeModel();
  double total = 0.0;
  for (std::size_t k = 0; k < path.stepCount(); ++k) {
    const double dt = path.times[k + 1] - path.times[k];
    total += integrator.step(base, path.points[k], path.steps[k], path.points[k + 1], dt);
  }
  return total;
}

double stratonovichLineIntegral(const ManifoldModel& model, const PathSample& path, const OneForm& beta) {
  if (beta.isZero()) return 0.0;
  const ManifoldModel& base = model.completeModel();
  double total = 0.0;
  for (std::size_t k = 0; k < path.stepCount(); ++k) {
    const Point mid = base.geodesicStep(path.points[k], 0.5 * path.steps[k]).end;
    const double value = beta.apply(mid, base.chartDisplacement(path.points[k], path.steps[k]));
    if (!std::isfinite(value))
      throw Error("beta " + beta.description + ": non-finite value at step " + std::to_string(k));
    total += value;
  }
  return total;
}

// ---------------------------------------------------------------- exit times

ExitReport exitProbability(const ManifoldModel& model, const Point& center, const std::vector<Point>& starts,
                           double r, double t, double h, std::uint64_t n, std::uint64_t seed, int workers) {
  require(model.isComplete(), "manifold: exit probabilities are measured on a complete model");
  require(!starts.empty(), "x-grid: need at least one start point");
  require(n > 0, "n: must be positive");
  model.validate(center);
  for (const auto& x : starts) {
    model.validate(x);
    require(model.distance(center, x) < r, "r: must exceed the distance from the center to every start point");
  }
  const ManifoldModel ball = ManifoldModel::openSubdomain(
      model, [model, center, r](const Point& p) { return r - model.distance(center, p); },
      "ball(" + model.describe() + ", r=" + formatNumber(r) + ")");
  const Walker walker(ball, TimeGrid(t, h));
  struct NoOp {
    void step(int, const Point&, const Coords&, const GeodesicStep&, double, bool) {}
  };
  ExitReport report;
  report.starts = starts;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const auto acc = reduceChunks<SampleAccumulator>(n, workers, [&](std::uint64_t begin, std::uint64_t end) {
      SampleAccumulator local(1);
      NoOp visitor;
      for (std::uint64_t i = begin; i < end; ++i) {
        const bool alive = walker.run(starts[s], {seed, i}, visitor).alive;
        local.addScalar(alive ? 1.0 : 0.0, alive);
      }
      return local;
    });
    report.survival.push_back(acc.finish(h, seed));
    const double value = report.survival.back().real();
    if (s == 0 || value < report.infimum) {
      report.infimum = value;
      report.argInfimum = s;
    }
  }
  return report;
}

// ---------------------------------------------------------------------- CSV

void writePathCsv(std::ostream& out, const PathSample& path) {
  const auto coords = path.points.empty() ? 0 : path.points.front().coords.size();
  out << "step,time";
  for (int i = 0; i < coords; ++i) out << ",x" << i;
  out << ",alive";
  for (int i = 0; i < path.rank; ++i)
    for (int j = 0; j < path.rank; ++j) out << ",T" << i << j << "_re,T" << i << j << "_im";
  out << '\n';
  for (std::size_t k = 0; k < path.points.size(); ++k) {
    out << k << ',' << formatNumber(path.times[k]);
    for (int i = 0; i < coords; ++i) out << ',' << formatNumber(path.points[k].coords[i]);
    const bool alive = !path.deathIndex || k < *path.deathIndex;
    out << ',' << (alive ? 1 : 0);
    if (k < path.stepCount()) {
      const CMatrix s = path.transport(k);
      for (int i = 0; i < path.rank; ++i)
        for (int j = 0; j < path.rank; ++j)
          out << ',' << formatNumber(s(i, j).real()) << ',' << formatNumber(s(i, j).imag());
    } else {
      for (int i = 0; i < 2 * path.rank * path.rank; ++i) out << ',';
    }
    out << '\n';
  }
}

}  // namespace fiberflow
