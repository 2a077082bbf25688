#include "fiberflow/semigroup.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "fiberflow/holonomy.hpp"
#include "fiberflow/kato.hpp"
#include "fiberflow/linalg.hpp"
#include "fiberflow/paths.hpp"
#include "text_cursor.hpp"

namespace fiberflow {

namespace {

constexpr double kTwoPi = 2.0 * kPi;
constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

// ------------------------------------------------------------------ sections

CVector SectionSpec::operator()(const Point& p) const {
  CVector value = evaluate(p);
  if (value.size() != rank) throw Error("section " + description + ": wrong number of components");
  return value;
}

SectionSpec constantSection(CVector c) {
  require(c.size() >= 1 && c.size() <= kMaxRank, "section: rank must be in [1, 16]");
  SectionSpec f;
  f.rank = static_cast<int>(c.size());
  f.normBound = c.norm();
  f.evaluate = [c](const Point&) { return c; };
  f.description = "const";
  return f;
}

SectionSpec scalarSection(std::function<double(const Point&)> g, int rank, std::string description,
                          std::optional<double> supAbs, std::optional<double> l2, std::optional<double> supportRadius) {
  require(rank >= 1 && rank <= kMaxRank, "bundle-rank: must be in [1, 16]");
  SectionSpec f;
  f.rank = rank;
  const double scale = std::sqrt(static_cast<double>(rank));
  if (supAbs) f.normBound = *supAbs * scale;
  if (l2) f.l2Norm = *l2 * scale;
  f.supportRadius = supportRadius;
  f.evaluate = [g = std::move(g), rank](const Point& p) { return CVector::Constant(rank, cd(g(p), 0.0)); };
  f.description = std::move(description);
  return f;
}

SectionSpec probeSection(SphereProbe probe) {
  SectionSpec f;
  f.rank = 1;
  f.l2Norm = probe.l2Norm();
  f.evaluate = [probe](const Point& p) {
    CVector v(1);
    v[0] = probe.evaluate(p.coords.head<3>());
    return v;
  };
  f.description = "probe(degree=" + std::to_string(probe.maxDegree()) + ")";
  return f;
}

SectionSpec parseSection(std::string_view text, const ManifoldModel& model, int rank) {
  detail::TextCursor cursor(text, "section");
  const std::string name = cursor.identifier();
  cursor.expect('(');
  auto keyed = [&](const char* key, double fallback) {
    if (cursor.peek() == ')') return fallback;
    const std::string k = cursor.identifier();
    if (k != key) cursor.fail("unknown argument '" + k + "' (expected '" + key + "')");
    cursor.expect('=');
    const double value = cursor.number();
    cursor.consume(',');
    return value;
  };
  const ManifoldModel& base = model.completeModel();
  const Point origin = base.origin();
  const double volume = base.isCompact() ? base.volume() : kInf;
  auto l2OfConstant = [&](double c) -> std::optional<double> {
    if (std::isfinite(volume)) return std::abs(c) * std::sqrt(volume);
    return std::nullopt;
  };
  SectionSpec f;
  if (name == "one") {
    f = scalarSection([](const Point&) { return 1.0; }, rank, "one()", 1.0, l2OfConstant(1.0));
  } else if (name == "const") {
    std::vector<cd> values;
    cursor.expect('[');
    do {
      if (cursor.peekIdentifier()) {
        if (cursor.identifier() != "c") cursor.fail("expected c(re, im)");
        cursor.expect('(');
        const double re = cursor.number();
        cursor.expect(',');
        const double im = cursor.number();
        cursor.expect(')');
        values.emplace_back(re, im);
      } else {
        values.emplace_back(cursor.number(), 0.0);
      }
    } while (cursor.consume(','));
    cursor.expect(']');
    if (static_cast<int>(values.size()) != rank)
      cursor.fail("const section has " + std::to_string(values.size()) + " components for rank " +
                  std::to_string(rank));
    CVector c(rank);
    for (int i = 0; i < rank; ++i) c[i] = values[static_cast<std::size_t>(i)];
    f = constantSection(c);
    if (std::isfinite(volume)) f.l2Norm = c.norm() * std::sqrt(volume);
    f.description = std::string(text);
  } else if (name == "gaussian") {
    const double s = keyed("s", 1.0);
    if (!(s > 0.0)) cursor.fail("s must be positive");
    std::optional<double> l2;
    if (base.kind() == ModelKind::Euclidean) l2 = std::pow(kPi * s, 0.25 * base.dimension());
    f = scalarSection(
        [base, origin, s](const Point& p) {
          const double r = base.distance(origin, p);
          return std::exp(-r * r / (2.0 * s));
        },
        rank, "gaussian(s=" + formatNumber(s) + ")", 1.0, l2, 10.0 * std::sqrt(s));
  } else if (name == "ground") {
    const double omega = keyed("omega", 1.0);
    if (!(omega > 0.0)) cursor.fail("omega must be positive");
    if (base.kind() != ModelKind::Euclidean) cursor.fail("ground() is the oscillator ground state on euclidean models");
    const double norm = std::pow(omega / kPi, 0.25 * base.dimension());
    f = scalarSection(
        [base, origin, omega, norm](const Point& p) {
          const double r = base.distance(origin, p);
          return norm * std::exp(-0.5 * omega * r * r);
        },
        rank, "ground(omega=" + formatNumber(omega) + ")", norm, 1.0, std::sqrt(80.0 / omega));
  } else if (name == "fourier") {
    const double k = keyed("k", 1.0);
    if (base.kind() != ModelKind::Circle) cursor.fail("fourier() needs a circle model");
    if (k != std::round(k)) cursor.fail("k must be an integer");
    f.rank = rank;
    f.normBound = std::sqrt(static_cast<double>(rank));
    f.l2Norm = std::sqrt(rank * volume);
    f.evaluate = [k, rank](const Point& p) { return CVector::Constant(rank, std::exp(cd(0.0, k * p.coords[0]))); };
    f.description = "fourier(k=" + formatNumber(k) + ")";
  } else if (name == "probe") {
    const double degree = keyed("degree", 4.0);
    const double seed = keyed("seed", 1.0);
    if (base.kind() != ModelKind::Sphere2) cursor.fail("probe() needs a sphere2 model");
    if (rank != 1) cursor.fail("probe() is a scalar section");
    StreamRng rng({static_cast<std::uint64_t>(seed), 0});
    f = probeSection(SphereProbe(base.radius(), static_cast<int>(degree), rng));
  } else {
    cursor.fail("unknown section '" + name + "'");
  }
  cursor.expect(')');
  if (!cursor.atEnd()) cursor.fail("unexpected trailing text");
  return f;
}

// ---------------------------------------------------------------- path engine

namespace {

/// Drives one path: holonomy and transport along the walk, with a callback at
/// every observation time (grid stops).
template <class OnStop>
struct FkVisitor {
  const ManifoldModel& base;
  const BundleSpec& bundle;
  bool flat;
  HolonomyStepper& stepper;
  const TimeGrid& grid;
  OnStop& onStop;

  void step(int k, const Point& from, const Coords& xi, const GeodesicStep& geo, double dt, bool alive) {
    if (!alive) return;
    if (flat) {
      stepper.step(base, from, xi, geo.end, dt);
    } else {
      stepper.step(base, from, xi, geo.end, dt, bundle.stepTransport(base, from, xi));
    }
    const int stop = grid.stopAt(k + 1);
    if (stop >= 0) onStop(stop, geo.end, stepper);
  }
};

template <class OnStop>
bool walkPath(const Walker& walker, const BundleSpec& bundle, HolonomyStepper& stepper, const Point& x, RngKey key,
              OnStop&& onStop) {
  stepper.start(x);
  const int first = walker.grid().stopAt(0);
  if (first >= 0) onStop(first, x, stepper);
  FkVisitor<std::remove_reference_t<OnStop>> visitor{walker.model().completeModel(), bundle, bundle.isFlatTrivial(),
                                                     stepper, walker.grid(), onStop};
  return walker.run(x, key, visitor).alive;
}

/// Sample of Y //^{-1} f at the current point.
CVector transportedSample(const HolonomyStepper& stepper, const CVector& fEnd) {
  return stepper.value() * (stepper.transport().adjoint() * fEnd);
}

double dominationExcess(double lhs, double rhs) { return (lhs - rhs) / std::max(1.0, rhs); }

void checkRanks(const BundleSpec& bundle, const PotentialSpec& v, const SectionSpec& f) {
  require(v.rank() == bundle.rank(), "potential: rank " + std::to_string(v.rank()) + " does not match bundle-rank " +
                                         std::to_string(bundle.rank()));
  require(f.rank == bundle.rank(), "f: section rank " + std::to_string(f.rank) + " does not match bundle-rank " +
                                       std::to_string(bundle.rank()));
}

void checkMc(const MonteCarloSpec& mc) {
  require(mc.n >= 1, "n: must be positive");
  require(std::isfinite(mc.h) && mc.h > 0.0, "h: must be positive");
}

Estimate slice(const Estimate& e, int begin, int count) {
  Estimate out = e;
  out.value = e.value.segment(begin, count);
  out.stdError = e.stdError.segment(begin, count);
  return out;
}

/// E[Y_t //^{-1} f(B_t) 1_alive] with keys {seed, i}.
Estimate fkEstimate(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                    const SectionSpec& f, const Point& x, double t, const MonteCarloSpec& mc) {
  checkRanks(bundle, v, f);
  checkMc(mc);
  require(std::isfinite(t) && t >= 0.0, "t: must be a finite nonnegative time");
  model.validate(x);
  require(model.inside(x), "x: start point lies outside the domain");
  const Walker walker(model, TimeGrid(t, mc.h, {t}));
  const int d = bundle.rank();
  const auto acc = reduceChunks<SampleAccumulator>(mc.n, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
    SampleAccumulator local(d);
    HolonomyStepper stepper(v, mc.h);
    CVector sample(d);
    for (std::uint64_t i = begin; i < end; ++i) {
      sample.setZero();
      const bool alive = walkPath(walker, bundle, stepper, x, {mc.seed, i},
                                  [&](int, const Point& p, const HolonomyStepper& st) {
                                    const CVector fEnd = f(p);
                                    sample = transportedSample(st, fEnd);
                                    const double rhs = std::exp(-st.floorIntegral()) * fEnd.norm();
                                    local.noteDomination(dominationExcess(sample.norm(), rhs));
                                  });
      if (!alive) sample.setZero();
      local.add(sample, alive);
    }
    return local;
  });
  return acc.finish(mc.h, mc.seed);
}

}  // namespace

Estimate fkScalar(const ManifoldModel& model, const ScalarPotential& v, const SectionSpec& f, const Point& x,
                  double t, const MonteCarloSpec& mc) {
  require(f.rank == 1, "f: fkScalar needs a scalar section");
  return fkEstimate(model, BundleSpec::trivial(1), PotentialSpec::scalar(v, 1), f, x, t, mc);
}

Estimate fkVector(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v, const SectionSpec& f,
                  const Point& x, double t, const MonteCarloSpec& mc) {
  return fkEstimate(model, bundle, v, f, x, t, mc);
}

Estimate fkMagnetic(const ManifoldModel& model, const OneForm& beta, const ScalarPotential& v, const SectionSpec& f,
                    const Point& x, double t, const MonteCarloSpec& mc) {
  require(f.rank == 1, "f: fkMagnetic needs a scalar section");
  return fkEstimate(model, BundleSpec::magnetic(beta), PotentialSpec::scalar(v, 1), f, x, t, mc);
}

// -------------------------------------------------------------- ground energy

namespace {

/// Per-path rows, concatenated in path order.
struct RowStore {
  int width = 0;
  std::vector<double> data;
  std::uint64_t alive = 0;
  std::uint64_t violations = 0;

  void merge(const RowStore& other) {
    data.insert(data.end(), other.data.begin(), other.data.end());
    alive += other.alive;
    violations += other.violations;
  }
  [[nodiscard]] std::size_t rows() const { return width ? data.size() / static_cast<std::size_t>(width) : 0; }
};

Point sampleStart(const ManifoldModel& model, const SectionSpec& f1, StreamRng& rng) {
  require(f1.normBound.has_value() && *f1.normBound > 0.0,
          "f1: start points are drawn from |f1| by rejection, which needs a positive sup bound");
  const ManifoldModel& base = model.completeModel();
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Point y;
    if (model.isComplete() && model.isCompact()) {
      y = model.sampleUniform(rng);
    } else if (!model.isComplete()) {
      require(model.ballRadius().has_value(), "f1: start sampling on " + model.describe() + " needs a ball domain");
      y = base.sampleUniformBall(*model.ballRadius(), rng);
      if (!model.inside(y)) continue;
    } else {
      require(f1.supportRadius.has_value(),
              "f1: start sampling on the non-compact " + model.describe() + " needs a support radius");
      y = base.sampleUniformBall(*f1.supportRadius, rng);
    }
    const double norm = f1(y).norm();
    require(norm <= *f1.normBound * (1.0 + 1e-12), "f1: sampled |f1| exceeds its declared bound");
    if (rng.uniform() * *f1.normBound <= norm) return y;
  }
  throw Error("f1: rejection sampling accepted nothing in 100000 proposals");
}

}  // namespace

GroundEnergyReport groundEnergy(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                const SectionSpec& f1, const SectionSpec& f2, std::vector<double> tGrid,
                                const MonteCarloSpec& mc) {
  checkRanks(bundle, v, f2);
  checkMc(mc);
  require(f1.rank == f2.rank, "f1: rank must match f2");
  require(tGrid.size() >= 4, "t-grid: need at least 4 times");
  for (std::size_t i = 0; i < tGrid.size(); ++i) {
    require(tGrid[i] > 0.0, "t-grid: times must be positive");
    if (i > 0) require(tGrid[i] > tGrid[i - 1], "t-grid: times must increase");
  }
  const auto width = static_cast<int>(tGrid.size());
  const Walker walker(model, TimeGrid(tGrid.back(), mc.h, tGrid));
  const std::uint64_t startSeed = deriveSeed(mc.seed, 0x5354415254ull);
  const RowStore store = reduceChunks<RowStore>(mc.n, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
    RowStore local;
    local.width = width;
    local.data.reserve((end - begin) * static_cast<std::size_t>(width));
    HolonomyStepper stepper(v, mc.h);
    std::vector<double> row(static_cast<std::size_t>(width));
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng startRng({startSeed, i});
      const Point x = sampleStart(model, f1, startRng);
      CVector direction = f1(x);
      direction /= direction.norm();
      std::fill(row.begin(), row.end(), 0.0);
      const bool alive = walkPath(walker, bundle, stepper, x, {mc.seed, i},
                                  [&](int j, const Point& p, const HolonomyStepper& st) {
                                    const CVector fEnd = f2(p);
                                    const CVector sample = transportedSample(st, fEnd);
                                    row[static_cast<std::size_t>(j)] = direction.dot(sample).real();
                                    const double rhs = std::exp(-st.floorIntegral()) * fEnd.norm();
                                    if (dominationExcess(sample.norm(), rhs) > 1e-9) ++local.violations;
                                  });
      if (alive) ++local.alive;
      // Entries after the death time stay 0 (the killed indicator).
      local.data.insert(local.data.end(), row.begin(), row.end());
    }
    return local;
  });

  GroundEnergyReport report;
  report.tGrid = tGrid;
  report.nSamples = store.rows();
  report.aliveFraction = static_cast<double>(store.alive) / static_cast<double>(store.rows());
  report.dominationViolations = store.violations;
  const auto n = static_cast<double>(store.rows());
  std::vector<double> mean(static_cast<std::size_t>(width), 0.0), var(static_cast<std::size_t>(width), 0.0);
  for (std::size_t r = 0; r < store.rows(); ++r)
    for (int j = 0; j < width; ++j) mean[static_cast<std::size_t>(j)] += store.data[r * width + j] / n;
  for (std::size_t r = 0; r < store.rows(); ++r)
    for (int j = 0; j < width; ++j) {
      const double dev = store.data[r * width + j] - mean[static_cast<std::size_t>(j)];
      var[static_cast<std::size_t>(j)] += dev * dev / std::max(1.0, n - 1.0);
    }
  for (int j = 0; j < width; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    report.functional.push_back(mean[uj]);
    report.functionalStderr.push_back(std::sqrt(var[uj] / n));
    require(mean[uj] > 1e-300, "t-grid: functional underflow or nonpositive estimate at t = " +
                                   formatNumber(tGrid[uj]) + "; use a smaller largest time");
  }

  // Least squares on the last half: slope = sum_j c_j log m_j.
  report.fitFrom = tGrid.size() / 2;
  const std::size_t from = report.fitFrom;
  const auto count = static_cast<double>(tGrid.size() - from);
  double tMean = 0.0;
  for (std::size_t j = from; j < tGrid.size(); ++j) tMean += tGrid[j] / count;
  double sxx = 0.0;
  for (std::size_t j = from; j < tGrid.size(); ++j) sxx += (tGrid[j] - tMean) * (tGrid[j] - tMean);
  std::vector<double> c(tGrid.size(), 0.0);
  double slope = 0.0, logMean = 0.0;
  for (std::size_t j = from; j < tGrid.size(); ++j) {
    c[j] = (tGrid[j] - tMean) / sxx;
    slope += c[j] * std::log(mean[j]);
    logMean += std::log(mean[j]) / count;
  }
  double residual = 0.0;
  for (std::size_t j = from; j < tGrid.size(); ++j) {
    const double fit = logMean + slope * (tGrid[j] - tMean);
    residual += std::pow(std::log(mean[j]) - fit, 2) / count;
  }
  report.fitResidual = std::sqrt(residual);
  report.energy = -slope;
  // Delta method on the per-path linearization L_i = sum_j c_j X_ij / m_j.
  double lMean = 0.0, lVar = 0.0;
  std::vector<double> lin(store.rows());
  for (std::size_t r = 0; r < store.rows(); ++r) {
    double l = 0.0;
    for (std::size_t j = from; j < tGrid.size(); ++j) l += c[j] * store.data[r * width + j] / mean[j];
    lin[r] = l;
    lMean += l / n;
  }
  for (double l : lin) lVar += (l - lMean) * (l - lMean) / std::max(1.0, n - 1.0);
  report.stdError = std::sqrt(lVar / n);
  return report;
}

// ------------------------------------------------------------------ resolvent

void gaussLaguerre(int n, double alpha, std::vector<double>& nodes, std::vector<double>& weights) {
  require(n >= 1 && n <= 64, "quadrature: node count must be in [1, 64]");
  require(alpha > -1.0, "quadrature: alpha must exceed -1");
  Eigen::VectorXd diag(n), sub(std::max(0, n - 1));
  for (int i = 0; i < n; ++i) diag[i] = 2.0 * i + alpha + 1.0;
  for (int i = 0; i + 1 < n; ++i) sub[i] = std::sqrt((i + 1.0) * (i + 1.0 + alpha));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  require(eig.info() == Eigen::Success, "quadrature: Golub-Welsch eigensolver failed");
  const double mass = boost::math::tgamma(alpha + 1.0);
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    nodes[static_cast<std::size_t>(i)] = eig.eigenvalues()[i];
    weights[static_cast<std::size_t>(i)] = mass * eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
  }
}

ResolventReport resolventApply(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                               const SectionSpec& f, const Point& x, int k, double lambda, int nodes,
                               const MonteCarloSpec& mc, std::optional<double> energyLowerBound) {
  checkRanks(bundle, v, f);
  checkMc(mc);
  require(k >= 1, "k: must be at least 1");
  require(std::isfinite(lambda) && lambda > 0.0,
          "lambda: the Laguerre rule needs lambda > 0 (diverging tail otherwise)");
  model.validate(x);
  ResolventReport report;
  std::vector<double> u, w;
  gaussLaguerre(nodes, k - 1.0, u, w);
  const double norm = boost::math::tgamma(static_cast<double>(k)) * std::pow(lambda, k);
  for (std::size_t j = 0; j < u.size(); ++j) {
    report.nodes.push_back(u[j] / lambda);
    report.weights.push_back(w[j] / norm);
  }
  const int d = bundle.rank();
  const auto last = report.nodes.size() - 1;
  const Walker walker(model, TimeGrid(report.nodes.back(), mc.h, report.nodes));
  const auto acc = reduceChunks<SampleAccumulator>(mc.n, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
    SampleAccumulator local(d + 2);
    HolonomyStepper stepper(v, mc.h);
    Eigen::VectorXcd row(d + 2);
    for (std::uint64_t i = begin; i < end; ++i) {
      row.setZero();
      double dominating = 0.0;
      const bool alive = walkPath(walker, bundle, stepper, x, {mc.seed, i},
                                  [&](int j, const Point& p, const HolonomyStepper& st) {
                                    const CVector fEnd = f(p);
                                    const double wj = report.weights[static_cast<std::size_t>(j)];
                                    const CVector term = wj * transportedSample(st, fEnd);
                                    row.head(d) += term;
                                    dominating += wj * std::exp(-st.floorIntegral()) * fEnd.norm();
                                    if (static_cast<std::size_t>(j) == last) row[d + 1] = term.norm();
                                  });
      row[d] = dominating;
      local.noteDomination(dominationExcess(row.head(d).norm(), dominating));
      local.add(row, alive);
    }
    return local;
  });
  const Estimate all = acc.finish(mc.h, mc.seed);
  report.value = slice(all, 0, d);
  report.dominating = slice(all, d, 1);
  report.dominationViolations = all.dominationViolations;
  const double total = report.dominating.real();
  report.lastNodeShare = total > 0.0 ? all.value[d + 1].real() / total : 0.0;
  report.divergingTail = report.lastNodeShare > 1e-3 || (energyLowerBound && lambda + *energyLowerBound <= 0.0);
  return report;
}

// ----------------------------------------------------------------- domination

namespace {

struct DominationAcc {
  SampleAccumulator acc;
  std::optional<std::uint64_t> first;
  void merge(const DominationAcc& other) {
    acc.merge(other.acc);
    if (!first) first = other.first;
  }
};

}  // namespace

DominationReport dominationCheck(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                 const SectionSpec& f, const Point& x, double t, const MonteCarloSpec& mc) {
  checkRanks(bundle, v, f);
  checkMc(mc);
  model.validate(x);
  const int d = bundle.rank();
  const Walker walker(model, TimeGrid(t, mc.h, {t}));
  const DominationAcc result =
      reduceChunks<DominationAcc>(mc.n, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
        DominationAcc local{SampleAccumulator(d + 1), std::nullopt};
        HolonomyStepper stepper(v, mc.h);
        Eigen::VectorXcd row(d + 1);
        for (std::uint64_t i = begin; i < end; ++i) {
          row.setZero();
          const bool alive = walkPath(walker, bundle, stepper, x, {mc.seed, i},
                                      [&](int, const Point& p, const HolonomyStepper& st) {
                                        const CVector fEnd = f(p);
                                        row.head(d) = transportedSample(st, fEnd);
                                        row[d] = std::exp(-st.floorIntegral()) * fEnd.norm();
                                      });
          if (!alive) row.setZero();
          const double excess = dominationExcess(row.head(d).norm(), row[d].real());
          local.acc.noteDomination(excess);
          if (excess > 1e-9 && !local.first) local.first = i;
          local.acc.add(row, alive);
        }
        return local;
      });
  const Estimate all = result.acc.finish(mc.h, mc.seed);
  DominationReport report;
  report.vector = slice(all, 0, d);
  report.scalar = slice(all, d, 1);
  report.violations = all.dominationViolations;
  report.maxExcess = all.maxDominationExcess;
  report.firstViolatingPath = result.first;
  const double combined = std::sqrt(report.vector.stdError.squaredNorm() + std::pow(report.scalar.error(), 2));
  report.averagedMargin = report.vector.value.norm() - report.scalar.real() - 3.0 * combined;
  return report;
}

// ------------------------------------------------------------------ smoothing

namespace {

template <class F>
double integrate(F f, double a, double b) {
  if (!(b > a)) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 20, 1e-12);
}

void legendreRule(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), sub(std::max(0, n - 1));
  for (int i = 0; i + 1 < n; ++i) sub[i] = (i + 1.0) / std::sqrt(4.0 * (i + 1.0) * (i + 1.0) - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  nodes.resize(static_cast<std::size_t>(n));
  weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nodes[static_cast<std::size_t>(i)] = eig.eigenvalues()[i];
    weights[static_cast<std::size_t>(i)] = 2.0 * std::pow(eig.eigenvectors()(0, i), 2);
  }
}

}  // namespace

std::vector<HeatNormCheck> heatOperatorNorms(const ManifoldModel& model, double t, double tolerance) {
  require(model.isComplete(), "smoothing: heat operator norms need a complete model with a closed-form kernel");
  require(t > 0.0, "t: must be positive");
  const double ct = model.supHeatKernel(t);
  const Point o = model.origin();
  const double reach = 40.0 * std::sqrt(t);
  // Integrals over y of p_t(o, y)^e, e = 1 (mass) and 2.
  auto moment = [&](int e) {
    auto pw = [e](double p) { return e == 1 ? p : p * p; };
    switch (model.kind()) {
      case ModelKind::Euclidean: {
        const int m = model.dimension();
        const double area = 2.0 * std::pow(kPi, 0.5 * m) / boost::math::tgamma(0.5 * m);
        return integrate([&](double r) { return area * std::pow(r, m - 1) * pw(model.heatKernelRadial(t, r)); }, 0.0,
                         reach);
      }
      case ModelKind::Sphere2: {
        const double radius = model.radius();
        return integrate(
            [&](double r) { return kTwoPi * radius * std::sin(r / radius) * pw(model.heatKernelRadial(t, r)); }, 0.0,
            kPi * radius);
      }
      case ModelKind::HyperbolicPlane:
        return integrate([&](double r) { return kTwoPi * std::sinh(r) * pw(model.heatKernelRadial(t, r)); }, 0.0,
                         reach + t + 1.0);
      case ModelKind::Circle: {
        const double half = kPi * model.radius();
        return integrate(
            [&](double u) { return pw(model.heatKernel(t, o, model.makePoint({u / model.radius()}))); }, -half,
            half);
      }
      default: throw Error("smoothing: heat operator norms are not available on " + model.describe());
    }
  };
  const double mass = moment(1);
  const double kernelL2 = std::sqrt(moment(2));
  const double diagonal = model.heatKernel(t, o, o);
  std::vector<HeatNormCheck> out;
  auto add = [&](double p, double q, double norm) {
    const double exponent = 1.0 / p - (std::isinf(q) ? 0.0 : 1.0 / q);
    const double bound = std::pow(ct, exponent);
    out.push_back({p, q, norm, bound, norm <= bound + tolerance});
  };
  add(1.0, 2.0, kernelL2);
  // ||P_t||_{2,2} <= (||P_t||_{1,1} ||P_t||_{inf,inf})^{1/2} = sup_x int p_t(x, y) dy.
  add(2.0, 2.0, mass);
  add(2.0, kInf, kernelL2);
  add(1.0, kInf, diagonal);
  return out;
}

QuadratureGrid sphereQuadrature(const ManifoldModel& model, int nTheta, int nPhi) {
  require(model.kind() == ModelKind::Sphere2, "quadrature: sphere2 model required");
  require(nTheta >= 1 && nPhi >= 1, "quadrature: need positive node counts");
  std::vector<double> z, w;
  legendreRule(nTheta, z, w);
  const double r = model.radius();
  QuadratureGrid grid;
  for (int i = 0; i < nTheta; ++i) {
    const double zi = z[static_cast<std::size_t>(i)];
    const double rho = std::sqrt(std::max(0.0, 1.0 - zi * zi));
    for (int j = 0; j < nPhi; ++j) {
      const double phi = kTwoPi * (j + 0.5) / nPhi;
      grid.points.push_back(model.makePoint({r * rho * std::cos(phi), r * rho * std::sin(phi), r * zi}));
      grid.weights.push_back(w[static_cast<std::size_t>(i)] * kTwoPi / nPhi * r * r);
    }
  }
  return grid;
}

bool SmoothingReport::passed() const {
  return violations == 0 &&
         std::all_of(heatNorms.begin(), heatNorms.end(), [](const HeatNormCheck& c) { return c.passed; });
}

SmoothingReport smoothingNormBound(const ManifoldModel& model, const PotentialSpec& v, double t, double q,
                                   const std::vector<SectionSpec>& probes, const QuadratureGrid& grid,
                                   const MonteCarloSpec& mc) {
  require(v.rank() == 1, "potential: the smoothing check uses rank-1 potentials");
  require(q >= 2.0, "q: must be in [2, infinity]");
  require(!probes.empty(), "smoothing: need at least one probe");
  require(!grid.points.empty() && grid.weights.size() == grid.points.size(),
          "smoothing: the x-grid needs one quadrature weight per point");
  checkMc(mc);
  SmoothingReport report;
  report.t = t;
  report.q = q;
  report.heatNorms = heatOperatorNorms(model.completeModel(), t);
  report.ct = model.completeModel().supHeatKernel(t);
  if (v.hasNegativePart()) {
    const ScalarPotential twice = scaled(v.negativeNormPotential(), 2.0);
    report.d = 0.5 * khasminskiiConstants(model, twice, defaultKatoGrid(model, twice)).cv;
  }
  const bool sup = std::isinf(q);
  report.bound = std::sqrt(2.0) * std::pow(report.ct, 0.5 - (sup ? 0.0 : 1.0 / q)) * std::exp(t * report.d);

  double volume = 0.0;
  for (double w : grid.weights) volume += w;
  const auto count = static_cast<int>(probes.size());
  for (int p = 0; p < count; ++p) {
    const SectionSpec& f = probes[static_cast<std::size_t>(p)];
    require(f.rank == 1, "smoothing: probes must be scalar sections");
    double norm2 = 0.0;
    for (std::size_t i = 0; i < grid.points.size(); ++i) norm2 += grid.weights[i] * f(grid.points[i]).squaredNorm();
    require(std::abs(std::sqrt(norm2) - 1.0) <= 1e-6,
            "smoothing: probe " + std::to_string(p) + " normalization failure (quadrature norm " +
                formatNumber(std::sqrt(norm2)) + ")");
  }

  const Walker walker(model, TimeGrid(t, mc.h, {t}));
  const BundleSpec bundle = BundleSpec::trivial(1);
  std::vector<Estimate> values;
  for (const Point& x : grid.points) {
    const auto acc = reduceChunks<SampleAccumulator>(mc.n, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
      SampleAccumulator local(count);
      HolonomyStepper stepper(v, mc.h);
      Eigen::VectorXcd row(count);
      for (std::uint64_t i = begin; i < end; ++i) {
        row.setZero();
        const bool alive = walkPath(walker, bundle, stepper, x, {mc.seed, i},
                                    [&](int, const Point& y, const HolonomyStepper& st) {
                                      const cd weight = st.value()(0, 0);
                                      for (int p = 0; p < count; ++p) row[p] = weight * probes[static_cast<std::size_t>(p)](y)[0];
                                    });
        if (!alive) row.setZero();
        local.add(row, alive);
      }
      return local;
    });
    values.push_back(acc.finish(mc.h, mc.seed));
  }
  for (int p = 0; p < count; ++p) {
    double norm = 0.0, worstError = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double u = std::abs(values[i].value[p]);
      norm = sup ? std::max(norm, u) : norm + grid.weights[i] * std::pow(u, q);
      worstError = std::max(worstError, values[i].stdError[p]);
    }
    if (!sup) norm = std::pow(norm, 1.0 / q);
    const double error = sup ? worstError : std::pow(volume, 1.0 / q) * worstError;
    report.probeNorms.push_back(norm);
    report.probeErrors.push_back(error);
    if (norm > report.bound + 3.0 * error) ++report.violations;
  }
  return report;
}

// ------------------------------------------- identity and perturbation checks

namespace {

/// Outer stage to time s (potential vOuter), inner stage to time t
/// (potential vInner) from every surviving outer end point.
Estimate nestedEstimate(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& vOuter,
                        const PotentialSpec& vInner, const SectionSpec& f, double s, double t, const Point& x,
                        const MonteCarloSpec& mc, std::uint64_t outer, std::uint64_t inner) {
  const int d = bundle.rank();
  const Walker outerWalker(model, TimeGrid(s, mc.h, {s}));
  const Walker innerWalker(model, TimeGrid(t, mc.h, {t}));
  const std::uint64_t outerSeed = deriveSeed(mc.seed, 1);
  const auto acc = reduceChunks<SampleAccumulator>(outer, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
    SampleAccumulator local(d);
    HolonomyStepper outerStepper(vOuter, mc.h);
    HolonomyStepper innerStepper(vInner, mc.h);
    for (std::uint64_t i = begin; i < end; ++i) {
      CMatrix yOuter, gOuter;
      Point y;
      const bool alive = walkPath(outerWalker, bundle, outerStepper, x, {outerSeed, i},
                                  [&](int, const Point& p, const HolonomyStepper& st) {
                                    yOuter = st.value();
                                    gOuter = st.transport();
                                    y = p;
                                  });
      CVector z = CVector::Zero(d);
      if (alive) {
        CVector mean = CVector::Zero(d);
        const std::uint64_t innerSeed = deriveSeed(mc.seed, 2 + i);
        for (std::uint64_t j = 0; j < inner; ++j) {
          CVector sample = CVector::Zero(d);
          const bool innerAlive = walkPath(innerWalker, bundle, innerStepper, y, {innerSeed, j},
                                           [&](int, const Point& p, const HolonomyStepper& st) {
                                             sample = transportedSample(st, f(p));
                                           });
          if (innerAlive) mean += sample;
        }
        mean /= static_cast<double>(inner);
        z = yOuter * (gOuter.adjoint() * mean);
      }
      local.add(z, alive);
    }
    return local;
  });
  return acc.finish(mc.h, mc.seed);
}

void compare(IdentityReport& report) {
  const Eigen::VectorXcd diff = report.oneShot.value - report.nested.value;
  report.maxDifference = diff.cwiseAbs().maxCoeff();
  report.zScore = 0.0;
  for (Eigen::Index i = 0; i < diff.size(); ++i) {
    const double combined = std::hypot(report.oneShot.stdError[i], report.nested.stdError[i]);
    const double scale = 1e-12 * std::max(1.0, std::abs(report.oneShot.value[i]));
    if (combined > 0.0) {
      report.zScore = std::max(report.zScore, std::abs(diff[i]) / combined);
    } else if (std::abs(diff[i]) > scale) {
      report.zScore = kInf;
    }
  }
  report.passed = report.zScore <= 3.0 && report.boundViolations == 0;
}

std::uint64_t balancedRoot(std::uint64_t n) {
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(std::sqrt(static_cast<double>(n)))));
}

}  // namespace

IdentityReport semigroupIdentityCheck(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                      const SectionSpec& f, double s, double t, const Point& x,
                                      const MonteCarloSpec& mc) {
  checkRanks(bundle, v, f);
  checkMc(mc);
  require(model.isComplete(), "identity-check: the semigroup identity is checked on complete models");
  require(s >= 0.0 && t >= 0.0, "t: s and t must be nonnegative");
  IdentityReport report;
  report.oneShot = fkEstimate(model, bundle, v, f, x, s + t, mc);
  if (s == 0.0 || t == 0.0) {
    // One stage is the identity: the nested estimator is the one-shot estimator.
    report.outer = s == 0.0 ? 1 : mc.n;
    report.inner = s == 0.0 ? mc.n : 1;
    report.nested = fkEstimate(model, bundle, v, f, x, s + t, mc);
  } else {
    report.outer = report.inner = balancedRoot(mc.n);
    report.nested = nestedEstimate(model, bundle, v, v, f, s, t, x, mc, report.outer, report.inner);
  }
  compare(report);
  return report;
}

IdentityReport perturbationFormulaCheck(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                        const SectionSpec& f, double s, double t, const Point& x,
                                        const MonteCarloSpec& mc) {
  checkRanks(bundle, v, f);
  checkMc(mc);
  require(model.isComplete(), "identity-check: the perturbation formula is checked on complete models");
  require(s >= 0.0 && s <= t, "t: need 0 <= s <= t");
  model.validate(x);
  const int d = bundle.rank();
  IdentityReport report;

  // Single paths: Y_s^{-1} Y_t //_t^{-1} f(B_t).
  const std::vector<double> stops = s == t ? std::vector<double>{t} : std::vector<double>{s, t};
  const Walker walker(model, TimeGrid(t, mc.h, stops));
  const auto acc = reduceChunks<SampleAccumulator>(mc.n, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
    SampleAccumulator local(d);
    HolonomyStepper stepper(v, mc.h, true);
    for (std::uint64_t i = begin; i < end; ++i) {
      CMatrix inverseAtS = CMatrix::Identity(d, d);
      double negativeAtS = 0.0;
      CVector sample = CVector::Zero(d);
      const bool alive = walkPath(walker, bundle, stepper, x, {mc.seed, i},
                                  [&](int j, const Point& p, const HolonomyStepper& st) {
                                    const bool atS = s != t && j == 0;
                                    if (atS) {
                                      inverseAtS = st.inverse();
                                      negativeAtS = st.negativeNormIntegral();
                                      return;
                                    }
                                    const CVector fEnd = f(p);
                                    // Y_s^{-1} Y_t over an empty interval is the identity.
                                    const CMatrix between = s == t ? CMatrix::Identity(d, d)
                                                                   : CMatrix(inverseAtS * st.value());
                                    sample = between * (st.transport().adjoint() * fEnd);
                                    const double bound =
                                        std::exp(st.negativeNormIntegral() - negativeAtS) * fEnd.norm();
                                    local.noteDomination(dominationExcess(sample.norm(), bound));
                                  });
      if (!alive) sample.setZero();
      local.add(sample, alive);
    }
    return local;
  });
  report.oneShot = acc.finish(mc.h, mc.seed);
  report.boundViolations = report.oneShot.dominationViolations;

  // Nested: free flow to s, then the V-semigroup for t - s.
  const PotentialSpec free = PotentialSpec::zero(d);
  if (s == 0.0) {
    report.outer = 1;
    report.inner = mc.n;
    report.nested = fkEstimate(model, bundle, v, f, x, t, mc);
  } else if (s == t) {
    report.outer = mc.n;
    report.inner = 1;
    report.nested = fkEstimate(model, bundle, free, f, x, t, mc);
  } else {
    report.outer = report.inner = balancedRoot(mc.n);
    report.nested = nestedEstimate(model, bundle, free, v, f, s, t - s, x, mc, report.outer, report.inner);
  }
  // The nested side carries no per-sample bound of its own.
  report.nested.dominationViolations = 0;
  compare(report);
  return report;
}

// ----------------------------------------------------------- continuity scan

ContinuityReport continuityScan(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                const SectionSpec& f, double t, const Coords& a, const Coords& b, int n,
                                std::vector<double> sGrid, const MonteCarloSpec& mc, bool refine) {
  checkRanks(bundle, v, f);
  checkMc(mc);
  const PotentialClass negative = v.negativeClass();
  require(negative == PotentialClass::Bounded || negative == PotentialClass::Kato,
          "continuity-scan: refused, the negative part of " + v.describe() + " is declared " + toString(negative) +
              ", not Kato");
  require(n >= 32, "x-grid: the continuity scan needs at least 32 grid points");
  require(!sGrid.empty(), "t-grid: need at least one s value");
  require(f.l2Norm.has_value(), "f: the global bound needs ||f||_2");
  std::sort(sGrid.begin(), sGrid.end(), std::greater<>());
  ContinuityReport report;
  report.sGrid = sGrid;
  const int d = bundle.rank();

  const int fine = refine ? 2 * n - 1 : n;
  std::vector<Point> fineGrid;
  for (int i = 0; i < fine; ++i) {
    const Coords c = a + (b - a) * (static_cast<double>(i) / (fine - 1));
    const Point p = model.makePoint(std::span<const double>(c.data(), static_cast<std::size_t>(c.size())));
    require(model.inside(p), "x-grid: segment point " + std::to_string(i) + " lies outside the domain");
    fineGrid.push_back(p);
  }
  const int stride = refine ? 2 : 1;
  for (int i = 0; i < fine; i += stride) report.grid.push_back(fineGrid[static_cast<std::size_t>(i)]);

  // (i) sup_x E ||I - Y_s||^2 (killed paths count as Y = 0).
  for (double s : sGrid) {
    require(s > 0.0, "t-grid: s values must be positive");
    MonteCarloSpec local = mc;
    local.h = std::min(mc.h, s / 10.0);
    const Walker walker(model, TimeGrid(s, local.h, {s}));
    double best = -1.0, bestError = 0.0;
    for (const Point& x : report.grid) {
      const auto acc =
          reduceChunks<SampleAccumulator>(local.n, local.workers, [&](std::uint64_t begin, std::uint64_t end) {
            SampleAccumulator sink(1);
            HolonomyStepper stepper(v, local.h);
            for (std::uint64_t i = begin; i < end; ++i) {
              double defect = 1.0;
              const bool alive = walkPath(walker, bundle, stepper, x, {local.seed, i},
                                          [&](int, const Point&, const HolonomyStepper& st) {
                                            const CMatrix gap = CMatrix::Identity(d, d) - st.value();
                                            defect = std::pow(operatorNorm(gap), 2);
                                          });
              if (!alive) defect = 1.0;
              sink.addScalar(defect, alive);
            }
            return sink;
          });
      const Estimate e = acc.finish(local.h, local.seed);
      if (e.real() > best) {
        best = e.real();
        bestError = e.error();
      }
    }
    report.supDefect.push_back(best);
    report.supDefectStderr.push_back(bestError);
  }
  report.defectMonotone = true;
  for (std::size_t i = 1; i < report.supDefect.size(); ++i)
    if (report.supDefect[i] >= report.supDefect[i - 1]) report.defectMonotone = false;

  // (ii) discrete modulus of continuity of Q_t f on the grid and its refinement.
  std::vector<Estimate> fineValues;
  for (const Point& x : fineGrid) fineValues.push_back(fkEstimate(model, bundle, v, f, x, t, mc));
  auto modulusOf = [&](int step) {
    double m = 0.0;
    for (int i = 0; i + step < fine; i += step)
      m = std::max(m, (fineValues[static_cast<std::size_t>(i + step)].value - fineValues[static_cast<std::size_t>(i)].value).norm());
    return m;
  };
  for (int i = 0; i < fine; i += stride) report.values.push_back(fineValues[static_cast<std::size_t>(i)]);
  report.modulus = modulusOf(stride);
  if (refine) {
    report.refinedModulus = modulusOf(1);
    report.modulusRatio = report.refinedModulus > 0.0 ? report.modulus / report.refinedModulus : kInf;
    report.modulusOk = report.modulusRatio >= 1.0 && report.modulusRatio <= 4.0;
  } else {
    report.modulusOk = true;
  }

  // (iii) sup ||Q_t f|| <= (2 e^{Ct} sup p_t)^{1/2} ||f||_2.
  double c = 0.0;
  if (v.hasNegativePart()) {
    const ScalarPotential twice = scaled(v.negativeNormPotential(), 2.0);
    c = khasminskiiConstants(model, twice, defaultKatoGrid(model, twice)).cv;
  }
  const double ct = model.completeModel().supHeatKernel(t);
  report.globalBound = std::sqrt(2.0 * std::exp(c * t) * ct) * *f.l2Norm;
  double worst = -kInf;
  for (const Estimate& e : report.values) {
    report.supNorm = std::max(report.supNorm, e.value.norm());
    worst = std::max(worst, e.value.norm() - 3.0 * e.stdError.norm() - report.globalBound);
  }
  report.boundHolds = worst <= 0.0;
  return report;
}

// --------------------------------------------------------------- h-refinement

RefinementReport hRefinement(const ManifoldModel& model, const ScalarPotential& v, const SectionSpec& f,
                             const Point& x, double t, std::vector<double> hs, double reference,
                             const MonteCarloSpec& mc) {
  require(model.kind() == ModelKind::Euclidean, "h-refinement: common increments need a euclidean model");
  require(f.rank == 1, "f: h-refinement uses a scalar section");
  require(hs.size() >= 2, "h: need at least two step sizes");
  require(mc.n >= 2, "n: need at least two paths");
  std::sort(hs.begin(), hs.end(), std::greater<>());
  const double finest = hs.back();
  const auto levels = static_cast<int>(hs.size());
  std::vector<int> factor;
  for (double h : hs) {
    const double ratio = h / finest;
    const auto k = static_cast<int>(std::lround(ratio));
    require(std::abs(ratio - k) < 1e-9 && (k & (k - 1)) == 0, "h: step sizes must be the finest times powers of two");
    const double steps = t / h;
    require(std::abs(steps - std::round(steps)) < 1e-9, "h: t must be a multiple of every step size");
    factor.push_back(k);
  }
  const auto fineSteps = static_cast<long>(std::lround(t / finest));
  const int m = model.dimension();
  require(std::sqrt(m * hs.front()) <= model.maxStep(), "h: coarsest step exceeds the max step");

  const auto acc = reduceChunks<SampleAccumulator>(mc.n, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
    SampleAccumulator local(2 * levels - 1);
    std::vector<ScalarIntegrator> integrators;
    for (int l = 0; l < levels; ++l) integrators.emplace_back(v, hs[static_cast<std::size_t>(l)]);
    Eigen::VectorXcd row(2 * levels - 1);
    std::vector<Point> position(static_cast<std::size_t>(levels));
    std::vector<Coords> pending(static_cast<std::size_t>(levels));
    std::vector<double> integral(static_cast<std::size_t>(levels));
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng rng({mc.seed, i});
      for (int l = 0; l < levels; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        position[ul] = x;
        pending[ul] = Coords::Zero(m);
        integral[ul] = 0.0;
        integrators[ul].start(x);
      }
      const double scale = std::sqrt(finest);
      for (long k = 0; k < fineSteps; ++k) {
        Coords xi(m);
        for (int j = 0; j < m; ++j) xi[j] = scale * rng.normal();
        for (int l = 0; l < levels; ++l) {
          const auto ul = static_cast<std::size_t>(l);
          pending[ul] += xi;
          if ((k + 1) % factor[ul] != 0) continue;
          const Point next = model.geodesicStep(position[ul], pending[ul]).end;
          integral[ul] += integrators[ul].step(model, position[ul], pending[ul], next, hs[ul]);
          position[ul] = next;
          pending[ul].setZero();
        }
      }
      for (int l = 0; l < levels; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        row[l] = std::exp(-integral[ul]) * f(position[ul])[0];
      }
      for (int l = 0; l + 1 < levels; ++l) row[levels + l] = row[l] - row[l + 1];
      local.add(row);
    }
    return local;
  });
  const Estimate all = acc.finish(finest, mc.seed);
  RefinementReport report;
  report.hs = hs;
  report.reference = reference;
  report.monotone = true;
  for (int l = 0; l < levels; ++l) {
    report.values.push_back(all.value[l].real());
    report.stdErrors.push_back(all.stdError[l]);
    report.bias.push_back(std::abs(all.value[l].real() - reference));
  }
  for (int l = 0; l + 1 < levels; ++l) {
    report.differenceStderr.push_back(all.stdError[levels + l]);
    const auto ul = static_cast<std::size_t>(l);
    if (report.bias[ul + 1] > report.bias[ul] + 2.0 * report.differenceStderr[ul]) report.monotone = false;
  }
  return report;
}

}  // namespace fiberflow
