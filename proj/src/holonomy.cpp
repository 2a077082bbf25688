#include "fiberflow/holonomy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "fiberflow/linalg.hpp"

namespace fiberflow {

// ------------------------------------------------------------ HolonomyStepper

HolonomyStepper::HolonomyStepper(const PotentialSpec& v, double h, bool trackInverse)
    : v_(&v), scalar_(v.scalarPart()), d_(v.rank()), cap_(1.0 / h), singular_(v.singular()),
      trackInverse_(trackInverse) {
  require(h > 0.0, "h: must be positive");
}

CMatrix HolonomyStepper::sampleV(const Point& p) const {
  CMatrix value = v_->value(p);
  if (singular_) value = clampEigenvalues(value, -cap_, cap_);
  return value;
}

namespace {

double checkedScalar(double value, const PotentialSpec& v, bool singular, double cap) {
  if (std::isnan(value) || (!singular && !std::isfinite(value)))
    throw Error("potential " + v.describe() + ": non-finite value along the path");
  return singular ? std::clamp(value, -cap, cap) : value;
}

}  // namespace

void HolonomyStepper::start(const Point& x) {
  g_ = CMatrix::Identity(d_, d_);
  if (!scalar_) {
    value_ = CMatrix::Identity(d_, d_);
    if (trackInverse_) inverse_ = CMatrix::Identity(d_, d_);
  }
  scalarLog_ = 0.0;
  floorIntegral_ = negativeIntegral_ = normIntegral_ = 0.0;
  if (singular_) return;
  if (scalar_) {
    lastScalar_ = checkedScalar(scalar_->value(x), *v_, false, cap_);
  } else {
    lastPulled_ = v_->value(x);
  }
  lastFloor_ = checkedScalar(v_->scalarFloor(x), *v_, false, cap_);
  lastNegative_ = v_->negativeNorm(x);
}

void HolonomyStepper::step(const ManifoldModel& model, const Point& from, const Coords& xi, const Point& to,
                           double dt) {
  step(model, from, xi, to, dt, CMatrix::Identity(d_, d_));
}

void HolonomyStepper::step(const ManifoldModel& model, const Point& from, const Coords& xi, const Point& to,
                           double dt, const CMatrix& s) {
  const CMatrix gNext = s * g_;
  double floorMean = 0.0;
  double negativeMean = 0.0;
  if (singular_) {
    Point samples[4];
    for (int j = 0; j < 4; ++j) samples[j] = model.geodesicStep(from, kSubstepFractions[j] * xi).end;
    for (const Point& p : samples) {
      floorMean += 0.25 * checkedScalar(v_->scalarFloor(p), *v_, true, cap_);
      negativeMean += 0.25 * std::min(cap_, v_->negativeNorm(p));
    }
    if (scalar_) {
      double w = 0.0;
      for (const Point& p : samples) w += 0.25 * checkedScalar(scalar_->value(p), *v_, true, cap_);
      scalarLog_ -= dt * w;
      normIntegral_ += dt * std::abs(w);
      lastW_ = CMatrix::Identity(d_, d_) * w;
    } else {
      CMatrix mean = CMatrix::Zero(d_, d_);
      for (const Point& p : samples) mean += 0.25 * sampleV(p);
      lastW_ = hermitianPart(g_.adjoint() * mean * g_);
    }
  } else {
    const double floorNext = checkedScalar(v_->scalarFloor(to), *v_, false, cap_);
    const double negativeNext = v_->negativeNorm(to);
    floorMean = 0.5 * (lastFloor_ + floorNext);
    negativeMean = 0.5 * (lastNegative_ + negativeNext);
    lastFloor_ = floorNext;
    lastNegative_ = negativeNext;
    if (scalar_) {
      const double next = checkedScalar(scalar_->value(to), *v_, false, cap_);
      const double w = 0.5 * (lastScalar_ + next);
      lastScalar_ = next;
      scalarLog_ -= dt * w;
      normIntegral_ += dt * std::abs(w);
      lastW_ = CMatrix::Identity(d_, d_) * w;
    } else {
      const CMatrix pulledNext = gNext.adjoint() * v_->value(to) * gNext;
      lastW_ = hermitianPart(0.5 * (lastPulled_ + pulledNext));
      lastPulled_ = pulledNext;
    }
  }
  if (!scalar_) {
    const EigenRange range = hermitianEigenRange(lastW_);
    normIntegral_ += dt * std::max(std::abs(range.min), std::abs(range.max));
    value_ = value_ * hermitianExp(lastW_, -dt);
    if (trackInverse_) inverse_ = hermitianExp(lastW_, dt) * inverse_;
  }
  floorIntegral_ += dt * floorMean;
  negativeIntegral_ += dt * negativeMean;
  g_ = gNext;
}

CMatrix HolonomyStepper::value() const {
  if (scalar_) return CMatrix::Identity(d_, d_) * std::exp(scalarLog_);
  return value_;
}

CMatrix HolonomyStepper::inverse() const {
  require(trackInverse_ || scalar_, "holonomy: inverse not tracked");
  if (scalar_) return CMatrix::Identity(d_, d_) * std::exp(-scalarLog_);
  return inverse_;
}

CMatrix HolonomyStepper::lastW() const { return lastW_; }

// ------------------------------------------------------------ trace and Dyson

HolonomyTrace evolveHolonomy(const ManifoldModel& model, const PathSample& path, const PotentialSpec& v) {
  require(v.rank() == path.rank, "potential: rank does not match the path's bundle rank");
  const double h = path.h > 0.0 ? path.h : 1.0;
  HolonomyStepper stepper(v, h, true);
  HolonomyTrace trace;
  trace.times = path.times;
  stepper.start(path.points.front());
  trace.values.push_back(stepper.value());
  trace.inverses.push_back(stepper.inverse());
  trace.floorIntegrals.push_back(0.0);
  trace.negativeNormIntegrals.push_back(0.0);
  const ManifoldModel& base = model.completeModel();
  for (std::size_t k = 0; k < path.stepCount(); ++k) {
    const double dt = path.times[k + 1] - path.times[k];
    stepper.step(base, path.points[k], path.steps[k], path.points[k + 1], dt, path.transport(k));
    trace.values.push_back(stepper.value());
    trace.inverses.push_back(stepper.inverse());
    trace.frameFields.push_back(stepper.lastW());
    trace.floorIntegrals.push_back(stepper.floorIntegral());
    trace.negativeNormIntegrals.push_back(stepper.negativeNormIntegral());
  }
  return trace;
}

CMatrix productIntegralTruncation(const std::vector<CMatrix>& f, const std::vector<double>& dt, int order) {
  require(order >= 0 && order <= 6, "order: must be in [0, 6]");
  require(f.size() == dt.size(), "productIntegralTruncation: one step length per cell");
  require(!f.empty(), "productIntegralTruncation: empty grid");
  const auto d = f.front().rows();
  double mass = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) mass += dt[k] * operatorNorm(f[k]);
  require(mass <= 5.0, "productIntegralTruncation: int ||F|| = " + formatNumber(mass) +
                           " exceeds 5; the truncated series is meaningless");
  const std::size_t n = f.size();
  std::vector<CMatrix> previous(n + 1, CMatrix::Identity(d, d));
  std::vector<CMatrix> current(n + 1);
  CMatrix total = CMatrix::Identity(d, d);
  for (int k = 1; k <= order; ++k) {
    current[0] = CMatrix::Zero(d, d);
    for (std::size_t j = 0; j < n; ++j)
      current[j + 1] = current[j] + 0.5 * (previous[j] + previous[j + 1]) * f[j] * dt[j];
    total += current[n];
    std::swap(previous, current);
  }
  return total;
}

CMatrix productIntegralTruncation(const ManifoldModel& model, const PathSample& path, const PotentialSpec& v,
                                  int order) {
  const HolonomyTrace trace = evolveHolonomy(model, path, v);
  if (trace.frameFields.empty()) return CMatrix::Identity(v.rank(), v.rank());
  std::vector<CMatrix> f;
  std::vector<double> dt;
  for (std::size_t k = 0; k < trace.frameFields.size(); ++k) {
    f.push_back(-trace.frameFields[k]);
    dt.push_back(trace.times[k + 1] - trace.times[k]);
  }
  return productIntegralTruncation(f, dt, order);
}

// ---------------------------------------------------------- inequality suite

std::uint64_t AppendixCReport::totalViolations() const {
  std::uint64_t total = 0;
  for (const auto& c : checks) total += c.violations;
  return total;
}

namespace {

CMatrix randomComplex(StreamRng& rng, int d) {
  CMatrix g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = cd(rng.normal(), rng.normal()) / std::sqrt(2.0);
  return g;
}

CMatrix randomHermitian(StreamRng& rng, int d) {
  const CMatrix g = randomComplex(rng, d);
  return 0.5 * (g + g.adjoint());
}

struct Solution {
  std::vector<CMatrix> y;        // Y(t_k), k = 0..cells
  std::vector<CMatrix> inverse;  // Y(t_k)^{-1}
  std::vector<double> normMass;  // int_0^{t_k} ||F||
};

Solution solve(const std::vector<CMatrix>& f, double dt, bool hermitian) {
  const auto d = f.front().rows();
  Solution s;
  s.y.push_back(CMatrix::Identity(d, d));
  s.inverse.push_back(CMatrix::Identity(d, d));
  s.normMass.push_back(0.0);
  for (const CMatrix& fk : f) {
    const CMatrix step = hermitian ? hermitianExp(fk, dt) : matrixExp(fk * dt);
    const CMatrix back = hermitian ? hermitianExp(fk, -dt) : matrixExp(-fk * dt);
    s.y.push_back(s.y.back() * step);
    s.inverse.push_back(back * s.inverse.back());
    s.normMass.push_back(s.normMass.back() + dt * operatorNorm(fk));
  }
  return s;
}

class Checker {
 public:
  Checker(AppendixCReport& report, double slack) : report_(report), slack_(slack) {}

  void check(std::size_t index, double lhs, double rhs, std::uint64_t trialSeed) {
    InequalityCheck& c = report_.checks[index];
    ++c.checked;
    c.worstMargin = std::max(c.worstMargin, lhs - rhs);
    if (!(lhs <= rhs + slack_ * std::max(1.0, std::abs(rhs)))) {
      ++c.violations;
      if (c.failingTrialSeeds.empty() || c.failingTrialSeeds.back() != trialSeed)
        c.failingTrialSeeds.push_back(trialSeed);
    }
  }

 private:
  AppendixCReport& report_;
  double slack_;
};

}  // namespace

AppendixCReport appendixCInequalitySuite(int trials, int rank, double t, std::uint64_t seed, int cells,
                                         double slack) {
  require(trials >= 1, "trials: must be positive");
  require(rank >= 1 && rank <= kMaxRank, "rank: must be in [1, 16]");
  require(t > 0.0, "t: must be positive");
  require(cells >= 1, "cells: must be positive");
  const auto started = std::chrono::steady_clock::now();
  AppendixCReport report;
  report.trials = trials;
  report.rank = rank;
  report.t = t;
  report.cells = cells;
  report.slack = slack;
  enum : std::size_t { kGrowth, kDistance, kFormBound, kFormInverse, kStability, kRoot1, kRoot2, kRoot4 };
  for (const char* name : {"norm growth ||Y|| <= e^{int ||F||}", "distance ||Y - 1|| <= e^{int ||F||}",
                           "form bound ||Y|| <= e^{int c}", "form bound ||Y(t1)^{-1} Y(t2)|| <= e^{int c}",
                           "stability ||Y1 - Y2|| <= e^{2 int ||F1|| + int ||F2||} int ||F1 - F2||",
                           "root bound p=1", "root bound p=2", "root bound p=4"})
  {
    InequalityCheck check;
    check.name = name;
    report.checks.push_back(check);
  }
  Checker checker(report, slack);
  const double dt = t / cells;

  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t trialSeed = deriveSeed(seed, static_cast<std::uint64_t>(trial));
    StreamRng rng({trialSeed, 0});
    // Amplitudes spread so that int ||F|| falls on both sides of 1.
    const double amplitude = std::exp(std::log(0.05) + rng.uniform() * (std::log(4.0) - std::log(0.05)));
    const double gap = std::exp(std::log(1e-4) + rng.uniform() * (std::log(1.0) - std::log(1e-4)));
    const double scale = amplitude / std::sqrt(static_cast<double>(rank));
    std::vector<CMatrix> h1, h2, g1, g2;
    for (int k = 0; k < cells; ++k) {
      h1.push_back(scale * randomHermitian(rng, rank));
      h2.push_back(h1.back() + gap * scale * randomHermitian(rng, rank));
      g1.push_back(scale * randomComplex(rng, rank));
      g2.push_back(g1.back() + gap * scale * randomComplex(rng, rank));
    }
    const Solution sh1 = solve(h1, dt, true);
    const Solution sh2 = solve(h2, dt, true);
    const Solution sg1 = solve(g1, dt, false);
    const Solution sg2 = solve(g2, dt, false);

    // c(s) = largest eigenvalue of F(s): the tightest admissible choice.
    std::vector<double> cMass{0.0};
    for (const CMatrix& f : h1) cMass.push_back(cMass.back() + dt * hermitianEigenRange(f).max);

    const CMatrix identity = CMatrix::Identity(rank, rank);
    auto pairChecks = [&](const Solution& a, const Solution& b, const std::vector<CMatrix>& fa,
                          const std::vector<CMatrix>& fb) {
      double diffMass = 0.0;
      for (int k = 0; k <= cells; ++k) {
        if (k > 0) diffMass += dt * operatorNorm(fa[k - 1] - fb[k - 1]);
        const double mass = a.normMass[k];
        checker.check(kGrowth, operatorNorm(a.y[k]), std::exp(mass), trialSeed);
        const double distance = operatorNorm(a.y[k] - identity);
        checker.check(kDistance, distance, std::exp(mass), trialSeed);
        checker.check(kRoot1, distance, mass * std::exp(mass), trialSeed);
        checker.check(kRoot2, distance, std::sqrt(mass) * std::exp(mass), trialSeed);
        checker.check(kRoot4, distance, std::pow(mass, 0.25) * std::exp(mass), trialSeed);
        checker.check(kStability, operatorNorm(a.y[k] - b.y[k]),
                      std::exp(2.0 * mass + b.normMass[k]) * diffMass, trialSeed);
      }
    };
    pairChecks(sh1, sh2, h1, h2);
    pairChecks(sg1, sg2, g1, g2);

    for (int k = 0; k <= cells; ++k) checker.check(kFormBound, operatorNorm(sh1.y[k]), std::exp(cMass[k]), trialSeed);
    for (int pair = 0; pair < 8; ++pair) {
      int k1 = static_cast<int>(rng.uniform() * (cells + 1));
      int k2 = static_cast<int>(rng.uniform() * (cells + 1));
      if (k1 > k2) std::swap(k1, k2);
      checker.check(kFormInverse, operatorNorm(sh1.inverse[k1] * sh1.y[k2]), std::exp(cMass[k2] - cMass[k1]),
                    trialSeed);
    }
  }
  report.wallSeconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace fiberflow
