#include <doctest.h>

#include <cmath>

#include "fiberflow/holonomy.hpp"
#include "fiberflow/linalg.hpp"

using namespace fiberflow;

namespace {

CMatrix randomHermitian(int d, StreamRng& rng) {
  CMatrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = cd(rng.normal(), rng.normal());
  return CMatrix(0.5 * (a + a.adjoint()));
}

/// exp(A) by scaled Taylor series; independent of the library's exponentials.
CMatrix taylorExp(const CMatrix& a) {
  int squarings = 0;
  double n = a.norm();
  while (n > 0.25) {
    n /= 2.0;
    ++squarings;
  }
  const CMatrix b = a / std::pow(2.0, squarings);
  CMatrix term = CMatrix::Identity(a.rows(), a.cols());
  CMatrix out = term;
  for (int k = 1; k < 30; ++k) {
    term = CMatrix(term * b / static_cast<double>(k));
    out += term;
  }
  for (int i = 0; i < squarings; ++i) out = CMatrix(out * out);
  return out;
}

/// Smooth, non-commuting rank-2 field on the plane.
PotentialSpec smoothField(const CMatrix& p, const CMatrix& q) {
  return PotentialSpec::field(
      2,
      [p, q](const Point& y) {
        return CMatrix(std::cos(y.coords[0]) * p + std::sin(y.coords[1] + 0.5 * y.coords[0]) * q);
      },
      PotentialClass::Bounded, "smooth test field");
}

/// Deterministic path along the curve s -> (s, s^2 / 2) with exact steps.
PathSample curvePath(double t, double h) {
  const auto plane = ManifoldModel::euclidean(2);
  PathSample path;
  path.rank = 2;
  path.h = h;
  const TimeGrid grid(t, h);
  path.times = grid.times();
  for (double s : path.times) path.points.push_back(plane.makePoint({s, 0.5 * s * s}));
  for (std::size_t k = 0; k + 1 < path.points.size(); ++k) {
    path.steps.push_back(path.points[k + 1].coords - path.points[k].coords);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) path.transportData.push_back(i == j ? 1.0 : 0.0);
  }
  return path;
}

}  // namespace

TEST_SUITE("holonomy") {
  TEST_CASE("zero and scalar potentials") {
    const auto plane = ManifoldModel::euclidean(2);
    const PathSample path = samplePath(plane, BundleSpec::trivial(2), plane.origin(), 1.0, 1e-3, {1, 0});
    const HolonomyTrace zero = evolveHolonomy(plane, path, PotentialSpec::zero(2));
    for (const CMatrix& y : zero.values) CHECK((y - CMatrix::Identity(2, 2)).norm() == 0.0);

    const double c = 0.8;
    const HolonomyTrace scalar = evolveHolonomy(plane, path, PotentialSpec::scalar(constantPotential(plane, c), 2));
    CHECK((scalar.values.back() - std::exp(-c) * CMatrix::Identity(2, 2)).norm() < 1e-12);
    CHECK((scalar.inverses.back() - std::exp(c) * CMatrix::Identity(2, 2)).norm() < 1e-12);
  }

  TEST_CASE("constant Hermitian potential gives exp(-tV)") {
    StreamRng rng({2, 0});
    const auto plane = ManifoldModel::euclidean(2);
    for (int d : {2, 3, 4}) {
      const CMatrix v = randomHermitian(d, rng);
      const PotentialSpec spec = PotentialSpec::combination({{constantPotential(plane, 1.0), v}});
      const PathSample path = samplePath(plane, BundleSpec::trivial(d), plane.origin(), 0.7, 1e-3, {2, 1});
      const HolonomyTrace trace = evolveHolonomy(plane, path, spec);
      CHECK((trace.values.back() - taylorExp(CMatrix(-0.7 * v))).norm() < 1e-10);
    }
  }

  TEST_CASE("trace invariants with curved transport") {
    StreamRng rng({3, 0});
    const auto sphere = ManifoldModel::sphere2(1.0);
    const CMatrix p = randomHermitian(2, rng), q = randomHermitian(2, rng);
    const PotentialSpec v = PotentialSpec::field(
        2, [p, q](const Point& y) { return CMatrix(y.coords[2] * p + y.coords[0] * y.coords[1] * q); },
        PotentialClass::Bounded, "sphere field");
    const BundleSpec levi = BundleSpec::leviCivita(sphere);
    for (std::uint64_t i = 0; i < 20; ++i) {
      const PathSample path = samplePath(sphere, levi, sphere.makePoint({0.3, 0.1, 0.9}), 1.0, 1e-3, {3, i});
      const HolonomyTrace trace = evolveHolonomy(sphere, path, v);
      CHECK(trace.values[0] == CMatrix::Identity(2, 2));
      const std::size_t last = trace.values.size() - 1;
      double normMass = 0.0;
      for (std::size_t k = 0; k <= last; ++k) {
        if (k > 0) normMass += (trace.times[k] - trace.times[k - 1]) * operatorNorm(trace.frameFields[k - 1]);
        const double yNorm = operatorNorm(trace.values[k]);
        CHECK((trace.inverses[k] * trace.values[k] - CMatrix::Identity(2, 2)).norm() < 1e-9);
        CHECK(yNorm <= std::exp(-trace.floorIntegrals[k]) + 1e-9);
        CHECK(yNorm <= std::exp(normMass) + 1e-9);
        const double tail = trace.negativeNormIntegrals[last] - trace.negativeNormIntegrals[k];
        CHECK(operatorNorm(trace.inverses[k] * trace.values[last]) <= std::exp(tail) + 1e-9);
      }
    }
  }

  TEST_CASE("scalar potentials saturate domination") {
    const auto space = ManifoldModel::euclidean(3);
    const PotentialSpec v = PotentialSpec::scalar(harmonicPotential(space, 1.3), 3);
    const PathSample path = samplePath(space, BundleSpec::trivial(3), space.makePoint({0.2, 0.0, 0.1}), 1.0, 1e-3,
                                       {4, 0});
    const HolonomyTrace trace = evolveHolonomy(space, path, v);
    for (std::size_t k = 0; k < trace.values.size(); ++k)
      CHECK(std::abs(operatorNorm(trace.values[k]) - std::exp(-trace.floorIntegrals[k])) <
            1e-10 * std::exp(-trace.floorIntegrals[k]));
  }

  TEST_CASE("singular potentials are clamped and still dominated") {
    StreamRng rng({5, 0});
    const auto space = ManifoldModel::euclidean(3);
    const CMatrix p = randomHermitian(2, rng);
    const PotentialSpec v = PotentialSpec::combination(
        {{coulombPotential(space, 1.0), p}, {constantPotential(space, 1.0), CMatrix(CMatrix::Identity(2, 2))}});
    REQUIRE(v.singular());
    for (std::uint64_t i = 0; i < 20; ++i) {
      const PathSample path = samplePath(space, BundleSpec::trivial(2), space.origin(), 0.1, 1e-3, {5, i});
      const HolonomyTrace trace = evolveHolonomy(space, path, v);
      for (const CMatrix& w : trace.frameFields) CHECK(operatorNorm(w) <= 1.0 / 1e-3 + 1e-9);
      for (std::size_t k = 0; k < trace.values.size(); ++k)
        CHECK(operatorNorm(trace.values[k]) <= std::exp(-trace.floorIntegrals[k]) + 1e-9);
    }
  }

  TEST_CASE("second-order convergence in h") {
    StreamRng rng({6, 0});
    const CMatrix p = randomHermitian(2, rng), q = randomHermitian(2, rng);
    const PotentialSpec v = smoothField(p, q);
    const auto plane = ManifoldModel::euclidean(2);
    std::vector<CMatrix> ends;
    for (double h : {0.02, 0.01, 0.005}) ends.push_back(evolveHolonomy(plane, curvePath(1.0, h), v).values.back());
    const double ratio = (ends[0] - ends[1]).norm() / (ends[1] - ends[2]).norm();
    CHECK(ratio > 4.0 * 0.8);
    CHECK(ratio < 4.0 * 1.2);
    // Richardson extrapolation sharpens the estimate.
    const CMatrix reference = evolveHolonomy(plane, curvePath(1.0, 1e-4), v).values.back();
    const CMatrix richardson = (4.0 * ends[2] - ends[1]) / 3.0;
    CHECK((richardson - reference).norm() < 0.1 * (ends[2] - reference).norm());
  }

  TEST_CASE("truncated Dyson series") {
    StreamRng rng({7, 0});
    const auto plane = ManifoldModel::euclidean(2);
    const PathSample path = samplePath(plane, BundleSpec::trivial(2), plane.origin(), 1.0, 1e-3, {7, 0});
    const PotentialSpec c = PotentialSpec::scalar(constantPotential(plane, 0.6), 2);
    CHECK((productIntegralTruncation(plane, path, c, 0) - CMatrix::Identity(2, 2)).norm() == 0.0);
    CHECK((productIntegralTruncation(plane, path, c, 1) - (1.0 - 0.6) * CMatrix::Identity(2, 2)).norm() < 1e-12);
    // Constant generator: the series is the Taylor polynomial of exp(-0.6), up
    // to the O(h^2) error of nested trapezoid quadrature.
    double taylor = 0.0, term = 1.0;
    for (int k = 0; k <= 3; ++k) {
      taylor += term;
      term *= -0.6 / (k + 1);
    }
    CHECK((productIntegralTruncation(plane, path, c, 3) - taylor * CMatrix::Identity(2, 2)).norm() < 1e-7);

    for (int trial = 0; trial < 10; ++trial) {
      const CMatrix p = randomHermitian(2, rng), q = randomHermitian(2, rng);
      const PotentialSpec v = smoothField(CMatrix(0.5 * p), CMatrix(0.5 * q));
      const HolonomyTrace trace = evolveHolonomy(plane, path, v);
      double mass = 0.0;
      for (std::size_t k = 0; k < trace.frameFields.size(); ++k)
        mass += (trace.times[k + 1] - trace.times[k]) * operatorNorm(trace.frameFields[k]);
      double previous = std::numeric_limits<double>::infinity();
      for (int order = 1; order <= 6; ++order) {
        const double error = operatorNorm(productIntegralTruncation(plane, path, v, order) - trace.values.back());
        double factorial = 1.0;
        for (int j = 2; j <= order + 1; ++j) factorial *= j;
        CHECK(error <= std::pow(mass, order + 1) * std::exp(mass) / factorial + 5e-8);
        CHECK(error < previous);
        previous = error;
      }
    }
    const PotentialSpec big = PotentialSpec::scalar(constantPotential(plane, 6.0), 2);
    CHECK_THROWS_WITH_AS(productIntegralTruncation(plane, path, big, 4), doctest::Contains("exceeds 5"), Error);
    CHECK_THROWS_AS(productIntegralTruncation(plane, path, c, 7), Error);
  }

  TEST_CASE("holonomy inequality suite") {
    const AppendixCReport report = appendixCInequalitySuite(200, 4, 1.0, 7);
    CHECK(report.checks.size() == 8);
    for (const auto& check : report.checks) {
      INFO(check.name);
      CHECK(check.checked > 0);
      CHECK(check.violations == 0);
    }
    CHECK(report.passed());
    CHECK(report.wallSeconds < 10.0);

    // Same seed, same report.
    const AppendixCReport again = appendixCInequalitySuite(200, 4, 1.0, 7);
    for (std::size_t i = 0; i < report.checks.size(); ++i)
      CHECK(report.checks[i].worstMargin == again.checks[i].worstMargin);

    // A negative slack demands more than the inequalities give, so the
    // checker must flag trials and name their seeds.
    const AppendixCReport strict = appendixCInequalitySuite(3, 2, 1.0, 11, 16, -1.0);
    CHECK_FALSE(strict.passed());
    REQUIRE_FALSE(strict.checks[0].failingTrialSeeds.empty());
    CHECK(strict.checks[0].failingTrialSeeds.front() == deriveSeed(11, 0));
  }

  TEST_CASE("rank-1 suite is tight for commuting generators") {
    // For d = 1 the form bound is an equality: |Y(t)| = e^{int F}.
    const AppendixCReport report = appendixCInequalitySuite(20, 1, 1.0, 3);
    CHECK(report.passed());
    CHECK(report.checks[2].worstMargin > -1e-10);
  }
}
