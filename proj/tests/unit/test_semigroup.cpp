#include <doctest.h>

#include <cmath>

#include "fiberflow/kato.hpp"
#include "fiberflow/oracle.hpp"
#include "fiberflow/semigroup.hpp"

using namespace fiberflow;

namespace {

MonteCarloSpec budget(double h, std::uint64_t n, std::uint64_t seed = 11) {
  MonteCarloSpec mc;
  mc.h = h;
  mc.n = n;
  mc.seed = seed;
  return mc;
}

}  // namespace

TEST_SUITE("semigroup") {
  TEST_CASE("section grammar") {
    const auto r1 = ManifoldModel::euclidean(1);
    const auto g = parseSection("gaussian(s=2)", r1);
    CHECK(g(r1.makePoint({2.0}))[0].real() == doctest::Approx(std::exp(-1.0)));
    CHECK(*g.l2Norm == doctest::Approx(std::pow(2.0 * kPi, 0.25)));
    const auto c = parseSection("const([1, c(0,2)])", ManifoldModel::circle(1.0), 2);
    CHECK(c(ManifoldModel::circle(1.0).origin())[1] == cd(0.0, 2.0));
    CHECK(*c.l2Norm == doctest::Approx(std::sqrt(5.0 * 2.0 * kPi)));
    const auto ground = parseSection("ground(omega=2)", r1);
    CHECK(*ground.l2Norm == 1.0);
    CHECK_THROWS_WITH(parseSection("gaussian(width=2)", r1), doctest::Contains("width"));
    CHECK_THROWS(parseSection("fourier(k=1)", r1));
    CHECK_THROWS(parseSection("const([1])", r1, 2));
    CHECK_THROWS(parseSection("one() extra", r1));
  }

  TEST_CASE("free heat flow of a Gaussian") {
    // P_t exp(-x^2/2) (0) = (1 + t)^{-1/2}; Brownian increments are exact here.
    const auto r1 = ManifoldModel::euclidean(1);
    const auto f = parseSection("gaussian(s=1)", r1);
    const auto e = fkScalar(r1, constantPotential(r1, 0.0), f, r1.origin(), 1.0, budget(0.01, 20000));
    CHECK(std::abs(e.real() - 1.0 / std::sqrt(2.0)) < 4.0 * e.error());
    CHECK(e.aliveFraction == 1.0);
    CHECK(e.nSamples == 20000);
  }

  TEST_CASE("constant potential is exact per path") {
    const auto c = ManifoldModel::circle(1.0);
    const auto e = fkScalar(c, constantPotential(c, 0.7), parseSection("one()", c), c.origin(), 2.0, budget(0.01, 600));
    CHECK(e.real() == doctest::Approx(std::exp(-1.4)).epsilon(1e-12));
    CHECK(e.error() < 1e-14);
  }

  TEST_CASE("harmonic oscillator Feynman-Kac weight") {
    // E exp(-int_0^t B^2 / 2) = cosh(t)^{-1/2}; trapezoid bias is O(h).
    const auto r1 = ManifoldModel::euclidean(1);
    const auto e = fkScalar(r1, harmonicPotential(r1, 1.0), parseSection("one()", r1), r1.origin(), 1.0,
                            budget(0.005, 8000));
    CHECK(std::abs(e.real() - 1.0 / std::sqrt(std::cosh(1.0))) < 4.0 * e.error() + 2e-3);
  }

  TEST_CASE("magnetic circle and Levy area") {
    const double a = 0.3, radius = 1.2, t = 0.5;
    const auto circle = ManifoldModel::circle(radius);
    const auto f = parseSection("fourier(k=-2)", circle);
    const Point x = circle.makePoint({0.7});
    const auto e = fkMagnetic(circle, angularForm(circle, a), constantPotential(circle, 0.0), f, x, t,
                              budget(0.01, 20000));
    const cd expected = circleMagneticSemigroup(
        a, radius, t, [](double th) { return std::exp(cd(0.0, -2.0 * th)); }, 0.7);
    CHECK(std::abs(e.scalar() - expected) < 4.0 * e.error() + 2e-3);
    CHECK(e.dominationViolations == 0);

    const auto plane = ManifoldModel::euclidean(2);
    const auto area = fkMagnetic(plane, areaForm(plane, 2.0), constantPotential(plane, 0.0), parseSection("one()", plane),
                                 plane.origin(), 1.0, budget(0.005, 20000));
    CHECK(std::abs(area.scalar() - levyAreaCharacteristic(2.0, 1.0)) < 4.0 * area.error() + 3e-3);
  }

  TEST_CASE("resolvent quadrature") {
    std::vector<double> u, w;
    gaussLaguerre(6, 0.0, u, w);
    double m0 = 0, m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      m0 += w[i];
      m1 += w[i] * u[i];
      m2 += w[i] * u[i] * u[i];
    }
    CHECK(m0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m2 == doctest::Approx(2.0).epsilon(1e-12));
    gaussLaguerre(4, 2.0, u, w);
    double sum = 0.0;
    for (double wi : w) sum += wi;
    CHECK(sum == doctest::Approx(2.0).epsilon(1e-12));

    const auto c = ManifoldModel::circle(1.0);
    const auto one = parseSection("one()", c);
    const auto free = resolventApply(c, BundleSpec::trivial(1), PotentialSpec::zero(1), one, c.origin(), 1, 2.0, 16,
                                     budget(0.02, 200));
    CHECK(free.value.real() == doctest::Approx(0.5).epsilon(1e-12));
    const auto massive = resolventApply(c, BundleSpec::trivial(1), PotentialSpec::scalar(constantPotential(c, 1.0)), one,
                                        c.origin(), 2, 1.0, 24, budget(0.02, 100));
    CHECK(massive.value.real() == doctest::Approx(0.25).epsilon(1e-6));
    CHECK_FALSE(massive.divergingTail);
    CHECK_THROWS(resolventApply(c, BundleSpec::trivial(1), PotentialSpec::zero(1), one, c.origin(), 1, -1.0, 8,
                                budget(0.02, 10)));
  }

  TEST_CASE("ground energy from the decay of the functional") {
    const auto c = ManifoldModel::circle(1.0);
    const auto one = parseSection("one()", c);
    const auto flat = groundEnergy(c, BundleSpec::trivial(1), PotentialSpec::scalar(constantPotential(c, 0.8)), one, one,
                                   {0.5, 1.0, 1.5, 2.0, 2.5}, budget(0.05, 300));
    CHECK(flat.energy == doctest::Approx(0.8).epsilon(1e-10));
    CHECK(flat.fitResidual < 1e-10);

    const auto r1 = ManifoldModel::euclidean(1);
    const auto ground = parseSection("ground(omega=1)", r1);
    const auto osc = groundEnergy(r1, BundleSpec::trivial(1), PotentialSpec::scalar(harmonicPotential(r1, 1.0)), ground,
                                  ground, {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}, budget(0.01, 4000));
    CHECK(std::abs(osc.energy - 0.5) < 4.0 * osc.stdError + 0.01);
    CHECK(osc.dominationViolations == 0);
    CHECK_THROWS(groundEnergy(c, BundleSpec::trivial(1), PotentialSpec::zero(1), one, one, {1.0, 2.0}, budget(0.05, 10)));
  }

  TEST_CASE("domination on a rank-2 bundle") {
    const auto plane = ManifoldModel::euclidean(2);
    const auto v = parsePotential("harmonic(1) * [[1,0],[0,2]] + well(3, 0.5) * [[0,c(0,1)],[c(0,-1),0]]", plane, 2);
    const auto f = parseSection("const([1, c(0,1)])", plane, 2);
    std::vector<CMatrix> gauge(2, CMatrix::Zero(2, 2));
    gauge[0](0, 1) = cd(0.0, 0.5);
    gauge[0](1, 0) = cd(0.0, 0.5);
    const auto report = dominationCheck(plane, BundleSpec::gauge(gauge), v, f, plane.origin(), 0.5, budget(0.005, 2000));
    CHECK(report.violations == 0);
    CHECK(report.maxExcess <= 1e-9);
    CHECK_FALSE(report.firstViolatingPath.has_value());
    CHECK(report.passed());
  }

  TEST_CASE("heat operator norms") {
    for (const auto& model : {ManifoldModel::euclidean(3), ManifoldModel::sphere2(1.0), ManifoldModel::hyperbolicPlane(),
                              ManifoldModel::circle(1.0)}) {
      for (const auto& check : heatOperatorNorms(model, 0.3)) {
        INFO(model.describe(), " p=", check.p, " q=", check.q, " norm=", check.norm, " bound=", check.bound);
        CHECK(check.passed);
      }
    }
    // On R^m the (1, inf) and (2, inf) norms are attained: p_t(o, o) and sqrt(p_{2t}(o, o)).
    const auto r3 = ManifoldModel::euclidean(3);
    const auto norms = heatOperatorNorms(r3, 0.5);
    CHECK(norms[3].norm == doctest::Approx(r3.supHeatKernel(0.5)));
    CHECK(norms[2].norm == doctest::Approx(std::sqrt(r3.supHeatKernel(1.0))).epsilon(1e-8));
  }

  TEST_CASE("sphere quadrature and smoothing bound") {
    const auto s2 = ManifoldModel::sphere2(1.0);
    const auto grid = sphereQuadrature(s2, 8, 16);
    double area = 0.0;
    for (double w : grid.weights) area += w;
    CHECK(area == doctest::Approx(4.0 * kPi).epsilon(1e-12));

    std::vector<SectionSpec> probes = {probeSection(SphereProbe::constant(1.0))};
    StreamRng rng({3, 0});
    probes.push_back(probeSection(SphereProbe(1.0, 3, rng)));
    const auto v = PotentialSpec::scalar(wellPotential(s2, 1.0, 0.5));
    const auto report = smoothingNormBound(s2, v, 0.3, 2.0, probes, grid, budget(0.02, 300));
    CHECK(report.passed());
    CHECK(report.d > 0.0);
    CHECK(report.probeNorms.size() == 2);
    // The free constant probe is invariant; the well only raises it.
    CHECK(report.probeNorms[0] >= 1.0);
  }

  TEST_CASE("semigroup identity") {
    const auto r1 = ManifoldModel::euclidean(1);
    const auto v = PotentialSpec::scalar(harmonicPotential(r1, 1.0));
    const auto f = parseSection("gaussian(s=1)", r1);
    const auto degenerate = semigroupIdentityCheck(r1, BundleSpec::trivial(1), v, f, 0.0, 0.5, r1.origin(),
                                                   budget(0.01, 500));
    CHECK(degenerate.maxDifference == 0.0);
    CHECK(degenerate.passed);
    const auto nested = semigroupIdentityCheck(r1, BundleSpec::trivial(1), v, f, 0.3, 0.4, r1.origin(),
                                               budget(0.01, 1600));
    CHECK(nested.outer == 40);
    CHECK(nested.zScore <= 4.0);
  }

  TEST_CASE("perturbation formula") {
    const auto r1 = ManifoldModel::euclidean(1);
    const auto v = PotentialSpec::scalar(wellPotential(r1, 1.5, 0.5));
    const auto f = parseSection("gaussian(s=1)", r1);
    for (double s : {0.0, 0.6}) {
      const auto report = perturbationFormulaCheck(r1, BundleSpec::trivial(1), v, f, s, 0.6, r1.origin(),
                                                   budget(0.01, 400));
      CHECK(report.maxDifference < 1e-12);
      CHECK(report.passed);
    }
    const auto mid = perturbationFormulaCheck(r1, BundleSpec::trivial(1), v, f, 0.3, 0.6, r1.origin(),
                                              budget(0.01, 1600));
    CHECK(mid.boundViolations == 0);
    CHECK(mid.zScore <= 4.0);
  }

  TEST_CASE("continuity scan") {
    const auto r3 = ManifoldModel::euclidean(3);
    const auto bad = PotentialSpec::scalar(powerPotential(r3, -1.0, 2.0));
    const auto f3 = parseSection("gaussian(s=1)", r3);
    Coords a = Coords::Zero(3), b = Coords::Zero(3);
    b[0] = 1.0;
    CHECK_THROWS_WITH(continuityScan(r3, BundleSpec::trivial(1), bad, f3, 0.5, a, b, 32, {0.1}, budget(0.01, 10)),
                      doctest::Contains("refused"));

    const auto r1 = ManifoldModel::euclidean(1);
    const auto v = PotentialSpec::scalar(wellPotential(r1, 1.0, 0.5));
    Coords a1(1), b1(1);
    a1[0] = -1.0;
    b1[0] = 1.0;
    const auto report = continuityScan(r1, BundleSpec::trivial(1), v, parseSection("gaussian(s=1)", r1), 0.5, a1, b1, 32,
                                       {0.1, 0.01, 0.001}, budget(0.01, 200));
    CHECK(report.grid.size() == 32);
    CHECK(report.values.size() == 32);
    CHECK(report.defectMonotone);
    CHECK(report.supDefect.back() < report.defectThreshold);
    CHECK(report.boundHolds);
    CHECK(report.passed());
  }

  TEST_CASE("step-size refinement") {
    const auto r1 = ManifoldModel::euclidean(1);
    const double t = 1.0;
    const auto report = hRefinement(r1, harmonicPotential(r1, 1.0), parseSection("one()", r1), r1.origin(), t,
                                    {0.01, 0.005, 0.0025}, 1.0 / std::sqrt(std::cosh(t)), budget(0.0, 4000));
    CHECK(report.values.size() == 3);
    CHECK(report.hs.front() == 0.01);
    CHECK(report.differenceStderr[0] < report.stdErrors[0]);
    CHECK(std::abs(report.values.back() - report.reference) < 4.0 * report.stdErrors.back() + 0.01);
    CHECK_THROWS(hRefinement(r1, harmonicPotential(r1, 1.0), parseSection("one()", r1), r1.origin(), t, {0.01, 0.003},
                             0.0, budget(0.0, 10)));
  }
}
