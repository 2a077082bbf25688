#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fiberflow/linalg.hpp"
#include "fiberflow/paths.hpp"

using namespace fiberflow;

namespace {

/// P{sup_{s<=t} |W_s| < r} for standard 1-D Brownian motion started at 0.
double twoSidedSurvival(double r, double t) {
  double s = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double n = 2.0 * k + 1.0;
    s += (k % 2 ? -1.0 : 1.0) / n * std::exp(-n * n * kPi * kPi * t / (8.0 * r * r));
  }
  return 4.0 / kPi * s;
}

/// Asymptotic Kolmogorov distribution tail P{sqrt(n) D > lambda}.
double kolmogorovPValue(double d, std::size_t n) {
  const double rn = std::sqrt(static_cast<double>(n));
  const double lambda = (rn + 0.12 + 0.11 / rn) * d;
  double p = 0.0;
  for (int k = 1; k < 100; ++k) p += 2.0 * (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

struct Endpoint {
  Point last;
  void step(int, const Point&, const Coords&, const GeodesicStep& geo, double, bool) { last = geo.end; }
};

}  // namespace

TEST_SUITE("paths") {
  TEST_CASE("time grid") {
    const TimeGrid grid(1.0, 0.3, {0.5});
    const std::vector<double> expected{0.0, 0.3, 0.5, 0.6, 0.9, 1.0};
    REQUIRE(grid.times().size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(grid.times()[i] == doctest::Approx(expected[i]));
    CHECK(grid.stopAt(2) == 0);
    CHECK(grid.stopAt(3) == -1);
    CHECK(TimeGrid(1.0, 0.25).steps() == 4);
    CHECK_THROWS_AS(TimeGrid(1.0, 0.1, {1.5}), Error);
    CHECK_THROWS_AS(TimeGrid(1.0, 0.0), Error);
  }

  TEST_CASE("degenerate and flat paths") {
    const auto line = ManifoldModel::euclidean(1);
    const PathSample still = samplePath(line, BundleSpec::trivial(1), line.origin(), 0.0, 0.01, {1, 0});
    CHECK(still.points.size() == 1);
    CHECK(still.alive);
    CHECK(still.stepCount() == 0);
    CHECK(still.transportData.empty());

    const PathSample path = samplePath(line, BundleSpec::trivial(1), line.origin(), 1.0, 0.01, {1, 0});
    CHECK(path.points.size() == 101);
    for (std::size_t k = 0; k < path.stepCount(); ++k) CHECK(path.transport(k)(0, 0) == cd(1.0, 0.0));
    CHECK_THROWS_AS(samplePath(line, BundleSpec::trivial(1), line.origin(), 1.0, 0.1, {1, 0}), Error);
  }

  TEST_CASE("steps respect the max step and reproduce bitwise") {
    const auto sphere = ManifoldModel::sphere2(1.0);
    const BundleSpec levi = BundleSpec::leviCivita(sphere);
    const PathSample a = samplePath(sphere, levi, sphere.origin(), 0.5, 1e-3, {42, 7});
    const PathSample b = samplePath(sphere, levi, sphere.origin(), 0.5, 1e-3, {42, 7});
    const PathSample c = samplePath(sphere, levi, sphere.origin(), 0.5, 1e-3, {42, 8});
    REQUIRE(a.points.size() == b.points.size());
    bool identical = true;
    for (std::size_t k = 0; k < a.points.size(); ++k) identical = identical && a.points[k].coords == b.points[k].coords;
    for (std::size_t k = 0; k < a.transportData.size(); ++k)
      identical = identical && a.transportData[k] == b.transportData[k];
    CHECK(identical);
    CHECK(a.points.back().coords != c.points.back().coords);
    for (std::size_t k = 0; k + 1 < a.points.size(); ++k)
      CHECK(sphere.distance(a.points[k], a.points[k + 1]) <= sphere.maxStep());
  }

  TEST_CASE("transport unitarity") {
    StreamRng rng({77, 0});
    CMatrix a1(2, 2), a2(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        a1(i, j) = cd(rng.normal(), rng.normal());
        a2(i, j) = cd(rng.normal(), rng.normal());
      }
    a1 = CMatrix(0.5 * (a1 - a1.adjoint()));
    a2 = CMatrix(0.5 * (a2 - a2.adjoint()));
    const auto plane = ManifoldModel::euclidean(2);
    const auto sphere = ManifoldModel::sphere2(1.0);
    const auto disk = ManifoldModel::hyperbolicPlane();
    const std::vector<std::pair<const ManifoldModel*, BundleSpec>> cases{
        {&plane, BundleSpec::gauge({a1, a2})},
        {&plane, BundleSpec::magnetic(areaForm(plane, 1.5))},
        {&sphere, BundleSpec::leviCivita(sphere)},
        {&disk, BundleSpec::leviCivita(disk)}};
    for (const auto& [model, bundle] : cases) {
      const PathSample path = samplePath(*model, bundle, model->origin(), 0.5, 1e-3, {5, 1});
      CMatrix composed = CMatrix::Identity(bundle.rank(), bundle.rank());
      double worst = 0.0;
      for (std::size_t k = 0; k < path.stepCount(); ++k) {
        worst = std::max(worst, unitarityDefect(path.transport(k)));
        composed = CMatrix(path.transport(k) * composed);
      }
      CHECK(worst <= 1e-10);
      CHECK(unitarityDefect(composed) <= static_cast<double>(path.stepCount()) * 1e-10);
    }
  }

  TEST_CASE("Levi-Civita transport preserves the velocity direction") {
    // Along a single geodesic step the tangent velocity is parallel.
    const auto sphere = ManifoldModel::sphere2(1.0);
    const BundleSpec levi = BundleSpec::leviCivita(sphere);
    const Point x = sphere.makePoint({0.2, -0.4, 0.9});
    Coords xi(2);
    xi << 0.06, 0.02;
    const CMatrix s = levi.stepTransport(sphere, x, xi);
    const Coords v = sphere.geodesicStep(x, xi).velocity;
    CVector in(2);
    in << xi[0], xi[1];
    const CVector out = s * in;
    CHECK(std::abs(out[0] - cd(v[0], 0.0)) < 1e-12);
    CHECK(std::abs(out[1] - cd(v[1], 0.0)) < 1e-12);
  }

  TEST_CASE("Brownian variance E|B_t - x|^2 = m t") {
    const auto plane = ManifoldModel::euclidean(2);
    const double t = 1.0;
    const Walker walker(plane, TimeGrid(t, 4e-3));
    const Point x = plane.makePoint({0.3, -1.0});
    SampleAccumulator acc(1);
    for (std::uint64_t i = 0; i < 100000; ++i) {
      Endpoint e{x};
      walker.run(x, {11, i}, e);
      acc.addScalar((e.last.coords - x.coords).squaredNorm());
    }
    const Estimate est = acc.finish(4e-3, 11);
    CHECK(std::abs(est.real() - 2.0 * t) < 3.0 * est.error());
  }

  TEST_CASE("endpoint distances follow the sphere heat kernel") {
    const auto sphere = ManifoldModel::sphere2(1.0);
    const double t = 0.5;
    const Walker walker(sphere, TimeGrid(t, 2e-3));
    const std::size_t n = 100000;
    std::vector<double> rho;
    rho.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      Endpoint e{sphere.origin()};
      walker.run(sphere.origin(), {12, i}, e);
      rho.push_back(sphere.distance(sphere.origin(), e.last));
    }
    std::sort(rho.begin(), rho.end());
    // CDF of the distance by cumulative Gauss-Kronrod panels of 2 pi sin(r) p_t(r).
    const int panels = 4000;
    std::vector<double> cdf(panels + 1, 0.0);
    for (int i = 0; i < panels; ++i) {
      const double a = kPi * i / panels, b = kPi * (i + 1) / panels;
      cdf[i + 1] = cdf[i] + boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
                                [&](double r) { return 2.0 * kPi * std::sin(r) * sphere.heatKernelRadial(t, r); },
                                a, b, 0);
    }
    CHECK(cdf.back() == doctest::Approx(1.0).epsilon(1e-8));
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double pos = rho[i] / kPi * panels;
      const auto j = std::min(static_cast<int>(pos), panels - 1);
      const double f = cdf[j] + (pos - j) * (cdf[j + 1] - cdf[j]);
      d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    CHECK(kolmogorovPValue(d, n) > 1e-3);
  }

  TEST_CASE("scalar integrals along paths") {
    const auto space = ManifoldModel::euclidean(3);
    const PathSample path =
        samplePath(space, BundleSpec::trivial(1), space.makePoint({1.0, 0.0, 0.0}), 0.7, 1e-3, {3, 0});
    CHECK(integrateScalarAlong(space, path, constantPotential(space, 0.0)) == 0.0);
    CHECK(integrateScalarAlong(space, path, constantPotential(space, 2.5)) == doctest::Approx(2.5 * 0.7).epsilon(1e-13));
    // Trapezoid on vertices.
    const ScalarPotential v = harmonicPotential(space, 1.0);
    double manual = 0.0;
    for (std::size_t k = 0; k < path.stepCount(); ++k)
      manual += 0.5 * (v(path.points[k]) + v(path.points[k + 1])) * (path.times[k + 1] - path.times[k]);
    CHECK(integrateScalarAlong(space, path, v) == doctest::Approx(manual).epsilon(1e-13));
    // Singular potentials are capped at 1/h.
    const PathSample atPole = samplePath(space, BundleSpec::trivial(1), space.origin(), 0.01, 1e-3, {3, 1});
    CHECK(integrateScalarAlong(space, atPole, powerPotential(space, 1.0, 6.0)) <= 0.01 / 1e-3 + 1e-12);
  }

  TEST_CASE("Coulomb occupation integral matches the Gaussian oracle") {
    // E 1/|x + W_s| = erf(|x| / sqrt(2 s)) / |x| for 3-dimensional W.
    const double t = 0.25;
    const double oracle = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [](double s) { return s <= 0.0 ? 1.0 : std::erf(1.0 / std::sqrt(2.0 * s)); }, 0.0, t, 10, 1e-14);
    const auto space = ManifoldModel::euclidean(3);
    const ScalarPotential v = powerPotential(space, 1.0, 1.0);
    const Point x = space.makePoint({1.0, 0.0, 0.0});
    const Walker walker(space, TimeGrid(t, 1e-3));
    SampleAccumulator acc(1);
    for (std::uint64_t i = 0; i < 20000; ++i) {
      struct Integrate {
        ScalarIntegrator integrator;
        const ManifoldModel& model;
        double total = 0.0;
        void step(int, const Point& from, const Coords& xi, const GeodesicStep& geo, double dt, bool) {
          total += integrator.step(model, from, xi, geo.end, dt);
        }
      } visitor{ScalarIntegrator(v, 1e-3), space};
      visitor.integrator.start(x);
      walker.run(x, {21, i}, visitor);
      acc.addScalar(visitor.total);
    }
    const Estimate est = acc.finish(1e-3, 21);
    CHECK(std::isfinite(est.real()));
    CHECK(std::abs(est.real() - oracle) < 3.0 * est.error());
  }

  TEST_CASE("Stratonovich line integrals") {
    const auto circle = ManifoldModel::circle(1.0);
    CHECK(stratonovichLineIntegral(circle, samplePath(circle, BundleSpec::trivial(1), circle.origin(), 1.0, 1e-3, {1, 0}),
                                   zeroForm()) == 0.0);
    // One deterministic loop around the circle.
    PathSample loop;
    loop.rank = 1;
    const int k = 100;
    Coords xi(1);
    xi << 2.0 * kPi / k;
    Point p = circle.origin();
    loop.points.push_back(p);
    for (int i = 0; i < k; ++i) {
      loop.steps.push_back(xi);
      p = circle.geodesicStep(p, xi).end;
      loop.points.push_back(p);
      loop.times.push_back(i * 1e-2);
    }
    loop.times.push_back(k * 1e-2);
    const double a = 0.37;
    CHECK(std::abs(stratonovichLineIntegral(circle, loop, angularForm(circle, a)) - 2.0 * kPi * a) < 1e-10);
  }

  TEST_CASE("Levy area characteristic function") {
    const auto plane = ManifoldModel::euclidean(2);
    const OneForm beta = areaForm(plane, 1.0);
    const double t = 1.0, h = 1e-3;
    const Walker walker(plane, TimeGrid(t, h));
    SampleAccumulator acc(1);
    for (std::uint64_t i = 0; i < 20000; ++i) {
      struct Area {
        const OneForm& beta;
        const ManifoldModel& model;
        double total = 0.0;
        void step(int, const Point& from, const Coords& xi, const GeodesicStep&, double, bool) {
          const Point mid = model.geodesicStep(from, 0.5 * xi).end;
          total += beta.apply(mid, model.chartDisplacement(from, xi));
        }
      } area{beta, plane};
      walker.run(plane.origin(), {31, i}, area);
      acc.addScalar(std::exp(cd(0.0, area.total)));
    }
    const Estimate est = acc.finish(h, 31);
    const double oracle = 1.0 / std::cosh(0.5 * t);
    CHECK(std::abs(est.real() - oracle) < 3.0 * est.error());
    CHECK(std::abs(est.scalar().imag()) < 4.0 * est.error());
  }

  TEST_CASE("stored path and streaming visitor agree") {
    const auto plane = ManifoldModel::euclidean(2);
    const OneForm beta = areaForm(plane, 1.0);
    const PathSample path = samplePath(plane, BundleSpec::trivial(1), plane.origin(), 0.3, 1e-3, {31, 5});
    const Walker walker(plane, TimeGrid(0.3, 1e-3));
    double streamed = 0.0;
    struct Area {
      const OneForm& beta;
      const ManifoldModel& model;
      double& total;
      void step(int, const Point& from, const Coords& xi, const GeodesicStep&, double, bool) {
        total += beta.apply(model.geodesicStep(from, 0.5 * xi).end, model.chartDisplacement(from, xi));
      }
    } area{beta, plane, streamed};
    walker.run(plane.origin(), {31, 5}, area);
    CHECK(stratonovichLineIntegral(plane, path, beta) == streamed);
  }

  TEST_CASE("exit probabilities") {
    const auto line = ManifoldModel::euclidean(1);
    const Point o = line.origin();
    // Short times: paths have not moved.
    const ExitReport early = exitProbability(line, o, {o, line.makePoint({0.5})}, 1.0, 1e-4, 1e-5, 4000, 1);
    CHECK(early.infimum >= 0.999);

    // Grid-monitored killing sees the barrier shifted outward by 0.5826 sqrt(h).
    const double h = 1e-3;
    const ExitReport report = exitProbability(line, o, {o}, 1.0, 1.0, h, 20000, 2);
    const double shifted = twoSidedSurvival(1.0 + 0.5826 * std::sqrt(h), 1.0);
    CHECK(std::abs(report.survival[0].real() - shifted) < 3.0 * report.survival[0].error());
    CHECK(report.survival[0].real() > twoSidedSurvival(1.0, 1.0));

    // Survival is monotone in t path by path with shared seeds.
    double previous = 1.0;
    for (double t : {0.1, 0.2, 0.5, 1.0}) {
      const double value = exitProbability(line, o, {o}, 1.0, t, h, 4000, 3).survival[0].real();
      CHECK(value <= previous);
      previous = value;
    }
    CHECK_THROWS_WITH_AS(exitProbability(line, o, {line.makePoint({1.5})}, 1.0, 1.0, h, 10, 1),
                         doctest::Contains("r:"), Error);
  }

  TEST_CASE("killed paths on a ball match the exit estimator") {
    const auto plane = ManifoldModel::euclidean(2);
    const auto ball = ManifoldModel::ball(plane, 1.0);
    const Point x = plane.makePoint({0.3, 0.2});
    const std::uint64_t n = 3000, seed = 9;
    std::uint64_t alive = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      const PathSample path = samplePath(ball, BundleSpec::trivial(1), x, 0.5, 1e-3, {seed, i});
      if (path.alive) {
        ++alive;
      } else {
        REQUIRE(path.deathIndex.has_value());
        CHECK(path.points.size() == *path.deathIndex + 1);
        CHECK_FALSE(ball.inside(path.points.back()));
      }
    }
    const ExitReport report = exitProbability(plane, plane.origin(), {x}, 1.0, 0.5, 1e-3, n, seed);
    CHECK(report.survival[0].aliveFraction == static_cast<double>(alive) / n);
    CHECK(report.survival[0].real() == doctest::Approx(static_cast<double>(alive) / n).epsilon(1e-12));
  }

  TEST_CASE("worker count does not change estimates") {
    const auto line = ManifoldModel::euclidean(1);
    const auto one = exitProbability(line, line.origin(), {line.origin()}, 1.0, 0.5, 1e-3, 5000, 4, 1);
    const auto four = exitProbability(line, line.origin(), {line.origin()}, 1.0, 0.5, 1e-3, 5000, 4, 4);
    CHECK(one.survival[0].value == four.survival[0].value);
    CHECK(one.survival[0].stdError == four.survival[0].stdError);
  }

  TEST_CASE("path CSV") {
    const auto circle = ManifoldModel::circle(1.0);
    const PathSample path = samplePath(circle, BundleSpec::magnetic(angularForm(circle, 0.5)), circle.origin(), 0.003,
                                       1e-3, {1, 0});
    std::ostringstream out;
    writePathCsv(out, path);
    std::istringstream in(out.str());
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "step,time,x0,alive,T00_re,T00_im");
    int rows = 0;
    while (std::getline(in, row)) ++rows;
    CHECK(rows == 4);
  }
}
