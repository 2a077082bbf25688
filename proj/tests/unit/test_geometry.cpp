#include <doctest.h>

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fiberflow/geometry.hpp"

using namespace fiberflow;

namespace {

constexpr double kTwoPi = 2.0 * kPi;

template <class F>
double integrate(F f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-12);
}

/// Periodic trapezoid rule on [0, 2 pi); spectrally accurate for smooth f.
template <class F>
double periodicMean(F f, int n = 256) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += f(kTwoPi * i / n);
  return s / n;
}

Coords vec(std::initializer_list<double> v) {
  Coords c(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) c[i++] = x;
  return c;
}

/// Radius after following a radial geodesic from the disk center for
/// hyperbolic length s: integrate dr/ds = (1 - r^2)/2 with RK4.
double diskRadiusByOde(double s) {
  const int n = 10000;
  const double step = s / n;
  double r = 0.0;
  auto f = [](double x) { return 0.5 * (1.0 - x * x); };
  for (int i = 0; i < n; ++i) {
    const double k1 = f(r), k2 = f(r + 0.5 * step * k1), k3 = f(r + 0.5 * step * k2), k4 = f(r + step * k3);
    r += step * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0;
  }
  return r;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("expStep examples") {
    const auto plane = ManifoldModel::euclidean(2);
    const Point p = plane.expStep(plane.makePoint({0.0, 0.0}), vec({0.05, 0.0}));
    CHECK(p.coords[0] == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(p.coords[1] == 0.0);

    const auto sphere = ManifoldModel::sphere2(1.0);
    const Point north = sphere.origin();
    const Point antipode = sphere.geodesicStep(north, vec({kPi, 0.0})).end;
    CHECK(sphere.distance(north, antipode) == doctest::Approx(kPi).epsilon(1e-9));
    CHECK(antipode.coords[2] == doctest::Approx(-1.0).epsilon(1e-12));

    const auto disk = ManifoldModel::hyperbolicPlane();
    const Point q = disk.geodesicStep(disk.origin(), vec({0.6, 0.8})).end;
    CHECK(q.coords.norm() == doctest::Approx(diskRadiusByOde(1.0)).epsilon(1e-10));
    CHECK(q.coords.norm() == doctest::Approx(0.46211715726000974).epsilon(1e-12));
  }

  TEST_CASE("expStep rejects oversize and non-finite steps") {
    const auto plane = ManifoldModel::euclidean(2);
    CHECK_THROWS_AS((void)plane.expStep(plane.origin(), vec({0.5, 0.0})), Error);
    CHECK_THROWS_AS((void)plane.expStep(plane.origin(), vec({NAN, 0.0})), Error);
  }

  TEST_CASE("geodesic steps have length |xi|") {
    StreamRng rng({3, 0});
    for (const auto& model : {ManifoldModel::sphere2(2.0), ManifoldModel::hyperbolicPlane(),
                              ManifoldModel::circle(0.5), ManifoldModel::flatTorus({1.0, 2.0})}) {
      for (int i = 0; i < 50; ++i) {
        Point x = model.origin();
        Coords jump(model.dimension());
        for (int j = 0; j < model.dimension(); ++j) jump[j] = 0.3 * rng.normal();
        x = model.geodesicStep(x, jump).end;
        Coords xi(model.dimension());
        for (int j = 0; j < model.dimension(); ++j) xi[j] = rng.normal();
        xi *= model.maxStep() * rng.uniform() / xi.norm();
        const Point y = model.expStep(x, xi);
        CHECK(model.distance(x, y) == doctest::Approx(xi.norm()).epsilon(1e-9).scale(1.0));
      }
    }
  }

  TEST_CASE("expStep reversibility with transported velocity") {
    StreamRng rng({5, 0});
    for (const auto& model : {ManifoldModel::sphere2(1.0), ManifoldModel::hyperbolicPlane(),
                              ManifoldModel::euclidean(3)}) {
      for (int i = 0; i < 50; ++i) {
        Coords jump(model.dimension());
        for (int j = 0; j < model.dimension(); ++j) jump[j] = 0.5 * rng.normal();
        const Point x = model.geodesicStep(model.origin(), jump).end;
        Coords xi(model.dimension());
        for (int j = 0; j < model.dimension(); ++j) xi[j] = rng.normal();
        xi *= 1e-2 * rng.uniform() / xi.norm();
        const GeodesicStep forward = model.geodesicStep(x, xi);
        const Coords back = -model.transportTangent(x, xi, xi);
        CHECK((back + forward.velocity).norm() < 1e-12);
        const Point home = model.expStep(forward.end, back);
        CHECK(model.distance(home, x) < 1e-8);
      }
    }
  }

  TEST_CASE("transport is an isometry") {
    StreamRng rng({9, 0});
    for (const auto& model : {ManifoldModel::sphere2(1.5), ManifoldModel::hyperbolicPlane()}) {
      for (int i = 0; i < 50; ++i) {
        const Point x = model.geodesicStep(model.origin(), vec({0.7 * rng.normal(), 0.7 * rng.normal()})).end;
        const Coords xi = vec({0.2 * rng.normal(), 0.2 * rng.normal()});
        const Coords a = vec({rng.normal(), rng.normal()});
        const Coords b = vec({rng.normal(), rng.normal()});
        const Coords ta = model.transportTangent(x, xi, a);
        const Coords tb = model.transportTangent(x, xi, b);
        CHECK(ta.dot(tb) == doctest::Approx(a.dot(b)).epsilon(1e-12).scale(1.0));
      }
    }
  }

  TEST_CASE("distance symmetry and triangle inequality") {
    StreamRng rng({11, 0});
    for (const auto& model : {ManifoldModel::sphere2(1.0), ManifoldModel::hyperbolicPlane(),
                              ManifoldModel::circle(1.0), ManifoldModel::flatTorus({1.0, 1.0}),
                              ManifoldModel::euclidean(3)}) {
      auto randomPoint = [&] {
        Coords j(model.dimension());
        for (int i = 0; i < model.dimension(); ++i) j[i] = rng.normal();
        return model.geodesicStep(model.origin(), j).end;
      };
      for (int i = 0; i < 200; ++i) {
        const Point a = randomPoint(), b = randomPoint(), c = randomPoint();
        CHECK(std::abs(model.distance(a, b) - model.distance(b, a)) < 1e-12);
        CHECK(model.distance(a, c) <= model.distance(a, b) + model.distance(b, c) + 1e-9);
      }
    }
  }

  TEST_CASE("heat kernel values") {
    const auto line = ManifoldModel::euclidean(1);
    CHECK(line.heatKernel(1.0, line.origin(), line.origin()) == doctest::Approx(1.0 / std::sqrt(kTwoPi)));

    const auto circle = ManifoldModel::circle(1.0);
    CHECK(circle.heatKernel(200.0, circle.makePoint({0.3}), circle.makePoint({2.0})) ==
          doctest::Approx(1.0 / kTwoPi).epsilon(1e-12));

    // sum_l (2l+1) e^{-l(l+1)/4} / (4 pi), evaluated to 30 digits.
    const auto sphere = ManifoldModel::sphere2(1.0);
    CHECK(sphere.heatKernel(0.5, sphere.origin(), sphere.origin()) ==
          doctest::Approx(0.346229516219071649583796978702).epsilon(1e-12));
    // Small-time diagonal asymptotics (2 pi t)^{-1} (1 + t K / 3 * ... ) with K = 1: 1 + t/6.
    const double t = 1e-3;
    CHECK(sphere.heatKernel(t, sphere.origin(), sphere.origin()) ==
          doctest::Approx((1.0 + t / 6.0) / (kTwoPi * t)).epsilon(1e-6));

    // Hyperbolic values from a 30-digit evaluation of the McKean integral.
    const auto disk = ManifoldModel::hyperbolicPlane();
    CHECK(disk.heatKernelRadial(1.0, 0.7) == doctest::Approx(0.101657292815255686470590615111).epsilon(1e-10));
    CHECK(disk.heatKernelRadial(1.0, 0.0) == doctest::Approx(0.135056000240419821278056153098).epsilon(1e-10));
    CHECK(disk.heatKernelRadial(0.01, 0.0) == doctest::Approx(15.88899498593356437919938142).epsilon(1e-10));
  }

  TEST_CASE("heat kernels integrate to one") {
    const auto circle = ManifoldModel::circle(0.7);
    for (double t : {0.01, 0.3, 5.0, 100.0}) {
      const Point x = circle.makePoint({1.0});
      const double mass = kTwoPi * 0.7 * periodicMean([&](double a) {
        return circle.heatKernel(t, x, circle.makePoint({a}));
      }, 2048);
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    }
    const auto torus = ManifoldModel::flatTorus({1.0, 2.0});
    for (double t : {0.05, 1.0}) {
      double mass = 0.0;
      const int n = 128;
      const Point x = torus.makePoint({0.2, 0.4});
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          mass += torus.heatKernel(t, x, torus.makePoint({1.0 * i / n, 2.0 * j / n}));
      CHECK(mass * 2.0 / (n * n) == doctest::Approx(1.0).epsilon(1e-6));
    }
    const auto sphere = ManifoldModel::sphere2(1.3);
    for (double t : {0.05, 0.5, 3.0}) {
      const double mass = integrate([&](double g) {
        return kTwoPi * 1.3 * 1.3 * std::sin(g) * sphere.heatKernelRadial(t, 1.3 * g);
      }, 0.0, kPi);
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    }
    const auto disk = ManifoldModel::hyperbolicPlane();
    for (double t : {0.1, 1.0}) {
      const double mass =
          integrate([&](double r) { return kTwoPi * std::sinh(r) * disk.heatKernelRadial(t, r); }, 0.0, 25.0);
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  TEST_CASE("heat kernel symmetry") {
    StreamRng rng({13, 0});
    for (const auto& model : {ManifoldModel::sphere2(1.0), ManifoldModel::hyperbolicPlane(),
                              ManifoldModel::flatTorus({1.0, 1.5}), ManifoldModel::circle(2.0)}) {
      for (int i = 0; i < 50; ++i) {
        Coords a(model.dimension()), b(model.dimension());
        for (int j = 0; j < model.dimension(); ++j) {
          a[j] = rng.normal();
          b[j] = rng.normal();
        }
        const Point x = model.geodesicStep(model.origin(), a).end;
        const Point y = model.geodesicStep(model.origin(), b).end;
        const double t = 0.05 + rng.uniform();
        CHECK(std::abs(model.heatKernel(t, x, y) - model.heatKernel(t, y, x)) < 1e-12);
      }
    }
  }

  TEST_CASE("Chapman-Kolmogorov") {
    const auto sphere = ManifoldModel::sphere2(1.0);
    const Point x = sphere.origin();
    const Point y = sphere.geodesicStep(x, vec({0.9, 0.4})).end;
    for (auto [s, t] : {std::pair{0.2, 0.3}, std::pair{0.5, 0.5}, std::pair{0.1, 1.0}}) {
      const double lhs = integrate([&](double g) {
        return std::sin(g) * sphere.heatKernelRadial(s, g) * kTwoPi * periodicMean([&](double phi) {
          const Point z = sphere.geodesicStep(x, vec({g * std::cos(phi), g * std::sin(phi)})).end;
          return sphere.heatKernel(t, z, y);
        }, 128);
      }, 0.0, kPi);
      CHECK(lhs == doctest::Approx(sphere.heatKernel(s + t, x, y)).epsilon(1e-6));
    }

    const auto disk = ManifoldModel::hyperbolicPlane();
    const Point u = disk.makePoint({0.1, -0.2});
    const Point w = disk.geodesicStep(u, vec({0.5, 0.3})).end;
    const double s = 0.4, t = 0.6;
    const double lhs = integrate([&](double r) {
      return std::sinh(r) * disk.heatKernelRadial(s, r) * kTwoPi * periodicMean([&](double phi) {
        const Point z = disk.geodesicStep(u, vec({r * std::cos(phi), r * std::sin(phi)})).end;
        return disk.heatKernel(t, z, w);
      }, 128);
    }, 0.0, 12.0);
    CHECK(lhs == doctest::Approx(disk.heatKernel(s + t, u, w)).epsilon(1e-6));

    const auto circle = ManifoldModel::circle(1.0);
    const Point a = circle.makePoint({0.5}), b = circle.makePoint({4.0});
    const double ck = kTwoPi * periodicMean([&](double th) {
      const Point z = circle.makePoint({th});
      return circle.heatKernel(0.7, a, z) * circle.heatKernel(0.9, z, b);
    }, 1024);
    CHECK(ck == doctest::Approx(circle.heatKernel(1.6, a, b)).epsilon(1e-6));
  }

  TEST_CASE("supHeatKernel") {
    CHECK(ManifoldModel::euclidean(3).supHeatKernel(1.0) == doctest::Approx(std::pow(kTwoPi, -1.5)));
    const auto sphere = ManifoldModel::sphere2(1.0);
    CHECK(sphere.supHeatKernel(40.0) == doctest::Approx(1.0 / (4.0 * kPi)).epsilon(1e-12));
    for (const auto& model : {sphere, ManifoldModel::hyperbolicPlane(), ManifoldModel::circle(1.0),
                              ManifoldModel::flatTorus({1.0, 1.0})}) {
      double previous = std::numeric_limits<double>::infinity();
      for (double t = 0.01; t < 20.0; t *= 1.5) {
        const double c = model.supHeatKernel(t);
        CHECK(c <= previous);
        previous = c;
      }
    }
    CHECK_THROWS_AS((void)ManifoldModel::ball(ManifoldModel::euclidean(2), 1.0).supHeatKernel(1.0), Error);
    const auto ball = ManifoldModel::ball(ManifoldModel::euclidean(2), 1.0);
    CHECK_THROWS_WITH_AS((void)ball.heatKernel(1.0, ball.origin(), ball.origin()),
                         doctest::Contains("no closed form"), Error);
  }

  TEST_CASE("Gaussian upper bound") {
    // Euclidean m = 1: C_s = (2 pi s)^{-1/2} = c_t e^0 / s^{1/2} with c_t = (2 pi)^{-1/2}.
    const auto line = ManifoldModel::euclidean(1);
    for (double s = 1e-4; s <= 1.0; s *= 3.0)
      CHECK(line.supHeatKernel(s) <= std::pow(kTwoPi, -0.5) / std::sqrt(s) * (1.0 + 1e-14));
    for (const auto& model : {ManifoldModel::sphere2(1.0), ManifoldModel::hyperbolicPlane()}) {
      const GaussianBoundFit fit = fitGaussianBound(model, 1.0, 0.25, 17, 2000);
      CHECK(fit.c > 0.0);
      CHECK(fit.maxResidual <= 0.0);
    }
  }

  TEST_CASE("manifold grammar") {
    for (const char* text : {"euclidean(m=3)", "circle(r=2.5)", "torus(L=[1,2])", "sphere2(r=1)", "hyperbolic()",
                             "ball(euclidean(m=2), r=1)", "ball(sphere2(r=1), r=0.5)"}) {
      const auto model = parseManifold(text);
      CHECK(parseManifold(model.describe()).describe() == model.describe());
    }
    CHECK(parseManifold("torus(m=3, L=2)").describe() == "torus(L=[2,2,2])");
    CHECK(parseManifold(" sphere2( r = 2 ) ").radius() == 2.0);
    CHECK_THROWS_WITH_AS(parseManifold("klein(r=1)"), doctest::Contains("unknown model"), Error);
    CHECK_THROWS_WITH_AS(parseManifold("euclidean(n=2)"), doctest::Contains("'n'"), Error);
    CHECK_THROWS_AS(parseManifold("circle(r=-1)"), Error);
  }

  TEST_CASE("points and domains") {
    const auto sphere = ManifoldModel::sphere2(2.0);
    const Point p = sphere.makePoint({0.0, 3.0, 4.0});
    CHECK(p.coords.norm() == doctest::Approx(2.0).epsilon(1e-14));
    CHECK_THROWS_AS((void)ManifoldModel::hyperbolicPlane().makePoint({0.8, 0.7}), Error);
    const auto ball = ManifoldModel::ball(ManifoldModel::euclidean(2), 1.0);
    CHECK(ball.inside(ball.makePoint({0.5, 0.5})));
    CHECK_FALSE(ball.inside(ball.makePoint({0.8, 0.8})));
    CHECK(ManifoldModel::euclidean(2).boundaryValue(ball.origin()) == std::numeric_limits<double>::infinity());
    CHECK(ManifoldModel::circle(1.0).makePoint({-0.5}).coords[0] == doctest::Approx(kTwoPi - 0.5));
  }

  TEST_CASE("uniform sampling") {
    const auto sphere = ManifoldModel::sphere2(1.0);
    StreamRng rng({21, 0});
    double meanZ = 0.0, meanZ2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const Point p = sphere.sampleUniform(rng);
      meanZ += p.coords[2] / n;
      meanZ2 += p.coords[2] * p.coords[2] / n;
    }
    CHECK(std::abs(meanZ) < 4.0 * std::sqrt(1.0 / 3.0 / n));
    CHECK(std::abs(meanZ2 - 1.0 / 3.0) < 0.01);
    const auto disk = ManifoldModel::hyperbolicPlane();
    int inner = 0;
    for (int i = 0; i < n; ++i)
      if (disk.distance(disk.origin(), disk.sampleUniformBall(2.0, rng)) < 1.0) ++inner;
    const double expected = disk.ballVolume(1.0) / disk.ballVolume(2.0);
    CHECK(std::abs(static_cast<double>(inner) / n - expected) < 4.0 * std::sqrt(expected * (1 - expected) / n));
  }
}
