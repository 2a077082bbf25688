#include "fiberflow/kato.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "fiberflow/paths.hpp"

namespace fiberflow {

std::string toString(KatoVerdict v) {
  switch (v) {
    case KatoVerdict::KatoConsistent: return "katoConsistent";
    case KatoVerdict::Inconclusive: return "inconclusive";
    case KatoVerdict::FailsDecay: return "failsDecay";
  }
  return "inconclusive";
}

std::vector<double> KatoReport::supIntegrals() const {
  std::vector<double> out;
  for (const auto& e : entries) out.push_back(e.supIntegral);
  return out;
}

namespace {

constexpr double kTwoPi = 2.0 * kPi;
/// Gaussian tails beyond this many standard deviations are dropped.
constexpr double kSigmas = 40.0;
constexpr double kInfinity = std::numeric_limits<double>::infinity();
constexpr double kSpaceTolerance = 1e-10;
/// Below this s / (2 r^2) curved kernels are taken from the small-time parametrix.
constexpr double kParametrixTau = 1e-4;

template <class F>
double adaptive(F f, double a, double b) {
  if (!(b > a)) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 18, kSpaceTolerance);
}

/// Adaptive Gauss-Kronrod with an absolute tolerance split evenly between halves.
template <class F>
double adaptiveAbsolute(F& f, double a, double b, double tolerance, int depth) {
  double error = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 0, 0.0, &error);
  if (error <= tolerance || depth == 0) return value;
  const double mid = 0.5 * (a + b);
  return adaptiveAbsolute(f, a, mid, 0.5 * tolerance, depth - 1) +
         adaptiveAbsolute(f, mid, b, 0.5 * tolerance, depth - 1);
}

/// Adaptive quadrature over [a, b], split at the cuts inside it.
template <class F>
double adaptivePieces(F f, double a, double b, std::vector<double> cuts) {
  cuts.push_back(a);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = std::max(a, cuts[i]), hi = std::min(b, cuts[i + 1]);
    if (hi > lo) total += adaptive(f, lo, hi);
  }
  return total;
}

/// Jump radii of the profile mapped to u = (r - d) / sqrt(s).
std::vector<double> scaledBreaks(const std::vector<double>& breaks, double d, double s) {
  std::vector<double> out;
  for (double b : breaks) out.push_back((b - d) / std::sqrt(s));
  return out;
}

/// e^{-z} I_0(z).
double scaledBesselI0(double z) {
  if (z < 600.0) return std::exp(-z) * boost::math::cyl_bessel_i(0, z);
  return (1.0 + 1.0 / (8.0 * z) + 9.0 / (128.0 * z * z)) / std::sqrt(kTwoPi * z);
}

double euclideanIntegral(int m, const std::function<double(double)>& g, const std::vector<double>& breaks, double s,
                         double d) {
  const double gauss = 1.0 / std::sqrt(kTwoPi * s);
  if (d == 0.0) {
    // Radial density of |B_s| in the variable u = r / sqrt(s).
    const double area = 2.0 * std::pow(kPi, 0.5 * m) / boost::math::tgamma(0.5 * m);
    const double norm = std::pow(kTwoPi, -0.5 * m);
    const double root = std::sqrt(s);
    return adaptivePieces(
        [&](double u) { return area * std::pow(u, m - 1) * norm * std::exp(-0.5 * u * u) * g(root * u); }, 0.0, kSigmas,
        scaledBreaks(breaks, 0.0, s));
  }
  // In u = (r - d) / sqrt(s) the kernel peak has unit width at u = 0. The
  // Gaussians are written in u so that r - d never suffers cancellation.
  const double root = std::sqrt(s);
  auto far = [&](double u) { return std::exp(-0.5 * std::pow(u + 2.0 * d / root, 2)); };
  std::function<double(double)> f;
  switch (m) {
    case 1: f = [&](double u) { return gauss * (std::exp(-0.5 * u * u) + far(u)) * g(d + root * u); }; break;
    case 2:
      f = [&](double u) {
        const double r = d + root * u;
        return r / s * std::exp(-0.5 * u * u) * scaledBesselI0(r * d / s) * g(r);
      };
      break;
    case 3:
      f = [&](double u) {
        const double r = d + root * u;
        return r / d * gauss * (std::exp(-0.5 * u * u) - far(u)) * g(r);
      };
      break;
    default: throw Error("kato: off-center quadrature on euclidean(m=" + std::to_string(m) + ") is limited to m <= 3");
  }
  auto scaled = [&](double u) { return root * f(u); };
  std::vector<double> cuts = scaledBreaks(breaks, d, s);
  cuts.push_back(0.0);
  return adaptivePieces(scaled, std::max(-kSigmas, -d / root), kSigmas, cuts);
}

double circleIntegral(const ManifoldModel& base, const RadialProfile& profile, double s, const Point& x) {
  const double radius = base.radius();
  const double period = kTwoPi * radius;
  const double reach = kSigmas * std::sqrt(s);
  double offset = radius * std::remainder(profile.center.coords[0] - x.coords[0], kTwoPi);
  std::vector<double> cuts = {-reach, reach};
  for (double u = offset - std::ceil((reach + offset) / (0.5 * period)) * 0.5 * period; u <= reach; u += 0.5 * period)
    if (u > -reach) cuts.push_back(u);
  for (double b : profile.breaks)
    for (double u = offset - b - std::ceil((reach + offset) / period) * period; u <= reach + period; u += period)
      for (double cut : {u, u + 2.0 * b})
        if (cut > -reach && cut < reach) cuts.push_back(cut);
  std::sort(cuts.begin(), cuts.end());
  auto f = [&](double u) {
    const double arc = std::abs(std::remainder(u - offset, period));
    return std::exp(-u * u / (2.0 * s)) / std::sqrt(kTwoPi * s) * profile.absValue(arc);
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) total += adaptive(f, cuts[i], cuts[i + 1]);
  return total;
}

double curvedIntegral(const ManifoldModel& base, const RadialProfile& profile, double s, double d) {
  const bool sphere = base.kind() == ModelKind::Sphere2;
  const double radius = sphere ? base.radius() : 1.0;
  const double root = std::sqrt(s);
  const double rMax = std::min(sphere ? kPi * radius : kInfinity, kSigmas * root + (sphere ? 0.0 : s));
  // The Legendre series (sphere) needs about sqrt(30 / tau) terms and the
  // McKean integral (hyperbolic) degrades as tau -> 0; at small tau the
  // leading parametrix (relative error O(tau)) replaces both.
  const bool parametrix = 0.5 * s / (radius * radius) < kParametrixTau;
  auto kernel = [&](double rho) {
    if (!parametrix) return base.heatKernelRadial(s, rho);
    const double theta = rho / radius;
    const double sine = sphere ? std::sin(theta) : std::sinh(theta);
    if (sine <= 0.0 && theta > 1e-8) return 0.0;
    const double jacobian = theta > 1e-8 ? std::sqrt(theta / sine) : 1.0;
    return jacobian * std::exp(-rho * rho / (2.0 * s)) / (kTwoPi * s);
  };
  auto shell = [&](double r) { return sphere ? kTwoPi * radius * std::sin(r / radius) : kTwoPi * std::sinh(r); };
  // Haversine-type quantity H with dist = 2 R asin(sqrt H) (sphere) or
  // 2 asinh(sqrt H) (hyperbolic), accurate for small distances.
  auto halfSine2 = [&](double a) {
    return sphere ? std::pow(std::sin(0.5 * a / radius), 2) : std::pow(std::sinh(0.5 * a), 2);
  };
  auto sineOf = [&](double a) { return sphere ? std::sin(a / radius) : std::sinh(a); };
  auto fromH = [&](double h) {
    return sphere ? 2.0 * radius * std::asin(std::sqrt(std::clamp(h, 0.0, 1.0))) : 2.0 * std::asinh(std::sqrt(std::max(0.0, h)));
  };

  // Polar coordinates (rho, phi) around x, phi measured from the direction of
  // the profile center: int p_s(rho) shell(rho) A(rho) drho with A the mean of
  // the profile over the circle of radius rho around x.
  auto average = [&](double rho) {
    if (d == 0.0) return profile.absValue(rho);
    const double base0 = halfSine2(rho - d);
    const double spread = sineOf(rho) * sineOf(d);
    auto g = [&](double phi) { return profile.absValue(fromH(base0 + spread * std::pow(std::sin(0.5 * phi), 2))); };
    std::vector<double> cuts;
    for (double b : profile.breaks) {
      if (spread <= 0.0) break;
      const double q = (halfSine2(b) - base0) / spread;
      if (q > 0.0 && q < 1.0) cuts.push_back(2.0 * std::asin(std::sqrt(q)));
    }
    return adaptivePieces(g, 0.0, kPi, cuts) / kPi;
  };
  std::function<double(double)> integrand = [&](double u) {
    const double rho = root * u;
    return root * kernel(rho) * shell(rho) * average(rho);
  };

  std::vector<double> cuts = {0.0, rMax / root};
  std::vector<double> radii = {d};
  for (double b : profile.breaks) {
    radii.push_back(std::abs(d - b));
    radii.push_back(d + b);
  }
  for (double r : radii)
    if (r > 0.0 && r < rMax) cuts.push_back(r / root);
  std::sort(cuts.begin(), cuts.end());
  // The series kernel carries absolute noise near 1e-13, so the adaptive pass
  // uses an absolute tolerance set by a coarse pass instead of per-panel
  // relative tolerances, which would chase the noise in the tails.
  double coarse = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    for (int j = 0; j < 8; ++j) {
      const double a = cuts[i] + (cuts[i + 1] - cuts[i]) * j / 8.0;
      const double b = cuts[i] + (cuts[i + 1] - cuts[i]) * (j + 1) / 8.0;
      coarse += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(integrand, a, b, 0, 0.0);
    }
  const double tolerance = kSpaceTolerance * std::max(std::abs(coarse), 1e-300);
  const double span = cuts.back() - cuts.front();
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    if (cuts[i + 1] > cuts[i])
      total += adaptiveAbsolute(integrand, cuts[i], cuts[i + 1], tolerance * (cuts[i + 1] - cuts[i]) / span, 18);
  return total;
}

/// int of s g(s) over [e^a, e^b] in the log variable, 8-point Gauss-Legendre.
double logPanel(const std::function<double(double)>& g, double a, double b) {
  static const boost::math::quadrature::gauss<double, 8> rule;
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double panel = 0.0;
  const auto& x = rule.abscissa();
  const auto& w = rule.weights();
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int sign : {-1, 1}) {
      if (x[i] == 0.0 && sign < 0) continue;
      const double s = std::exp(mid + sign * half * x[i]);
      panel += w[i] * s * g(s);
    }
  return half * panel;
}

/// Gauss-Legendre 8-point rule on log-spaced panels plus a power-law tail.
struct TimeIntegral {
  double value = 0.0;
  bool divergent = false;
};

TimeIntegral timeIntegral(const std::function<double(double)>& g, double t, int panels, double floor) {
  const double logT = std::log(t);
  const double logFloor = std::log(floor);
  TimeIntegral out;
  for (int j = 0; j < panels; ++j)
    out.value += logPanel(g, logT + logFloor * (j + 1) / panels, logT + logFloor * j / panels);
  const double sMin = t * floor;
  const double g0 = g(sMin), g1 = g(10.0 * sMin);
  if (g0 > 0.0 && g1 > 0.0) {
    const double gamma = std::log(g0 / g1) / std::log(10.0);
    if (gamma < 0.999) {
      out.value += g0 * sMin / (1.0 - gamma);
    } else {
      out.divergent = true;
    }
  }
  return out;
}

/// int_0^t g for every t in [tCap floor, tCap] from one tabulation of g on
/// the log panels of timeIntegral(g, tCap, ...); a query costs one partial panel.
class CumulativeIntegral {
 public:
  CumulativeIntegral(std::function<double(double)> g, double tCap, int panels, double floor)
      : g_(std::move(g)) {
    const double logT = std::log(tCap), logFloor = std::log(floor);
    for (int j = 0; j <= panels; ++j) edges_.push_back(logT + logFloor * (panels - j) / panels);
    const double sMin = tCap * floor;
    const double g0 = g_(sMin), g1 = g_(10.0 * sMin);
    double tail = 0.0;
    if (g0 > 0.0 && g1 > 0.0) {
      const double gamma = std::log(g0 / g1) / std::log(10.0);
      tail = gamma < 0.999 ? g0 * sMin / (1.0 - gamma) : std::numeric_limits<double>::infinity();
    }
    cumulative_.push_back(tail);
    for (int j = 0; j < panels; ++j) cumulative_.push_back(cumulative_.back() + logPanel(g_, edges_[j], edges_[j + 1]));
  }

  [[nodiscard]] double operator()(double t) const {
    const double logT = std::log(t);
    require(logT >= edges_.front() - 1e-12, "khasminskii: time below the tabulated range");
    const auto it = std::upper_bound(edges_.begin(), edges_.end(), logT);
    const auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - edges_.begin()) - 1));
    if (k + 1 >= edges_.size()) return cumulative_.back();
    return cumulative_[k] + logPanel(g_, edges_[k], logT);
  }

 private:
  std::function<double(double)> g_;
  std::vector<double> edges_;
  std::vector<double> cumulative_;
};

const RadialProfile& requireProfile(const ScalarPotential& v) {
  require(v.absProfile.has_value(), "potential " + v.description +
                                        ": the Kato quadrature needs a radial majorant of |v| around one center");
  return *v.absProfile;
}

}  // namespace

double katoSpatialIntegral(const ManifoldModel& model, const RadialProfile& profile, double s, const Point& x) {
  require(s > 0.0, "kato: s must be positive");
  const ManifoldModel& base = model.completeModel();
  switch (base.kind()) {
    case ModelKind::Euclidean:
      return euclideanIntegral(base.dimension(), profile.absValue, profile.breaks, s,
                               base.distance(profile.center, x));
    case ModelKind::Circle: return circleIntegral(base, profile, s, x);
    case ModelKind::Sphere2:
    case ModelKind::HyperbolicPlane: return curvedIntegral(base, profile, s, base.distance(profile.center, x));
    default: throw Error("kato: radial quadrature is not available on " + base.describe());
  }
}

KatoEntry katoSupIntegral(const ManifoldModel& model, const ScalarPotential& v, double t,
                          const std::vector<Point>& xGrid, const KatoOptions& options) {
  require(std::isfinite(t) && t > 0.0, "t: must be positive");
  require(!xGrid.empty(), "x-grid: need at least one point");
  require(options.timePanels >= 1, "kato: need at least one time panel");
  const RadialProfile& profile = requireProfile(v);
  KatoEntry entry;
  entry.t = t;
  double supFine = -1.0;
  for (std::size_t i = 0; i < xGrid.size(); ++i) {
    model.validate(xGrid[i]);
    auto g = [&](double s) { return katoSpatialIntegral(model, profile, s, xGrid[i]); };
    const TimeIntegral coarse = timeIntegral(g, t, options.timePanels, options.relativeTimeFloor);
    const TimeIntegral fine = timeIntegral(g, t, 2 * options.timePanels, options.relativeTimeFloor);
    if (coarse.value > entry.supIntegral || i == 0) {
      entry.supIntegral = coarse.value;
      entry.argSup = i;
      entry.divergentAtZero = coarse.divergent;
      supFine = fine.value;
    }
  }
  const double scale = std::max(std::abs(entry.supIntegral), 1e-300);
  entry.refinementDifference = std::abs(supFine - entry.supIntegral) / scale;
  entry.converged = entry.supIntegral == 0.0 || entry.refinementDifference <= options.convergenceTolerance;
  return entry;
}

KatoReport katoReport(const ManifoldModel& model, const ScalarPotential& v, std::vector<double> tGrid,
                      const std::vector<Point>& xGrid, const KatoOptions& options) {
  require(tGrid.size() >= 2, "t-grid: need at least two times");
  std::sort(tGrid.begin(), tGrid.end(), std::greater<>());
  KatoReport report;
  report.tGrid = tGrid;
  report.xGrid = xGrid;
  const RadialProfile& profile = requireProfile(v);
  report.upperBound = !profile.exact || !model.isComplete();
  for (double t : tGrid) report.entries.push_back(katoSupIntegral(model, v, t, xGrid, options));

  for (std::size_t i = 1; i < report.entries.size(); ++i) {
    const double prev = report.entries[i - 1].supIntegral, cur = report.entries[i].supIntegral;
    if (cur > prev * (1.0 + options.monotoneTolerance) + options.monotoneTolerance) report.monotone = false;
  }

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& e : report.entries) {
    if (e.supIntegral <= 0.0) continue;
    const double lx = std::log(e.t), ly = std::log(e.supIntegral);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n >= 2) report.fittedDecayExponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);

  const double first = report.entries.front().supIntegral, last = report.entries.back().supIntegral;
  const bool converged = std::all_of(report.entries.begin(), report.entries.end(),
                                     [](const KatoEntry& e) { return e.converged || e.divergentAtZero; });
  const bool divergent = std::any_of(report.entries.begin(), report.entries.end(),
                                     [](const KatoEntry& e) { return e.divergentAtZero; });
  if (divergent || (converged && last >= options.boundedRatio * first)) {
    report.verdict = KatoVerdict::FailsDecay;
  } else if (converged && report.monotone && last < options.decayRatio * first) {
    report.verdict = KatoVerdict::KatoConsistent;
  } else {
    report.verdict = KatoVerdict::Inconclusive;
  }
  return report;
}

std::vector<Point> defaultKatoGrid(const ManifoldModel& model, const ScalarPotential& v) {
  const Point center = v.absProfile ? v.absProfile->center : model.origin();
  std::vector<Point> grid = {center};
  const ManifoldModel& base = model.completeModel();
  for (double r : {0.05, 0.2}) {
    Coords xi = Coords::Zero(base.dimension());
    xi[0] = r;
    const Point p = base.geodesicStep(center, xi).end;
    if (model.inside(p)) grid.push_back(p);
  }
  return grid;
}

std::vector<double> defaultKatoTimes() { return {1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4}; }

LpInclusionReport lpInclusionCheck(const ManifoldModel& model, const ScalarPotential& v, double p,
                                   std::vector<double> tGrid, const std::vector<Point>& xGrid,
                                   const KatoOptions& options) {
  require(p >= 1.0, "p: must be at least 1");
  LpInclusionReport out;
  out.p = p;
  const int m = model.dimension();
  out.thresholdSatisfied = m == 1 ? p >= 1.0 : p > 0.5 * m;
  out.report = katoReport(model, absolute(v), std::move(tGrid), xGrid, options);
  return out;
}

KhasminskiiConstants khasminskiiConstants(const ManifoldModel& model, const ScalarPotential& v,
                                          const std::vector<Point>& xGrid, double tCap, const KatoOptions& options) {
  require(tCap > 0.0, "khasminskii: tCap must be positive");
  const ScalarPotential abs = absolute(v);
  const RadialProfile& profile = requireProfile(abs);
  constexpr double kTarget = 0.45;
  constexpr double kMinT0 = 1e-10;
  // One tabulation per grid point on [kMinT0, tCap]; bisection queries reuse it.
  std::vector<CumulativeIntegral> integrals;
  const int panels = std::max(options.timePanels,
                              static_cast<int>(std::ceil(options.timePanels * std::log(tCap / kMinT0) /
                                                         -std::log(options.relativeTimeFloor))));
  for (const Point& x : xGrid) {
    model.validate(x);
    integrals.emplace_back([&model, &profile, x](double s) { return katoSpatialIntegral(model, profile, s, x); }, tCap,
                           panels, std::min(options.relativeTimeFloor, kMinT0 / tCap));
  }
  auto value = [&](double t) {
    double sup = 0.0;
    for (const auto& integral : integrals) sup = std::max(sup, integral(t));
    return sup;
  };
  KhasminskiiConstants c;
  double lo = kMinT0, hi = tCap;
  double atHi = value(hi);
  if (atHi < kTarget) {
    c.t0 = hi;
    c.katoAtT0 = atHi;
  } else {
    double atLo = value(lo);
    require(atLo < kTarget, "khasminskii: no t0 >= 1e-10 with Kato integral below 0.45; potential " + v.description +
                                " is not Kato-tractable at this resolution");
    for (int iter = 0; iter < 24; ++iter) {
      const double mid = std::sqrt(lo * hi);
      const double atMid = value(mid);
      if (atMid < kTarget) {
        lo = mid;
        atLo = atMid;
      } else {
        hi = mid;
      }
    }
    c.t0 = lo;
    c.katoAtT0 = atLo;
  }
  c.cv = std::log(1.0 / (1.0 - c.katoAtT0)) / c.t0;
  return c;
}

KhasminskiiReport khasminskiiBound(const ManifoldModel& model, const ScalarPotential& v,
                                   const std::vector<Point>& xGrid, std::vector<double> tGrid,
                                   const MonteCarloSpec& mc, double tCap) {
  require(mc.n >= 10000, "n: the Khas'minskii check needs at least 10^4 paths");
  require(!tGrid.empty(), "t-grid: need at least one time");
  std::sort(tGrid.begin(), tGrid.end());
  KhasminskiiReport report;
  report.constants = khasminskiiConstants(model, v, xGrid, tCap);
  report.starts = xGrid;
  report.tGrid = tGrid;
  const ScalarPotential abs = absolute(v);
  const Walker walker(model, TimeGrid(tGrid.back(), mc.h, tGrid));
  const ManifoldModel& base = model.completeModel();
  const auto width = static_cast<int>(tGrid.size());
  for (const Point& x : xGrid) {
    const auto acc = reduceChunks<SampleAccumulator>(mc.n, mc.workers, [&](std::uint64_t begin, std::uint64_t end) {
      SampleAccumulator local(width);
      ScalarIntegrator integrator(abs, mc.h);
      Eigen::VectorXcd sample(width);
      for (std::uint64_t i = begin; i < end; ++i) {
        sample.setZero();
        double total = 0.0;
        integrator.start(x);
        struct Visitor {
          const ManifoldModel& base;
          const TimeGrid& grid;
          ScalarIntegrator& integrator;
          double& total;
          Eigen::VectorXcd& sample;
          void step(int k, const Point& from, const Coords& xi, const GeodesicStep& geo, double dt, bool alive) {
            if (!alive) return;
            total += integrator.step(base, from, xi, geo.end, dt);
            const int stop = grid.stopAt(k + 1);
            if (stop >= 0) sample[stop] = std::exp(total);
          }
        } visitor{base, walker.grid(), integrator, total, sample};
        const bool alive = walker.run(x, {mc.seed, i}, visitor).alive;
        local.add(sample, alive);
      }
      return local;
    });
    report.means.push_back(acc.finish(mc.h, mc.seed));
    const Estimate& e = report.means.back();
    for (int j = 0; j < width; ++j) {
      const double margin = e.value[j].real() - 3.0 * e.stdError[j] - report.constants.bound(tGrid[j]);
      report.worstMargin = std::max(report.worstMargin, margin);
    }
  }
  report.passed = report.worstMargin <= 0.0;
  return report;
}

}  // namespace fiberflow
