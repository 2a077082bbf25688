#include "fiberflow/geometry.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <optional>
#include <system_error>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace fiberflow {
namespace {

constexpr double kTwoPi = 2.0 * kPi;

double wrapPeriodic(double value, double period) {
  double r = std::fmod(value, period);
  if (r < 0.0) r += period;
  if (r >= period) r -= period;
  return r;
}

/// Representative of `delta` modulo `period` in [-period/2, period/2].
double minimalImage(double delta, double period) {
  return delta - period * std::nearbyint(delta / period);
}

double gaussian1D(double t, double x) {
  return std::exp(-x * x / (2.0 * t)) / std::sqrt(kTwoPi * t);
}

/// Heat kernel of Delta/2 on a circle of circumference L at arc separation delta.
double periodicKernel1D(double t, double delta, double period) {
  delta = minimalImage(delta, period);
  if (t <= period * period) {
    double sum = gaussian1D(t, delta);
    for (int k = 1;; ++k) {
      const double term = gaussian1D(t, delta + k * period) + gaussian1D(t, delta - k * period);
      sum += term;
      if (term < 1e-17 * std::max(sum, 1e-300) || term == 0.0) break;
    }
    return sum;
  }
  double sum = 1.0;
  const double w = kTwoPi / period;
  for (int n = 1;; ++n) {
    const double decay = std::exp(-0.5 * (w * n) * (w * n) * t);
    sum += 2.0 * decay * std::cos(w * n * delta);
    if (2.0 * decay < 1e-17) break;
  }
  return sum / period;
}

/// sum_l (2l+1) e^{-l(l+1) tau} P_l(x) / (4 pi R^2), truncated once the
/// remaining tail is below 1e-13 (the tail is bounded by e^{-L(L+1)tau}/tau).
double sphereSeries(double tau, double x, double radius) {
  double pPrev = 1.0;  // P_0
  double pCur = x;     // P_1
  double sum = 1.0;
  const double norm = 4.0 * kPi * radius * radius;
  for (int l = 1;; ++l) {
    const double lf = l;
    const double decay = std::exp(-lf * (lf + 1.0) * tau);
    sum += (2.0 * lf + 1.0) * decay * pCur;
    if (decay / tau / norm < 1e-13 && l > 2) break;
    const double pNext = ((2.0 * lf + 1.0) * x * pCur - lf * pPrev) / (lf + 1.0);
    pPrev = pCur;
    pCur = pNext;
  }
  return sum / norm;
}

/// Heat kernel of Delta (not Delta/2) on the hyperbolic plane at distance rho,
/// McKean's integral with s = rho + v^2.
double hyperbolicKernelDelta(double tau, double rho) {
  const double lead = rho * rho / (4.0 * tau);
  if (lead > 740.0) return 0.0;
  // s^2 - rho^2 = v^2 (2 rho + v^2); beyond exponent 45 the integrand is negligible.
  const double vmax = std::sqrt(std::sqrt(rho * rho + 4.0 * tau * 45.0) - rho);
  auto integrand = [&](double v) {
    if (v <= 0.0) {
      if (rho <= 0.0) return 0.0;
      return 2.0 * rho / std::sqrt(std::sinh(rho));
    }
    const double v2 = v * v;
    const double s = rho + v2;
    const double denom = std::sqrt(2.0 * std::sinh(rho + 0.5 * v2) * std::sinh(0.5 * v2));
    return s * std::exp(-v2 * (2.0 * rho + v2) / (4.0 * tau)) * 2.0 * v / denom;
  };
  double err = 0.0;
  const double integral = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      integrand, 0.0, vmax, 20, 1e-13, &err);
  return std::sqrt(2.0) * std::exp(-tau / 4.0 - lead) / std::pow(4.0 * kPi * tau, 1.5) * integral;
}

std::complex<double> asComplex(const Coords& c) { return {c[0], c[1]}; }

Coords fromComplex(std::complex<double> z) {
  Coords c(2);
  c << z.real(), z.imag();
  return c;
}

bool allFinite(const Coords& v) {
  for (int i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------- factories

ManifoldModel ManifoldModel::euclidean(int m) {
  require(m >= 1 && m <= kMaxCoords, "euclidean: dimension m must be in [1, 8]");
  ManifoldModel model;
  model.kind_ = ModelKind::Euclidean;
  model.dim_ = m;
  return model;
}

ManifoldModel ManifoldModel::circle(double radius) {
  require(radius > 0.0 && std::isfinite(radius), "circle: radius r must be positive");
  ManifoldModel model;
  model.kind_ = ModelKind::Circle;
  model.dim_ = 1;
  model.radius_ = radius;
  return model;
}

ManifoldModel ManifoldModel::flatTorus(std::vector<double> periods) {
  require(!periods.empty() && static_cast<int>(periods.size()) <= kMaxCoords,
          "torus: need between 1 and 8 periods L");
  for (double p : periods) require(p > 0.0 && std::isfinite(p), "torus: periods L must be positive");
  ManifoldModel model;
  model.kind_ = ModelKind::FlatTorus;
  model.dim_ = static_cast<int>(periods.size());
  model.periods_ = std::move(periods);
  return model;
}

ManifoldModel ManifoldModel::sphere2(double radius) {
  require(radius > 0.0 && std::isfinite(radius), "sphere2: radius r must be positive");
  ManifoldModel model;
  model.kind_ = ModelKind::Sphere2;
  model.dim_ = 2;
  model.radius_ = radius;
  return model;
}

ManifoldModel ManifoldModel::hyperbolicPlane() {
  ManifoldModel model;
  model.kind_ = ModelKind::HyperbolicPlane;
  model.dim_ = 2;
  return model;
}

ManifoldModel ManifoldModel::openSubdomain(const ManifoldModel& base, BoundaryFn boundaryFn,
                                           std::string description) {
  require(base.isComplete(), "openSubdomain: base model must be complete");
  require(static_cast<bool>(boundaryFn), "openSubdomain: boundary function is empty");
  ManifoldModel model;
  model.kind_ = ModelKind::OpenSubdomain;
  model.dim_ = base.dim_;
  model.radius_ = base.radius_;
  model.periods_ = base.periods_;
  model.base_ = std::make_shared<const ManifoldModel>(base);
  model.boundary_ = std::move(boundaryFn);
  model.description_ = std::move(description);
  return model;
}

ManifoldModel ManifoldModel::ball(const ManifoldModel& base, double radius) {
  require(radius > 0.0 && std::isfinite(radius), "ball: radius r must be positive");
  require(base.isComplete(), "ball: base model must be complete");
  const Point center = base.origin();
  auto model = openSubdomain(
      base,
      [base, center, radius](const Point& p) { return radius - base.distance(center, p); },
      "ball(" + base.describe() + ", r=" + formatNumber(radius) + ")");
  model.ballRadius_ = radius;
  return model;
}

// ------------------------------------------------------------------ queries

int ManifoldModel::coordinateCount() const {
  switch (kind_) {
    case ModelKind::Sphere2: return 3;
    case ModelKind::OpenSubdomain: return base_->coordinateCount();
    default: return dim_;
  }
}

ChartTag ManifoldModel::chart() const {
  switch (kind_) {
    case ModelKind::Euclidean: return ChartTag::Cartesian;
    case ModelKind::Circle: return ChartTag::Angle;
    case ModelKind::FlatTorus: return ChartTag::TorusBox;
    case ModelKind::Sphere2: return ChartTag::Ambient;
    case ModelKind::HyperbolicPlane: return ChartTag::PoincareDisk;
    case ModelKind::OpenSubdomain: return base_->chart();
  }
  return ChartTag::Cartesian;
}

std::string ManifoldModel::describe() const {
  switch (kind_) {
    case ModelKind::Euclidean: return "euclidean(m=" + std::to_string(dim_) + ")";
    case ModelKind::Circle: return "circle(r=" + formatNumber(radius_) + ")";
    case ModelKind::FlatTorus: {
      std::string s = "torus(L=[";
      for (std::size_t i = 0; i < periods_.size(); ++i) {
        if (i) s += ",";
        s += formatNumber(periods_[i]);
      }
      return s + "])";
    }
    case ModelKind::Sphere2: return "sphere2(r=" + formatNumber(radius_) + ")";
    case ModelKind::HyperbolicPlane: return "hyperbolic()";
    case ModelKind::OpenSubdomain: return description_;
  }
  return {};
}

bool ManifoldModel::isCompact() const {
  return kind_ == ModelKind::Circle || kind_ == ModelKind::FlatTorus || kind_ == ModelKind::Sphere2;
}

const ManifoldModel& ManifoldModel::completeModel() const {
  return kind_ == ModelKind::OpenSubdomain ? *base_ : *this;
}

double ManifoldModel::injectivityRadius() const {
  switch (kind_) {
    case ModelKind::Euclidean:
    case ModelKind::HyperbolicPlane: return std::numeric_limits<double>::infinity();
    case ModelKind::Circle:
    case ModelKind::Sphere2: return kPi * radius_;
    case ModelKind::FlatTorus: return 0.5 * *std::min_element(periods_.begin(), periods_.end());
    case ModelKind::OpenSubdomain: return base_->injectivityRadius();
  }
  return 0.0;
}

double ManifoldModel::maxStep() const {
  const double inj = injectivityRadius();
  return 0.1 * (std::isfinite(inj) ? inj : 1.0);
}

Point ManifoldModel::origin() const {
  Point p;
  p.chart = chart();
  switch (kind_) {
    case ModelKind::Sphere2:
      p.coords = Coords::Zero(3);
      p.coords[2] = radius_;
      return p;
    case ModelKind::OpenSubdomain: return base_->origin();
    default: p.coords = Coords::Zero(dim_); return p;
  }
}

Point ManifoldModel::makePoint(std::span<const double> coords) const {
  if (kind_ == ModelKind::OpenSubdomain) return base_->makePoint(coords);
  require(static_cast<int>(coords.size()) == coordinateCount(),
          "point: expected " + std::to_string(coordinateCount()) + " coordinates for " + describe());
  Point p;
  p.chart = chart();
  p.coords = Coords(coordinateCount());
  for (int i = 0; i < coordinateCount(); ++i) {
    require(std::isfinite(coords[i]), "point: non-finite coordinate");
    p.coords[i] = coords[i];
  }
  switch (kind_) {
    case ModelKind::Circle: p.coords[0] = wrapPeriodic(p.coords[0], kTwoPi); break;
    case ModelKind::FlatTorus:
      for (int i = 0; i < dim_; ++i) p.coords[i] = wrapPeriodic(p.coords[i], periods_[i]);
      break;
    case ModelKind::Sphere2: {
      const double n = p.coords.norm();
      require(n > 0.0, "point: sphere point cannot be the zero vector");
      p.coords *= radius_ / n;
      break;
    }
    case ModelKind::HyperbolicPlane:
      require(p.coords.squaredNorm() < 1.0, "point: hyperbolic point must lie in the open unit disk");
      break;
    default: break;
  }
  return p;
}

void ManifoldModel::validate(const Point& x) const {
  require(x.coords.size() == coordinateCount(), "point: wrong coordinate count for " + describe());
  require(allFinite(x.coords), "point: non-finite coordinates");
  switch (completeModel().kind_) {
    case ModelKind::Sphere2:
      require(std::abs(x.coords.norm() - radius_) <= 1e-12 * std::max(1.0, radius_),
              "point: not on the sphere");
      break;
    case ModelKind::HyperbolicPlane:
      require(x.coords.squaredNorm() < 1.0, "point: outside the Poincare disk");
      break;
    case ModelKind::Circle:
      require(x.coords[0] >= 0.0 && x.coords[0] < kTwoPi + 1e-12, "point: angle not normalized");
      break;
    case ModelKind::FlatTorus:
      for (int i = 0; i < dim_; ++i)
        require(x.coords[i] >= 0.0 && x.coords[i] < periods_[i] + 1e-12,
                "point: torus coordinate not normalized");
      break;
    default: break;
  }
}

double ManifoldModel::boundaryValue(const Point& x) const {
  if (kind_ != ModelKind::OpenSubdomain) return std::numeric_limits<double>::infinity();
  const double value = boundary_(x);
  require(!std::isnan(value), "boundary function returned NaN");
  return value;
}

// ------------------------------------------------------------------ motion

Point ManifoldModel::expStep(const Point& x, const Coords& xi) const {
  require(xi.size() == dim_, "expStep: tangent has wrong dimension");
  require(allFinite(xi), "expStep: non-finite tangent vector");
  require(xi.norm() <= maxStep(), "expStep: |xi| exceeds the model's max step; shrink h");
  return geodesicStep(x, xi).end;
}

Eigen::Matrix<double, 3, 2> ManifoldModel::sphereFrame(const Point& p) const {
  const double r = completeModel().radius_;
  const double ax = p.coords[0] / r, ay = p.coords[1] / r, az = p.coords[2] / r;
  Eigen::Matrix<double, 3, 2> frame;
  const double onePlusC = 1.0 + az;
  if (onePlusC < 1e-12) {
    frame.col(0) << 1.0, 0.0, 0.0;
    frame.col(1) << 0.0, -1.0, 0.0;
    return frame;
  }
  frame.col(0) << 1.0 - ax * ax / onePlusC, -ax * ay / onePlusC, -ax;
  frame.col(1) << -ax * ay / onePlusC, 1.0 - ay * ay / onePlusC, -ay;
  return frame;
}

GeodesicStep ManifoldModel::geodesicStep(const Point& x, const Coords& xi) const {
  GeodesicStep out;
  out.end.chart = x.chart;
  switch (kind_) {
    case ModelKind::OpenSubdomain: return base_->geodesicStep(x, xi);
    case ModelKind::Euclidean:
      out.end.coords = x.coords + xi;
      out.velocity = xi;
      return out;
    case ModelKind::Circle:
      out.end.coords = Coords(1);
      out.end.coords[0] = wrapPeriodic(x.coords[0] + xi[0] / radius_, kTwoPi);
      out.velocity = xi;
      return out;
    case ModelKind::FlatTorus:
      out.end.coords = Coords(dim_);
      for (int i = 0; i < dim_; ++i) out.end.coords[i] = wrapPeriodic(x.coords[i] + xi[i], periods_[i]);
      out.velocity = xi;
      return out;
    case ModelKind::Sphere2: {
      const double s = xi.norm();
      if (s == 0.0) {
        out.end = x;
        out.velocity = xi;
        return out;
      }
      const auto frame = sphereFrame(x);
      const Eigen::Vector3d p = x.coords.head<3>() / radius_;
      const Eigen::Vector3d dir = frame * (xi.head<2>() / s);
      const double angle = s / radius_;
      Eigen::Vector3d y = std::cos(angle) * p + std::sin(angle) * dir;
      y.normalize();
      const Eigen::Vector3d vel = s * (-std::sin(angle) * p + std::cos(angle) * dir);
      out.end.coords = radius_ * y;
      const auto frameY = sphereFrame(out.end);
      out.velocity = frameY.transpose() * vel;
      return out;
    }
    case ModelKind::HyperbolicPlane: {
      const double s = xi.norm();
      if (s == 0.0) {
        out.end = x;
        out.velocity = xi;
        return out;
      }
      const std::complex<double> z = asComplex(x.coords);
      const std::complex<double> w = std::tanh(0.5 * s) * asComplex(xi) / s;
      const std::complex<double> denom = 1.0 + std::conj(z) * w;
      std::complex<double> y = (w + z) / denom;
      if (std::norm(y) >= 1.0) y *= (1.0 - 1e-16) / std::abs(y);
      out.end.coords = fromComplex(y);
      const std::complex<double> rotation = std::polar(1.0, -2.0 * std::arg(denom));
      out.velocity = fromComplex(rotation * asComplex(xi));
      return out;
    }
  }
  return out;
}

Coords ManifoldModel::transportTangent(const Point& x, const Coords& xi, const Coords& eta) const {
  switch (kind_) {
    case ModelKind::OpenSubdomain: return base_->transportTangent(x, xi, eta);
    case ModelKind::Sphere2: {
      const double s = xi.norm();
      if (s == 0.0) return eta;
      const auto frame = sphereFrame(x);
      const Eigen::Vector3d p = x.coords.head<3>() / radius_;
      const Eigen::Vector3d dir = frame * (xi.head<2>() / s);
      const Eigen::Vector3d u = frame * eta.head<2>();
      const double along = u.dot(dir);
      const double angle = s / radius_;
      const Eigen::Vector3d moved =
          u - along * dir + along * (-std::sin(angle) * p + std::cos(angle) * dir);
      const Point y = geodesicStep(x, xi).end;
      return sphereFrame(y).transpose() * moved;
    }
    case ModelKind::HyperbolicPlane: {
      const double s = xi.norm();
      if (s == 0.0) return eta;
      const std::complex<double> z = asComplex(x.coords);
      const std::complex<double> w = std::tanh(0.5 * s) * asComplex(xi) / s;
      const std::complex<double> rotation = std::polar(1.0, -2.0 * std::arg(1.0 + std::conj(z) * w));
      return fromComplex(rotation * asComplex(eta));
    }
    default: return eta;
  }
}

Coords ManifoldModel::chartDisplacement(const Point& x, const Coords& xi) const {
  switch (kind_) {
    case ModelKind::OpenSubdomain: return base_->chartDisplacement(x, xi);
    case ModelKind::Euclidean:
    case ModelKind::FlatTorus: return xi;
    case ModelKind::Circle: {
      Coords d(1);
      d[0] = xi[0] / radius_;
      return d;
    }
    default: return Coords(geodesicStep(x, xi).end.coords - x.coords);
  }
}

double ManifoldModel::distance(const Point& x, const Point& y) const {
  switch (kind_) {
    case ModelKind::OpenSubdomain: return base_->distance(x, y);
    case ModelKind::Euclidean: return (x.coords - y.coords).norm();
    case ModelKind::Circle: return radius_ * std::abs(minimalImage(x.coords[0] - y.coords[0], kTwoPi));
    case ModelKind::FlatTorus: {
      double sq = 0.0;
      for (int i = 0; i < dim_; ++i) {
        const double d = minimalImage(x.coords[i] - y.coords[i], periods_[i]);
        sq += d * d;
      }
      return std::sqrt(sq);
    }
    case ModelKind::Sphere2: {
      const Eigen::Vector3d a = x.coords.head<3>();
      const Eigen::Vector3d b = y.coords.head<3>();
      return radius_ * std::atan2(a.cross(b).norm(), a.dot(b));
    }
    case ModelKind::HyperbolicPlane: {
      const double num = (x.coords - y.coords).norm();
      const double den = std::sqrt((1.0 - x.coords.squaredNorm()) * (1.0 - y.coords.squaredNorm()));
      return 2.0 * std::asinh(num / den);
    }
  }
  return 0.0;
}

// ------------------------------------------------------------- heat kernels

double ManifoldModel::heatKernelRadial(double t, double rho) const {
  require(t > 0.0, "heatKernel: t must be positive");
  switch (kind_) {
    case ModelKind::Euclidean:
      return std::exp(-rho * rho / (2.0 * t)) / std::pow(kTwoPi * t, 0.5 * dim_);
    case ModelKind::Sphere2:
      return sphereSeries(0.5 * t / (radius_ * radius_), std::cos(rho / radius_), radius_);
    case ModelKind::HyperbolicPlane: return hyperbolicKernelDelta(0.5 * t, rho);
    case ModelKind::OpenSubdomain:
      throw Error("heatKernel: no closed form for open subdomain " + describe() +
                  "; use Monte Carlo occupation estimates");
    default: throw Error("heatKernelRadial: kernel of " + describe() + " is not radial");
  }
}

double ManifoldModel::heatKernel(double t, const Point& x, const Point& y) const {
  require(t > 0.0, "heatKernel: t must be positive");
  switch (kind_) {
    case ModelKind::Circle:
      return periodicKernel1D(t, radius_ * (x.coords[0] - y.coords[0]), kTwoPi * radius_);
    case ModelKind::FlatTorus: {
      double value = 1.0;
      for (int i = 0; i < dim_; ++i) value *= periodicKernel1D(t, x.coords[i] - y.coords[i], periods_[i]);
      return value;
    }
    case ModelKind::Sphere2: {
      const double c = x.coords.head<3>().dot(y.coords.head<3>()) / (radius_ * radius_);
      return sphereSeries(0.5 * t / (radius_ * radius_), std::clamp(c, -1.0, 1.0), radius_);
    }
    default: return heatKernelRadial(t, distance(x, y));
  }
}

double ManifoldModel::supHeatKernel(double t) const {
  require(t > 0.0, "supHeatKernel: t must be positive");
  require(isComplete(), "supHeatKernel: no closed form for open subdomain " + describe());
  const Point o = origin();
  return heatKernel(t, o, o);
}

// ------------------------------------------------------------------ volume

double ManifoldModel::volume() const {
  switch (kind_) {
    case ModelKind::Circle: return kTwoPi * radius_;
    case ModelKind::FlatTorus: {
      double v = 1.0;
      for (double p : periods_) v *= p;
      return v;
    }
    case ModelKind::Sphere2: return 4.0 * kPi * radius_ * radius_;
    default: throw Error("volume: " + describe() + " is not compact");
  }
}

double ManifoldModel::ballVolume(double r) const {
  switch (kind_) {
    case ModelKind::Euclidean:
      return std::pow(kPi, 0.5 * dim_) / std::tgamma(0.5 * dim_ + 1.0) * std::pow(r, dim_);
    case ModelKind::HyperbolicPlane: return kTwoPi * (std::cosh(r) - 1.0);
    case ModelKind::Sphere2:
      return kTwoPi * radius_ * radius_ * (1.0 - std::cos(std::min(r / radius_, kPi)));
    case ModelKind::OpenSubdomain: return base_->ballVolume(r);
    default: throw Error("ballVolume: unsupported for " + describe());
  }
}

Point ManifoldModel::sampleUniform(StreamRng& rng) const {
  Point p;
  p.chart = chart();
  switch (kind_) {
    case ModelKind::Circle:
      p.coords = Coords(1);
      p.coords[0] = kTwoPi * rng.uniform();
      return p;
    case ModelKind::FlatTorus:
      p.coords = Coords(dim_);
      for (int i = 0; i < dim_; ++i) p.coords[i] = periods_[i] * rng.uniform();
      return p;
    case ModelKind::Sphere2: {
      Eigen::Vector3d g;
      do {
        g << rng.normal(), rng.normal(), rng.normal();
      } while (g.norm() < 1e-300);
      p.coords = radius_ * g.normalized();
      return p;
    }
    default: throw Error("sampleUniform: " + describe() + " is not compact");
  }
}

Point ManifoldModel::sampleUniformBall(double r, StreamRng& rng) const {
  const ManifoldModel& m = completeModel();
  switch (m.kind_) {
    case ModelKind::Euclidean: {
      Coords g(dim_);
      for (int i = 0; i < dim_; ++i) g[i] = rng.normal();
      const double radial = r * std::pow(rng.uniform(), 1.0 / dim_);
      Point p = m.origin();
      p.coords = radial * g.normalized();
      return p;
    }
    case ModelKind::HyperbolicPlane: {
      const double rho = std::acosh(1.0 + rng.uniform() * (std::cosh(r) - 1.0));
      const double angle = kTwoPi * rng.uniform();
      Coords xi(2);
      xi << rho * std::cos(angle), rho * std::sin(angle);
      return m.geodesicStep(m.origin(), xi).end;
    }
    case ModelKind::Sphere2: {
      const double cmin = std::cos(std::min(r / radius_, kPi));
      const double c = 1.0 - rng.uniform() * (1.0 - cmin);
      const double angle = kTwoPi * rng.uniform();
      const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
      Point p = m.origin();
      p.coords << radius_ * s * std::cos(angle), radius_ * s * std::sin(angle), radius_ * c;
      return p;
    }
    default: {
      // Compact flat models: rejection from the whole space.
      for (;;) {
        Point p = m.sampleUniform(rng);
        if (m.distance(m.origin(), p) < r) return p;
      }
    }
  }
}

// -------------------------------------------------------- gaussian bound fit

GaussianBoundFit fitGaussianBound(const ManifoldModel& model, double t, double d,
                                  std::uint64_t seed, int validationSamples) {
  require(model.isComplete(), "fitGaussianBound: model must be complete");
  require(t > 0.0 && d > 0.0, "fitGaussianBound: t and d must be positive");
  const int m = model.dimension();
  const double maxDist = std::min(model.injectivityRadius(), 8.0 * std::sqrt(t) + 1.0);
  auto ratio = [&](double s, double rho) {
    const double p = model.heatKernelRadial(s, rho);
    return p * std::pow(s, 0.5 * m) * std::exp(d * rho * rho / s);
  };
  GaussianBoundFit fit;
  fit.d = d;
  double best = 0.0;
  for (int i = 1; i <= 24; ++i) {
    const double s = t * std::pow(1e-3, (24.0 - i) / 23.0);
    for (int j = 0; j <= 40; ++j) {
      const double rho = maxDist * j / 40.0;
      best = std::max(best, ratio(s, rho));
    }
  }
  fit.c = 1.05 * best;
  StreamRng rng({seed, 0});
  fit.maxResidual = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < validationSamples; ++k) {
    const double s = t * std::pow(1e-3, rng.uniform());
    const double rho = maxDist * rng.uniform();
    const double p = model.heatKernelRadial(s, rho);
    const double bound = fit.c * std::exp(-d * rho * rho / s) / std::pow(s, 0.5 * m);
    fit.maxResidual = std::max(fit.maxResidual, p - bound);
  }
  fit.samples = validationSamples;
  return fit;
}

// ------------------------------------------------------------------- parser

namespace {

class ManifoldParser {
 public:
  explicit ManifoldParser(std::string_view text) : text_(text) {}

  ManifoldModel parse() {
    ManifoldModel model = parseModel();
    skipSpace();
    require(pos_ == text_.size(), "manifold: unexpected trailing text at position " + std::to_string(pos_));
    return model;
  }

 private:
  struct Args {
    std::vector<ManifoldModel> models;
    std::vector<std::pair<std::string, std::vector<double>>> values;

    const std::vector<double>* find(const std::string& key) const {
      for (const auto& [k, v] : values)
        if (k == key) return &v;
      return nullptr;
    }
    double scalar(const std::string& key, std::optional<double> fallback) const {
      const auto* v = find(key);
      if (!v) {
        require(fallback.has_value(), "manifold: missing argument '" + key + "'");
        return *fallback;
      }
      require(v->size() == 1, "manifold: argument '" + key + "' must be a number");
      return (*v)[0];
    }
    void allow(std::initializer_list<const char*> keys) const {
      for (const auto& [k, v] : values) {
        bool ok = false;
        for (const char* key : keys) ok = ok || k == key;
        require(ok, "manifold: unknown argument '" + k + "'");
      }
    }
  };

  void skipSpace() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool consume(char c) {
    skipSpace();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    require(consume(c), std::string("manifold: expected '") + c + "' at position " + std::to_string(pos_));
  }
  std::string identifier() {
    skipSpace();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    require(pos_ > start, "manifold: expected a name at position " + std::to_string(start));
    return std::string(text_.substr(start, pos_ - start));
  }
  double number() {
    skipSpace();
    double value = 0.0;
    const auto res = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), value);
    require(res.ec == std::errc(), "manifold: expected a number at position " + std::to_string(pos_));
    pos_ = static_cast<std::size_t>(res.ptr - text_.data());
    return value;
  }
  bool peekModelStart() {
    skipSpace();
    std::size_t p = pos_;
    while (p < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[p])) || text_[p] == '_')) ++p;
    while (p < text_.size() && std::isspace(static_cast<unsigned char>(text_[p]))) ++p;
    return p < text_.size() && text_[p] == '(';
  }

  Args parseArgs() {
    Args args;
    expect('(');
    if (consume(')')) return args;
    do {
      if (peekModelStart()) {
        args.models.push_back(parseModel());
        continue;
      }
      std::string key = identifier();
      expect('=');
      std::vector<double> values;
      if (consume('[')) {
        do {
          values.push_back(number());
        } while (consume(','));
        expect(']');
      } else {
        values.push_back(number());
      }
      args.values.emplace_back(std::move(key), std::move(values));
    } while (consume(','));
    expect(')');
    return args;
  }

  ManifoldModel parseModel() {
    const std::string name = identifier();
    const Args args = parseArgs();
    auto noModels = [&] { require(args.models.empty(), "manifold: " + name + " takes no nested model"); };
    if (name == "euclidean") {
      noModels();
      args.allow({"m"});
      const double m = args.scalar("m", std::nullopt);
      require(m == std::floor(m), "manifold: m must be an integer");
      return ManifoldModel::euclidean(static_cast<int>(m));
    }
    if (name == "circle") {
      noModels();
      args.allow({"r"});
      return ManifoldModel::circle(args.scalar("r", 1.0));
    }
    if (name == "sphere2") {
      noModels();
      args.allow({"r"});
      return ManifoldModel::sphere2(args.scalar("r", 1.0));
    }
    if (name == "hyperbolic") {
      noModels();
      args.allow({});
      return ManifoldModel::hyperbolicPlane();
    }
    if (name == "torus") {
      noModels();
      args.allow({"L", "m"});
      const auto* periods = args.find("L");
      require(periods != nullptr, "manifold: torus needs L");
      std::vector<double> L = *periods;
      if (const auto* m = args.find("m")) {
        require(L.size() == 1, "manifold: torus with m takes a single period L");
        L.assign(static_cast<std::size_t>((*m)[0]), L[0]);
      }
      return ManifoldModel::flatTorus(L);
    }
    if (name == "ball") {
      require(args.models.size() == 1, "manifold: ball needs exactly one base model");
      args.allow({"r"});
      return ManifoldModel::ball(args.models[0], args.scalar("r", std::nullopt));
    }
    throw Error("manifold: unknown model '" + name + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

ManifoldModel parseManifold(std::string_view text) { return ManifoldParser(text).parse(); }

}  // namespace fiberflow
