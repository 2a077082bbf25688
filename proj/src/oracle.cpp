#include "fiberflow/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/special_functions/spherical_harmonic.hpp>

namespace fiberflow {

namespace {

constexpr double kTwoPi = 2.0 * kPi;

Eigen::VectorXd realPart(const Eigen::VectorXcd& f) { return f.real(); }
Eigen::VectorXd imagPart(const Eigen::VectorXcd& f) { return f.imag(); }

}  // namespace

// ------------------------------------------------------------- GridOperator

GridOperator GridOperator::interval(double a, double b, int n, Potential1D v) {
  require(std::isfinite(a) && std::isfinite(b) && b > a, "grid: interval needs a < b");
  require(n >= 1 && n <= kGroundEnergyLimit, "grid: n must be in [1, 4096]");
  GridOperator op;
  op.topology_ = GridTopology::Interval;
  op.a_ = a;
  op.b_ = b;
  op.n1_ = n;
  op.v1_ = std::move(v);
  op.build();
  return op;
}

GridOperator GridOperator::circle(double radius, int n, Potential1D v, double a) {
  require(radius > 0.0 && std::isfinite(radius), "grid: circle radius must be positive");
  require(n >= 3 && n <= kGroundEnergyLimit, "grid: n must be in [3, 4096]");
  require(std::isfinite(a), "grid: flux must be finite");
  GridOperator op;
  op.topology_ = GridTopology::Circle;
  op.l1_ = radius;
  op.n1_ = n;
  op.flux_ = a;
  op.v1_ = std::move(v);
  op.build();
  return op;
}

GridOperator GridOperator::torus2(double l1, double l2, int n1, int n2, Potential2D v) {
  require(l1 > 0.0 && l2 > 0.0, "grid: torus periods must be positive");
  require(n1 >= 3 && n2 >= 3 && n1 * n2 <= kGroundEnergyLimit, "grid: torus needs n1, n2 >= 3 and n1 n2 <= 4096");
  GridOperator op;
  op.topology_ = GridTopology::Torus2;
  op.l1_ = l1;
  op.l2_ = l2;
  op.n1_ = n1;
  op.n2_ = n2;
  op.v2_ = std::move(v);
  op.build();
  return op;
}

void GridOperator::build() {
  links_.clear();
  switch (topology_) {
    case GridTopology::Interval: {
      const int n = n1_;
      const double h = (b_ - a_) / (n + 1);
      spacing_ = cellVolume_ = h;
      nodes_.resize(1, n);
      diagonal_.resize(n);
      for (int j = 0; j < n; ++j) {
        const double x = a_ + (j + 1) * h;
        nodes_(0, j) = x;
        diagonal_[j] = 1.0 / (h * h) + (v1_ ? v1_(x) : 0.0);
      }
      for (int j = 0; j + 1 < n; ++j) links_.push_back({j, j + 1, cd(-0.5 / (h * h), 0.0)});
      break;
    }
    case GridTopology::Circle: {
      const int n = n1_;
      const double dtheta = kTwoPi / n;
      const double h = l1_ * dtheta;
      spacing_ = cellVolume_ = h;
      nodes_.resize(1, n);
      diagonal_.resize(n);
      for (int j = 0; j < n; ++j) {
        const double theta = j * dtheta;
        nodes_(0, j) = theta;
        diagonal_[j] = 1.0 / (h * h) + (v1_ ? v1_(theta) : 0.0);
      }
      const cd hop = -0.5 / (h * h) * std::exp(cd(0.0, flux_ * dtheta));
      for (int j = 0; j < n; ++j) links_.push_back({j, (j + 1) % n, hop});
      break;
    }
    case GridTopology::Torus2: {
      const double h1 = l1_ / n1_, h2 = l2_ / n2_;
      spacing_ = h1;
      cellVolume_ = h1 * h2;
      const int n = n1_ * n2_;
      nodes_.resize(2, n);
      diagonal_.resize(n);
      auto index = [&](int i, int j) { return ((i + n1_) % n1_) * n2_ + (j + n2_) % n2_; };
      for (int i = 0; i < n1_; ++i)
        for (int j = 0; j < n2_; ++j) {
          const int k = index(i, j);
          nodes_(0, k) = i * h1;
          nodes_(1, k) = j * h2;
          diagonal_[k] = 1.0 / (h1 * h1) + 1.0 / (h2 * h2) + (v2_ ? v2_(i * h1, j * h2) : 0.0);
          links_.push_back({k, index(i + 1, j), cd(-0.5 / (h1 * h1), 0.0)});
          links_.push_back({k, index(i, j + 1), cd(-0.5 / (h2 * h2), 0.0)});
        }
      break;
    }
  }
  for (int i = 0; i < diagonal_.size(); ++i)
    require(std::isfinite(diagonal_[i]), "grid: potential is not finite at node " + std::to_string(i));
}

Eigen::MatrixXcd GridOperator::dense() const {
  require(size() <= kDenseOracleLimit, "grid: dense form limited to n <= 1024");
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(size(), size());
  for (int i = 0; i < size(); ++i) h(i, i) = diagonal_[i];
  for (const Link& l : links_) {
    h(l.i, l.j) += l.w;
    h(l.j, l.i) += std::conj(l.w);
  }
  return h;
}

Eigen::VectorXcd GridOperator::apply(const Eigen::VectorXcd& f) const {
  require(f.size() == size(), "grid: vector size does not match the grid");
  Eigen::VectorXcd out = diagonal_.cast<cd>().cwiseProduct(f);
  for (const Link& l : links_) {
    out[l.i] += l.w * f[l.j];
    out[l.j] += std::conj(l.w) * f[l.i];
  }
  return out;
}

double GridOperator::hermitianDefect() const {
  const Eigen::MatrixXcd h = dense();
  return (h - h.adjoint()).cwiseAbs().maxCoeff();
}

double GridOperator::kineticRowSumDefect() const {
  GridOperator free = *this;
  free.v1_ = {};
  free.v2_ = {};
  free.flux_ = 0.0;
  free.build();
  const Eigen::VectorXcd sums = free.apply(Eigen::VectorXcd::Ones(size()));
  double worst = 0.0;
  for (int i = 0; i < size(); ++i) {
    // Rows touching a Dirichlet end see the missing neighbor.
    if (topology_ == GridTopology::Interval && (i == 0 || i == size() - 1)) continue;
    worst = std::max(worst, std::abs(sums[i]));
  }
  return worst;
}

GridOperator GridOperator::withoutPhases() const {
  GridOperator copy = *this;
  copy.flux_ = 0.0;
  copy.build();
  return copy;
}

GridOperator GridOperator::coarsened() const {
  GridOperator copy = *this;
  switch (topology_) {
    case GridTopology::Interval:
      require(n1_ >= 3, "grid: too few nodes to coarsen");
      copy.n1_ = (n1_ - 1) / 2;
      break;
    case GridTopology::Circle:
      require(n1_ >= 6, "grid: too few nodes to coarsen");
      copy.n1_ = n1_ / 2;
      break;
    case GridTopology::Torus2:
      require(n1_ >= 6 && n2_ >= 6, "grid: too few nodes to coarsen");
      copy.n1_ = n1_ / 2;
      copy.n2_ = n2_ / 2;
      break;
  }
  copy.build();
  return copy;
}

Eigen::VectorXcd GridOperator::sample(const std::function<cd(const Eigen::VectorXd&)>& f) const {
  Eigen::VectorXcd out(size());
  for (int i = 0; i < size(); ++i) out[i] = f(nodes_.col(i));
  return out;
}

// ------------------------------------------------------------ eigenvalues

namespace {

/// Number of eigenvalues below x of the symmetric tridiagonal (d, e).
int sturmCount(const Eigen::VectorXd& d, const std::vector<double>& e2, double x) {
  int count = 0;
  double q = 1.0;
  for (int i = 0; i < d.size(); ++i) {
    q = d[i] - x - (i > 0 ? e2[static_cast<std::size_t>(i - 1)] / q : 0.0);
    if (q == 0.0) q = -1e-300;
    if (q < 0.0) ++count;
  }
  return count;
}

}  // namespace

double lowestEigenvalue(const GridOperator& op) {
  const int n = op.size();
  require(n <= kGroundEnergyLimit, "grid: ground energy limited to n <= 4096");
  if (op.realTridiagonal()) {
    std::vector<double> e2(static_cast<std::size_t>(std::max(0, n - 1)), 0.0);
    for (const auto& l : op.links()) e2[static_cast<std::size_t>(std::min(l.i, l.j))] = std::norm(l.w);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i = 0; i < n; ++i) {
      double radius = 0.0;
      if (i > 0) radius += std::sqrt(e2[static_cast<std::size_t>(i - 1)]);
      if (i + 1 < n) radius += std::sqrt(e2[static_cast<std::size_t>(i)]);
      lo = std::min(lo, op.diagonal()[i] - radius);
      hi = std::max(hi, op.diagonal()[i] + radius);
    }
    for (int iter = 0; iter < 400 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo)); ++iter) {
      const double mid = 0.5 * (lo + hi);
      if (sturmCount(op.diagonal(), e2, mid) >= 1) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return 0.5 * (lo + hi);
  }
  require(n <= kDenseOracleLimit, "grid: dense eigensolver limited to n <= 1024 for " +
                                      std::string(op.topology() == GridTopology::Circle ? "circle" : "torus") +
                                      " grids");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(op.dense(), Eigen::EigenvaluesOnly);
  require(eig.info() == Eigen::Success, "grid: eigensolver did not converge");
  return eig.eigenvalues()[0];
}

GroundEnergy gridGroundEnergy(const GridOperator& op) {
  GroundEnergy e;
  const GridOperator coarse = op.coarsened();
  e.fine = lowestEigenvalue(op);
  e.coarse = lowestEigenvalue(coarse);
  e.nFine = op.size();
  e.nCoarse = coarse.size();
  const double r2 = std::pow(coarse.spacing() / op.spacing(), 2);
  e.value = (r2 * e.fine - e.coarse) / (r2 - 1.0);
  return e;
}

Eigen::VectorXcd gridSemigroupApply(const GridOperator& op, const Eigen::VectorXcd& f, double t) {
  require(std::isfinite(t) && t >= 0.0, "t: must be a finite nonnegative time");
  require(f.size() == op.size(), "grid: vector size does not match the grid");
  if (t == 0.0) return f;
  const int n = op.size();
  if (n <= kDenseOracleLimit) {
    if (op.realTridiagonal()) {
      Eigen::VectorXd sub(std::max(0, n - 1));
      for (const auto& l : op.links()) sub[std::min(l.i, l.j)] = l.w.real();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
      eig.computeFromTridiagonal(op.diagonal(), sub, Eigen::ComputeEigenvectors);
      require(eig.info() == Eigen::Success, "grid: eigensolver did not converge");
      const Eigen::MatrixXd& q = eig.eigenvectors();
      const Eigen::VectorXd decay = (-t * eig.eigenvalues()).array().exp();
      const Eigen::VectorXd re = q * decay.cwiseProduct(q.transpose() * realPart(f));
      const Eigen::VectorXd im = q * decay.cwiseProduct(q.transpose() * imagPart(f));
      Eigen::VectorXcd out(n);
      for (int i = 0; i < n; ++i) out[i] = cd(re[i], im[i]);
      return out;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(op.dense());
    require(eig.info() == Eigen::Success, "grid: eigensolver did not converge");
    const Eigen::MatrixXcd& q = eig.eigenvectors();
    const Eigen::VectorXcd decay = (-t * eig.eigenvalues()).array().exp().cast<cd>();
    return q * decay.cwiseProduct(q.adjoint() * f);
  }
  // Scaled Taylor stepping: exp(-t H) = exp(-tau H)^s with tau ||H|| <= 1/2.
  Eigen::VectorXd rowNorm = op.diagonal().cwiseAbs();
  for (const auto& l : op.links()) {
    rowNorm[l.i] += std::abs(l.w);
    rowNorm[l.j] += std::abs(l.w);
  }
  const double norm = rowNorm.maxCoeff();
  const auto steps = static_cast<long>(std::ceil(2.0 * t * norm));
  const double tau = t / static_cast<double>(steps);
  Eigen::VectorXcd out = f;
  for (long s = 0; s < steps; ++s) {
    Eigen::VectorXcd term = out;
    Eigen::VectorXcd sum = out;
    for (int k = 1; k < 60; ++k) {
      term = op.apply(term) * (-tau / k);
      sum += term;
      if (term.norm() <= 1e-17 * sum.norm()) break;
    }
    out = sum;
  }
  return out;
}

// ---------------------------------------------------------- closed forms

double mehlerKernel(double omega, double t, double x, double y) {
  require(omega > 0.0 && t > 0.0, "mehlerKernel: omega and t must be positive");
  const double s = std::sinh(omega * t), c = std::cosh(omega * t);
  return std::sqrt(omega / (kTwoPi * s)) * std::exp(-omega * ((x * x + y * y) * c - 2.0 * x * y) / (2.0 * s));
}

double twoSidedSurvival(double r, double t, double x) {
  require(r > 0.0 && std::abs(x) < r, "twoSidedSurvival: need |x| < r");
  require(t >= 0.0, "twoSidedSurvival: t must be nonnegative");
  if (t == 0.0) return 1.0;
  double sum = 0.0;
  for (long k = 0; k < 1000000; ++k) {
    const double n = 2.0 * static_cast<double>(k) + 1.0;
    const double decay = std::exp(-n * n * kPi * kPi * t / (8.0 * r * r));
    sum += 4.0 / (kPi * n) * std::sin(n * kPi * (x + r) / (2.0 * r)) * decay;
    if (decay < 1e-18) break;
  }
  return sum;
}

double levyAreaCharacteristic(double lambda, double t) { return 1.0 / std::cosh(0.5 * lambda * t); }

double circleMagneticGroundEnergy(double a, double radius) {
  const double nearest = a - std::round(a);
  return nearest * nearest / (2.0 * radius * radius);
}

cd circleMagneticSemigroup(double a, double radius, double t, const std::function<cd(double)>& f, double x, int m) {
  require(m >= 4, "circleMagneticSemigroup: need at least 4 nodes");
  std::vector<cd> samples(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) samples[static_cast<std::size_t>(j)] = f(kTwoPi * j / m);
  cd total = 0.0;
  for (int k = -m / 2; k < m - m / 2; ++k) {
    cd coefficient = 0.0;
    for (int j = 0; j < m; ++j)
      coefficient += samples[static_cast<std::size_t>(j)] * std::exp(cd(0.0, -k * kTwoPi * j / m));
    coefficient /= static_cast<double>(m);
    const double lambda = (k + a) * (k + a) / (2.0 * radius * radius);
    total += coefficient * std::exp(cd(-lambda * t, k * x));
  }
  return total;
}

// ------------------------------------------------------------- SphereProbe

SphereProbe::SphereProbe(double radius, int maxDegree, StreamRng& rng, bool includeConstant)
    : radius_(radius), maxDegree_(maxDegree) {
  require(radius > 0.0, "SphereProbe: radius must be positive");
  require(maxDegree >= 0 && maxDegree <= 20, "SphereProbe: degree must be in [0, 20]");
  double norm2 = 0.0;
  for (int l = includeConstant ? 0 : 1; l <= maxDegree; ++l)
    for (int m = -l; m <= l; ++m) {
      const double c = rng.normal();
      modes_.push_back({l, m, c});
      norm2 += c * c;
    }
  require(norm2 > 0.0, "SphereProbe: empty probe");
  for (auto& mode : modes_) mode.coefficient /= std::sqrt(norm2);
}

SphereProbe SphereProbe::constant(double radius) {
  SphereProbe probe;
  probe.radius_ = radius;
  probe.modes_.push_back({0, 0, 1.0});
  return probe;
}

double SphereProbe::evaluate(const Eigen::Vector3d& p, double t) const {
  const double r = p.norm();
  const double theta = std::acos(std::clamp(p[2] / r, -1.0, 1.0));
  const double phi = std::atan2(p[1], p[0]);
  double value = 0.0;
  for (const auto& mode : modes_) {
    double y = 0.0;
    const auto l = static_cast<unsigned>(mode.l);
    if (mode.m > 0) {
      y = std::sqrt(2.0) * boost::math::spherical_harmonic_r(l, mode.m, theta, phi);
    } else if (mode.m < 0) {
      y = std::sqrt(2.0) * boost::math::spherical_harmonic_i(l, -mode.m, theta, phi);
    } else {
      y = boost::math::spherical_harmonic_r(l, 0, theta, phi);
    }
    const double decay = std::exp(-0.5 * mode.l * (mode.l + 1) * t / (radius_ * radius_));
    value += mode.coefficient * decay * y / radius_;
  }
  return value;
}

double SphereProbe::l2Norm() const {
  double s = 0.0;
  for (const auto& mode : modes_) s += mode.coefficient * mode.coefficient;
  return std::sqrt(s);
}

// -------------------------------------------------------- self-consistency

std::vector<OracleCheck> oracleSelfCheck() {
  std::vector<OracleCheck> checks;
  auto add = [&](std::string name, double value, double reference, double tolerance) {
    checks.push_back({std::move(name), value, reference, tolerance, std::abs(value - reference) <= tolerance});
  };

  add("free circle ground energy", lowestEigenvalue(GridOperator::circle(1.0, 256)), 0.0, 1e-10);

  const auto oscillator = GridOperator::interval(-10.0, 10.0, 2047, [](double y) { return 0.5 * y * y; });
  add("harmonic oscillator ground energy", gridGroundEnergy(oscillator).value, 0.5, 1e-4);

  const auto magnetic = GridOperator::circle(1.0, 512, {}, 0.5);
  add("magnetic circle ground energy (a = 1/2)", gridGroundEnergy(magnetic).value, circleMagneticGroundEnergy(0.5),
      1e-4);
  add("magnetic circle Hermitian defect", magnetic.hermitianDefect(), 0.0, 1e-12);
  add("free circle kinetic row sums", GridOperator::circle(1.0, 256).kineticRowSumDefect(), 0.0, 1e-8);

  const auto small = GridOperator::circle(1.0, 128, [](double th) { return std::cos(th); }, 0.3);
  StreamRng rng({20240601, 0});
  Eigen::VectorXcd f(small.size());
  for (int i = 0; i < f.size(); ++i) f[i] = cd(rng.normal(), rng.normal());
  add("t = 0 returns f", (gridSemigroupApply(small, f, 0.0) - f).norm(), 0.0, 0.0);

  // A lattice Fourier mode is an exact eigenvector of the free circle grid.
  const auto freeCircle = GridOperator::circle(1.0, 128);
  const int k = 3;
  const double dtheta = kTwoPi / 128;
  const double lambda = (1.0 - std::cos(k * dtheta)) / (dtheta * dtheta);
  const Eigen::VectorXcd mode = freeCircle.sample([&](const Eigen::VectorXd& x) { return std::exp(cd(0.0, k * x[0])); });
  add("Fourier mode decay", (gridSemigroupApply(freeCircle, mode, 0.7) - std::exp(-0.7 * lambda) * mode).norm(), 0.0,
      1e-10);

  Eigen::VectorXcd positive(freeCircle.size());
  for (int i = 0; i < positive.size(); ++i) positive[i] = rng.uniform();
  add("mass conservation", std::abs(gridSemigroupApply(freeCircle, positive, 1.3).sum() - positive.sum()), 0.0, 1e-10);

  // Kernel at (0, 0): grid response to a unit mass at the center node.
  auto centerKernel = [](int n) {
    const auto op = GridOperator::interval(-10.0, 10.0, n, [](double y) { return 0.5 * y * y; });
    Eigen::VectorXcd delta = Eigen::VectorXcd::Zero(n);
    delta[(n - 1) / 2] = 1.0 / op.cellVolume();
    return gridSemigroupApply(op, delta, 1.0)[(n - 1) / 2].real();
  };
  const double kernelFine = centerKernel(1023), kernelCoarse = centerKernel(511);
  add("Mehler kernel at (0, 0, t = 1)", (4.0 * kernelFine - kernelCoarse) / 3.0, mehlerKernel(1.0, 1.0, 0.0, 0.0),
      1e-6);

  // Finite differences against the Fourier series on the circle.
  auto smooth = [](double th) { return cd(std::exp(std::cos(th)), 0.0); };
  auto circleValue = [&](int n) {
    const auto op = GridOperator::circle(1.0, n);
    const Eigen::VectorXcd g = op.sample([&](const Eigen::VectorXd& x) { return smooth(x[0]); });
    return gridSemigroupApply(op, g, 0.5)[0].real();
  };
  add("finite difference vs spectral semigroup", (4.0 * circleValue(512) - circleValue(256)) / 3.0,
      circleMagneticSemigroup(0.0, 1.0, 0.5, smooth, 0.0).real(), 1e-6);

  // Discrete diamagnetic inequality |exp(-t H_beta) f| <= exp(-t H_0) |f|.
  const Eigen::VectorXcd withField = gridSemigroupApply(small, f, 0.8);
  const Eigen::VectorXcd without = gridSemigroupApply(small.withoutPhases(), f.cwiseAbs().cast<cd>(), 0.8);
  double excess = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < f.size(); ++i) excess = std::max(excess, std::abs(withField[i]) - without[i].real());
  add("discrete diamagnetic domination (max excess)", std::max(excess, 0.0), 0.0, 1e-10);
  return checks;
}

}  // namespace fiberflow
