#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fiberflow/paths.hpp"
#include "fiberflow/potential.hpp"

namespace fiberflow {

/// Integrates dY = -Y W dt along a path, step by step, with
/// Y_{k+1} = Y_k exp(-dt W_k). W_k is the potential pulled back to the start
/// fiber by the accumulated transport G (G_{k+1} = S_k G_k), averaged with the
/// trapezoid rule over the step ends; for singular potentials it is the mean
/// over 4 substep midpoints of V with eigenvalues clamped to [-1/h, 1/h].
///
/// Because each factor is the exponential of a Hermitian matrix,
/// ||Y_k|| <= exp(-sum scalar-floor increments) holds exactly per sample.
class HolonomyStepper {
 public:
  HolonomyStepper(const PotentialSpec& v, double h, bool trackInverse = false);

  void start(const Point& x);
  /// S maps frame coordinates at `from` to those at `to`.
  void step(const ManifoldModel& model, const Point& from, const Coords& xi, const Point& to,
            double dt, const CMatrix& s);
  /// Same with S = identity (flat trivial bundles).
  void step(const ManifoldModel& model, const Point& from, const Coords& xi, const Point& to,
            double dt);

  [[nodiscard]] CMatrix value() const;
  [[nodiscard]] CMatrix inverse() const;
  /// Accumulated transport G_k: frame at the start -> frame at the current point.
  [[nodiscard]] const CMatrix& transport() const { return g_; }
  /// Last W_k (start-fiber frame).
  [[nodiscard]] CMatrix lastW() const;
  /// sum_k dt * (trapezoid or substep mean of the scalar floor).
  [[nodiscard]] double floorIntegral() const { return floorIntegral_; }
  /// sum_k dt * (same rule applied to ||V2||).
  [[nodiscard]] double negativeNormIntegral() const { return negativeIntegral_; }
  /// sum_k dt ||W_k||.
  [[nodiscard]] double normIntegral() const { return normIntegral_; }
  [[nodiscard]] double cap() const { return cap_; }

 private:
  CMatrix sampleV(const Point& p) const;

  const PotentialSpec* v_;
  const ScalarPotential* scalar_;
  int d_;
  double cap_;
  bool singular_;
  bool trackInverse_;

  CMatrix value_, inverse_, g_, lastPulled_, lastW_;
  double scalarLog_ = 0.0;  // scalar potentials: Y = exp(scalarLog_) I
  double lastScalar_ = 0.0;
  double lastFloor_ = 0.0;
  double lastNegative_ = 0.0;
  double floorIntegral_ = 0.0;
  double negativeIntegral_ = 0.0;
  double normIntegral_ = 0.0;
};

struct HolonomyTrace {
  std::vector<double> times;
  std::vector<CMatrix> values;
  std::vector<CMatrix> inverses;
  /// W_k, the matrices actually exponentiated on step k.
  std::vector<CMatrix> frameFields;
  /// Running integrals of the scalar floor and of ||V2|| (index k = up to t_k).
  std::vector<double> floorIntegrals;
  std::vector<double> negativeNormIntegrals;
};

HolonomyTrace evolveHolonomy(const ManifoldModel& model, const PathSample& path,
                             const PotentialSpec& v);

/// Sum of the first `order` + 1 Dyson terms of the path-ordered exponential
/// of F = -W_k, by nested trapezoid quadrature on the path grid.
/// Refuses when sum dt ||W_k|| > 5.
CMatrix productIntegralTruncation(const ManifoldModel& model, const PathSample& path,
                                  const PotentialSpec& v, int order);

/// Same, for a piecewise-constant F given per cell.
CMatrix productIntegralTruncation(const std::vector<CMatrix>& f, const std::vector<double>& dt,
                                  int order);

struct InequalityCheck {
  std::string name;
  std::uint64_t checked = 0;
  std::uint64_t violations = 0;
  /// Largest lhs - rhs seen (negative when every instance holds with room).
  double worstMargin = -std::numeric_limits<double>::infinity();
  std::vector<std::uint64_t> failingTrialSeeds;
};

struct AppendixCReport {
  int trials = 0;
  int rank = 0;
  double t = 0.0;
  int cells = 0;
  double slack = 0.0;
  std::vector<InequalityCheck> checks;
  double wallSeconds = 0.0;

  [[nodiscard]] std::uint64_t totalViolations() const;
  [[nodiscard]] bool passed() const { return totalViolations() == 0; }
};

/// Randomized check of the Y' = Y F norm inequalities: growth bounds
/// ||Y|| <= e^{int ||F||}, ||Y - 1|| <= e^{int ||F||}, the quadratic-form
/// bounds ||Y(t)|| <= e^{int c} and ||Y(t1)^{-1} Y(t2)|| <= e^{int_{t1}^{t2} c},
/// the stability bound ||Y1 - Y2|| <= e^{2 int ||F1|| + int ||F2||} int ||F1 - F2||
/// and ||Y - 1|| <= (int ||F||)^{1/p} e^{int ||F||} for p = 1, 2, 4.
/// F is piecewise constant on `cells` cells, so the exponential product is the
/// exact solution. Each trial uses a Hermitian F (all checks) and a general
/// complex F (checks that do not need Hermitian values).
AppendixCReport appendixCInequalitySuite(int trials, int rank, double t, std::uint64_t seed,
                                         int cells = 64, double slack = 1e-8);

}  // namespace fiberflow
