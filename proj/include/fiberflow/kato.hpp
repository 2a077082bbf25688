#pragma once

#include <string>
#include <vector>

#include "fiberflow/geometry.hpp"
#include "fiberflow/potential.hpp"
#include "fiberflow/stats.hpp"

namespace fiberflow {

enum class KatoVerdict { KatoConsistent, Inconclusive, FailsDecay };

std::string toString(KatoVerdict v);

struct KatoOptions {
  /// Log-spaced time panels (Gauss-Legendre, 8 nodes each); the check run
  /// doubles them and flags disagreement above convergenceTolerance.
  int timePanels = 32;
  /// Smallest time node relative to t; below it a power-law tail is added.
  double relativeTimeFloor = 1e-10;
  double convergenceTolerance = 1e-4;
  /// katoConsistent needs supIntegral(t_min) < decayRatio * supIntegral(t_max).
  double decayRatio = 0.05;
  /// failsDecay when supIntegral(t_min) >= boundedRatio * supIntegral(t_max).
  double boundedRatio = 0.5;
  double monotoneTolerance = 1e-8;
};

/// sup over an x-grid of int_0^t int p_s(x, y) |v(y)| dvol(y) ds.
struct KatoEntry {
  double t = 0.0;
  double supIntegral = 0.0;
  std::size_t argSup = 0;
  /// Relative difference between the timePanels and 2 timePanels results.
  double refinementDifference = 0.0;
  bool converged = true;
  /// The s-integrand decays no faster than 1/s at the time floor: the value
  /// is the truncated integral, a lower bound of an infinite quantity.
  bool divergentAtZero = false;
};

struct KatoReport {
  /// Decreasing.
  std::vector<double> tGrid;
  std::vector<KatoEntry> entries;
  double fittedDecayExponent = 0.0;
  bool monotone = true;
  KatoVerdict verdict = KatoVerdict::Inconclusive;
  /// True when |v| was replaced by a radial majorant or the kernel of an open
  /// subdomain by the complete model's kernel: values are upper bounds.
  bool upperBound = false;
  std::vector<Point> xGrid;

  [[nodiscard]] std::vector<double> supIntegrals() const;
};

/// int p_s(x, y) |v(y)| dvol(y) for one s, using the radial profile of |v|.
/// Supported on Euclidean (off-center for m <= 3), circle, sphere2 and
/// hyperbolic models and on open subdomains of them (complete kernel).
double katoSpatialIntegral(const ManifoldModel& model, const RadialProfile& profile, double s, const Point& x);

KatoEntry katoSupIntegral(const ManifoldModel& model, const ScalarPotential& v, double t,
                          const std::vector<Point>& xGrid, const KatoOptions& options = {});

/// katoSupIntegral over a t-grid (sorted decreasing), the least-squares
/// exponent of supIntegral ~ t^a and the decay verdict.
KatoReport katoReport(const ManifoldModel& model, const ScalarPotential& v, std::vector<double> tGrid,
                      const std::vector<Point>& xGrid, const KatoOptions& options = {});

/// Center of the profile plus two neighbors along the first axis.
std::vector<Point> defaultKatoGrid(const ManifoldModel& model, const ScalarPotential& v);
/// 1, 0.3, 0.1, ..., 1e-4.
std::vector<double> defaultKatoTimes();

struct LpInclusionReport {
  double p = 1.0;
  /// p >= 1 for m = 1, p > m/2 for m >= 2.
  bool thresholdSatisfied = false;
  KatoReport report;
  [[nodiscard]] bool decays() const { return report.verdict == KatoVerdict::KatoConsistent; }
};

/// Runs the Kato decay check for v declared in L^p + L^infinity.
LpInclusionReport lpInclusionCheck(const ManifoldModel& model, const ScalarPotential& v, double p,
                                   std::vector<double> tGrid, const std::vector<Point>& xGrid,
                                   const KatoOptions& options = {});

/// sup_x E[exp(int_0^t |v|) 1_{t < zeta}] <= prefactor exp(t Cv).
struct KhasminskiiConstants {
  double t0 = 0.0;
  /// Quadrature value of the Kato integral of |v| at t0 (< 0.45).
  double katoAtT0 = 0.0;
  double cv = 0.0;
  double prefactor = 2.0;

  [[nodiscard]] double bound(double t) const { return prefactor * std::exp(t * cv); }
};

/// Largest t0 <= tCap (bisection in log t) with Kato integral of |v| below 0.45.
KhasminskiiConstants khasminskiiConstants(const ManifoldModel& model, const ScalarPotential& v,
                                          const std::vector<Point>& xGrid, double tCap = 1.0,
                                          const KatoOptions& options = {});

struct KhasminskiiReport {
  KhasminskiiConstants constants;
  std::vector<Point> starts;
  std::vector<double> tGrid;
  /// means[x][t] of exp(int_0^t |v|(B_s) ds) 1_alive.
  std::vector<Estimate> means;
  /// max over (x, t) of mean - 3 stderr - bound.
  double worstMargin = -std::numeric_limits<double>::infinity();
  bool passed = true;
};

/// Computes the constants and checks the bound empirically at every start
/// point and grid time (shared random streams across start points).
KhasminskiiReport khasminskiiBound(const ManifoldModel& model, const ScalarPotential& v,
                                   const std::vector<Point>& xGrid, std::vector<double> tGrid,
                                   const MonteCarloSpec& mc, double tCap = 1.0);

}  // namespace fiberflow
