#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fiberflow/bundle.hpp"
#include "fiberflow/geometry.hpp"
#include "fiberflow/oracle.hpp"
#include "fiberflow/potential.hpp"
#include "fiberflow/stats.hpp"

namespace fiberflow {

/// A section f of the bundle, given in the fiber frame of the model's global
/// trivialization.
struct SectionSpec {
  std::function<CVector(const Point&)> evaluate;
  int rank = 1;
  /// sup ||f||, when known.
  std::optional<double> normBound;
  /// ||f||_2, when known.
  std::optional<double> l2Norm;
  /// f is negligible outside this ball around the model origin; needed to
  /// sample start points from ||f|| on non-compact models.
  std::optional<double> supportRadius;
  std::string description;

  [[nodiscard]] CVector operator()(const Point& p) const;
};

/// f(y) = c.
SectionSpec constantSection(CVector c);
/// Scalar function promoted to rank d as g(y) (1, ..., 1).
SectionSpec scalarSection(std::function<double(const Point&)> g, int rank, std::string description,
                          std::optional<double> supAbs = std::nullopt, std::optional<double> l2 = std::nullopt,
                          std::optional<double> supportRadius = std::nullopt);
/// A sphere probe as a rank-1 section (sphere2 models).
SectionSpec probeSection(SphereProbe probe);

/// Parses the section grammar (see docs/potential-grammar.md): "one()",
/// "const([1, c(0,1)])", "gaussian(s=1)", "ground(omega=1)",
/// "fourier(k=1)" (circle), "probe(degree=4, seed=1)" (sphere2).
SectionSpec parseSection(std::string_view text, const ManifoldModel& model, int rank = 1);

// ------------------------------------------------------------- estimators

/// E[exp(-int v(B)) f(B_t) 1_{t < zeta}] from x.
Estimate fkScalar(const ManifoldModel& model, const ScalarPotential& v, const SectionSpec& f, const Point& x,
                  double t, const MonteCarloSpec& mc);

/// E[Y_t //_t^{-1} f(B_t) 1_{t < zeta}] from x, with Y the holonomy of V along
/// the transported frame. Every sample is also checked against the scalar
/// bound ||Y_t //^{-1} f|| <= exp(-int floor) ||f(B_t)|| (Estimate::
/// dominationViolations).
Estimate fkVector(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v, const SectionSpec& f,
                  const Point& x, double t, const MonteCarloSpec& mc);

/// E[exp(-int v + i int beta(dB)) f(B_t) 1_{t < zeta}] (Stratonovich).
Estimate fkMagnetic(const ManifoldModel& model, const OneForm& beta, const ScalarPotential& v, const SectionSpec& f,
                    const Point& x, double t, const MonteCarloSpec& mc);

// ---------------------------------------------------------- ground energy

struct GroundEnergyReport {
  std::vector<double> tGrid;
  /// Monte Carlo value of int <f1, e^{-tH} f2> dvol / int ||f1|| dvol per t.
  std::vector<double> functional;
  std::vector<double> functionalStderr;
  /// -slope of log(functional) over the last half of tGrid.
  double energy = 0.0;
  double stdError = 0.0;
  /// Root mean square residual of the straight-line fit.
  double fitResidual = 0.0;
  std::size_t fitFrom = 0;
  double aliveFraction = 1.0;
  std::uint64_t nSamples = 0;
  std::uint64_t dominationViolations = 0;
};

/// Start points are drawn from ||f1|| dvol by rejection (uniform proposal on
/// compact models and balls, on the ball of f1.supportRadius otherwise).
GroundEnergyReport groundEnergy(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                const SectionSpec& f1, const SectionSpec& f2, std::vector<double> tGrid,
                                const MonteCarloSpec& mc);

// ----------------------------------------------------------------- resolvent

struct ResolventReport {
  /// (H(V) + lambda)^{-k} f (x).
  Estimate value;
  /// (H0(v) + lambda)^{-k} ||f|| (x) on the same paths.
  Estimate dominating;
  std::vector<double> nodes;
  std::vector<double> weights;
  /// Set when lambda + energyLowerBound <= 0 or the last node still carries
  /// more than 1e-3 of the integral.
  bool divergingTail = false;
  double lastNodeShare = 0.0;
  std::uint64_t dominationViolations = 0;
};

/// Gauss-Laguerre quadrature (nodes in t) of t^{k-1} e^{-t lambda} / (k-1)!
/// e^{-tH(V)} f (x); all nodes are observed on the same paths.
ResolventReport resolventApply(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                               const SectionSpec& f, const Point& x, int k, double lambda, int nodes,
                               const MonteCarloSpec& mc, std::optional<double> energyLowerBound = std::nullopt);

/// Nodes and weights of the generalized Gauss-Laguerre rule for u^alpha e^{-u}.
void gaussLaguerre(int n, double alpha, std::vector<double>& nodes, std::vector<double>& weights);

// ---------------------------------------------------------------- domination

struct DominationReport {
  Estimate vector;
  /// exp(-int floor) ||f(B_t)|| on the same paths.
  Estimate scalar;
  std::uint64_t violations = 0;
  double maxExcess = 0.0;
  std::optional<std::uint64_t> firstViolatingPath;
  /// ||mean vector|| - mean scalar - 3 combined stderr (<= 0 when it holds).
  double averagedMargin = 0.0;
  [[nodiscard]] bool passed() const { return violations == 0 && averagedMargin <= 0.0; }
};

DominationReport dominationCheck(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                 const SectionSpec& f, const Point& x, double t, const MonteCarloSpec& mc);

// ----------------------------------------------------------------- smoothing

struct HeatNormCheck {
  double p = 1.0;
  double q = 1.0;  // infinity for the sup norm
  double norm = 0.0;
  double bound = 0.0;
  bool passed = false;
};

/// ||P_t||_{p,q} <= C_t^{1/p - 1/q} for (1,2), (2,2), (2,inf), (1,inf), with
/// the norms computed by radial quadrature of the heat kernel.
std::vector<HeatNormCheck> heatOperatorNorms(const ManifoldModel& model, double t, double tolerance = 1e-6);

/// Points and weights of a product Gauss-Legendre x trapezoid rule on sphere2.
struct QuadratureGrid {
  std::vector<Point> points;
  std::vector<double> weights;
};
QuadratureGrid sphereQuadrature(const ManifoldModel& model, int nTheta, int nPhi);

struct SmoothingReport {
  double t = 0.0;
  double q = 2.0;
  double ct = 0.0;
  /// D = C(2 |V2|) / 2 (0 without a negative part).
  double d = 0.0;
  double bound = 0.0;
  std::vector<HeatNormCheck> heatNorms;
  std::vector<double> probeNorms;
  /// Triangle-inequality error bar: vol^{1/q} times the largest stderr.
  std::vector<double> probeErrors;
  int violations = 0;
  [[nodiscard]] bool passed() const;
};

/// Estimates ||e^{-tH(V)} f||_q for unit probes on the grid (q = infinity:
/// max over the points; else the weighted sum) and compares with
/// sqrt(2) C_t^{1/2 - 1/q} e^{tD} + 3 stderr. Rank-1 potentials.
SmoothingReport smoothingNormBound(const ManifoldModel& model, const PotentialSpec& v, double t, double q,
                                   const std::vector<SectionSpec>& probes, const QuadratureGrid& grid,
                                   const MonteCarloSpec& mc);

// ------------------------------------------- identity and perturbation checks

struct IdentityReport {
  Estimate oneShot;
  Estimate nested;
  std::uint64_t outer = 0;
  std::uint64_t inner = 0;
  /// max over components of |difference| / combined stderr.
  double zScore = 0.0;
  double maxDifference = 0.0;
  /// Per-sample bound ||Y_s^{-1} Y_t //^{-1} f|| <= e^{int_s^t ||V2||} ||f|| (perturbation check).
  std::uint64_t boundViolations = 0;
  bool passed = false;
};

/// Q_{s+t} f (x) against Q_s (Q_t f) (x) (sqrt(N) outer x sqrt(N) inner paths).
IdentityReport semigroupIdentityCheck(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                      const SectionSpec& f, double s, double t, const Point& x,
                                      const MonteCarloSpec& mc);

/// Q0_s Q^V_{t-s} f (x) (nested) against E[Y_s^{-1} Y_t //_t^{-1} f(B_t)] (single paths).
IdentityReport perturbationFormulaCheck(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                        const SectionSpec& f, double s, double t, const Point& x,
                                        const MonteCarloSpec& mc);

// --------------------------------------------------------- continuity scan

struct ContinuityReport {
  std::vector<double> sGrid;
  /// sup over the grid of E ||I - Y_s||^2, per s.
  std::vector<double> supDefect;
  std::vector<double> supDefectStderr;
  bool defectMonotone = false;
  double defectThreshold = 0.05;
  std::vector<Point> grid;
  std::vector<Estimate> values;
  double modulus = 0.0;
  double refinedModulus = 0.0;
  /// modulus / refinedModulus; about 2 for a Lipschitz function.
  double modulusRatio = 0.0;
  bool modulusOk = false;
  /// max over the grid of ||Q_t f||.
  double supNorm = 0.0;
  /// (2 e^{C t} sup p_t)^{1/2} ||f||_2 with C = C(2 |V2|).
  double globalBound = 0.0;
  bool boundHolds = false;
  [[nodiscard]] bool passed() const {
    return defectMonotone && !supDefect.empty() && supDefect.back() < defectThreshold && boundHolds;
  }
};

/// Grid of n points on the chart segment [a, b] (refined grid: 2n - 1 points).
ContinuityReport continuityScan(const ManifoldModel& model, const BundleSpec& bundle, const PotentialSpec& v,
                                const SectionSpec& f, double t, const Coords& a, const Coords& b, int n,
                                std::vector<double> sGrid, const MonteCarloSpec& mc, bool refine = true);

// ---------------------------------------------------------- h-refinement

struct RefinementReport {
  std::vector<double> hs;
  std::vector<double> values;
  std::vector<double> stdErrors;
  /// |value - reference|.
  std::vector<double> bias;
  /// Stderr of the paired difference between consecutive levels.
  std::vector<double> differenceStderr;
  double reference = 0.0;
  bool monotone = false;
};

/// fkScalar at several step sizes on a Euclidean model with common random
/// numbers: each coarse increment is the sum of the finest increments it
/// covers. The hs must be the finest step times powers of two.
RefinementReport hRefinement(const ManifoldModel& model, const ScalarPotential& v, const SectionSpec& f,
                             const Point& x, double t, std::vector<double> hs, double reference,
                             const MonteCarloSpec& mc);

}  // namespace fiberflow
