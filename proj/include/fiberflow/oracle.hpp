#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fiberflow/core.hpp"
#include "fiberflow/rng.hpp"

namespace fiberflow {

enum class GridTopology { Interval, Circle, Torus2 };

/// Finite-difference Schroedinger operator -1/2 Delta_h + v on a uniform grid.
/// Magnetic fields enter through unitary phase links e^{i beta(edge)} on the
/// hopping terms, so the discrete diamagnetic inequality holds exactly.
///
/// Stored as a real diagonal plus Hermitian links H(i, j) = w, H(j, i) = conj(w).
class GridOperator {
 public:
  using Potential1D = std::function<double(double)>;
  using Potential2D = std::function<double(double, double)>;

  /// n interior nodes of (a, b), Dirichlet at both ends.
  static GridOperator interval(double a, double b, int n, Potential1D v = {});
  /// n nodes on the circle of radius r (coordinate: angle), with flux a from
  /// the 1-form a d(theta); spectrum of the continuum operator (k + a)^2 / (2 r^2).
  static GridOperator circle(double radius, int n, Potential1D v = {}, double a = 0.0);
  /// n1 x n2 periodic grid on [0, l1) x [0, l2).
  static GridOperator torus2(double l1, double l2, int n1, int n2, Potential2D v = {});

  struct Link {
    int i = 0;
    int j = 0;
    cd w;
  };

  [[nodiscard]] GridTopology topology() const { return topology_; }
  [[nodiscard]] int size() const { return static_cast<int>(diagonal_.size()); }
  /// Node coordinates: one column per node (1 row for 1-D grids, 2 for the torus).
  [[nodiscard]] const Eigen::MatrixXd& nodes() const { return nodes_; }
  /// Grid spacing (arc length); on the torus the first direction's.
  [[nodiscard]] double spacing() const { return spacing_; }
  /// Volume weight of one node.
  [[nodiscard]] double cellVolume() const { return cellVolume_; }
  [[nodiscard]] const Eigen::VectorXd& diagonal() const { return diagonal_; }
  [[nodiscard]] const std::vector<Link>& links() const { return links_; }
  [[nodiscard]] double flux() const { return flux_; }
  /// Real symmetric chain (interval without phases): eligible for Sturm bisection.
  [[nodiscard]] bool realTridiagonal() const { return topology_ == GridTopology::Interval; }

  [[nodiscard]] Eigen::MatrixXcd dense() const;
  [[nodiscard]] Eigen::VectorXcd apply(const Eigen::VectorXcd& f) const;
  /// max |H - H^*| over entries.
  [[nodiscard]] double hermitianDefect() const;
  /// max_i |sum_j H(i, j)| of the kinetic part (0 for periodic grids).
  [[nodiscard]] double kineticRowSumDefect() const;
  /// Same grid and potential with all phases removed (the operator H_0(v)).
  [[nodiscard]] GridOperator withoutPhases() const;
  /// Same operator on a grid with (about) half as many nodes per direction,
  /// used for Richardson extrapolation. Interval grids need n odd for an
  /// exact halving of the spacing.
  [[nodiscard]] GridOperator coarsened() const;
  /// Samples a function on the nodes.
  [[nodiscard]] Eigen::VectorXcd sample(const std::function<cd(const Eigen::VectorXd&)>& f) const;

 private:
  GridOperator() = default;
  void build();

  GridTopology topology_ = GridTopology::Interval;
  double a_ = 0.0, b_ = 0.0, l1_ = 0.0, l2_ = 0.0;
  int n1_ = 0, n2_ = 0;
  double flux_ = 0.0;
  Potential1D v1_;
  Potential2D v2_;
  Eigen::MatrixXd nodes_;
  Eigen::VectorXd diagonal_;
  std::vector<Link> links_;
  double spacing_ = 0.0;
  double cellVolume_ = 0.0;
};

/// Largest grid handled by dense eigendecompositions.
inline constexpr int kDenseOracleLimit = 1024;
/// Largest grid accepted by gridGroundEnergy.
inline constexpr int kGroundEnergyLimit = 4096;

struct GroundEnergy {
  /// Richardson-extrapolated value (second order in the spacing).
  double value = 0.0;
  double fine = 0.0;
  double coarse = 0.0;
  int nFine = 0;
  int nCoarse = 0;
};

/// Smallest eigenvalue of op (Sturm bisection for real tridiagonal operators,
/// dense Hermitian eigensolver otherwise).
double lowestEigenvalue(const GridOperator& op);

/// min sigma(op), extrapolated from op and op.coarsened().
GroundEnergy gridGroundEnergy(const GridOperator& op);

/// exp(-t op) f; eigendecomposition for n <= 1024, scaled Taylor stepping of
/// the sparse operator otherwise.
Eigen::VectorXcd gridSemigroupApply(const GridOperator& op, const Eigen::VectorXcd& f, double t);

/// Kernel of exp(-t(-1/2 d^2/dy^2 + omega^2 y^2 / 2)) on the line.
double mehlerKernel(double omega, double t, double x, double y);

/// P{|x + W_s| < r for all s <= t} for 1-D Brownian motion, |x| < r.
double twoSidedSurvival(double r, double t, double x = 0.0);

/// E exp(i lambda A_t), A_t the Levy area (1/2) int (x dy - y dx) of planar
/// Brownian motion from 0: 1 / cosh(lambda t / 2).
double levyAreaCharacteristic(double lambda, double t);

/// Bottom of the spectrum of 1/2 (-i d/ds + a/r)^2 on the circle of radius r.
double circleMagneticGroundEnergy(double a, double radius = 1.0);

/// E[exp(i a (theta_t - theta_0)) f(theta_t)] from theta = x on the circle of
/// radius r, by Fourier series of f sampled on m nodes.
cd circleMagneticSemigroup(double a, double radius, double t, const std::function<cd(double)>& f, double x,
                           int m = 256);

/// A random combination of real orthonormal spherical harmonics of degree
/// 0..maxDegree on the sphere of radius r, normalized to unit L^2 norm.
/// The heat semigroup acts on it diagonally.
class SphereProbe {
 public:
  SphereProbe(double radius, int maxDegree, StreamRng& rng, bool includeConstant = true);
  /// Constant probe 1 / sqrt(4 pi r^2).
  static SphereProbe constant(double radius);

  /// (P_t f)(p) for p in ambient coordinates; t = 0 gives f itself.
  [[nodiscard]] double evaluate(const Eigen::Vector3d& p, double t = 0.0) const;
  [[nodiscard]] double l2Norm() const;
  [[nodiscard]] int maxDegree() const { return maxDegree_; }

 private:
  SphereProbe() = default;
  struct Mode {
    int l = 0;
    int m = 0;
    double coefficient = 0.0;
  };
  double radius_ = 1.0;
  int maxDegree_ = 0;
  std::vector<Mode> modes_;
};

/// One named self-consistency check of the oracle solvers.
struct OracleCheck {
  std::string name;
  double value = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Runs the oracle self-consistency suite (analytic spectra, mass
/// conservation, Mehler and spectral cross-checks, discrete domination).
std::vector<OracleCheck> oracleSelfCheck();

}  // namespace fiberflow
