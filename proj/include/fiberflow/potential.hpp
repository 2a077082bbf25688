#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fiberflow/geometry.hpp"

namespace fiberflow {

/// Integrability class declared for the negative part of a potential.
enum class PotentialClass { Bounded, Kato, LocallyKato, LocallyIntegrable };

std::string toString(PotentialClass c);

/// |v(y)| <= profile(dist(center, y)); lets the Kato quadrature reduce to a
/// radial integral. `exact` marks profiles equal to |v|, not just a majorant.
struct RadialProfile {
  Point center;
  std::function<double(double)> absValue;
  /// sup of absValue (infinity for singular or growing profiles).
  double supAbs = 0.0;
  bool exact = true;
  /// Radii where absValue jumps; quadratures split there.
  std::vector<double> breaks;
};

/// A real scalar field with the metadata the samplers and analyzers need.
struct ScalarPotential {
  std::function<double(const Point&)> value;
  /// Points where |v| blows up; path integrals use substep sampling with a cap.
  std::vector<Point> singularPoints;
  std::optional<RadialProfile> absProfile;
  bool nonnegative = false;
  /// Class of |v|; the negative part inherits it unless v >= 0.
  PotentialClass absClass = PotentialClass::Bounded;
  /// Sharper class and majorant for max(0, -v), when known (sums such as
  /// harmonic - coulomb have a Kato negative part but a growing |v|).
  std::optional<PotentialClass> negativePartClass;
  std::optional<RadialProfile> negativeProfile;
  std::string description;

  [[nodiscard]] PotentialClass negativeClass() const {
    return nonnegative ? PotentialClass::Bounded : negativePartClass.value_or(absClass);
  }
  [[nodiscard]] bool singular() const { return !singularPoints.empty(); }
  [[nodiscard]] double operator()(const Point& p) const { return value(p); }
};

ScalarPotential constantPotential(const ManifoldModel& model, double c);
/// omega^2 dist(center, y)^2 / 2.
ScalarPotential harmonicPotential(const ManifoldModel& model, double omega,
                                  std::optional<Point> center = std::nullopt);
/// -alpha / dist(center, y).
ScalarPotential coulombPotential(const ManifoldModel& model, double alpha,
                                 std::optional<Point> center = std::nullopt);
/// alpha dist(center, y)^{-p}.
ScalarPotential powerPotential(const ManifoldModel& model, double alpha, double p,
                               std::optional<Point> center = std::nullopt);
/// -depth on the geodesic ball of radius r, 0 outside.
ScalarPotential wellPotential(const ManifoldModel& model, double depth, double r,
                              std::optional<Point> center = std::nullopt);
/// c v.
ScalarPotential scaled(const ScalarPotential& v, double c);
/// |v|.
ScalarPotential absolute(const ScalarPotential& v);
/// v + w.
ScalarPotential sum(const ScalarPotential& v, const ScalarPotential& w);

/// Matrix-valued potential V = V1 - V2 with Hermitian values of rank d.
/// Immutable; evaluation is thread-safe.
class PotentialSpec {
 public:
  using MatrixFn = std::function<CMatrix(const Point&)>;
  using FloorFn = std::function<double(const Point&)>;

  struct Term {
    ScalarPotential factor;
    CMatrix coefficient;  // constant Hermitian
  };

  static PotentialSpec zero(int rank);
  /// v times the identity of rank d.
  static PotentialSpec scalar(ScalarPotential v, int rank = 1);
  /// sum_i factor_i(y) P_i.
  static PotentialSpec combination(std::vector<Term> terms);
  /// Arbitrary Hermitian field; values are symmetrized on evaluation.
  static PotentialSpec field(int rank, MatrixFn fn, PotentialClass negativeClass,
                             std::string description, std::vector<Point> singular = {});

  [[nodiscard]] int rank() const { return rank_; }
  [[nodiscard]] CMatrix value(const Point& p) const;
  [[nodiscard]] CMatrix positivePart(const Point& p) const;
  [[nodiscard]] CMatrix negativePart(const Point& p) const;
  /// v(y) <= min spectrum of V(y); smallest eigenvalue unless overridden.
  [[nodiscard]] double scalarFloor(const Point& p) const;
  /// ||V2(y)|| = max(0, -min spectrum).
  [[nodiscard]] double negativeNorm(const Point& p) const;
  [[nodiscard]] double norm(const Point& p) const;

  /// Copy with a user-supplied scalar floor (must be <= min spectrum).
  [[nodiscard]] PotentialSpec withScalarFloor(FloorFn floor) const;

  /// Non-null when V = v I.
  [[nodiscard]] const ScalarPotential* scalarPart() const {
    return scalar_ ? &*scalar_ : nullptr;
  }
  [[nodiscard]] bool isZero() const { return zero_; }
  [[nodiscard]] bool singular() const { return !singular_.empty(); }
  [[nodiscard]] const std::vector<Point>& singularPoints() const { return singular_; }
  [[nodiscard]] PotentialClass negativeClass() const { return negativeClass_; }
  [[nodiscard]] const std::string& describe() const { return description_; }

  /// Radial majorant of ||V|| around one center, when available.
  [[nodiscard]] const std::optional<RadialProfile>& normProfile() const { return normProfile_; }
  /// Radial majorant of ||V2||; empty when V2 vanishes identically
  /// (then hasNegativePart() is false).
  [[nodiscard]] const std::optional<RadialProfile>& negativeProfile() const {
    return negativeProfile_;
  }
  [[nodiscard]] bool hasNegativePart() const { return hasNegative_; }

  /// ||V2|| as a scalar potential (for Kato and Khas'minskii checks).
  [[nodiscard]] ScalarPotential negativeNormPotential() const;

 private:
  friend PotentialSpec parsePotential(std::string_view, const ManifoldModel&, int);
  PotentialSpec() = default;

  int rank_ = 1;
  MatrixFn fn_;
  std::optional<ScalarPotential> scalar_;
  FloorFn floor_;
  std::vector<Point> singular_;
  PotentialClass negativeClass_ = PotentialClass::Bounded;
  std::optional<RadialProfile> normProfile_;
  std::optional<RadialProfile> negativeProfile_;
  bool hasNegative_ = false;
  bool zero_ = false;
  std::string description_;
};

/// Parses the potential grammar (see docs/potential-grammar.md), e.g.
/// "harmonic(1.0)", "coulomb(0.5, center=[0,0,0])",
/// "constant(1) * [[1,0],[0,2]] + well(2, 0.5) * [[0,c(0,1)],[c(0,-1),0]]".
/// Scalar expressions are promoted to v I at the requested rank.
PotentialSpec parsePotential(std::string_view text, const ManifoldModel& model, int rank = 1);

}  // namespace fiberflow
