#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fiberflow/geometry.hpp"

namespace fiberflow {

/// A real 1-form, given by its coefficients against the coordinate increments
/// returned by ManifoldModel::chartDisplacement (angle on the circle, ambient
/// coordinates on the sphere, chart coordinates otherwise).
struct OneForm {
  std::function<Coords(const Point&)> coefficients;
  std::string description;

  [[nodiscard]] bool isZero() const { return !coefficients; }
  /// beta_p[delta].
  [[nodiscard]] double apply(const Point& p, const Coords& delta) const {
    return isZero() ? 0.0 : coefficients(p).dot(delta);
  }
};

OneForm zeroForm();
/// a d(theta) on the circle.
OneForm angularForm(const ManifoldModel& model, double a);
/// lambda (x dy - y dx) / 2 on the Euclidean plane.
OneForm areaForm(const ManifoldModel& model, double lambda);
/// Constant coefficients.
OneForm constantForm(const ManifoldModel& model, std::vector<double> coefficients);

/// Parses "zero()", "dtheta(a=0.5)", "area(lambda=1)", "const([b1,...])".
OneForm parseOneForm(std::string_view text, const ManifoldModel& model);

enum class ConnectionKind {
  Trivial,      // flat product connection
  Magnetic,     // rank 1, d + i beta
  Gauge,        // constant skew-Hermitian components A_j in chart coordinates
  LeviCivita,   // complexified tangent bundle of a 2-dimensional model
};

std::string toString(ConnectionKind kind);

/// Hermitian bundle with metric connection over a model. Fibers are identified
/// with C^d through a global frame (the model's orthonormal frame for the
/// tangent bundle, the standard basis otherwise).
class BundleSpec {
 public:
  static BundleSpec trivial(int rank);
  static BundleSpec magnetic(OneForm beta);
  static BundleSpec gauge(std::vector<CMatrix> components);
  static BundleSpec leviCivita(const ManifoldModel& model);

  [[nodiscard]] int rank() const { return rank_; }
  [[nodiscard]] ConnectionKind connection() const { return kind_; }
  [[nodiscard]] bool isFlatTrivial() const {
    return kind_ == ConnectionKind::Trivial || (kind_ == ConnectionKind::Magnetic && beta_.isZero());
  }
  [[nodiscard]] const OneForm& beta() const { return beta_; }
  [[nodiscard]] const std::vector<CMatrix>& gaugeComponents() const { return gauge_; }
  [[nodiscard]] std::string describe() const;

  /// Unitary S mapping frame coordinates at x to frame coordinates at the end
  /// of the geodesic step exp_x(xi): the parallel transport along the step.
  [[nodiscard]] CMatrix stepTransport(const ManifoldModel& model, const Point& x,
                                      const Coords& xi) const;

 private:
  BundleSpec() = default;

  int rank_ = 1;
  ConnectionKind kind_ = ConnectionKind::Trivial;
  OneForm beta_;
  std::vector<CMatrix> gauge_;
};

}  // namespace fiberflow
