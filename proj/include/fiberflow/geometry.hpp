#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fiberflow/core.hpp"
#include "fiberflow/rng.hpp"

namespace fiberflow {

enum class ModelKind { Euclidean, Circle, FlatTorus, Sphere2, HyperbolicPlane, OpenSubdomain };

/// How a point's coordinates are to be read.
enum class ChartTag {
  Cartesian,     // R^m
  Angle,         // circle angle in [0, 2*pi)
  TorusBox,      // torus coordinates in [0, L_i)
  Ambient,       // sphere embedded in R^3
  PoincareDisk,  // hyperbolic plane, unit disk model
};

struct Point {
  Coords coords;
  ChartTag chart = ChartTag::Cartesian;
};

/// Result of following a geodesic: the end point and the initial velocity
/// parallel-transported to it, both in the model's orthonormal frame.
struct GeodesicStep {
  Point end;
  Coords velocity;
};

/// A model Riemannian manifold from a closed catalog: Euclidean space, circle,
/// flat torus, round 2-sphere, hyperbolic plane (curvature -1), and open
/// subdomains of those. Tangent vectors are always given as coefficients in
/// the model's orthonormal frame field. All heat kernels are for the generator
/// Delta/2.
///
/// Immutable after construction; safe to share across threads.
class ManifoldModel {
 public:
  using BoundaryFn = std::function<double(const Point&)>;

  static ManifoldModel euclidean(int m);
  static ManifoldModel circle(double radius);
  static ManifoldModel flatTorus(std::vector<double> periods);
  static ManifoldModel sphere2(double radius);
  static ManifoldModel hyperbolicPlane();
  /// Open subset {boundaryFn > 0} of a complete model. Paths die on leaving it.
  static ManifoldModel openSubdomain(const ManifoldModel& base, BoundaryFn boundaryFn,
                                     std::string description);
  /// Open geodesic ball around the base model's origin.
  static ManifoldModel ball(const ManifoldModel& base, double radius);

  [[nodiscard]] ModelKind kind() const { return kind_; }
  [[nodiscard]] int dimension() const { return dim_; }
  /// Number of stored coordinates per point (3 for the sphere).
  [[nodiscard]] int coordinateCount() const;
  [[nodiscard]] ChartTag chart() const;
  /// Canonical grammar string; parseManifold(describe()) reproduces the model.
  [[nodiscard]] std::string describe() const;

  [[nodiscard]] bool isComplete() const { return kind_ != ModelKind::OpenSubdomain; }
  [[nodiscard]] bool isCompact() const;
  [[nodiscard]] bool hasClosedFormKernel() const { return isComplete(); }
  /// The complete model underneath (itself when complete).
  [[nodiscard]] const ManifoldModel& completeModel() const;

  [[nodiscard]] double radius() const { return radius_; }
  [[nodiscard]] const std::vector<double>& periods() const { return periods_; }
  /// Radius of a ball subdomain, if this model was built by ball().
  [[nodiscard]] std::optional<double> ballRadius() const { return ballRadius_; }

  [[nodiscard]] double injectivityRadius() const;
  /// Largest tangent length expStep accepts.
  [[nodiscard]] double maxStep() const;

  [[nodiscard]] Point origin() const;
  /// Builds a point from raw coordinates, normalizing periodic charts and
  /// projecting onto the sphere. Throws if the coordinates are invalid.
  [[nodiscard]] Point makePoint(std::span<const double> coords) const;
  [[nodiscard]] Point makePoint(std::initializer_list<double> coords) const {
    return makePoint(std::span<const double>(coords.begin(), coords.size()));
  }
  void validate(const Point& x) const;

  /// Signed distance-like boundary function: positive inside the domain.
  /// +infinity on complete models.
  [[nodiscard]] double boundaryValue(const Point& x) const;
  [[nodiscard]] bool inside(const Point& x) const { return boundaryValue(x) > 0.0; }

  /// exp_x(xi). Rejects non-finite xi and |xi| > maxStep().
  [[nodiscard]] Point expStep(const Point& x, const Coords& xi) const;
  /// exp_x(xi) without the step-length check, plus the transported velocity.
  [[nodiscard]] GeodesicStep geodesicStep(const Point& x, const Coords& xi) const;
  /// Parallel transport of eta along t -> exp_x(t xi), t in [0,1].
  [[nodiscard]] Coords transportTangent(const Point& x, const Coords& xi,
                                        const Coords& eta) const;
  /// Coordinate increment of the geodesic step in the chart or embedding used
  /// by one-forms (unwrapped on periodic charts).
  [[nodiscard]] Coords chartDisplacement(const Point& x, const Coords& xi) const;

  [[nodiscard]] double distance(const Point& x, const Point& y) const;

  /// p_t(x,y); throws for open subdomains (no closed form).
  [[nodiscard]] double heatKernel(double t, const Point& x, const Point& y) const;
  /// p_t as a function of geodesic distance; Euclidean, sphere and hyperbolic only.
  [[nodiscard]] double heatKernelRadial(double t, double rho) const;
  /// sup_{x,y} p_t(x,y) (= p_t(x,x) on these homogeneous models).
  [[nodiscard]] double supHeatKernel(double t) const;

  /// Riemannian volume of a compact model.
  [[nodiscard]] double volume() const;
  /// Volume of the geodesic ball of the given radius (complete models).
  [[nodiscard]] double ballVolume(double radius) const;
  [[nodiscard]] Point sampleUniform(StreamRng& rng) const;
  /// Uniform point in the geodesic ball around the origin.
  [[nodiscard]] Point sampleUniformBall(double radius, StreamRng& rng) const;

  /// Orthonormal frame of T_pS^2 in ambient coordinates (columns). Obtained by
  /// rotating the north-pole frame along the meridian; singular only at the
  /// south pole, where a fixed fallback is used.
  [[nodiscard]] Eigen::Matrix<double, 3, 2> sphereFrame(const Point& p) const;

 private:
  ManifoldModel() = default;

  ModelKind kind_ = ModelKind::Euclidean;
  int dim_ = 1;
  double radius_ = 1.0;
  std::vector<double> periods_;
  std::shared_ptr<const ManifoldModel> base_;
  BoundaryFn boundary_;
  std::string description_;
  std::optional<double> ballRadius_;
};

/// Parses the manifold grammar (see docs/manifold-grammar.md), e.g.
/// "sphere2(r=1.0)", "euclidean(m=3)", "ball(euclidean(m=2), r=1.0)".
ManifoldModel parseManifold(std::string_view text);

/// Constants of a Gaussian upper bound p_s(x,y) <= c exp(-d dist^2/s) / s^{m/2}
/// for 0 < s <= t, fitted on sampled (s, x, y).
struct GaussianBoundFit {
  double c = 0.0;
  double d = 0.0;
  /// max over validation samples of p_s - bound (<= 0 when the fit holds).
  double maxResidual = 0.0;
  int samples = 0;
};

/// Fits c for a fixed exponent d on a training grid, inflates it by 5%, then
/// checks the bound on an independent random validation set.
GaussianBoundFit fitGaussianBound(const ManifoldModel& model, double t, double d,
                                  std::uint64_t seed, int validationSamples = 2000);

}  // namespace fiberflow
