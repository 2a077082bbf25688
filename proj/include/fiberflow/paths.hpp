#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fiberflow/bundle.hpp"
#include "fiberflow/geometry.hpp"
#include "fiberflow/potential.hpp"
#include "fiberflow/rng.hpp"
#include "fiberflow/stats.hpp"

namespace fiberflow {

/// Uniform grid of step h on [0, t], refined so that every requested
/// observation time is a grid point. The last step may be shorter.
class TimeGrid {
 public:
  TimeGrid(double t, double h, std::vector<double> stops = {});

  [[nodiscard]] const std::vector<double>& times() const { return times_; }
  [[nodiscard]] int steps() const { return static_cast<int>(times_.size()) - 1; }
  [[nodiscard]] double h() const { return h_; }
  [[nodiscard]] double end() const { return times_.back(); }
  [[nodiscard]] const std::vector<double>& stops() const { return stops_; }
  /// Index into stops() observed at grid index k, or -1.
  [[nodiscard]] int stopAt(int k) const { return stopOfGrid_[static_cast<std::size_t>(k)]; }

 private:
  std::vector<double> times_;
  std::vector<double> stops_;
  std::vector<int> stopOfGrid_;
  double h_ = 0.0;
};

/// Drives one discretized Brownian path: x_{k+1} = exp_{x_k}(sqrt(dt_k) xi_k)
/// with xi_k standard Gaussian in the orthonormal frame (m normals per step,
/// drawn in a fixed order). The path is killed at the first grid point
/// outside the domain.
class Walker {
 public:
  /// Rejects h with sqrt(m h) above the model's max step.
  Walker(const ManifoldModel& model, TimeGrid grid);

  [[nodiscard]] const ManifoldModel& model() const { return *model_; }
  [[nodiscard]] const TimeGrid& grid() const { return grid_; }

  struct Outcome {
    bool alive = true;
    int lastIndex = 0;  // grid index of the last visited point
  };

  /// visitor.step(k, from, xi, geo, dt, alive) is called for every step; the
  /// walk ends after the first step whose end point is outside the domain.
  template <class Visitor>
  Outcome run(const Point& x, RngKey key, Visitor&& visitor) const {
    StreamRng rng(key);
    const ManifoldModel& base = model_->completeModel();
    const bool bounded = !model_->isComplete();
    const int m = model_->dimension();
    const auto& times = grid_.times();
    Point current = x;
    Coords xi(m);
    for (int k = 0; k < grid_.steps(); ++k) {
      const double dt = times[k + 1] - times[k];
      const double scale = std::sqrt(dt);
      for (int i = 0; i < m; ++i) xi[i] = scale * rng.normal();
      GeodesicStep geo = base.geodesicStep(current, xi);
      const bool alive = !bounded || model_->inside(geo.end);
      visitor.step(k, current, xi, geo, dt, alive);
      if (!alive) return {false, k + 1};
      current = std::move(geo.end);
    }
    return {true, grid_.steps()};
  }

 private:
  const ManifoldModel* model_;
  TimeGrid grid_;
};

/// One stored discretized path.
struct PathSample {
  std::vector<double> times;
  std::vector<Point> points;
  /// Tangent increments xi_k (frame coefficients at points[k]).
  std::vector<Coords> steps;
  bool alive = true;
  /// First grid index outside the domain; points stop there.
  std::optional<std::size_t> deathIndex;
  int rank = 1;
  /// Row-major d x d per-step transports S_k (frame at k -> frame at k+1).
  std::vector<cd> transportData;
  double h = 0.0;

  [[nodiscard]] std::size_t stepCount() const { return steps.size(); }
  [[nodiscard]] CMatrix transport(std::size_t k) const;
};

PathSample samplePath(const ManifoldModel& model, const BundleSpec& bundle, const Point& x,
                      double t, double h, RngKey key, std::vector<double> stops = {});

/// Accumulates int v(B_s) ds step by step: trapezoid on the vertices for
/// regular v; for singular v, 4 substep midpoints along each geodesic step
/// with |v| capped at 1/h.
class ScalarIntegrator {
 public:
  ScalarIntegrator(const ScalarPotential& v, double h);

  void start(const Point& x);
  /// Contribution of one step; `to` is the step's end point.
  double step(const ManifoldModel& model, const Point& from, const Coords& xi, const Point& to,
              double dt);

  [[nodiscard]] double cap() const { return cap_; }
  [[nodiscard]] bool singular() const { return singular_; }

 private:
  double eval(const Point& p) const;

  const ScalarPotential* v_;
  double cap_;
  bool singular_;
  double last_ = 0.0;
};

/// Substep sample points used for singular potentials (fractions of a step).
inline constexpr double kSubstepFractions[4] = {0.125, 0.375, 0.625, 0.875};

double integrateScalarAlong(const ManifoldModel& model, const PathSample& path,
                            const ScalarPotential& v);

/// Midpoint-rule Stratonovich integral sum_k beta(mid_k)[dx_k] along the path.
double stratonovichLineIntegral(const ManifoldModel& model, const PathSample& path,
                                const OneForm& beta);

struct ExitReport {
  std::vector<Point> starts;
  /// P{t < exit time of the ball of radius r around the center}, per start.
  std::vector<Estimate> survival;
  double infimum = 1.0;
  std::size_t argInfimum = 0;
};

/// Survival fraction of paths in the geodesic ball B(center, r) up to time t.
/// All start points share the same random streams.
ExitReport exitProbability(const ManifoldModel& model, const Point& center,
                           const std::vector<Point>& starts, double r, double t, double h,
                           std::uint64_t n, std::uint64_t seed, int workers = 1);

/// CSV: step, time, coord..., alive, transport entries (row-major, re/im).
void writePathCsv(std::ostream& out, const PathSample& path);

}  // namespace fiberflow
