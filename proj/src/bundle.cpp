#include "fiberflow/bundle.hpp"

#include <cmath>

#include "fiberflow/linalg.hpp"
#include "text_cursor.hpp"

namespace fiberflow {

OneForm zeroForm() { return OneForm{}; }

OneForm angularForm(const ManifoldModel& model, double a) {
  require(model.completeModel().kind() == ModelKind::Circle, "beta: dtheta needs a circle manifold");
  require(std::isfinite(a), "beta: a must be finite");
  OneForm form;
  form.coefficients = [a](const Point&) {
    Coords c(1);
    c[0] = a;
    return c;
  };
  form.description = "dtheta(a=" + formatNumber(a) + ")";
  return form;
}

OneForm areaForm(const ManifoldModel& model, double lambda) {
  require(model.completeModel().kind() == ModelKind::Euclidean && model.dimension() == 2,
          "beta: area needs euclidean(m=2)");
  require(std::isfinite(lambda), "beta: lambda must be finite");
  OneForm form;
  form.coefficients = [lambda](const Point& p) {
    Coords c(2);
    c << -0.5 * lambda * p.coords[1], 0.5 * lambda * p.coords[0];
    return c;
  };
  form.description = "area(lambda=" + formatNumber(lambda) + ")";
  return form;
}

OneForm constantForm(const ManifoldModel& model, std::vector<double> coefficients) {
  require(static_cast<int>(coefficients.size()) == model.coordinateCount(),
          "beta: const needs " + std::to_string(model.coordinateCount()) + " coefficients");
  Coords c(model.coordinateCount());
  std::string text = "const([";
  for (int i = 0; i < c.size(); ++i) {
    require(std::isfinite(coefficients[i]), "beta: coefficients must be finite");
    c[i] = coefficients[i];
    if (i) text += ",";
    text += formatNumber(coefficients[i]);
  }
  OneForm form;
  form.coefficients = [c](const Point&) { return c; };
  form.description = text + "])";
  return form;
}

OneForm parseOneForm(std::string_view text, const ManifoldModel& model) {
  detail::TextCursor cursor(text, "beta");
  const std::string name = cursor.identifier();
  cursor.expect('(');
  auto keyed = [&](const char* key) {
    const std::string k = cursor.identifier();
    if (k != key) cursor.fail("expected argument '" + std::string(key) + "'");
    cursor.expect('=');
    return cursor.number();
  };
  OneForm form;
  if (name == "zero") {
    form = zeroForm();
  } else if (name == "dtheta") {
    form = angularForm(model, keyed("a"));
  } else if (name == "area") {
    form = areaForm(model, keyed("lambda"));
  } else if (name == "const") {
    form = constantForm(model, cursor.numberList());
  } else {
    cursor.fail("unknown 1-form '" + name + "'");
  }
  cursor.expect(')');
  if (!cursor.atEnd()) cursor.fail("unexpected trailing text");
  return form;
}

std::string toString(ConnectionKind kind) {
  switch (kind) {
    case ConnectionKind::Trivial: return "trivial";
    case ConnectionKind::Magnetic: return "magnetic";
    case ConnectionKind::Gauge: return "gauge";
    case ConnectionKind::LeviCivita: return "levi-civita";
  }
  return "unknown";
}

BundleSpec BundleSpec::trivial(int rank) {
  require(rank >= 1 && rank <= kMaxRank, "bundle-rank: must be in [1, 16]");
  BundleSpec b;
  b.rank_ = rank;
  return b;
}

BundleSpec BundleSpec::magnetic(OneForm beta) {
  BundleSpec b;
  b.kind_ = ConnectionKind::Magnetic;
  b.beta_ = std::move(beta);
  return b;
}

BundleSpec BundleSpec::gauge(std::vector<CMatrix> components) {
  require(!components.empty(), "connection: gauge needs at least one component");
  const auto d = static_cast<int>(components.front().rows());
  require(d >= 1 && d <= kMaxRank, "bundle-rank: must be in [1, 16]");
  for (const auto& a : components) {
    require(a.rows() == d && a.cols() == d, "connection: gauge components must share one size");
    require((a + a.adjoint()).norm() <= 1e-12 * (1.0 + a.norm()),
            "connection: gauge components must be skew-Hermitian");
  }
  BundleSpec b;
  b.rank_ = d;
  b.kind_ = ConnectionKind::Gauge;
  b.gauge_ = std::move(components);
  return b;
}

BundleSpec BundleSpec::leviCivita(const ManifoldModel& model) {
  require(model.dimension() <= kMaxRank, "connection: tangent bundle rank too large");
  BundleSpec b;
  b.rank_ = model.dimension();
  b.kind_ = ConnectionKind::LeviCivita;
  return b;
}

std::string BundleSpec::describe() const {
  std::string s = "{rank=" + std::to_string(rank_) + ", connection=" + toString(kind_);
  if (kind_ == ConnectionKind::Magnetic) s += ", beta=" + (beta_.isZero() ? "zero()" : beta_.description);
  return s + "}";
}

CMatrix BundleSpec::stepTransport(const ManifoldModel& model, const Point& x, const Coords& xi) const {
  switch (kind_) {
    case ConnectionKind::Trivial: return CMatrix::Identity(rank_, rank_);
    case ConnectionKind::Magnetic: {
      CMatrix s(1, 1);
      if (beta_.isZero()) {
        s(0, 0) = 1.0;
        return s;
      }
      const Point mid = model.geodesicStep(x, 0.5 * xi).end;
      const double phase = beta_.apply(mid, model.chartDisplacement(x, xi));
      s(0, 0) = std::polar(1.0, -phase);
      return s;
    }
    case ConnectionKind::Gauge: {
      const Coords delta = model.chartDisplacement(x, xi);
      require(static_cast<std::size_t>(delta.size()) == gauge_.size(),
              "connection: gauge needs one component per chart coordinate (" +
                  std::to_string(delta.size()) + ")");
      CMatrix generator = CMatrix::Zero(rank_, rank_);
      for (int j = 0; j < delta.size(); ++j) generator -= delta[j] * gauge_[j];
      return matrixExp(generator);
    }
    case ConnectionKind::LeviCivita: {
      const int m = model.dimension();
      CMatrix s(m, m);
      for (int i = 0; i < m; ++i) {
        Coords e = Coords::Zero(m);
        e[i] = 1.0;
        const Coords moved = model.transportTangent(x, xi, e);
        for (int r = 0; r < m; ++r) s(r, i) = moved[r];
      }
      return s;
    }
  }
  return CMatrix::Identity(rank_, rank_);
}

}  // namespace fiberflow
