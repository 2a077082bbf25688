#include "fiberflow/potential.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fiberflow/linalg.hpp"
#include "text_cursor.hpp"

namespace fiberflow {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

PotentialClass worse(PotentialClass a, PotentialClass b) {
  return static_cast<int>(a) >= static_cast<int>(b) ? a : b;
}

Point resolveCenter(const ManifoldModel& model, const std::optional<Point>& center) {
  if (center) {
    model.validate(*center);
    return *center;
  }
  return model.origin();
}

/// Class of dist^{-p} near its singular point in dimension m.
PotentialClass singularClass(int m, double p) {
  if (p <= 0.0) return PotentialClass::Bounded;
  const bool kato = m == 1 ? p < 1.0 : p < 2.0;
  if (kato) return PotentialClass::Kato;
  return PotentialClass::LocallyIntegrable;
}

std::string centerSuffix(const std::optional<Point>& center) {
  if (!center) return "";
  std::string s = ", center=[";
  for (int i = 0; i < center->coords.size(); ++i) {
    if (i) s += ",";
    s += formatNumber(center->coords[i]);
  }
  return s + "]";
}

}  // namespace

std::string toString(PotentialClass c) {
  switch (c) {
    case PotentialClass::Bounded: return "bounded";
    case PotentialClass::Kato: return "kato";
    case PotentialClass::LocallyKato: return "locallyKato";
    case PotentialClass::LocallyIntegrable: return "locallyIntegrable";
  }
  return "unknown";
}

// --------------------------------------------------------- scalar builders

ScalarPotential constantPotential(const ManifoldModel& model, double c) {
  require(std::isfinite(c), "constant: value must be finite");
  ScalarPotential v;
  v.value = [c](const Point&) { return c; };
  v.absProfile = RadialProfile{model.origin(), [a = std::abs(c)](double) { return a; }, std::abs(c), true, {}};
  v.nonnegative = c >= 0.0;
  v.absClass = PotentialClass::Bounded;
  v.description = "constant(" + formatNumber(c) + ")";
  return v;
}

ScalarPotential harmonicPotential(const ManifoldModel& model, double omega, std::optional<Point> center) {
  require(std::isfinite(omega), "harmonic: omega must be finite");
  const Point c = resolveCenter(model, center);
  const double k = 0.5 * omega * omega;
  ScalarPotential v;
  v.value = [model, c, k](const Point& p) {
    const double d = model.distance(c, p);
    return k * d * d;
  };
  v.absProfile = RadialProfile{c, [k](double r) { return k * r * r; },
                               model.isCompact() ? k * model.injectivityRadius() * model.injectivityRadius() : kInf,
                               true, {}};
  v.nonnegative = true;
  v.absClass = model.isCompact() ? PotentialClass::Bounded : PotentialClass::LocallyKato;
  v.description = "harmonic(" + formatNumber(omega) + centerSuffix(center) + ")";
  return v;
}

ScalarPotential powerPotential(const ManifoldModel& model, double alpha, double p, std::optional<Point> center) {
  require(std::isfinite(alpha) && std::isfinite(p), "power: alpha and p must be finite");
  require(p > 0.0, "power: exponent p must be positive");
  const Point c = resolveCenter(model, center);
  ScalarPotential v;
  v.value = [model, c, alpha, p](const Point& y) { return alpha * std::pow(model.distance(c, y), -p); };
  v.singularPoints = {c};
  v.absProfile = RadialProfile{c, [a = std::abs(alpha), p](double r) { return a * std::pow(r, -p); }, kInf, true, {}};
  v.nonnegative = alpha >= 0.0;
  v.absClass = singularClass(model.dimension(), p);
  v.description = "power(" + formatNumber(alpha) + ", " + formatNumber(p) + centerSuffix(center) + ")";
  return v;
}

ScalarPotential coulombPotential(const ManifoldModel& model, double alpha, std::optional<Point> center) {
  ScalarPotential v = powerPotential(model, -alpha, 1.0, center);
  v.description = "coulomb(" + formatNumber(alpha) + centerSuffix(center) + ")";
  return v;
}

ScalarPotential wellPotential(const ManifoldModel& model, double depth, double r, std::optional<Point> center) {
  require(std::isfinite(depth), "well: depth must be finite");
  require(r > 0.0, "well: radius r must be positive");
  const Point c = resolveCenter(model, center);
  ScalarPotential v;
  v.value = [model, c, depth, r](const Point& y) { return model.distance(c, y) < r ? -depth : 0.0; };
  v.absProfile = RadialProfile{c, [a = std::abs(depth), r](double rho) { return rho < r ? a : 0.0; },
                               std::abs(depth), true, {r}};
  v.nonnegative = depth <= 0.0;
  v.absClass = PotentialClass::Bounded;
  v.description = "well(" + formatNumber(depth) + ", " + formatNumber(r) + centerSuffix(center) + ")";
  return v;
}

namespace {

std::vector<double> mergedBreaks(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

std::optional<RadialProfile> negativeMajorant(const ScalarPotential& v) {
  if (!v.absProfile) return std::nullopt;
  if (v.nonnegative) return RadialProfile{v.absProfile->center, [](double) { return 0.0; }, 0.0, true, {}};
  return v.negativeProfile ? v.negativeProfile : v.absProfile;
}

}  // namespace

ScalarPotential scaled(const ScalarPotential& v, double c) {
  ScalarPotential out = v;
  out.value = [f = v.value, c](const Point& p) { return c * f(p); };
  if (v.absProfile) {
    out.absProfile->absValue = [g = v.absProfile->absValue, a = std::abs(c)](double r) { return a * g(r); };
    out.absProfile->supAbs = std::abs(c) * v.absProfile->supAbs;
  }
  if (c == 0.0) {
    out.singularPoints.clear();
    out.absClass = PotentialClass::Bounded;
    out.nonnegative = true;
    if (out.absProfile) out.absProfile->supAbs = 0.0;
  } else if (c < 0.0) {
    out.nonnegative = false;
    out.negativePartClass.reset();
    out.negativeProfile.reset();
  } else if (v.negativeProfile) {
    out.negativeProfile->absValue = [g = v.negativeProfile->absValue, c](double r) { return c * g(r); };
    out.negativeProfile->supAbs = c * v.negativeProfile->supAbs;
  }
  out.description = formatNumber(c) + " * " + v.description;
  return out;
}

ScalarPotential absolute(const ScalarPotential& v) {
  ScalarPotential out = v;
  out.value = [f = v.value](const Point& p) { return std::abs(f(p)); };
  out.nonnegative = true;
  out.negativePartClass.reset();
  out.negativeProfile.reset();
  out.description = "abs(" + v.description + ")";
  return out;
}

ScalarPotential sum(const ScalarPotential& v, const ScalarPotential& w) {
  ScalarPotential out;
  out.value = [f = v.value, g = w.value](const Point& p) { return f(p) + g(p); };
  out.singularPoints = v.singularPoints;
  out.singularPoints.insert(out.singularPoints.end(), w.singularPoints.begin(), w.singularPoints.end());
  if (v.absProfile && w.absProfile &&
      v.absProfile->center.coords.size() == w.absProfile->center.coords.size() &&
      (v.absProfile->center.coords - w.absProfile->center.coords).norm() == 0.0) {
    out.absProfile = RadialProfile{v.absProfile->center,
                                   [f = v.absProfile->absValue, g = w.absProfile->absValue](double r) {
                                     return f(r) + g(r);
                                   },
                                   v.absProfile->supAbs + w.absProfile->supAbs, false,
                                   mergedBreaks(v.absProfile->breaks, w.absProfile->breaks)};
  }
  out.nonnegative = v.nonnegative && w.nonnegative;
  out.absClass = worse(v.absClass, w.absClass);
  // max(0, -(v + w)) <= max(0, -v) + max(0, -w).
  out.negativePartClass = worse(v.negativeClass(), w.negativeClass());
  const auto nv = negativeMajorant(v), nw = negativeMajorant(w);
  if (nv && nw && (nv->center.coords - nw->center.coords).norm() == 0.0) {
    out.negativeProfile = RadialProfile{nv->center,
                                        [f = nv->absValue, g = nw->absValue](double r) { return f(r) + g(r); },
                                        nv->supAbs + nw->supAbs, false, mergedBreaks(nv->breaks, nw->breaks)};
  }
  out.description = v.description + " + " + w.description;
  return out;
}

// ---------------------------------------------------------- PotentialSpec

PotentialSpec PotentialSpec::zero(int rank) {
  require(rank >= 1 && rank <= kMaxRank, "potential: rank must be in [1, 16]");
  PotentialSpec spec;
  spec.rank_ = rank;
  spec.fn_ = [rank](const Point&) { return CMatrix(CMatrix::Zero(rank, rank)); };
  ScalarPotential v;
  v.value = [](const Point&) { return 0.0; };
  v.nonnegative = true;
  v.description = "zero()";
  spec.scalar_ = v;
  spec.floor_ = [](const Point&) { return 0.0; };
  spec.zero_ = true;
  spec.description_ = "zero()";
  return spec;
}

PotentialSpec PotentialSpec::scalar(ScalarPotential v, int rank) {
  require(rank >= 1 && rank <= kMaxRank, "potential: rank must be in [1, 16]");
  require(static_cast<bool>(v.value), "potential: empty scalar field");
  PotentialSpec spec;
  spec.rank_ = rank;
  spec.fn_ = [f = v.value, rank](const Point& p) {
    return CMatrix(f(p) * CMatrix::Identity(rank, rank));
  };
  spec.floor_ = v.value;
  spec.singular_ = v.singularPoints;
  spec.negativeClass_ = v.negativeClass();
  spec.normProfile_ = v.absProfile;
  spec.hasNegative_ = !v.nonnegative;
  if (spec.hasNegative_) {
    spec.negativeProfile_ = negativeMajorant(v);
    if (spec.negativeProfile_) spec.negativeProfile_->exact = false;
  }
  spec.description_ = v.description;
  spec.scalar_ = std::move(v);
  return spec;
}

PotentialSpec PotentialSpec::combination(std::vector<Term> terms) {
  require(!terms.empty(), "potential: empty combination");
  const auto rank = static_cast<int>(terms.front().coefficient.rows());
  require(rank >= 1 && rank <= kMaxRank, "potential: rank must be in [1, 16]");
  bool allIdentity = true;
  for (const auto& term : terms) {
    require(term.coefficient.rows() == rank && term.coefficient.cols() == rank,
            "potential: all matrices must be " + std::to_string(rank) + "x" + std::to_string(rank));
    require((term.coefficient - term.coefficient.adjoint()).norm() <= 1e-12 * (1.0 + term.coefficient.norm()),
            "potential: matrix coefficients must be Hermitian");
    const cd c0 = term.coefficient(0, 0);
    const CMatrix offIdentity = term.coefficient - c0 * CMatrix::Identity(rank, rank);
    allIdentity = allIdentity && offIdentity.norm() == 0.0 && c0.imag() == 0.0;
  }
  if (allIdentity) {
    ScalarPotential v = scaled(terms[0].factor, terms[0].coefficient(0, 0).real());
    for (std::size_t i = 1; i < terms.size(); ++i)
      v = sum(v, scaled(terms[i].factor, terms[i].coefficient(0, 0).real()));
    return scalar(std::move(v), rank);
  }

  PotentialSpec spec;
  spec.rank_ = rank;
  std::vector<std::pair<std::function<double(const Point&)>, CMatrix>> parts;
  std::string description;
  bool profileOk = true;
  bool negative = false;
  for (const auto& term : terms) {
    parts.emplace_back(term.factor.value, hermitianPart(term.coefficient));
    spec.singular_.insert(spec.singular_.end(), term.factor.singularPoints.begin(),
                          term.factor.singularPoints.end());
    const EigenRange range = hermitianEigenRange(term.coefficient);
    // f P with P >= 0 has negative part f_- P; otherwise |f| controls it.
    spec.negativeClass_ = worse(spec.negativeClass_,
                                range.min >= 0.0 ? term.factor.negativeClass() : term.factor.absClass);
    const bool termNonnegative = (term.factor.nonnegative && range.min >= 0.0) ||
                                 (term.factor.absProfile && term.factor.absProfile->supAbs == 0.0);
    negative = negative || !termNonnegative;
    profileOk = profileOk && term.factor.absProfile.has_value() &&
                (term.factor.absProfile->center.coords - terms[0].factor.absProfile->center.coords).norm() == 0.0;
    if (!description.empty()) description += " + ";
    description += term.factor.description + " * [matrix]";
  }
  spec.fn_ = [parts, rank](const Point& p) {
    CMatrix out = CMatrix::Zero(rank, rank);
    for (const auto& [f, m] : parts) out += f(p) * m;
    return out;
  };
  spec.floor_ = [fn = spec.fn_](const Point& p) { return hermitianEigenRange(fn(p)).min; };
  if (profileOk) {
    std::vector<std::pair<std::function<double(double)>, double>> radial;
    double sup = 0.0;
    std::vector<double> breaks;
    for (const auto& term : terms) {
      const double n = operatorNorm(term.coefficient);
      radial.emplace_back(term.factor.absProfile->absValue, n);
      sup += n * term.factor.absProfile->supAbs;
      breaks = mergedBreaks(breaks, term.factor.absProfile->breaks);
    }
    spec.normProfile_ = RadialProfile{terms[0].factor.absProfile->center,
                                      [radial](double r) {
                                        double s = 0.0;
                                        for (const auto& [g, n] : radial) s += n * g(r);
                                        return s;
                                      },
                                      sup, false, breaks};
  }
  spec.hasNegative_ = negative;
  if (!negative) spec.negativeClass_ = PotentialClass::Bounded;
  if (negative && spec.normProfile_) spec.negativeProfile_ = spec.normProfile_;
  spec.description_ = description;
  return spec;
}

PotentialSpec PotentialSpec::field(int rank, MatrixFn fn, PotentialClass negativeClass, std::string description,
                                   std::vector<Point> singular) {
  require(rank >= 1 && rank <= kMaxRank, "potential: rank must be in [1, 16]");
  require(static_cast<bool>(fn), "potential: empty matrix field");
  PotentialSpec spec;
  spec.rank_ = rank;
  spec.fn_ = [fn = std::move(fn)](const Point& p) { return hermitianPart(fn(p)); };
  spec.floor_ = [f = spec.fn_](const Point& p) { return hermitianEigenRange(f(p)).min; };
  spec.singular_ = std::move(singular);
  spec.negativeClass_ = negativeClass;
  spec.hasNegative_ = true;
  spec.description_ = std::move(description);
  return spec;
}

CMatrix PotentialSpec::value(const Point& p) const {
  CMatrix v = fn_(p);
  for (int i = 0; i < v.rows(); ++i)
    for (int j = 0; j < v.cols(); ++j)
      if (!std::isfinite(v(i, j).real()) || !std::isfinite(v(i, j).imag()))
        throw Error("potential " + description_ + ": non-finite value");
  return v;
}

CMatrix PotentialSpec::positivePart(const Point& p) const {
  CMatrix pos, neg;
  hermitianParts(value(p), pos, neg);
  return pos;
}

CMatrix PotentialSpec::negativePart(const Point& p) const {
  CMatrix pos, neg;
  hermitianParts(value(p), pos, neg);
  return neg;
}

double PotentialSpec::scalarFloor(const Point& p) const { return floor_(p); }

double PotentialSpec::negativeNorm(const Point& p) const {
  if (scalar_) return std::max(0.0, -scalar_->value(p));
  return std::max(0.0, -hermitianEigenRange(value(p)).min);
}

double PotentialSpec::norm(const Point& p) const {
  if (scalar_) return std::abs(scalar_->value(p));
  const EigenRange range = hermitianEigenRange(value(p));
  return std::max(std::abs(range.min), std::abs(range.max));
}

PotentialSpec PotentialSpec::withScalarFloor(FloorFn floor) const {
  require(static_cast<bool>(floor), "potential: empty scalar floor");
  PotentialSpec copy = *this;
  copy.floor_ = std::move(floor);
  return copy;
}

ScalarPotential PotentialSpec::negativeNormPotential() const {
  ScalarPotential v;
  v.value = [self = *this](const Point& p) { return self.negativeNorm(p); };
  v.singularPoints = singular_;
  v.absProfile = negativeProfile_;
  v.nonnegative = true;
  v.absClass = negativeClass_;
  v.description = "negativeNorm(" + description_ + ")";
  if (!hasNegative_) {
    v.value = [](const Point&) { return 0.0; };
    v.singularPoints.clear();
    v.absClass = PotentialClass::Bounded;
  }
  return v;
}

// ------------------------------------------------------------------ parser

namespace {

class PotentialParser {
 public:
  PotentialParser(std::string_view text, const ManifoldModel& model)
      : cursor_(text, "potential"), model_(model) {}

  struct ParsedTerm {
    ScalarPotential factor;
    std::optional<CMatrix> matrix;
  };

  std::vector<ParsedTerm> parse() {
    std::vector<ParsedTerm> terms;
    double sign = 1.0;
    if (cursor_.consume('-')) sign = -1.0;
    for (;;) {
      terms.push_back(term(sign));
      if (cursor_.consume('+')) {
        sign = 1.0;
      } else if (cursor_.consume('-')) {
        sign = -1.0;
      } else {
        break;
      }
    }
    if (!cursor_.atEnd()) cursor_.fail("unexpected trailing text");
    return terms;
  }

 private:
  ParsedTerm term(double sign) {
    double coefficient = sign;
    ParsedTerm out;
    if (cursor_.peekNumber()) {
      const double c = cursor_.number();
      if (cursor_.consume('*')) {
        coefficient *= c;
        out.factor = atom();
      } else {
        out.factor = constantPotential(model_, c);
      }
    } else {
      out.factor = atom();
    }
    if (coefficient != 1.0) out.factor = scaled(out.factor, coefficient);
    if (cursor_.consume('*')) out.matrix = matrix();
    return out;
  }

  ScalarPotential atom() {
    const std::string name = cursor_.identifier();
    cursor_.expect('(');
    std::vector<double> positional;
    std::optional<Point> center;
    if (!cursor_.consume(')')) {
      do {
        if (cursor_.peekIdentifier()) {
          const std::string key = cursor_.identifier();
          if (key != "center") cursor_.fail("unknown argument '" + key + "'");
          cursor_.expect('=');
          const std::vector<double> coords = cursor_.numberList();
          center = model_.makePoint(std::span<const double>(coords.data(), coords.size()));
        } else {
          positional.push_back(cursor_.number());
        }
      } while (cursor_.consume(','));
      cursor_.expect(')');
    }
    auto arity = [&](std::size_t n) {
      if (positional.size() != n)
        cursor_.fail(name + " takes " + std::to_string(n) + " numeric argument(s)");
    };
    if (name == "zero") {
      arity(0);
      return constantPotential(model_, 0.0);
    }
    if (name == "constant") {
      arity(1);
      return constantPotential(model_, positional[0]);
    }
    if (name == "harmonic") {
      arity(1);
      return harmonicPotential(model_, positional[0], center);
    }
    if (name == "coulomb") {
      arity(1);
      return coulombPotential(model_, positional[0], center);
    }
    if (name == "power") {
      arity(2);
      return powerPotential(model_, positional[0], positional[1], center);
    }
    if (name == "well") {
      arity(2);
      return wellPotential(model_, positional[0], positional[1], center);
    }
    cursor_.fail("unknown potential '" + name + "'");
  }

  cd entry() {
    if (cursor_.peekIdentifier()) {
      const std::string name = cursor_.identifier();
      if (name != "c") cursor_.fail("matrix entries are numbers or c(re, im)");
      cursor_.expect('(');
      const double re = cursor_.number();
      cursor_.expect(',');
      const double im = cursor_.number();
      cursor_.expect(')');
      return {re, im};
    }
    return {cursor_.number(), 0.0};
  }

  CMatrix matrix() {
    std::vector<std::vector<cd>> rows;
    cursor_.expect('[');
    do {
      cursor_.expect('[');
      std::vector<cd> row;
      do {
        row.push_back(entry());
      } while (cursor_.consume(','));
      cursor_.expect(']');
      rows.push_back(std::move(row));
    } while (cursor_.consume(','));
    cursor_.expect(']');
    const auto n = rows.size();
    if (n == 0 || n > static_cast<std::size_t>(kMaxRank)) cursor_.fail("matrix size must be in [1, 16]");
    CMatrix m(static_cast<int>(n), static_cast<int>(n));
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != n) cursor_.fail("matrix must be square");
      for (std::size_t j = 0; j < n; ++j) m(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    }
    return m;
  }

  detail::TextCursor cursor_;
  const ManifoldModel& model_;
};

}  // namespace

PotentialSpec parsePotential(std::string_view text, const ManifoldModel& model, int rank) {
  PotentialParser parser(text, model);
  auto terms = parser.parse();
  bool anyMatrix = false;
  for (const auto& t : terms) anyMatrix = anyMatrix || t.matrix.has_value();
  if (!anyMatrix) {
    ScalarPotential v = terms[0].factor;
    for (std::size_t i = 1; i < terms.size(); ++i) v = sum(v, terms[i].factor);
    v.description = std::string(text);
    return PotentialSpec::scalar(std::move(v), rank);
  }
  std::vector<PotentialSpec::Term> combination;
  for (auto& t : terms) {
    if (t.matrix && t.matrix->rows() != rank)
      throw Error("potential: matrix size " + std::to_string(t.matrix->rows()) + " does not match bundle rank " +
                  std::to_string(rank));
    combination.push_back({t.factor, t.matrix ? *t.matrix : CMatrix(CMatrix::Identity(rank, rank))});
  }
  PotentialSpec spec = PotentialSpec::combination(std::move(combination));
  spec.description_ = std::string(text);
  return spec;
}

}  // namespace fiberflow
