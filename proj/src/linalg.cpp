#include "fiberflow/linalg.hpp"

#include <algorithm>
#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

namespace fiberflow {
namespace {

using RVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxRank, 1>;

template <class Map>
CMatrix spectralMap(const CMatrix& w, Map&& map) {
  const Eigen::SelfAdjointEigenSolver<CMatrix> solver(w);
  require(solver.info() == Eigen::Success, "Hermitian eigensolver failed");
  const auto& vecs = solver.eigenvectors();
  RVector mapped(w.rows());
  for (int i = 0; i < w.rows(); ++i) mapped[i] = map(solver.eigenvalues()[i]);
  return vecs * mapped.asDiagonal() * vecs.adjoint();
}

}  // namespace

CMatrix hermitianPart(const CMatrix& w) { return 0.5 * (w + w.adjoint()); }

CMatrix hermitianExp(const CMatrix& w, double s) {
  const int d = static_cast<int>(w.rows());
  if (d == 1) {
    CMatrix out(1, 1);
    out(0, 0) = std::exp(s * w(0, 0).real());
    return out;
  }
  if (d == 2) {
    // W = a I + (b . sigma): exp(sW) = e^{sa} (cosh(s r) I + sinh(s r)/r (W - a I)).
    const double a = 0.5 * (w(0, 0).real() + w(1, 1).real());
    const double dz = 0.5 * (w(0, 0).real() - w(1, 1).real());
    const cd off = 0.5 * (w(0, 1) + std::conj(w(1, 0)));
    const double r = std::sqrt(dz * dz + std::norm(off));
    const double sr = s * r;
    const double ch = std::cosh(sr);
    const double shc = r > 0.0 ? std::sinh(sr) / r : s;
    const double scale = std::exp(s * a);
    CMatrix out(2, 2);
    out(0, 0) = scale * (ch + shc * dz);
    out(1, 1) = scale * (ch - shc * dz);
    out(0, 1) = scale * shc * off;
    out(1, 0) = scale * shc * std::conj(off);
    return out;
  }
  return spectralMap(w, [s](double lambda) { return std::exp(s * lambda); });
}

EigenRange hermitianEigenRange(const CMatrix& w) {
  const int d = static_cast<int>(w.rows());
  if (d == 1) return {w(0, 0).real(), w(0, 0).real()};
  if (d == 2) {
    const double a = 0.5 * (w(0, 0).real() + w(1, 1).real());
    const double dz = 0.5 * (w(0, 0).real() - w(1, 1).real());
    const double r = std::sqrt(dz * dz + std::norm(0.5 * (w(0, 1) + std::conj(w(1, 0)))));
    return {a - r, a + r};
  }
  const Eigen::SelfAdjointEigenSolver<CMatrix> solver(w, Eigen::EigenvaluesOnly);
  require(solver.info() == Eigen::Success, "Hermitian eigensolver failed");
  return {solver.eigenvalues()[0], solver.eigenvalues()[d - 1]};
}

CMatrix clampEigenvalues(const CMatrix& w, double lo, double hi) {
  const EigenRange range = hermitianEigenRange(w);
  if (range.min >= lo && range.max <= hi) return w;
  if (w.rows() == 1) {
    CMatrix out(1, 1);
    out(0, 0) = std::clamp(w(0, 0).real(), lo, hi);
    return out;
  }
  return spectralMap(w, [lo, hi](double lambda) { return std::clamp(lambda, lo, hi); });
}

void hermitianParts(const CMatrix& w, CMatrix& positive, CMatrix& negative) {
  const EigenRange range = hermitianEigenRange(w);
  const auto d = w.rows();
  if (range.min >= 0.0) {
    positive = w;
    negative = CMatrix::Zero(d, d);
    return;
  }
  if (range.max <= 0.0) {
    positive = CMatrix::Zero(d, d);
    negative = -w;
    return;
  }
  positive = spectralMap(w, [](double lambda) { return std::max(lambda, 0.0); });
  negative = positive - w;
}

double operatorNorm(const CMatrix& a) {
  if (a.rows() == 1 && a.cols() == 1) return std::abs(a(0, 0));
  const Eigen::JacobiSVD<CMatrix> svd(a);
  return svd.singularValues()[0];
}

CMatrix matrixExp(const CMatrix& a) {
  const Eigen::MatrixXcd dense = a;
  return CMatrix(dense.exp());
}

double unitarityDefect(const CMatrix& a) {
  const CMatrix defect = a.adjoint() * a - CMatrix::Identity(a.rows(), a.cols());
  return operatorNorm(defect);
}

}  // namespace fiberflow
