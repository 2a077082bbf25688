#pragma once

#include "fiberflow/core.hpp"

namespace fiberflow {

/// Symmetrized copy (W + W^*)/2, used to scrub rounding asymmetry.
CMatrix hermitianPart(const CMatrix& w);

/// exp(s W) for Hermitian W, via eigendecomposition (closed form for d <= 2).
CMatrix hermitianExp(const CMatrix& w, double s);

/// Smallest and largest eigenvalue of a Hermitian matrix.
struct EigenRange {
  double min = 0.0;
  double max = 0.0;
};
EigenRange hermitianEigenRange(const CMatrix& w);

/// Replaces each eigenvalue lambda of Hermitian W by clamp(lambda, lo, hi).
CMatrix clampEigenvalues(const CMatrix& w, double lo, double hi);

/// Positive and negative parts W = P - N with P, N >= 0 and PN = 0.
void hermitianParts(const CMatrix& w, CMatrix& positive, CMatrix& negative);

/// Spectral (largest singular value) norm.
double operatorNorm(const CMatrix& a);

/// exp(A) for a general square matrix (Pade scaling and squaring).
CMatrix matrixExp(const CMatrix& a);

/// ||A^* A - I|| in the spectral norm.
double unitarityDefect(const CMatrix& a);

}  // namespace fiberflow
