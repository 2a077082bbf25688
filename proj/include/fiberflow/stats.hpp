#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "fiberflow/core.hpp"

namespace fiberflow {

/// A Monte Carlo result. `value` holds the mean (one entry for scalar
/// estimators); `stdError` the per-entry standard error sqrt(E|X - mean|^2 / N).
struct Estimate {
  Eigen::VectorXcd value;
  Eigen::VectorXd stdError;
  std::uint64_t nSamples = 0;
  double h = 0.0;
  std::uint64_t seed = 0;
  double aliveFraction = 1.0;
  /// Samples where the per-path domination bound failed by more than 1e-9.
  std::uint64_t dominationViolations = 0;
  /// Largest (left side - right side) of the per-path domination bound.
  double maxDominationExcess = -std::numeric_limits<double>::infinity();

  [[nodiscard]] cd scalar() const { return value[0]; }
  [[nodiscard]] double real() const { return value[0].real(); }
  [[nodiscard]] double error() const { return stdError[0]; }
};

/// Monte Carlo budget: step size, path count, seed and worker threads.
/// Path i always uses the random stream {seed, i}.
struct MonteCarloSpec {
  double h = 1e-3;
  std::uint64_t n = 10000;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Streaming mean/variance of complex vectors (Welford, merged with Chan's
/// formula). Merge order is fixed by the caller, so results are reproducible.
class SampleAccumulator {
 public:
  SampleAccumulator() = default;
  explicit SampleAccumulator(int width)
      : mean_(Eigen::VectorXcd::Zero(width)), m2_(Eigen::VectorXd::Zero(width)) {}

  template <class Vec>
  void add(const Vec& x, bool alive = true) {
    ++n_;
    if (alive) ++alive_;
    const double inv = 1.0 / static_cast<double>(n_);
    for (Eigen::Index i = 0; i < mean_.size(); ++i) {
      const cd delta = x[i] - mean_[i];
      mean_[i] += delta * inv;
      m2_[i] += std::real(std::conj(delta) * (x[i] - mean_[i]));
    }
  }
  void addScalar(cd x, bool alive = true) {
    Eigen::Matrix<cd, 1, 1> v;
    v[0] = x;
    add(v, alive);
  }
  void noteDomination(double excess) {
    if (excess > maxExcess_) maxExcess_ = excess;
    if (excess > 1e-9) ++violations_;
  }

  void merge(const SampleAccumulator& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_);
    const double n = na + nb;
    for (Eigen::Index i = 0; i < mean_.size(); ++i) {
      const cd delta = other.mean_[i] - mean_[i];
      mean_[i] += delta * (nb / n);
      m2_[i] += other.m2_[i] + std::norm(delta) * na * nb / n;
    }
    n_ += other.n_;
    alive_ += other.alive_;
    violations_ += other.violations_;
    if (other.maxExcess_ > maxExcess_) maxExcess_ = other.maxExcess_;
  }

  [[nodiscard]] std::uint64_t count() const { return n_; }
  [[nodiscard]] const Eigen::VectorXcd& mean() const { return mean_; }

  [[nodiscard]] Estimate finish(double h, std::uint64_t seed) const {
    Estimate e;
    e.value = mean_;
    e.stdError = Eigen::VectorXd::Zero(mean_.size());
    if (n_ > 1) {
      const double n = static_cast<double>(n_);
      for (Eigen::Index i = 0; i < mean_.size(); ++i)
        e.stdError[i] = std::sqrt(std::max(0.0, m2_[i]) / (n - 1.0) / n);
    }
    e.nSamples = n_;
    e.h = h;
    e.seed = seed;
    e.aliveFraction = n_ ? static_cast<double>(alive_) / static_cast<double>(n_) : 0.0;
    e.dominationViolations = violations_;
    e.maxDominationExcess = maxExcess_;
    return e;
  }

 private:
  Eigen::VectorXcd mean_;
  Eigen::VectorXd m2_;
  std::uint64_t n_ = 0;
  std::uint64_t alive_ = 0;
  std::uint64_t violations_ = 0;
  double maxExcess_ = -std::numeric_limits<double>::infinity();
};

/// Number of paths per work unit. Fixed, so chunk boundaries (and therefore
/// floating-point reduction order) never depend on the worker count.
inline constexpr std::uint64_t kChunkSize = 512;

/// Runs fn(begin, end) -> Acc over fixed chunks of [0, n) on `workers`
/// threads and merges the partial results in chunk order.
template <class Acc, class ChunkFn>
Acc reduceChunks(std::uint64_t n, int workers, ChunkFn&& fn) {
  const std::uint64_t chunks = (n + kChunkSize - 1) / kChunkSize;
  std::vector<Acc> partial(chunks);
  auto runChunk = [&](std::uint64_t c) {
    const std::uint64_t begin = c * kChunkSize;
    const std::uint64_t end = std::min(n, begin + kChunkSize);
    partial[c] = fn(begin, end);
  };
  const auto threads = static_cast<std::uint64_t>(std::max(1, workers));
  if (threads == 1 || chunks <= 1) {
    for (std::uint64_t c = 0; c < chunks; ++c) runChunk(c);
  } else {
    std::atomic<std::uint64_t> next{0};
    std::exception_ptr failure;
    std::mutex failureMutex;
    std::vector<std::thread> pool;
    for (std::uint64_t w = 0; w < std::min(threads, chunks); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::uint64_t c = next.fetch_add(1);
          if (c >= chunks) return;
          try {
            runChunk(c);
          } catch (...) {
            std::lock_guard lock(failureMutex);
            if (!failure) failure = std::current_exception();
            next = chunks;
            return;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  Acc total = chunks ? partial[0] : Acc{};
  for (std::uint64_t c = 1; c < chunks; ++c) total.merge(partial[c]);
  return total;
}

}  // namespace fiberflow
