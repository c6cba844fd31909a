// Shared numeric utilities: warning hook, robust Cholesky, seed derivation,
// and a small deterministic thread pool helper.
#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace emgpr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thrown when a linear-algebra step fails in a way that retrying with a
/// different configuration might fix (e.g. an indefinite covariance matrix).
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// Non-fatal diagnostics (clamped variances, suspicious preprocessing, ...)
/// go through this hook so library code never prints unconditionally.
using WarningHandler = void (*)(const std::string&);

inline void default_warning_handler(const std::string& message) {
  std::cerr << "[emgpr] warning: " << message << '\n';
}

inline std::atomic<WarningHandler>& warning_handler_slot() {
  static std::atomic<WarningHandler> handler{&default_warning_handler};
  return handler;
}

/// Replaces the process-wide warning handler and returns the previous one.
/// Passing nullptr silences warnings.
inline WarningHandler set_warning_handler(WarningHandler handler) {
  return warning_handler_slot().exchange(handler);
}

inline void warn(const std::string& message) {
  if (WarningHandler handler = warning_handler_slot().load()) handler(message);
}

/// Derives an independent stream seed from a base seed.  Used so that every
/// parallel unit (restart, ensemble member, ...) owns its own generator and
/// results do not depend on scheduling.  SplitMix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d4a4afde82de95ull;
  return z ^ (z >> 31);
}

/// Cholesky factorization with an escalating jitter fallback.  The exact
/// matrix is attempted first; on failure successively larger multiples of the
/// identity are added (base_jitter, base_jitter*100, ...).  Jitter is a
/// factorization aid only -- it is never folded back into model parameters.
inline Eigen::LLT<Matrix> robust_llt(const Matrix& m, double base_jitter,
                                     const std::string& context) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  double jitter = base_jitter;
  for (int attempt = 0; attempt < 3; ++attempt, jitter *= 100.0) {
    Matrix jittered = m;
    jittered.diagonal().array() += jitter;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw numerical_error(context + ": Cholesky factorization failed even with jitter " +
                        std::to_string(jitter / 100.0));
}

/// Runs body(i) for i in [0, count) on at most max_threads threads.
/// max_threads == 0 uses the hardware concurrency.  Exceptions are captured
/// per index and the one with the smallest index is rethrown, so failure
/// behaviour does not depend on scheduling.
inline void parallel_for(int count, unsigned max_threads,
                         const std::function<void(int)>& body) {
  if (count <= 0) return;
  unsigned threads = max_threads == 0 ? std::thread::hardware_concurrency() : max_threads;
  if (threads == 0) threads = 1;
  threads = std::min<unsigned>(threads, static_cast<unsigned>(count));

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          try {
            body(i);
          } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
          }
        }
      });
    }
    for (std::thread& worker : pool) worker.join();
  }
  for (const std::exception_ptr& error : errors) {
    if (error) std::rethrow_exception(error);
  }
}

/// Population standard deviation (divides by n, not n-1); the convention used
/// for both preprocessing statistics and report aggregates.
inline double population_stddev(const Vector& values) {
  if (values.size() == 0) return 0.0;
  const double mean = values.mean();
  return std::sqrt((values.array() - mean).square().mean());
}

}  // namespace emgpr
