// Limited-memory BFGS ascent with a strong-Wolfe line search, plus a
// projected-gradient variant for box constraints.  Written against the usual
// two-loop recursion; no external solver dependency.
#pragma once

#include "emgpr/common.hpp"

#include <cmath>
#include <deque>
#include <functional>
#include <limits>

namespace emgpr {

enum class StopReason {
  ConvergedGradient,   // (projected) gradient inf-norm below grad_tol
  ConvergedObjective,  // relative objective change below ftol_rel
  MaxIterations,
  LineSearchFailure,   // no acceptable step found; best iterate returned
};

inline const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::ConvergedGradient: return "converged_gradient";
    case StopReason::ConvergedObjective: return "converged_objective";
    case StopReason::MaxIterations: return "max_iterations";
    case StopReason::LineSearchFailure: return "line_search_failure";
  }
  return "unknown";
}

struct OptimizerConfig {
  int max_iterations = 120;
  double grad_tol = 1e-5;
  double ftol_rel = 1e-9;
  int memory = 10;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search_steps = 40;
};

struct OptimizeResult {
  Vector x;
  double value = 0.0;  // objective value at x (maximization convention)
  int iterations = 0;
  int evaluations = 0;
  StopReason reason = StopReason::MaxIterations;
};

/// Objective contract: return the value at x and fill `grad` with the
/// gradient (same dimension as x).  Non-finite values are allowed away from
/// the initial point; the line search backs off from them.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

namespace detail {

struct LbfgsMemory {
  std::deque<Vector> s, y;
  std::deque<double> rho;
  int capacity = 10;

  void push(const Vector& si, const Vector& yi) {
    const double sy = si.dot(yi);
    if (!(sy > 1e-10 * si.norm() * yi.norm())) return;  // skip non-curvature pairs
    s.push_back(si);
    y.push_back(yi);
    rho.push_back(1.0 / sy);
    if (static_cast<int>(s.size()) > capacity) {
      s.pop_front();
      y.pop_front();
      rho.pop_front();
    }
  }

  void clear() {
    s.clear();
    y.clear();
    rho.clear();
  }

  /// Two-loop recursion: returns H * grad (approximate inverse Hessian times
  /// gradient) for the minimization problem.
  Vector apply(const Vector& grad) const {
    Vector q = grad;
    const int m = static_cast<int>(s.size());
    std::vector<double> alpha(static_cast<std::size_t>(m));
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho[i] * s[i].dot(q);
      q -= alpha[i] * y[i];
    }
    if (m > 0) {
      const double gamma = s[m - 1].dot(y[m - 1]) / y[m - 1].squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double beta = rho[i] * y[i].dot(q);
      q += (alpha[i] - beta) * s[i];
    }
    return q;
  }
};

inline Vector clamp_to_box(Vector x, const Vector& lower, const Vector& upper) {
  if (lower.size() > 0) x = x.cwiseMax(lower);
  if (upper.size() > 0) x = x.cwiseMin(upper);
  return x;
}

}  // namespace detail

/// Maximizes `f` starting from `x0`.  Empty `lower`/`upper` mean the problem
/// is unconstrained (the default; positive hyperparameters are normally
/// handled by optimizing in log space instead of with bounds).  With bounds
/// present a projected backtracking scheme replaces the Wolfe search and
/// every iterate satisfies the box exactly.
///
/// Guarantees: the returned value is never below f(x0); throws
/// numerical_error if f is non-finite at the initial point.
inline OptimizeResult maximize(const Objective& f, const Vector& x0,
                               const OptimizerConfig& config = {},
                               const Vector& lower = Vector(), const Vector& upper = Vector()) {
  const bool bounded = lower.size() > 0 || upper.size() > 0;
  if (lower.size() > 0 && lower.size() != x0.size())
    throw std::invalid_argument("maximize: lower bound dimension mismatch");
  if (upper.size() > 0 && upper.size() != x0.size())
    throw std::invalid_argument("maximize: upper bound dimension mismatch");

  OptimizeResult result;
  // Internally minimize h(x) = -f(x).
  int evaluations = 0;
  auto eval = [&](const Vector& x, Vector& grad) {
    ++evaluations;
    const double value = f(x, grad);
    grad = -grad;
    return -value;
  };

  Vector x = bounded ? detail::clamp_to_box(x0, lower, upper) : x0;
  Vector grad(x.size());
  double h = eval(x, grad);
  if (!std::isfinite(h) || !grad.allFinite())
    throw numerical_error("maximize: objective or gradient not finite at the initial point");

  detail::LbfgsMemory memory;
  memory.capacity = config.memory;
  result.reason = StopReason::MaxIterations;

  auto stationarity = [&](const Vector& xi, const Vector& gi) {
    if (!bounded) return gi.lpNorm<Eigen::Infinity>();
    // Norm of the projected gradient step P(x - g) - x.
    return (detail::clamp_to_box(xi - gi, lower, upper) - xi).lpNorm<Eigen::Infinity>();
  };

  int completed = 0;
  while (completed < config.max_iterations) {
    if (stationarity(x, grad) <= config.grad_tol) {
      result.reason = StopReason::ConvergedGradient;
      break;
    }

    Vector direction = -memory.apply(grad);
    double dg = direction.dot(grad);
    if (!(dg < 0.0) || !direction.allFinite()) {
      memory.clear();
      direction = -grad;
      dg = direction.dot(grad);
    }

    // --- line search ---
    double step = 1.0;
    if (memory.s.empty()) {
      // No curvature information yet: keep the first trial step modest.
      const double gnorm = grad.lpNorm<Eigen::Infinity>();
      step = std::min(1.0, 1.0 / std::max(gnorm, 1e-12));
    }

    Vector x_new, grad_new(x.size());
    double h_new = std::numeric_limits<double>::quiet_NaN();
    bool accepted = false;

    if (bounded) {
      // Projected backtracking with an Armijo condition on the actual
      // (projected) displacement.
      for (int ls = 0; ls < config.max_line_search_steps; ++ls, step *= 0.5) {
        Vector candidate = detail::clamp_to_box(x + step * direction, lower, upper);
        Vector displacement = candidate - x;
        if (displacement.lpNorm<Eigen::Infinity>() == 0.0) break;
        const double trial = eval(candidate, grad_new);
        if (!std::isfinite(trial) || !grad_new.allFinite()) continue;
        if (trial <= h + config.wolfe_c1 * grad.dot(displacement)) {
          x_new = std::move(candidate);
          h_new = trial;
          accepted = true;
          break;
        }
      }
    } else {
      // Strong Wolfe bracketing + bisection zoom (Nocedal & Wright alg. 3.5/3.6).
      const double phi0 = h;
      const double dphi0 = dg;
      double t_prev = 0.0, phi_prev = phi0, dphi_prev = dphi0;
      double t = step;
      double lo = -1.0, hi = -1.0, phi_lo = 0.0;
      bool zooming = false;
      for (int ls = 0; ls < config.max_line_search_steps; ++ls) {
        if (!zooming) {
          Vector candidate = x + t * direction;
          const double phi_t = eval(candidate, grad_new);
          const bool bad = !std::isfinite(phi_t) || !grad_new.allFinite();
          if (bad || phi_t > phi0 + config.wolfe_c1 * t * dphi0 ||
              (ls > 0 && phi_t >= phi_prev)) {
            lo = t_prev;
            phi_lo = phi_prev;
            hi = t;
            zooming = true;
            continue;
          }
          const double dphi_t = grad_new.dot(direction);
          if (std::abs(dphi_t) <= -config.wolfe_c2 * dphi0) {
            x_new = std::move(candidate);
            h_new = phi_t;
            accepted = true;
            break;
          }
          if (dphi_t >= 0.0) {
            lo = t;
            phi_lo = phi_t;
            hi = t_prev;
            zooming = true;
            continue;
          }
          t_prev = t;
          phi_prev = phi_t;
          dphi_prev = dphi_t;
          t *= 2.0;
        } else {
          const double t_mid = 0.5 * (lo + hi);
          Vector candidate = x + t_mid * direction;
          const double phi_t = eval(candidate, grad_new);
          const bool bad = !std::isfinite(phi_t) || !grad_new.allFinite();
          if (bad || phi_t > phi0 + config.wolfe_c1 * t_mid * dphi0 || phi_t >= phi_lo) {
            hi = t_mid;
          } else {
            const double dphi_t = grad_new.dot(direction);
            if (std::abs(dphi_t) <= -config.wolfe_c2 * dphi0) {
              x_new = std::move(candidate);
              h_new = phi_t;
              accepted = true;
              break;
            }
            if (dphi_t * (hi - lo) >= 0.0) hi = lo;
            lo = t_mid;
            phi_lo = phi_t;
          }
          if (std::abs(hi - lo) <= 1e-14 * std::max(1.0, std::abs(lo))) {
            if (phi_lo < phi0 && lo > 0.0) {
              Vector best = x + lo * direction;
              const double phi_best = eval(best, grad_new);
              if (std::isfinite(phi_best) && grad_new.allFinite() && phi_best < phi0) {
                x_new = std::move(best);
                h_new = phi_best;
                accepted = true;
              }
            }
            break;
          }
        }
      }
      (void)dphi_prev;
    }

    if (!accepted) {
      result.reason = StopReason::LineSearchFailure;
      break;
    }

    memory.push(x_new - x, grad_new - grad);
    const double decrease = h - h_new;
    x = std::move(x_new);
    grad = std::move(grad_new);
    h = h_new;
    ++completed;
    if (decrease <= config.ftol_rel * std::max(1.0, std::abs(h))) {
      result.reason = StopReason::ConvergedObjective;
      break;
    }
  }

  result.x = std::move(x);
  result.value = -h;
  result.iterations = completed;
  result.evaluations = evaluations;
  return result;
}

}  // namespace emgpr
