#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace dtmix {

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 500;
  double rel_tol = 1e-9;     // relative objective change
  double pg_tol = 1e-5;      // infinity norm of the projected gradient
  double max_step = 4.0;     // largest coordinate move per iteration
  int max_backtracks = 40;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

// Minimizes f over the box [lower, upper] with a projected limited-memory
// BFGS iteration. `fg(x, g)` returns f(x) and fills g. Away from x0 it may
// return a non-finite value or throw, which the line search treats as
// +infinity; a failure at x0 itself propagates.
template <typename F>
LbfgsResult minimize_box(F&& fg, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                         const Eigen::VectorXd& upper, const LbfgsOptions& opt = {}) {
  using Eigen::VectorXd;
  const Eigen::Index n = x0.size();
  auto project = [&](const VectorXd& x) { return x.cwiseMax(lower).cwiseMin(upper).eval(); };
  auto evaluate = [&](const VectorXd& x, VectorXd& g, int& count) {
    ++count;
    try {
      const double v = fg(x, g);
      return (std::isfinite(v) && g.allFinite()) ? v : std::numeric_limits<double>::infinity();
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  LbfgsResult res;
  res.x = project(x0);
  res.gradient = VectorXd::Zero(n);
  res.value = fg(res.x, res.gradient);
  ++res.evaluations;
  if (!std::isfinite(res.value) || !res.gradient.allFinite()) return res;

  std::deque<VectorXd> s_hist;
  std::deque<VectorXd> y_hist;
  auto active = [&](const VectorXd& x, const VectorXd& g) {
    Eigen::Array<bool, Eigen::Dynamic, 1> a(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      a[i] = (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0);
    }
    return a;
  };

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    const auto fixed = active(res.x, res.gradient);
    VectorXd pg = res.gradient;
    for (Eigen::Index i = 0; i < n; ++i)
      if (fixed[i]) pg[i] = 0.0;
    if (pg.lpNorm<Eigen::Infinity>() <= opt.pg_tol) {
      res.converged = true;
      break;
    }

    // Two-loop recursion on the free coordinates.
    VectorXd d = -pg;
    const std::size_t m = s_hist.size();
    std::vector<double> alpha(m);
    for (std::size_t k = m; k-- > 0;) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      alpha[k] = rho * s_hist[k].dot(d);
      d -= alpha[k] * y_hist[k];
    }
    if (m > 0) d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < m; ++k) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      const double beta = rho * y_hist[k].dot(d);
      d += (alpha[k] - beta) * s_hist[k];
    }
    for (Eigen::Index i = 0; i < n; ++i)
      if (fixed[i]) d[i] = 0.0;
    if (!(pg.dot(d) < 0.0)) {
      d = -pg;
      s_hist.clear();
      y_hist.clear();
    }
    if (s_hist.empty()) d /= std::max(1.0, d.lpNorm<Eigen::Infinity>());
    const double longest = d.lpNorm<Eigen::Infinity>();
    if (longest > opt.max_step) d *= opt.max_step / longest;

    double t = 1.0;
    VectorXd x_new;
    VectorXd g_new(n);
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int b = 0; b < opt.max_backtracks; ++b, t *= 0.5) {
      x_new = project(res.x + t * d);
      const VectorXd step = x_new - res.x;
      if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
      f_new = evaluate(x_new, g_new, res.evaluations);
      if (f_new <= res.value + 1e-4 * res.gradient.dot(step)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!s_hist.empty()) {
        s_hist.clear();
        y_hist.clear();
        continue;
      }
      break;
    }

    const VectorXd s = x_new - res.x;
    const VectorXd y = g_new - res.gradient;
    if (s.dot(y) > 1e-10 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    const double change = std::abs(res.value - f_new);
    const double scale = std::max({1.0, std::abs(res.value), std::abs(f_new)});
    res.x = x_new;
    res.value = f_new;
    res.gradient = g_new;
    if (change <= opt.rel_tol * scale) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }
  return res;
}

}  // namespace dtmix
