#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace dtmix {

// Tolerances and geometry for the one-dimensional random-effect integrals.
//
// Integrals over u ~ N(0, sigma^2) are taken in the standardized variable
// v = u / sigma. The integrand is centered at its mode and split into a core
// of +-core_half_width posterior scales plus tails reaching +-prior_half_width
// (Gaussian tail mass beyond 8 is below 1e-15).
struct QuadratureSpec {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  int max_subdivisions = 400;
  double prior_half_width = 8.0;
  double core_half_width = 10.0;

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) {
      throw std::invalid_argument("quadrature tolerances must be positive");
    }
    if (max_subdivisions < 1) throw std::invalid_argument("max_subdivisions must be >= 1");
  }
};

class QuadratureError : public std::runtime_error {
 public:
  QuadratureError(double requested, double achieved)
      : std::runtime_error("quadrature did not converge: requested relative tolerance " +
                           std::to_string(requested) + ", achieved " + std::to_string(achieved)),
        requested_(requested),
        achieved_(achieved) {}

  double requested() const { return requested_; }
  double achieved() const { return achieved_; }

 private:
  double requested_;
  double achieved_;
};

template <int N>
struct QuadratureResult {
  Eigen::Matrix<double, N, 1> value;
  Eigen::Matrix<double, N, 1> error;
  // Achieved error relative to the per-component tolerance scale (<= 1 when converged).
  double relative_error = 0.0;
  int evaluations = 0;
  bool converged = false;
};

namespace detail {

// 21-point Kronrod extension of the 10-point Gauss rule on [-1, 1].
struct KronrodRule21 {
  std::array<double, 21> nodes{};
  std::array<double, 21> kronrod{};
  std::array<double, 21> gauss{};

  KronrodRule21() {
    using GK = boost::math::quadrature::gauss_kronrod<double, 21>;
    using G = boost::math::quadrature::gauss<double, 10>;
    const auto& x = GK::abscissa();
    const auto& wk = GK::weights();
    const auto& wg = G::weights();
    // Index 0 is the center; positive abscissae at i, negative mirror at i + 10.
    nodes[0] = x[0];
    kronrod[0] = wk[0];
    gauss[0] = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
      const double g = (i % 2 == 1) ? wg[i / 2] : 0.0;
      nodes[i] = x[i];
      nodes[i + 10] = -x[i];
      kronrod[i] = kronrod[i + 10] = wk[i];
      gauss[i] = gauss[i + 10] = g;
    }
  }

  static const KronrodRule21& instance() {
    static const KronrodRule21 rule;
    return rule;
  }
};

template <int N>
struct Panel {
  double a;
  double b;
  Eigen::Matrix<double, N, 1> value;
  Eigen::Matrix<double, N, 1> error;
  Eigen::Matrix<double, N, 1> l1;
};

template <int N, typename F>
Panel<N> kronrod_panel(F& f, double a, double b) {
  using Vec = Eigen::Matrix<double, N, 1>;
  const auto& rule = KronrodRule21::instance();
  const double half = 0.5 * (b - a);
  const double center = 0.5 * (a + b);

  std::array<Vec, 21> fx;
  Vec k = Vec::Zero();
  Vec g = Vec::Zero();
  Vec l1 = Vec::Zero();
  for (std::size_t i = 0; i < 21; ++i) {
    fx[i] = f(center + half * rule.nodes[i]);
    k += rule.kronrod[i] * fx[i];
    g += rule.gauss[i] * fx[i];
    l1 += rule.kronrod[i] * fx[i].cwiseAbs();
  }
  const Vec mean = 0.5 * k;
  Vec asc = Vec::Zero();
  for (std::size_t i = 0; i < 21; ++i) asc += rule.kronrod[i] * (fx[i] - mean).cwiseAbs();

  Panel<N> p{a, b, k * half, Vec::Zero(), l1 * std::abs(half)};
  asc *= std::abs(half);
  const Vec diff = ((k - g) * half).cwiseAbs();
  for (int c = 0; c < p.value.size(); ++c) {
    double err = diff[c];
    if (asc[c] > 0.0 && err > 0.0) err = asc[c] * std::min(1.0, std::pow(200.0 * err / asc[c], 1.5));
    p.error[c] = std::max(err, 50.0 * 2.220446049250313e-16 * p.l1[c]);
  }
  return p;
}

}  // namespace detail

// Globally adaptive vector-valued Gauss-Kronrod integration over the
// partition given by `breakpoints` (ascending, at least two entries).
//
// Component c is accepted when its summed error is below
// max(abs_tol, rel_tol * integral of |f_c|); the panel with the worst ratio
// is bisected until every component passes or max_subdivisions is reached.
template <int N, typename F>
QuadratureResult<N> integrate_adaptive(F&& f, std::span<const double> breakpoints,
                                       const QuadratureSpec& spec) {
  using Vec = Eigen::Matrix<double, N, 1>;
  if (breakpoints.size() < 2) throw std::invalid_argument("need at least two breakpoints");

  std::vector<detail::Panel<N>> panels;
  panels.reserve(breakpoints.size() + 16);
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i) {
    if (breakpoints[i + 1] > breakpoints[i]) {
      panels.push_back(detail::kronrod_panel<N>(f, breakpoints[i], breakpoints[i + 1]));
    }
  }
  if (panels.empty()) throw std::invalid_argument("degenerate integration range");

  QuadratureResult<N> result;
  int subdivisions = 0;
  while (true) {
    Vec value = Vec::Zero();
    Vec error = Vec::Zero();
    Vec l1 = Vec::Zero();
    for (const auto& p : panels) {
      value += p.value;
      error += p.error;
      l1 += p.l1;
    }
    Vec tol = (spec.rel_tol * l1).cwiseMax(spec.abs_tol);
    const double worst = error.cwiseQuotient(tol).maxCoeff();
    result.value = value;
    result.error = error;
    result.relative_error = (error.cwiseQuotient(l1.cwiseMax(spec.abs_tol))).maxCoeff();
    if (worst <= 1.0) {
      result.converged = true;
      break;
    }
    if (subdivisions >= spec.max_subdivisions) break;

    std::size_t pick = 0;
    double pick_ratio = -1.0;
    for (std::size_t i = 0; i < panels.size(); ++i) {
      const double r = panels[i].error.cwiseQuotient(tol).maxCoeff();
      if (r > pick_ratio) {
        pick_ratio = r;
        pick = i;
      }
    }
    const double a = panels[pick].a;
    const double b = panels[pick].b;
    const double mid = 0.5 * (a + b);
    if (!(mid > a && mid < b)) break;  // interval exhausted at machine precision
    panels[pick] = detail::kronrod_panel<N>(f, a, mid);
    panels.push_back(detail::kronrod_panel<N>(f, mid, b));
    ++subdivisions;
  }
  result.evaluations = static_cast<int>(21 * (panels.size()));
  return result;
}

}  // namespace dtmix
