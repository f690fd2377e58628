#include "dtmix/series.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtmix {

namespace {

// Below this argument the asymptotic series is not trusted to 1e-13.
constexpr double kAsymptoticMin = 10.0;

// Stirling remainder of lgamma(x) after (x - 1/2) log x - x + log(2 pi)/2.
double stirling_remainder(double x) {
  const double r = 1.0 / x;
  const double r2 = r * r;
  return r * (1.0 / 12.0 +
              r2 * (-1.0 / 360.0 +
                    r2 * (1.0 / 1260.0 +
                          r2 * (-1.0 / 1680.0 + r2 * (1.0 / 1188.0 + r2 * (-691.0 / 360360.0))))));
}

// digamma(x) - log(x) + 1/(2x)
double digamma_remainder(double x) {
  const double r2 = 1.0 / (x * x);
  return r2 * (-1.0 / 12.0 +
               r2 * (1.0 / 120.0 +
                     r2 * (-1.0 / 252.0 +
                           r2 * (1.0 / 240.0 + r2 * (-1.0 / 132.0 + r2 * (691.0 / 32760.0))))));
}

// sum_{xi=0}^{j-1} log(a + xi) = lgamma(a + j) - lgamma(a) without cancellation.
double log_rising_asymptotic(double a, std::int64_t j) {
  const double jd = static_cast<double>(j);
  return (a - 0.5) * std::log1p(jd / a) + jd * std::log(a + jd) - jd +
         stirling_remainder(a + jd) - stirling_remainder(a);
}

double recip_rising_asymptotic(double a, std::int64_t j) {
  const double jd = static_cast<double>(j);
  return std::log1p(jd / a) - 0.5 / (a + jd) + 0.5 / a + digamma_remainder(a + jd) -
         digamma_remainder(a);
}

void check_arguments(double alpha, std::int64_t k) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::domain_error("rising sum requires a positive finite alpha, got " +
                            std::to_string(alpha));
  }
  if (k < 0) {
    throw std::domain_error("rising sum requires k >= 0");
  }
}

[[noreturn]] void capacity_error(double alpha, std::int64_t k, const SeriesTables& tables) {
  throw std::out_of_range("rising sum (alpha=" + std::to_string(alpha) +
                          ", k=" + std::to_string(k) + ") exceeds series table capacity " +
                          std::to_string(tables.capacity()));
}

}  // namespace

SeriesTables::SeriesTables(std::int64_t capacity, int threshold, int order)
    : threshold_(threshold), order_(order), capacity_(capacity) {
  if (capacity < 2) throw std::invalid_argument("series table capacity must be >= 2");
  if (threshold < 1) throw std::invalid_argument("approximation threshold must be >= 1");
  if (order < 1) throw std::invalid_argument("Taylor order must be >= 1");

  const int columns = order + 2;
  table_.setZero(capacity + 1, columns);
  std::vector<long double> acc(columns, 0.0L);
  for (std::int64_t k = 2; k <= capacity; ++k) {
    const long double m = static_cast<long double>(k - 1);
    acc[0] += std::log(m);
    long double inv_pow = 1.0L;
    for (int p = 1; p < columns; ++p) {
      inv_pow /= m;
      acc[p] += inv_pow;
    }
    for (int p = 0; p < columns; ++p) table_(k, p) = static_cast<double>(acc[p]);
  }
}

double log_rising_sum(double alpha, std::int64_t k, const SeriesTables& tables) {
  check_arguments(alpha, k);
  const double threshold = tables.threshold();

  double sum = 0.0;
  std::int64_t xi = 0;
  for (; xi < k && alpha + static_cast<double>(xi) < threshold; ++xi) {
    sum += std::log(alpha + static_cast<double>(xi));
  }
  if (xi == k) return sum;

  const auto nearest = static_cast<std::int64_t>(std::floor(alpha + 0.5));
  const std::int64_t lo = nearest + xi;
  const std::int64_t hi = nearest + k;
  if (hi > tables.capacity()) {
    const double a = alpha + static_cast<double>(xi);
    if (a < kAsymptoticMin) capacity_error(alpha, k, tables);
    return sum + log_rising_asymptotic(a, k - xi);
  }

  // log(m + eps) = log m + sum_p (-1)^{p+1} eps^p / (p m^p)
  const double eps = alpha - static_cast<double>(nearest);
  double tail = tables.S(0, hi) - tables.S(0, lo);
  double eps_pow = 1.0;
  for (int p = 1; p <= tables.order(); ++p) {
    eps_pow *= eps;
    const double coeff = ((p & 1) ? eps_pow : -eps_pow) / p;
    tail += coeff * (tables.S(p, hi) - tables.S(p, lo));
  }
  return sum + tail;
}

double recip_rising_sum(double alpha, std::int64_t k, const SeriesTables& tables) {
  check_arguments(alpha, k);
  const double threshold = tables.threshold();

  double sum = 0.0;
  std::int64_t xi = 0;
  for (; xi < k && alpha + static_cast<double>(xi) < threshold; ++xi) {
    sum += 1.0 / (alpha + static_cast<double>(xi));
  }
  if (xi == k) return sum;

  const auto nearest = static_cast<std::int64_t>(std::floor(alpha + 0.5));
  const std::int64_t lo = nearest + xi;
  const std::int64_t hi = nearest + k;
  if (hi > tables.capacity()) {
    const double a = alpha + static_cast<double>(xi);
    if (a < kAsymptoticMin) capacity_error(alpha, k, tables);
    return sum + recip_rising_asymptotic(a, k - xi);
  }

  // 1/(m + eps) = sum_p (-eps)^p / m^{p+1}
  const double eps = alpha - static_cast<double>(nearest);
  double tail = 0.0;
  double eps_pow = 1.0;
  for (int p = 0; p <= tables.order(); ++p) {
    tail += eps_pow * (tables.S(p + 1, hi) - tables.S(p + 1, lo));
    eps_pow *= -eps;
  }
  return sum + tail;
}

RisingSums rising_sums(double alpha, std::int64_t k, const SeriesTables& tables) {
  check_arguments(alpha, k);
  const double threshold = tables.threshold();

  RisingSums out{0.0, 0.0};
  std::int64_t xi = 0;
  for (; xi < k && alpha + static_cast<double>(xi) < threshold; ++xi) {
    const double term = alpha + static_cast<double>(xi);
    out.log_sum += std::log(term);
    out.recip_sum += 1.0 / term;
  }
  if (xi == k) return out;

  const auto nearest = static_cast<std::int64_t>(std::floor(alpha + 0.5));
  const std::int64_t lo = nearest + xi;
  const std::int64_t hi = nearest + k;
  if (hi > tables.capacity()) {
    const double a = alpha + static_cast<double>(xi);
    if (a < kAsymptoticMin) capacity_error(alpha, k, tables);
    out.log_sum += log_rising_asymptotic(a, k - xi);
    out.recip_sum += recip_rising_asymptotic(a, k - xi);
    return out;
  }

  const double eps = alpha - static_cast<double>(nearest);
  double log_tail = tables.S(0, hi) - tables.S(0, lo);
  double recip_tail = tables.S(1, hi) - tables.S(1, lo);
  double eps_pow = 1.0;
  for (int p = 1; p <= tables.order(); ++p) {
    eps_pow *= eps;
    const double diff = tables.S(p, hi) - tables.S(p, lo);
    log_tail += ((p & 1) ? eps_pow : -eps_pow) / p * diff;
    recip_tail += ((p & 1) ? -eps_pow : eps_pow) * (tables.S(p + 1, hi) - tables.S(p + 1, lo));
  }
  out.log_sum += log_tail;
  out.recip_sum += recip_tail;
  return out;
}

}  // namespace dtmix
