#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace dtmix {

// Precomputed integer-grid sums used to evaluate rising-factorial sums in O(1).
//
//   S_0(k) = sum_{m=1}^{k-1} log m
//   S_p(k) = sum_{m=1}^{k-1} m^{-p},  p >= 1
//
// Tables are stored for k = 1..capacity (S_p(1) = 0, the empty sum) and for
// p = 0..order+1; the extra column is needed by the reciprocal expansion.
class SeriesTables {
 public:
  static constexpr int kDefaultThreshold = 10;
  static constexpr int kDefaultOrder = 8;

  explicit SeriesTables(std::int64_t capacity, int threshold = kDefaultThreshold,
                        int order = kDefaultOrder);

  int threshold() const { return threshold_; }
  int order() const { return order_; }
  std::int64_t capacity() const { return capacity_; }

  double S(int p, std::int64_t k) const { return table_(k, p); }

 private:
  int threshold_;
  int order_;
  std::int64_t capacity_;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> table_;
};

// g(alpha, k) = sum_{xi=0}^{k-1} log(alpha + xi), i.e. the log rising factorial.
//
// Terms with alpha + xi < T are summed directly. The remaining tail is a
// Taylor expansion of log(alpha + xi) around the integer grid [alpha] + xi,
// evaluated with the S-tables. When the grid index runs past the table
// capacity and alpha is large, an asymptotic log-gamma difference is used
// instead. Throws std::domain_error for alpha <= 0 and std::out_of_range when
// neither route can serve the request.
double log_rising_sum(double alpha, std::int64_t k, const SeriesTables& tables);

// h(alpha, k) = sum_{xi=0}^{k-1} 1/(alpha + xi), the alpha-derivative of g.
double recip_rising_sum(double alpha, std::int64_t k, const SeriesTables& tables);

struct RisingSums {
  double log_sum;    // g(alpha, k)
  double recip_sum;  // h(alpha, k)
};

// Both sums in one pass; identical results to the two functions above.
RisingSums rising_sums(double alpha, std::int64_t k, const SeriesTables& tables);

}  // namespace dtmix
