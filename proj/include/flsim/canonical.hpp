#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <vector>

namespace flsim {

/// Lexicographic order on vectors of equal length.
inline bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (long i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return true;
    if (a[i] > b[i]) return false;
  }
  return false;
}

/// Indices 0..n-1 ordered so that key(i) is lexicographically nondecreasing.
/// Used to fix reduction order independently of caller-supplied ordering, so
/// permuting inputs permutes outputs bit-exactly.
template <typename KeyFn>
std::vector<std::size_t> canonical_order(std::size_t n, const KeyFn& key) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lex_less(key(a), key(b));
  });
  return order;
}

/// Sum in ascending value order; the result does not depend on input order.
inline double sorted_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace flsim
