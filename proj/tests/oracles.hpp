#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fanet/tensor.hpp"

namespace fanet::test {

inline double pairwise_auc(const std::vector<double>& s, const std::vector<std::size_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

// Covariance, then power iteration with deflation, written without Eigen.
struct PcaOracle {
  std::vector<std::vector<double>> vectors;
  std::vector<double> values;
};

inline PcaOracle power_iteration_pca(const Tensor& x, std::size_t dims) {
  const std::size_t n = x.dim(0), m = x.dim(1);
  std::vector<double> mean(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) mean[j] += x.at(i * m + j) / double(n);
  std::vector<double> cov(m * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b)
        cov[a * m + b] += (x.at(i * m + a) - mean[a]) * (x.at(i * m + b) - mean[b]) / double(n - 1);
  PcaOracle o;
  for (std::size_t d = 0; d < dims; ++d) {
    std::vector<double> v(m, 1.0), next(m);
    v[d % m] += 1.0;
    double lambda = 0;
    for (int it = 0; it < 20000; ++it) {
      for (std::size_t a = 0; a < m; ++a) {
        next[a] = 0;
        for (std::size_t b = 0; b < m; ++b) next[a] += cov[a * m + b] * v[b];
      }
      double norm = 0;
      for (double z : next) norm += z * z;
      norm = std::sqrt(norm);
      double change = 0;
      for (std::size_t a = 0; a < m; ++a) {
        change = std::max(change, std::abs(next[a] / norm - v[a]));
        v[a] = next[a] / norm;
      }
      lambda = norm;
      if (change < 1e-15) break;
    }
    const std::size_t big = std::size_t(
        std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
        v.begin());
    if (v[big] < 0)
      for (double& z : v) z = -z;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b) cov[a * m + b] -= lambda * v[a] * v[b];
    o.vectors.push_back(v);
    o.values.push_back(lambda);
  }
  return o;
}

}  // namespace fanet::test
