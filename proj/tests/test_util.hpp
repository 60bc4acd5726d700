#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "mrtts/nn.hpp"
#include "mrtts/tensor.hpp"

namespace mrtts::testutil {

inline ad::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                                double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

// Central finite differences of a scalar-valued rebuild function with respect
// to every entry of `param`, compared against the analytic gradient stored on
// the param node after backward(). Returns the worst relative error.
inline double max_grad_rel_error(const ad::Var& param,
                                 const std::function<double()>& rebuild_scalar,
                                 double h = 1e-6) {
  ad::Matrix analytic =
      param->grad.size() ? param->grad
                         : ad::Matrix::Zero(param->value.rows(), param->value.cols());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < param->value.rows(); ++i)
    for (Eigen::Index j = 0; j < param->value.cols(); ++j) {
      const double keep = param->value(i, j);
      param->value(i, j) = keep + h;
      const double up = rebuild_scalar();
      param->value(i, j) = keep - h;
      const double down = rebuild_scalar();
      param->value(i, j) = keep;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-8});
      worst = std::max(worst, std::abs(fd - analytic(i, j)) / denom);
    }
  return worst;
}

}  // namespace mrtts::testutil
