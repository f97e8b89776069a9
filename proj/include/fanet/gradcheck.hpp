#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fanet/tensor.hpp"

namespace fanet {

/// Relative error used by every gradient check:
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
double relative_error(double analytic, double numeric);

/// Central-difference check of a scalar-valued `f` at `x`.
///
/// Returns the max relative error between the tape gradient and
/// (f(x+eps) - f(x-eps)) / 2eps over every element of x. `x` is not
/// modified.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps = 1e-5);

/// Same check over several leaf parameters read by a closure. Returns one
/// max relative error per parameter. Parameter values are restored.
///
/// Each numeric derivative halves the step until consecutive central
/// differences agree, so a kink inside the stencil does not produce a
/// spurious mismatch. `value_noise` is the expected absolute rounding error
/// of one evaluation of f.
std::vector<double> finite_difference_check(
    const std::function<Tensor()>& f, std::span<const Tensor> params,
    double eps = 1e-5, double value_noise = 1e-16);

/// Reduces any tensor to a scalar with fixed pseudo-random weights so that
/// every output element contributes an O(1) gradient. Deterministic in
/// `seed`.
Tensor random_projection(const Tensor& y, unsigned seed = 7);

}  // namespace fanet
