#include "fanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fanet/random.hpp"

namespace fanet {

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps) {
  Tensor leaf = Tensor::parameter(x.shape(), {x.values().begin(), x.values().end()});
  auto closure = [&]() { return f(leaf); };
  const Tensor params[] = {leaf};
  return finite_difference_check(closure, params, eps)[0];
}

std::vector<double> finite_difference_check(const std::function<Tensor()>& f,
                                            std::span<const Tensor> params,
                                            double eps, double value_noise) {
  if (!(eps > 0.0)) throw ConfigError("finite_difference_check: eps must be > 0");
  std::vector<Tensor> ps(params.begin(), params.end());
  for (Tensor& p : ps) p.zero_grad();

  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    if (y.size() != 1) {
      throw AutodiffError("finite_difference_check: f must return a scalar, got " +
                          to_string(y.shape()));
    }
    if (y.on_tape()) tape.backward(y);
  }

  auto eval = [&]() {
    Tensor y = f();
    if (y.size() != 1) {
      throw AutodiffError("finite_difference_check: f must return a scalar");
    }
    return y.item();
  };

  // Central difference D(h), halving h until D(h) and D(h/2) agree. For
  // smooth f they differ by O(h^2); a ReLU or max-pool kink inside the
  // stencil breaks the agreement. Rounding in f contributes about
  // value_noise / h to each estimate.
  auto central = [&](std::span<double> v, std::size_t i, double h) {
    const double saved = v[i];
    v[i] = saved + h;
    const double up = eval();
    v[i] = saved - h;
    const double down = eval();
    v[i] = saved;
    return (up - down) / (2.0 * h);
  };
  auto derivative = [&](std::span<double> v, std::size_t i) {
    double h = eps;
    double coarse = central(v, i, h);
    for (int level = 0; level < 6; ++level) {
      const double fine = central(v, i, h / 2.0);
      const double tol = 1e-6 * std::max(std::abs(coarse), std::abs(fine)) +
                         4.0 * value_noise / h;
      if (std::abs(coarse - fine) <= tol) return coarse;
      coarse = fine;
      h /= 2.0;
    }
    return coarse;
  };

  std::vector<double> errors;
  errors.reserve(ps.size());
  for (Tensor& p : ps) {
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto v = p.mutable_values();
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      worst = std::max(worst, relative_error(analytic[i], derivative(v, i)));
    }
    errors.push_back(worst);
    p.zero_grad();
  }
  return errors;
}

Tensor random_projection(const Tensor& y, unsigned seed) {
  Rng rng(seed);
  std::vector<double> w(y.size());
  for (double& v : w) v = rng.uniform(0.5, 1.5);
  return sum(mul(y, Tensor(y.shape(), std::move(w))));
}

}  // namespace fanet
