#pragma once

#include "agn/tensor.hpp"

namespace agn {

// Central-difference check of reverse-mode gradients.
//
// `f` must map `x` to a scalar tensor and must read x's live storage (a
// shared handle), so perturbing x.data() is visible to every call. Returns
// max over coordinates of |analytic - central| / max(1, |analytic|, |central|).
// The step is eps scaled by the coordinate's magnitude. Run with S = double;
// float arithmetic drowns the 1e-3 tolerance in rounding noise.
template <typename S, typename F>
double grad_check(F&& f, TensorT<S>& x, double eps = 1e-4) {
  x.set_requires_grad(true);
  x.zero_grad();
  {
    TensorT<S> loss = f(static_cast<const TensorT<S>&>(x));
    if (loss.numel() != 1) {
      throw ContractError("grad_check: f must return a scalar, got shape " +
                          shape_str(loss.shape()));
    }
    backward(loss);
  }
  const std::vector<S> analytic = x.grad();

  double max_err = 0.0;
  auto& data = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const S orig = data[i];
    const S h = static_cast<S>(eps * std::max(1.0, std::abs(static_cast<double>(orig))));
    data[i] = orig + h;
    const double lp = static_cast<double>(f(static_cast<const TensorT<S>&>(x)).item());
    data[i] = orig - h;
    const double lm = static_cast<double>(f(static_cast<const TensorT<S>&>(x)).item());
    data[i] = orig;
    const double central = (lp - lm) / (2.0 * static_cast<double>(h));
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - central) / std::max({1.0, std::abs(a), std::abs(central)});
    max_err = std::max(max_err, err);
  }
  return max_err;
}

// Reduce an arbitrary tensor to a scalar with a fixed pseudo-random probe,
// so permuted or dropped outputs cannot cancel out of the check.
template <typename S>
TensorT<S> probe_sum(const TensorT<S>& t, std::uint64_t seed = 17) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(0.25, 1.0);
  std::vector<S> w(t.numel());
  for (auto& v : w) v = static_cast<S>(dist(rng));
  auto probe = TensorT<S>::from_data(t.shape(), std::move(w));
  return sum(mul(t, probe));
}

}  // namespace agn
