#pragma once

#include "agn/model.hpp"

namespace agn {

inline constexpr double kInitialLearningRate = 5e-4;
inline constexpr double kLearningRateDecay = 0.96;
inline constexpr double kLearningRateFloor = 1e-4;

// Exponential decay per epoch with a floor. A floor above a caller-chosen
// base rate would silently raise it (e.g. a frozen-optimizer run at 0), so
// the effective floor never exceeds the base rate.
inline double lr_at_epoch(std::int64_t epoch, double base = kInitialLearningRate,
                          double floor = kLearningRateFloor) {
  if (epoch < 0) throw ContractError("epoch must be >= 0");
  const double lr = base * std::pow(kLearningRateDecay, static_cast<double>(epoch));
  return std::max(lr, std::min(floor, base));
}

template <typename S>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;  // first moments, one per parameter
  std::vector<std::vector<double>> v;  // second moments

  explicit AdamState(const ParamStore<S>& params) {
    for (const auto& [name, t] : params) {
      m.emplace_back(t.numel(), 0.0);
      v.emplace_back(t.numel(), 0.0);
    }
  }
};

// Bias-corrected Adam update over every parameter in the store. Gradients
// must be populated; they are zeroed after the step (the optimizer owns
// gradient lifetime).
template <typename S>
void adam_step(ParamStore<S>& params, AdamState<S>& state, double lr) {
  if (state.m.size() != params.size()) {
    throw ContractError("adam state does not match parameter store");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  std::size_t pi = 0;
  for (auto& [name, t] : params) {
    if (!t.has_grad()) {
      throw ContractError("adam_step: gradient missing for parameter " + name);
    }
    const auto& g = t.grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    auto& w = t.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<S>(static_cast<double>(w[i]) -
                            lr * mhat / (std::sqrt(vhat) + state.eps));
    }
    t.zero_grad();
    ++pi;
  }
}

}  // namespace agn
