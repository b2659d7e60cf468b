#pragma once

#include <vector>

#include "agn/agn.hpp"

namespace testutil {

template <typename S>
agn::TensorT<S> rand_tensor(agn::Shape shape, agn::Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<S> data(agn::numel(shape));
  for (auto& v : data) v = static_cast<S>(dist(rng));
  return agn::TensorT<S>::from_data(std::move(shape), std::move(data));
}

template <typename S>
std::vector<double> to_vec(const agn::TensorT<S>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

template <typename S>
double max_abs_diff(const agn::TensorT<S>& t, const std::vector<double>& ref) {
  if (static_cast<std::size_t>(t.numel()) != ref.size()) return 1e300;
  double m = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(t.data()[i]) - ref[i]));
  }
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return 1e300;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
