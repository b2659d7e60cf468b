#pragma once

#include "agn/conv.hpp"
#include "agn/tensor.hpp"

namespace agn {

// Layer inputs follow two layouts:
//   - MTDE and the convolution primitives use [N x T x C] (channels last);
//   - the relation extractors (GCE / LIE / AFFM) take [N x D_c x T_c]
//     (joints, channels, time) and transpose internally as needed.

// Fan-in-scaled uniform init; biases stay zero.
template <typename S>
TensorT<S> init_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<S> data(numel(shape));
  for (auto& v : data) v = static_cast<S>(dist(rng));
  auto t = TensorT<S>::from_data(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

template <typename S>
TensorT<S> init_zeros(Shape shape) {
  auto t = TensorT<S>::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

// Frame-to-frame differences along the temporal axis of [N x T x D].
template <typename S>
TensorT<S> velocity(const TensorT<S>& x) {
  if (x.rank() != 3) throw ShapeError("velocity expects [N x T x D], got " + shape_str(x.shape()));
  const std::int64_t T = x.shape()[1];
  if (T < 2) {
    throw InputError("velocity needs at least 2 frames, got " + std::to_string(T));
  }
  return sub(slice(x, 1, 1, T - 1), slice(x, 1, 0, T - 1));
}

// ---- MTDE ----

template <typename S>
struct MtdeStreamParams {
  std::vector<TensorT<S>> kernels;        // one [k_i x D x D_p] per timescale
  std::vector<TensorT<S>> kernel_biases;  // [D_p] each
  TensorT<S> reduce_w;                    // [3*D_p x D_p]
  TensorT<S> reduce_b;                    // [D_p]
};

template <typename S>
struct MtdeParams {
  MtdeStreamParams<S> pos;
  MtdeStreamParams<S> vel;
  std::vector<std::int64_t> timescales;

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    const char* streams[2] = {"pos", "vel"};
    MtdeStreamParams<S>* sp[2] = {&pos, &vel};
    for (int s = 0; s < 2; ++s) {
      for (std::size_t i = 0; i < sp[s]->kernels.size(); ++i) {
        fn(std::string("mtde.") + streams[s] + ".k" + std::to_string(i) + ".weight",
           sp[s]->kernels[i]);
        fn(std::string("mtde.") + streams[s] + ".k" + std::to_string(i) + ".bias",
           sp[s]->kernel_biases[i]);
      }
      fn(std::string("mtde.") + streams[s] + ".reduce.weight", sp[s]->reduce_w);
      fn(std::string("mtde.") + streams[s] + ".reduce.bias", sp[s]->reduce_b);
    }
  }
};

template <typename S>
MtdeStreamParams<S> make_mtde_stream(std::int64_t coord_dim, std::int64_t d_p,
                                     const std::vector<std::int64_t>& timescales,
                                     Rng& rng) {
  MtdeStreamParams<S> p;
  for (auto k : timescales) {
    p.kernels.push_back(init_uniform<S>({k, coord_dim, d_p}, k * coord_dim, rng));
    p.kernel_biases.push_back(init_zeros<S>({d_p}));
  }
  const std::int64_t concat_c = static_cast<std::int64_t>(timescales.size()) * d_p;
  p.reduce_w = init_uniform<S>({concat_c, d_p}, concat_c, rng);
  p.reduce_b = init_zeros<S>({d_p});
  return p;
}

template <typename S>
MtdeParams<S> make_mtde(std::int64_t coord_dim, std::int64_t d_p,
                        std::vector<std::int64_t> timescales, Rng& rng) {
  if (timescales.size() != 3) {
    throw ConfigError("MTDE expects exactly 3 timescales");
  }
  for (std::size_t i = 0; i < timescales.size(); ++i) {
    if (timescales[i] % 2 == 0) throw ConfigError("MTDE timescales must be odd");
    if (i > 0 && timescales[i] <= timescales[i - 1]) {
      throw ConfigError("MTDE timescales must be strictly ascending");
    }
  }
  MtdeParams<S> p;
  p.timescales = timescales;
  p.pos = make_mtde_stream<S>(coord_dim, d_p, timescales, rng);
  p.vel = make_mtde_stream<S>(coord_dim, d_p, timescales, rng);
  return p;
}

template <typename S>
TensorT<S> mtde_stream_forward(const TensorT<S>& x, const MtdeStreamParams<S>& p) {
  std::vector<TensorT<S>> scales;
  scales.reserve(p.kernels.size());
  for (std::size_t i = 0; i < p.kernels.size(); ++i) {
    scales.push_back(conv_temporal(x, p.kernels[i], p.kernel_biases[i]));
  }
  auto stacked = concat(scales, 2);
  return conv_1x1(stacked, p.reduce_w, p.reduce_b);
}

// Two-stream multi-timescale dynamics: position stream over x, velocity
// stream over frame differences, joined along time to length 2T-1.
template <typename S>
TensorT<S> mtde_forward(const TensorT<S>& x, const MtdeParams<S>& params) {
  auto pos_features = mtde_stream_forward(x, params.pos);
  auto vel_features = mtde_stream_forward(velocity(x), params.vel);
  return concat<S>({pos_features, vel_features}, 1);
}

// ---- GCE ----

template <typename S>
struct GceParams {
  TensorT<S> conv_ba_w;     // [N x 1], joint aggregation weights
  TensorT<S> conv_ba_b;     // [1]
  TensorT<S> conv_emb_w;    // [D_c x D_c]
  TensorT<S> conv_emb_b;    // [D_c]
  TensorT<S> conv_intra_w;  // [1 x 3 x D_c x D_c]
  TensorT<S> conv_intra_b;  // [D_c]

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    fn(prefix + "conv_ba.weight", conv_ba_w);
    fn(prefix + "conv_ba.bias", conv_ba_b);
    fn(prefix + "conv_emb.weight", conv_emb_w);
    fn(prefix + "conv_emb.bias", conv_emb_b);
    fn(prefix + "conv_intra.weight", conv_intra_w);
    fn(prefix + "conv_intra.bias", conv_intra_b);
  }
};

template <typename S>
GceParams<S> make_gce(std::int64_t n_joints, std::int64_t channels, Rng& rng) {
  GceParams<S> p;
  p.conv_ba_w = init_uniform<S>({n_joints, 1}, n_joints, rng);
  p.conv_ba_b = init_zeros<S>({1});
  p.conv_emb_w = init_uniform<S>({channels, channels}, channels, rng);
  p.conv_emb_b = init_zeros<S>({channels});
  p.conv_intra_w = init_uniform<S>({1, 3, channels, channels}, 3 * channels, rng);
  p.conv_intra_b = init_zeros<S>({channels});
  return p;
}

// Learned aggregation of all joints into a single balance attractor, then
// re-expression of every joint relative to it.
// x: [N x D_c x T_c] -> (ba [T_c x D_c x 1], x_new [N x D_c x T_c]).
template <typename S>
std::pair<TensorT<S>, TensorT<S>> balance_attractor(const TensorT<S>& x,
                                                    const GceParams<S>& params) {
  auto xt = transpose(x, {2, 1, 0});  // [T_c x D_c x N]
  auto ba = conv_1x1(xt, params.conv_ba_w, params.conv_ba_b);  // [T_c x D_c x 1]
  auto x_new = transpose(sub(xt, ba), {2, 1, 0});
  return {ba, x_new};
}

// Per-temporal-channel cosine relation graphs of the embedded features.
// x_new: [N x D_c x T_c] -> correlation stack [N x N x T_c].
template <typename S>
TensorT<S> cosine_similarity_unit(const TensorT<S>& x_new, const GceParams<S>& params) {
  const std::int64_t N = x_new.shape()[0], Tc = x_new.shape()[2];
  auto emb_in = transpose(x_new, {0, 2, 1});                      // [N x T_c x D_c]
  auto x_emb = conv_1x1(emb_in, params.conv_emb_w, params.conv_emb_b);
  std::vector<TensorT<S>> slices;
  slices.reserve(Tc);
  for (std::int64_t t = 0; t < Tc; ++t) {
    auto rows = reshape(slice(x_emb, 1, t, 1), {N, x_emb.shape()[2]});
    slices.push_back(reshape(cosine_rows(rows), {N, N, 1}));
  }
  return concat(slices, 2);
}

// Full global-coordination path: attractor, relation graphs, then
// graph-guided aggregation of the intra-joint temporal features.
template <typename S>
TensorT<S> gce_forward(const TensorT<S>& x, const GceParams<S>& params) {
  auto [ba, x_new] = balance_attractor(x, params);
  (void)ba;
  auto corr = cosine_similarity_unit(x_new, params);  // [N x N x T_c]
  auto intra_in = transpose(x, {0, 2, 1});            // [N x T_c x D_c]
  auto intra = conv_spatial_temporal(intra_in, params.conv_intra_w, params.conv_intra_b);
  auto corr_b = transpose(corr, {2, 0, 1});    // [T_c x N x N]
  auto intra_b = transpose(intra, {1, 0, 2});  // [T_c x N x D_c]
  auto mixed = matmul(corr_b, intra_b);        // [T_c x N x D_c]
  return transpose(mixed, {1, 2, 0});          // [N x D_c x T_c]
}

// ---- LIE ----

template <typename S>
struct LieParams {
  TensorT<S> adjacent_w;  // [3 x 3 x D_c x D_c]
  TensorT<S> adjacent_b;  // [D_c]
  TensorT<S> theta_w, theta_b;  // [D_c x D_c/2], [D_c/2]
  TensorT<S> phi_w, phi_b;
  TensorT<S> g_w, g_b;
  TensorT<S> out_w, out_b;  // [D_c/2 x D_c], [D_c]

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    fn(prefix + "adjacent.weight", adjacent_w);
    fn(prefix + "adjacent.bias", adjacent_b);
    fn(prefix + "theta.weight", theta_w);
    fn(prefix + "theta.bias", theta_b);
    fn(prefix + "phi.weight", phi_w);
    fn(prefix + "phi.bias", phi_b);
    fn(prefix + "g.weight", g_w);
    fn(prefix + "g.bias", g_b);
    fn(prefix + "out.weight", out_w);
    fn(prefix + "out.bias", out_b);
  }
};

template <typename S>
LieParams<S> make_lie(std::int64_t channels, Rng& rng) {
  if (channels % 2 != 0) {
    throw ConfigError("LIE channel width must be even, got " + std::to_string(channels));
  }
  const std::int64_t half = channels / 2;
  LieParams<S> p;
  p.adjacent_w = init_uniform<S>({3, 3, channels, channels}, 9 * channels, rng);
  p.adjacent_b = init_zeros<S>({channels});
  p.theta_w = init_uniform<S>({channels, half}, channels, rng);
  p.theta_b = init_zeros<S>({half});
  p.phi_w = init_uniform<S>({channels, half}, channels, rng);
  p.phi_b = init_zeros<S>({half});
  p.g_w = init_uniform<S>({channels, half}, channels, rng);
  p.g_b = init_zeros<S>({half});
  p.out_w = init_uniform<S>({half, channels}, half, rng);
  p.out_b = init_zeros<S>({channels});
  return p;
}

namespace detail {

// Flatten [N x D_c x T_c] into attention positions [(N*T_c) x D_c].
template <typename S>
TensorT<S> flatten_positions(const TensorT<S>& x) {
  const std::int64_t N = x.shape()[0], Dc = x.shape()[1], Tc = x.shape()[2];
  return reshape(transpose(x, {0, 2, 1}), {N * Tc, Dc});
}

template <typename S>
TensorT<S> affine(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  return add(matmul(x, w), reshape(b, {1, b.shape()[0]}));
}

}  // namespace detail

// Softmax attention of every (joint, time) position over all others.
// Exposed separately so the row-stochastic property is directly testable.
template <typename S>
TensorT<S> nonlocal_attention_matrix(const TensorT<S>& x, const LieParams<S>& params) {
  auto pos = detail::flatten_positions(x);
  auto theta = detail::affine(pos, params.theta_w, params.theta_b);
  auto phi = detail::affine(pos, params.phi_w, params.phi_b);
  return softmax_rows(matmul(theta, transpose(phi, {1, 0})));
}

// Local interaction extraction: a 3x3 joint/temporal convolution for
// adjacent joints and an embedded-Gaussian non-local block (no residual)
// for distant ones. x: [N x D_c x T_c] -> two maps of the same shape.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> lie_forward(const TensorT<S>& x,
                                              const LieParams<S>& params) {
  const std::int64_t N = x.shape()[0], Dc = x.shape()[1], Tc = x.shape()[2];
  if (Dc % 2 != 0) {
    throw ConfigError("lie_forward needs an even channel count, got " + std::to_string(Dc));
  }
  auto conv_in = transpose(x, {0, 2, 1});  // [N x T_c x D_c]
  auto adjacent =
      transpose(conv_spatial_temporal(conv_in, params.adjacent_w, params.adjacent_b),
                {0, 2, 1});

  auto attention = nonlocal_attention_matrix(x, params);
  auto g = detail::affine(detail::flatten_positions(x), params.g_w, params.g_b);
  auto gathered = matmul(attention, g);  // [(N*T_c) x D_c/2]
  auto distant_flat = detail::affine(gathered, params.out_w, params.out_b);
  auto distant = transpose(reshape(distant_flat, {N, Tc, Dc}), {0, 2, 1});
  return {adjacent, distant};
}

// ---- AFFM ----

template <typename S>
struct AffmParams {
  TensorT<S> fuse_w;  // [(k*D_c) x D_c], k = number of fused feature maps
  TensorT<S> fuse_b;  // [D_c]
  TensorT<S> fc1_w;   // [D_c x D_c/r]
  TensorT<S> fc1_b;
  TensorT<S> fc2_w;   // [D_c/r x D_c]
  TensorT<S> fc2_b;

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    fn(prefix + "fuse.weight", fuse_w);
    fn(prefix + "fuse.bias", fuse_b);
    fn(prefix + "fc1.weight", fc1_w);
    fn(prefix + "fc1.bias", fc1_b);
    fn(prefix + "fc2.weight", fc2_w);
    fn(prefix + "fc2.bias", fc2_b);
  }
};

template <typename S>
AffmParams<S> make_affm(std::int64_t channels, std::int64_t n_inputs, std::int64_t ratio,
                        Rng& rng) {
  if (ratio < 1) throw ConfigError("AFFM ratio must be >= 1");
  if (channels % ratio != 0) {
    throw ConfigError("AFFM channel count " + std::to_string(channels) +
                      " not divisible by ratio " + std::to_string(ratio));
  }
  if (n_inputs < 1) throw ConfigError("AFFM needs at least one input");
  AffmParams<S> p;
  p.fuse_w = init_uniform<S>({n_inputs * channels, channels}, n_inputs * channels, rng);
  p.fuse_b = init_zeros<S>({channels});
  const std::int64_t mid = channels / ratio;
  p.fc1_w = init_uniform<S>({channels, mid}, channels, rng);
  p.fc1_b = init_zeros<S>({mid});
  p.fc2_w = init_uniform<S>({mid, channels}, mid, rng);
  p.fc2_b = init_zeros<S>({channels});
  return p;
}

// Channel-attention fusion: concat inputs along channels, 1x1-reduce, then
// gate each channel by a squeeze-excite sigmoid ratio.
template <typename S>
TensorT<S> affm_forward(const std::vector<TensorT<S>>& features,
                        const AffmParams<S>& params) {
  if (features.empty()) throw ShapeError("affm_forward needs at least one input");
  const Shape& s0 = features[0].shape();
  for (const auto& f : features) {
    if (f.shape() != s0) {
      throw ShapeError("affm_forward inputs disagree: " + shape_str(s0) + " vs " +
                       shape_str(f.shape()));
    }
  }
  const std::int64_t Dc = s0[1];
  if (params.fuse_w.shape()[0] != static_cast<std::int64_t>(features.size()) * Dc) {
    throw ShapeError("affm_forward built for " +
                     std::to_string(params.fuse_w.shape()[0] / Dc) + " inputs, got " +
                     std::to_string(features.size()));
  }
  std::vector<TensorT<S>> channel_last;
  channel_last.reserve(features.size());
  for (const auto& f : features) channel_last.push_back(transpose(f, {0, 2, 1}));
  auto stacked = concat(channel_last, 2);                          // [N x T_c x k*D_c]
  auto fused = conv_1x1(stacked, params.fuse_w, params.fuse_b);    // [N x T_c x D_c]

  auto pooled = mean_over(fused, {0, 1}, /*keepdim=*/false);       // [D_c]
  auto squeezed = reshape(pooled, {1, Dc});
  auto hidden = relu(detail::affine(squeezed, params.fc1_w, params.fc1_b));
  auto gate = sigmoid(detail::affine(hidden, params.fc2_w, params.fc2_b));  // [1 x D_c]
  auto scaled = mul(fused, reshape(gate, {1, 1, Dc}));
  return transpose(scaled, {0, 2, 1});  // [N x D_c x T_c]
}

}  // namespace agn
