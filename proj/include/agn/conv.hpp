#pragma once

#include "agn/tensor.hpp"

namespace agn {

// 2-d convolution over the leading two axes of x[A x B x Cin] with an odd
// [kh x kw x Cin x Cout] kernel, zero padding and "same" output size.
// Axis 0 is the joint axis, axis 1 the temporal axis throughout this library.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3) throw ShapeError("conv2d input must be 3-d, got " + shape_str(xs));
  if (ws.size() != 4) throw ShapeError("conv2d kernel must be 4-d, got " + shape_str(ws));
  const std::int64_t A = xs[0], B = xs[1], Cin = xs[2];
  const std::int64_t kh = ws[0], kw = ws[1], Cout = ws[3];
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("conv2d kernel sizes must be odd, got " + shape_str(ws));
  }
  if (ws[2] != Cin) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(xs) + ", kernel " +
                     shape_str(ws));
  }
  if (bias.shape() != Shape{Cout}) {
    throw ShapeError("conv2d bias must be [" + std::to_string(Cout) + "], got " +
                     shape_str(bias.shape()));
  }
  const std::int64_t ph = (kh - 1) / 2, pw = (kw - 1) / 2;

  auto xn = x.node(), wn = w.node(), bn = bias.node();
  auto out = detail::make_node<S>(Shape{A, B, Cout});
  for (std::int64_t a = 0; a < A; ++a) {
    for (std::int64_t b = 0; b < B; ++b) {
      S* o = out->value.data() + (a * B + b) * Cout;
      for (std::int64_t co = 0; co < Cout; ++co) o[co] = bn->value[co];
      for (std::int64_t dh = 0; dh < kh; ++dh) {
        const std::int64_t sa = a + dh - ph;
        if (sa < 0 || sa >= A) continue;
        for (std::int64_t dw = 0; dw < kw; ++dw) {
          const std::int64_t sb = b + dw - pw;
          if (sb < 0 || sb >= B) continue;
          const S* xin = xn->value.data() + (sa * B + sb) * Cin;
          const S* wk = wn->value.data() + (dh * kw + dw) * Cin * Cout;
          for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const S xv = xin[ci];
            for (std::int64_t co = 0; co < Cout; ++co) o[co] += xv * wk[ci * Cout + co];
          }
        }
      }
    }
  }
  detail::wire<S>(out, {xn, wn, bn},
                  [xn, wn, bn, A, B, Cin, Cout, kh, kw, ph, pw](TensorNode<S>& self) {
                    if (xn->requires_grad) xn->ensure_grad();
                    if (wn->requires_grad) wn->ensure_grad();
                    if (bn->requires_grad) bn->ensure_grad();
                    for (std::int64_t a = 0; a < A; ++a) {
                      for (std::int64_t b = 0; b < B; ++b) {
                        const S* g = self.grad.data() + (a * B + b) * Cout;
                        if (bn->requires_grad) {
                          for (std::int64_t co = 0; co < Cout; ++co) bn->grad[co] += g[co];
                        }
                        for (std::int64_t dh = 0; dh < kh; ++dh) {
                          const std::int64_t sa = a + dh - ph;
                          if (sa < 0 || sa >= A) continue;
                          for (std::int64_t dw = 0; dw < kw; ++dw) {
                            const std::int64_t sb = b + dw - pw;
                            if (sb < 0 || sb >= B) continue;
                            const std::int64_t xoff = (sa * B + sb) * Cin;
                            const std::int64_t woff = (dh * kw + dw) * Cin * Cout;
                            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                              for (std::int64_t co = 0; co < Cout; ++co) {
                                if (xn->requires_grad) {
                                  xn->grad[xoff + ci] += g[co] * wn->value[woff + ci * Cout + co];
                                }
                                if (wn->requires_grad) {
                                  wn->grad[woff + ci * Cout + co] += g[co] * xn->value[xoff + ci];
                                }
                              }
                            }
                          }
                        }
                      }
                    }
                  });
  return TensorT<S>(out);
}

// Per-joint temporal convolution: x[N x T x Cin], kernel [k x Cin x Cout].
// Joints never mix; the temporal length is preserved by zero padding.
template <typename S>
TensorT<S> conv_temporal(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias) {
  const Shape& ws = w.shape();
  if (ws.size() != 3) {
    throw ShapeError("conv_temporal kernel must be [k x Cin x Cout], got " + shape_str(ws));
  }
  if (ws[0] % 2 == 0) {
    throw ConfigError("conv_temporal kernel length must be odd, got " +
                      std::to_string(ws[0]));
  }
  return conv2d(x, reshape(w, {1, ws[0], ws[1], ws[2]}), bias);
}

// Joint/temporal convolution with an odd kh x kw kernel (3x3 for adjacent
// interactions, 1x3 for intra-joint temporal mixing).
template <typename S>
TensorT<S> conv_spatial_temporal(const TensorT<S>& x, const TensorT<S>& w,
                                 const TensorT<S>& bias) {
  return conv2d(x, w, bias);
}

// Pure channel mixing at every location: x[A x B x Cin], w[Cin x Cout].
template <typename S>
TensorT<S> conv_1x1(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3) throw ShapeError("conv_1x1 input must be 3-d, got " + shape_str(xs));
  if (ws.size() != 2 || ws[0] != xs[2]) {
    throw ShapeError("conv_1x1 channel mismatch: input " + shape_str(xs) + ", weights " +
                     shape_str(ws));
  }
  if (bias.shape() != Shape{ws[1]}) {
    throw ShapeError("conv_1x1 bias must be [" + std::to_string(ws[1]) + "], got " +
                     shape_str(bias.shape()));
  }
  const std::int64_t A = xs[0], B = xs[1], Cout = ws[1];
  auto flat = reshape(x, {A * B, xs[2]});
  auto mixed = matmul(flat, w);
  auto biased = add(mixed, reshape(bias, {1, Cout}));
  return reshape(biased, {A, B, Cout});
}

}  // namespace agn
