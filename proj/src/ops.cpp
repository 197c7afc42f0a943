// SPDX-License-Identifier: Apache-2.0
#include "fedconv/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fedconv/errors.hpp"

namespace fedconv {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Eigen::Index ei(std::size_t v) { return static_cast<Eigen::Index>(v); }

/// Geometry of a strided, zero-padded 2D correlation from a (c, h, w) input
/// plane stack to an (oh, ow) output grid.
struct ConvGeometry {
  std::size_t c, h, w;
  std::size_t k1, k2;
  std::size_t stride, padding;
  std::size_t oh, ow;

  std::size_t rows() const { return c * k1 * k2; }
  std::size_t out_plane() const { return oh * ow; }
};

// cols is [c*k1*k2, n*oh*ow]; input is [n, c, h, w].
void im2col(const double* input, std::size_t n, const ConvGeometry& g, double* cols) {
  const std::size_t plane = g.out_plane();
  const std::size_t width = n * plane;
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t a = 0; a < g.k1; ++a) {
      for (std::size_t b = 0; b < g.k2; ++b) {
        double* row = cols + ((ch * g.k1 + a) * g.k2 + b) * width;
        for (std::size_t s = 0; s < n; ++s) {
          const double* src = input + (s * g.c + ch) * g.h * g.w;
          double* dst = row + s * plane;
          for (std::size_t y = 0; y < g.oh; ++y) {
            const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + a) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(dst + y * g.ow, dst + (y + 1) * g.ow, 0.0);
              continue;
            }
            const double* src_row = src + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t x = 0; x < g.ow; ++x) {
              const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + b) -
                              static_cast<std::ptrdiff_t>(g.padding);
              dst[y * g.ow + x] =
                  (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src_row[ix];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds cols back into input planes.
void col2im(const double* cols, std::size_t n, const ConvGeometry& g, double* input) {
  const std::size_t plane = g.out_plane();
  const std::size_t width = n * plane;
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t a = 0; a < g.k1; ++a) {
      for (std::size_t b = 0; b < g.k2; ++b) {
        const double* row = cols + ((ch * g.k1 + a) * g.k2 + b) * width;
        for (std::size_t s = 0; s < n; ++s) {
          double* dst = input + (s * g.c + ch) * g.h * g.w;
          const double* src = row + s * plane;
          for (std::size_t y = 0; y < g.oh; ++y) {
            const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + a) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            double* dst_row = dst + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t x = 0; x < g.ow; ++x) {
              const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + b) -
                              static_cast<std::ptrdiff_t>(g.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              dst_row[ix] += src[y * g.ow + x];
            }
          }
        }
      }
    }
  }
}

// [n, c, p] <-> [c, n*p]
void nc_to_cn(const double* src, std::size_t n, std::size_t c, std::size_t p, double* dst) {
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (s * c + ch) * p, p, dst + ch * n * p + s * p);
}

void cn_to_nc(const double* src, std::size_t n, std::size_t c, std::size_t p, double* dst) {
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + ch * n * p + s * p, p, dst + (s * c + ch) * p);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ConfigError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                      shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(what) + " shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// Single-channel correlation without im2col. Large kernels over parameter
// slices would otherwise materialise k1*k2 copies of the output grid.
// All three accumulate into their destination.
template <typename Body>
void for_each_tap(const ConvGeometry& g, Body body) {
  for (std::size_t a = 0; a < g.k1; ++a) {
    for (std::size_t y = 0; y < g.oh; ++y) {
      const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + a) - static_cast<std::ptrdiff_t>(g.padding);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
      for (std::size_t b = 0; b < g.k2; ++b) {
        // Valid x range for this tap: 0 <= x*s + b - p < w.
        std::size_t x0 = 0;
        if (b < g.padding) x0 = (g.padding - b + g.stride - 1) / g.stride;
        const std::ptrdiff_t limit = static_cast<std::ptrdiff_t>(g.w + g.padding) - static_cast<std::ptrdiff_t>(b);
        if (limit <= 0) continue;
        const std::size_t x1 = std::min(g.ow, (static_cast<std::size_t>(limit) - 1) / g.stride + 1);
        if (x0 >= x1) continue;
        body(a, b, y, static_cast<std::size_t>(iy), x0, x1, x0 * g.stride + b - g.padding);
      }
    }
  }
}

void direct_forward(const double* x, const double* k, const ConvGeometry& g, double* out) {
  for_each_tap(g, [&](std::size_t a, std::size_t b, std::size_t y, std::size_t iy, std::size_t x0, std::size_t x1,
                      std::size_t ix0) {
    const double kv = k[a * g.k2 + b];
    const double* src = x + iy * g.w + ix0;
    double* dst = out + y * g.ow;
    for (std::size_t xx = x0; xx < x1; ++xx, src += g.stride) dst[xx] += kv * *src;
  });
}

void direct_kernel_grad(const double* x, const double* dout, const ConvGeometry& g, double* dk) {
  for_each_tap(g, [&](std::size_t a, std::size_t b, std::size_t y, std::size_t iy, std::size_t x0, std::size_t x1,
                      std::size_t ix0) {
    const double* src = x + iy * g.w + ix0;
    const double* d = dout + y * g.ow;
    double acc = 0.0;
    for (std::size_t xx = x0; xx < x1; ++xx, src += g.stride) acc += d[xx] * *src;
    dk[a * g.k2 + b] += acc;
  });
}

void direct_input_grad(const double* dout, const double* k, const ConvGeometry& g, double* dx) {
  for_each_tap(g, [&](std::size_t a, std::size_t b, std::size_t y, std::size_t iy, std::size_t x0, std::size_t x1,
                      std::size_t ix0) {
    const double kv = k[a * g.k2 + b];
    double* dst = dx + iy * g.w + ix0;
    const double* d = dout + y * g.ow;
    for (std::size_t xx = x0; xx < x1; ++xx, dst += g.stride) *dst += kv * d[xx];
  });
}

}  // namespace

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be positive");
  if (kernel == 0) throw ConfigError("kernel size must be positive");
  if (in + 2 * padding < kernel) {
    throw ConfigError("padded input " + std::to_string(in + 2 * padding) +
                      " smaller than kernel " + std::to_string(kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

std::size_t tconv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be positive");
  if (kernel == 0) throw ConfigError("kernel size must be positive");
  const auto out = static_cast<long long>((in - 1) * stride + kernel) - 2 * static_cast<long long>(padding);
  if (out <= 0) {
    throw ConfigError("transposed convolution output size " + std::to_string(out) + " is not positive");
  }
  return static_cast<std::size_t>(out);
}

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  require_rank(x, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  if (x.dim(1) != k.dim(1)) {
    throw ConfigError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", kernel " +
                      shape_str(k.shape()));
  }
  const std::size_t n = x.dim(0), out_c = k.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), k.dim(2), k.dim(3), stride, padding, 0, 0};
  g.oh = conv_out_dim(g.h, g.k1, stride, padding);
  g.ow = conv_out_dim(g.w, g.k2, stride, padding);
  const std::size_t np = n * g.out_plane();

  if (g.c == 1 && out_c == 1) {
    Tensor out({n, 1, g.oh, g.ow});
    const std::size_t in_plane = g.h * g.w, out_plane = g.out_plane();
    for (std::size_t s = 0; s < n; ++s)
      direct_forward(x.data().data() + s * in_plane, k.data().data(), g, out.data().data() + s * out_plane);
    return input.graph().record(
        std::move(out), {input, kernel}, [input, kernel, g, n](const Tensor& grad, std::span<Tensor* const> grads) {
          const std::size_t in_plane = g.h * g.w, out_plane = g.out_plane();
          for (std::size_t s = 0; s < n; ++s) {
            const double* d = grad.data().data() + s * out_plane;
            if (grads[1])
              direct_kernel_grad(input.value().data().data() + s * in_plane, d, g, grads[1]->data().data());
            if (grads[0])
              direct_input_grad(d, kernel.value().data().data(), g, grads[0]->data().data() + s * in_plane);
          }
        });
  }

  std::vector<double> cols(g.rows() * np);
  im2col(x.data().data(), n, g, cols.data());
  std::vector<double> tmp(out_c * np);
  MutMap(tmp.data(), ei(out_c), ei(np)).noalias() =
      ConstMap(k.data().data(), ei(out_c), ei(g.rows())) * ConstMap(cols.data(), ei(g.rows()), ei(np));
  Tensor out({n, out_c, g.oh, g.ow});
  cn_to_nc(tmp.data(), n, out_c, g.out_plane(), out.data().data());

  return input.graph().record(
      std::move(out), {input, kernel},
      [input, kernel, g, n, out_c, np](const Tensor& grad, std::span<Tensor* const> grads) {
        const Tensor& x = input.value();
        const Tensor& k = kernel.value();
        std::vector<double> dtmp(out_c * np);
        nc_to_cn(grad.data().data(), n, out_c, g.out_plane(), dtmp.data());
        ConstMap dout(dtmp.data(), ei(out_c), ei(np));
        std::vector<double> cols(g.rows() * np);
        if (grads[1]) {
          im2col(x.data().data(), n, g, cols.data());
          MutMap(grads[1]->data().data(), ei(out_c), ei(g.rows())).noalias() +=
              dout * ConstMap(cols.data(), ei(g.rows()), ei(np)).transpose();
        }
        if (grads[0]) {
          MutMap(cols.data(), ei(g.rows()), ei(np)).noalias() =
              ConstMap(k.data().data(), ei(out_c), ei(g.rows())).transpose() * dout;
          col2im(cols.data(), n, g, grads[0]->data().data());
        }
      });
}

Var transposed_conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  require_rank(x, 4, "transposed_conv2d input");
  require_rank(k, 4, "transposed_conv2d kernel");
  if (x.dim(1) != k.dim(0)) {
    throw ConfigError("transposed_conv2d channel mismatch: input " + shape_str(x.shape()) +
                      ", kernel " + shape_str(k.shape()));
  }
  const std::size_t n = x.dim(0), in_c = x.dim(1);
  const std::size_t out_h = tconv_out_dim(x.dim(2), k.dim(2), stride, padding);
  const std::size_t out_w = tconv_out_dim(x.dim(3), k.dim(3), stride, padding);
  // Geometry of the forward convolution this op is the adjoint of.
  ConvGeometry g{k.dim(1), out_h, out_w, k.dim(2), k.dim(3), stride, padding, x.dim(2), x.dim(3)};
  const std::size_t np = n * g.out_plane();

  if (in_c == 1 && g.c == 1) {
    Tensor out({n, 1, out_h, out_w});
    const std::size_t big = out_h * out_w, small = g.out_plane();
    for (std::size_t s = 0; s < n; ++s)
      direct_input_grad(x.data().data() + s * small, k.data().data(), g, out.data().data() + s * big);
    return input.graph().record(
        std::move(out), {input, kernel}, [input, kernel, g, n](const Tensor& grad, std::span<Tensor* const> grads) {
          const std::size_t big = g.h * g.w, small = g.out_plane();
          for (std::size_t s = 0; s < n; ++s) {
            const double* d = grad.data().data() + s * big;
            if (grads[1])
              direct_kernel_grad(d, input.value().data().data() + s * small, g, grads[1]->data().data());
            if (grads[0])
              direct_forward(d, kernel.value().data().data(), g, grads[0]->data().data() + s * small);
          }
        });
  }

  std::vector<double> xm(in_c * np);
  nc_to_cn(x.data().data(), n, in_c, g.out_plane(), xm.data());
  std::vector<double> cols(g.rows() * np);
  MutMap(cols.data(), ei(g.rows()), ei(np)).noalias() =
      ConstMap(k.data().data(), ei(in_c), ei(g.rows())).transpose() * ConstMap(xm.data(), ei(in_c), ei(np));
  Tensor out({n, g.c, out_h, out_w});
  col2im(cols.data(), n, g, out.data().data());

  return input.graph().record(
      std::move(out), {input, kernel},
      [input, kernel, g, n, in_c, np](const Tensor& grad, std::span<Tensor* const> grads) {
        const Tensor& x = input.value();
        const Tensor& k = kernel.value();
        std::vector<double> dcols(g.rows() * np);
        im2col(grad.data().data(), n, g, dcols.data());
        ConstMap dc(dcols.data(), ei(g.rows()), ei(np));
        if (grads[1]) {
          std::vector<double> xm(in_c * np);
          nc_to_cn(x.data().data(), n, in_c, g.out_plane(), xm.data());
          MutMap(grads[1]->data().data(), ei(in_c), ei(g.rows())).noalias() +=
              ConstMap(xm.data(), ei(in_c), ei(np)) * dc.transpose();
        }
        if (grads[0]) {
          std::vector<double> dxm(in_c * np);
          MutMap(dxm.data(), ei(in_c), ei(np)).noalias() =
              ConstMap(k.data().data(), ei(in_c), ei(g.rows())) * dc;
          std::vector<double> dx(in_c * np);
          cn_to_nc(dxm.data(), n, in_c, g.out_plane(), dx.data());
          auto d = grads[0]->data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += dx[i];
        }
      });
}

Var linear(Var x, Var weight) {
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  require_rank(xv, 2, "linear input");
  require_rank(w, 2, "linear weight");
  if (xv.dim(1) != w.dim(1)) {
    throw ConfigError("linear feature mismatch: input " + shape_str(xv.shape()) + ", weight " +
                      shape_str(w.shape()));
  }
  const std::size_t n = xv.dim(0), in = xv.dim(1), out = w.dim(0);
  Tensor y({n, out});
  MutMap(y.data().data(), ei(n), ei(out)).noalias() =
      ConstMap(xv.data().data(), ei(n), ei(in)) * ConstMap(w.data().data(), ei(out), ei(in)).transpose();
  return x.graph().record(std::move(y), {x, weight},
                          [x, weight, n, in, out](const Tensor& grad, std::span<Tensor* const> grads) {
                            ConstMap dy(grad.data().data(), ei(n), ei(out));
                            if (grads[0]) {
                              MutMap(grads[0]->data().data(), ei(n), ei(in)).noalias() +=
                                  dy * ConstMap(weight.value().data().data(), ei(out), ei(in));
                            }
                            if (grads[1]) {
                              MutMap(grads[1]->data().data(), ei(out), ei(in)).noalias() +=
                                  dy.transpose() * ConstMap(x.value().data().data(), ei(n), ei(in));
                            }
                          });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& b = bias.value();
  if (xv.rank() < 2) throw ConfigError("add_bias needs rank >= 2 input");
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  if (b.numel() != c) {
    throw ConfigError("bias length " + std::to_string(b.numel()) + " does not match channels " +
                      std::to_string(c));
  }
  const std::size_t inner = xv.numel() / (n * c);
  Tensor y = xv;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = y.data().data() + (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += b[ch];
    }
  return x.graph().record(std::move(y), {x, bias},
                          [n, c, inner](const Tensor& grad, std::span<Tensor* const> grads) {
                            accumulate(grads[0], grad);
                            if (grads[1]) {
                              auto db = grads[1]->data();
                              for (std::size_t s = 0; s < n; ++s)
                                for (std::size_t ch = 0; ch < c; ++ch) {
                                  const double* p = grad.data().data() + (s * c + ch) * inner;
                                  double acc = 0.0;
                                  for (std::size_t i = 0; i < inner; ++i) acc += p[i];
                                  db[ch] += acc;
                                }
                            }
                          });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
  return a.graph().record(std::move(y), {a, b}, [](const Tensor& grad, std::span<Tensor* const> grads) {
    accumulate(grads[0], grad);
    accumulate(grads[1], grad);
  });
}

Var scale(Var x, double factor) {
  Tensor y = x.value();
  for (auto& v : y.data()) v *= factor;
  return x.graph().record(std::move(y), {x}, [factor](const Tensor& grad, std::span<Tensor* const> grads) {
    auto d = grads[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * grad[i];
  });
}

Var scale_by(Var x, Var factor) {
  if (factor.value().numel() != 1) throw ConfigError("scale_by factor must have one element");
  const double f = factor.value()[0];
  Tensor y = x.value();
  for (auto& v : y.data()) v *= f;
  return x.graph().record(std::move(y), {x, factor},
                          [x, factor](const Tensor& grad, std::span<Tensor* const> grads) {
                            if (grads[0]) {
                              const double f = factor.value()[0];
                              auto d = grads[0]->data();
                              for (std::size_t i = 0; i < d.size(); ++i) d[i] += f * grad[i];
                            }
                            if (grads[1]) (*grads[1])[0] += inner(grad, x.value());
                          });
}

Var relu(Var x) {
  Tensor y = x.value();
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return x.graph().record(std::move(y), {x}, [x](const Tensor& grad, std::span<Tensor* const> grads) {
    const auto xv = x.value().data();
    auto d = grads[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (xv[i] > 0.0) d[i] += grad[i];
  });
}

Var mlr(Var x, double slope_pos, double slope_neg) {
  Tensor y = x.value();
  for (auto& v : y.data()) v = v >= 0.0 ? slope_pos * v : slope_neg * v;
  return x.graph().record(std::move(y), {x},
                          [x, slope_pos, slope_neg](const Tensor& grad, std::span<Tensor* const> grads) {
                            const auto xv = x.value().data();
                            auto d = grads[0]->data();
                            for (std::size_t i = 0; i < d.size(); ++i)
                              d[i] += (xv[i] >= 0.0 ? slope_pos : slope_neg) * grad[i];
                          });
}

Var weight_norm(Var direction, Var magnitude) {
  const Tensor& v = direction.value();
  const Tensor& g = magnitude.value();
  const std::size_t slices = v.dim(0);
  if (g.numel() != slices) {
    throw ConfigError("weight_norm magnitude has " + std::to_string(g.numel()) +
                      " entries for " + std::to_string(slices) + " direction slices");
  }
  const std::size_t len = v.numel() / slices;
  std::vector<double> norms(slices);
  Tensor y(v.shape());
  for (std::size_t o = 0; o < slices; ++o) {
    const double* src = v.data().data() + o * len;
    double ss = 0.0;
    for (std::size_t i = 0; i < len; ++i) ss += src[i] * src[i];
    norms[o] = std::sqrt(ss);
    if (!(norms[o] > 0.0) || !std::isfinite(norms[o])) {
      throw NumericalError("weight_norm: direction slice " + std::to_string(o) + " has norm " +
                           std::to_string(norms[o]));
    }
    double* dst = y.data().data() + o * len;
    for (std::size_t i = 0; i < len; ++i) dst[i] = g[o] * src[i] / norms[o];
  }
  return direction.graph().record(
      std::move(y), {direction, magnitude},
      [direction, magnitude, slices, len, norms](const Tensor& grad, std::span<Tensor* const> grads) {
        const Tensor& v = direction.value();
        const Tensor& g = magnitude.value();
        for (std::size_t o = 0; o < slices; ++o) {
          const double* vs = v.data().data() + o * len;
          const double* gs = grad.data().data() + o * len;
          double proj = 0.0;  // <u, dy>
          for (std::size_t i = 0; i < len; ++i) proj += vs[i] * gs[i];
          proj /= norms[o];
          if (grads[1]) (*grads[1])[o] += proj;
          if (grads[0]) {
            double* dv = grads[0]->data().data() + o * len;
            const double c = g[o] / norms[o];
            for (std::size_t i = 0; i < len; ++i) dv[i] += c * (gs[i] - vs[i] / norms[o] * proj);
          }
        }
      });
}

Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return x.graph().record(std::move(y), {x}, [](const Tensor& grad, std::span<Tensor* const> grads) {
    auto d = grads[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += grad[i];
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  require_rank(z, 2, "cross_entropy logits");
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) {
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw InputError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  // Softmax rows are kept for the backward pass.
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double* row = z.data().data() + s * k;
    const double m = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    const double lse = m + std::log(denom);
    for (std::size_t j = 0; j < k; ++j) probs[s * k + j] = std::exp(row[j] - lse);
    loss += lse - row[lab[s]];
  }
  loss /= static_cast<double>(n);
  return logits.graph().record(
      Tensor::scalar(loss), {logits},
      [probs = std::move(probs), lab = std::move(lab), n, k](const Tensor& grad, std::span<Tensor* const> grads) {
        const double scale = grad[0] / static_cast<double>(n);
        auto d = grads[0]->data();
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t j = 0; j < k; ++j) {
            const double target = static_cast<std::size_t>(lab[s]) == j ? 1.0 : 0.0;
            d[s * k + j] += scale * (probs[s * k + j] - target);
          }
      });
}

Var sum(Var x) {
  return x.graph().record(Tensor::scalar(x.value().sum()), {x},
                          [](const Tensor& grad, std::span<Tensor* const> grads) {
                            for (auto& v : grads[0]->data()) v += grad[0];
                          });
}

Var dot(Var a, Var b) {
  const double value = inner(a.value(), b.value());
  return a.graph().record(Tensor::scalar(value), {a, b},
                          [a, b](const Tensor& grad, std::span<Tensor* const> grads) {
                            const double g = grad[0];
                            if (grads[0]) {
                              auto d = grads[0]->data();
                              auto bv = b.value().data();
                              for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * bv[i];
                            }
                            if (grads[1]) {
                              auto d = grads[1]->data();
                              auto av = a.value().data();
                              for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * av[i];
                            }
                          });
}

Var kernel_slice(Var weight, std::size_t row, std::size_t col) {
  const Tensor& w = weight.value();
  require_rank(w, 4, "kernel_slice weight");
  const std::size_t o = w.dim(0), i = w.dim(1), k1 = w.dim(2), k2 = w.dim(3);
  if (row >= k1 || col >= k2) throw ConfigError("kernel_slice position out of range");
  const std::size_t pos = row * k2 + col, kk = k1 * k2;
  Tensor y({1, 1, o, i});
  for (std::size_t e = 0; e < o * i; ++e) y[e] = w[e * kk + pos];
  return weight.graph().record(std::move(y), {weight},
                               [o, i, kk, pos](const Tensor& grad, std::span<Tensor* const> grads) {
                                 auto d = grads[0]->data();
                                 for (std::size_t e = 0; e < o * i; ++e) d[e * kk + pos] += grad[e];
                               });
}

Var stack_kernel_slices(std::span<const Var> slices, std::size_t k1, std::size_t k2) {
  const std::size_t kk = k1 * k2;
  if (slices.size() != kk || kk == 0) {
    throw ConfigError("stack_kernel_slices: expected " + std::to_string(kk) + " slices, got " +
                      std::to_string(slices.size()));
  }
  const Shape& first = slices[0].shape();
  if (first.size() != 4 || first[0] != 1 || first[1] != 1) {
    throw ConfigError("stack_kernel_slices: slices must be (1,1,O,I), got " + shape_str(first));
  }
  const std::size_t o = first[2], i = first[3];
  Tensor y({o, i, k1, k2});
  for (std::size_t pos = 0; pos < kk; ++pos) {
    const Tensor& s = slices[pos].value();
    require_same_shape(s, slices[0].value(), "stack_kernel_slices");
    for (std::size_t e = 0; e < o * i; ++e) y[e * kk + pos] = s[e];
  }
  std::vector<Var> parents(slices.begin(), slices.end());
  return slices[0].graph().record(std::move(y), parents,
                                  [o, i, kk](const Tensor& grad, std::span<Tensor* const> grads) {
                                    for (std::size_t pos = 0; pos < kk; ++pos) {
                                      if (!grads[pos]) continue;
                                      auto d = grads[pos]->data();
                                      for (std::size_t e = 0; e < o * i; ++e) d[e] += grad[e * kk + pos];
                                    }
                                  });
}

}  // namespace fedconv
