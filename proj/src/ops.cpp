#include "segkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "segkit/loss.hpp"

namespace segkit {

namespace {

using RowMatrix = Tensorf::RowMajorMatrix;
using MatrixMap = Tensorf::MatrixMap;
using ConstMatrixMap = Tensorf::ConstMatrixMap;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;

void require_rank4(const Tensorf& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " expects an NHWC tensor, got " + t.shape().str());
  }
}

struct ConvGeometry {
  Index batch, in_h, in_w, in_c;
  Index kh, kw, out_c;
  Index out_h, out_w;
  int stride, pad;

  Index patch() const { return kh * kw * in_c; }
  Index out_pixels() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Tensorf& x, const Tensorf& kernel, int stride, int pad,
                           bool depthwise) {
  require_rank4(x, "conv2d");
  if (kernel.rank() != 4) throw ShapeError("conv kernel must be rank 4, got " + kernel.shape().str());
  if (stride < 1 || pad < 0) throw ShapeError("conv stride must be >= 1 and padding >= 0");
  ConvGeometry g{x.batch(), x.height(), x.width(), x.channels(),
                 kernel.dim(0), kernel.dim(1), depthwise ? x.channels() : kernel.dim(3),
                 0, 0, stride, pad};
  const Index expected_in = kernel.dim(2);
  if (expected_in != g.in_c || (depthwise && kernel.dim(3) != 1)) {
    throw ShapeError("conv kernel " + kernel.shape().str() + " does not fit input " +
                     x.shape().str());
  }
  g.out_h = conv_output_extent(g.in_h, g.kh, stride, pad);
  g.out_w = conv_output_extent(g.in_w, g.kw, stride, pad);
  if (g.out_h < 1 || g.out_w < 1) {
    throw ShapeError("conv window larger than input " + x.shape().str());
  }
  return g;
}

void check_bias(const Var& bias, Index channels) {
  if (bias && (bias.value().rank() != 1 || bias.value().dim(0) != channels)) {
    throw ShapeError("bias shape " + bias.shape().str() + " does not match " +
                     std::to_string(channels) + " output channels");
  }
}

// Unfolds image n into rows of (ky, kx, c) patches, one row per output pixel.
void im2col(const Tensorf& x, Index n, const ConvGeometry& g, RowMatrix& cols) {
  cols.resize(g.out_pixels(), g.patch());
  const float* src = x.data() + n * g.in_h * g.in_w * g.in_c;
  const size_t run = static_cast<size_t>(g.in_c) * sizeof(float);
  for (Index yo = 0; yo < g.out_h; ++yo) {
    for (Index xo = 0; xo < g.out_w; ++xo) {
      float* dst = cols.data() + (yo * g.out_w + xo) * g.patch();
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index yi = yo * g.stride - g.pad + ky;
        for (Index kx = 0; kx < g.kw; ++kx, dst += g.in_c) {
          const Index xi = xo * g.stride - g.pad + kx;
          if (yi < 0 || yi >= g.in_h || xi < 0 || xi >= g.in_w) {
            std::memset(dst, 0, run);
          } else {
            std::memcpy(dst, src + (yi * g.in_w + xi) * g.in_c, run);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch rows back into image n of dx.
void col2im_add(const RowMatrix& cols, Index n, const ConvGeometry& g, Tensorf& dx) {
  float* dst = dx.data() + n * g.in_h * g.in_w * g.in_c;
  for (Index yo = 0; yo < g.out_h; ++yo) {
    for (Index xo = 0; xo < g.out_w; ++xo) {
      const float* src = cols.data() + (yo * g.out_w + xo) * g.patch();
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index yi = yo * g.stride - g.pad + ky;
        for (Index kx = 0; kx < g.kw; ++kx, src += g.in_c) {
          const Index xi = xo * g.stride - g.pad + kx;
          if (yi < 0 || yi >= g.in_h || xi < 0 || xi >= g.in_w) continue;
          Eigen::Map<Eigen::ArrayXf>(dst + (yi * g.in_w + xi) * g.in_c, g.in_c) +=
              Eigen::Map<const Eigen::ArrayXf>(src, g.in_c);
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

// Source taps for one axis of a half-pixel bilinear resize.
struct Taps {
  std::vector<Index> lo, hi;
  std::vector<float> frac;
};

Taps bilinear_taps(Index in, Index out) {
  Taps t;
  t.lo.resize(static_cast<size_t>(out));
  t.hi.resize(static_cast<size_t>(out));
  t.frac.resize(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<Index>(std::floor(src));
    const size_t k = static_cast<size_t>(i);
    t.lo[k] = lo;
    t.hi[k] = std::min(lo + 1, in - 1);
    t.frac[k] = static_cast<float>(src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

Index conv_output_extent(Index in, Index kernel, Index stride, Index pad) {
  const Index span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, int padding) {
  const ConvGeometry g = conv_geometry(x.value(), kernel.value(), stride, padding, false);
  check_bias(bias, g.out_c);

  Tensorf out({g.batch, g.out_h, g.out_w, g.out_c});
  ConstMatrixMap weights(kernel.value().data(), g.patch(), g.out_c);
  const bool pointwise = is_pointwise(g);
  RowMatrix cols;
  for (Index n = 0; n < g.batch; ++n) {
    MatrixMap out_n(out.data() + n * g.out_pixels() * g.out_c, g.out_pixels(), g.out_c);
    if (pointwise) {
      ConstMatrixMap in_n(x.value().data() + n * g.out_pixels() * g.in_c, g.out_pixels(),
                          g.in_c);
      out_n.noalias() = in_n * weights;
    } else {
      im2col(x.value(), n, g, cols);
      out_n.noalias() = cols * weights;
    }
  }
  if (bias) out.matrix().rowwise() += bias.value().vector().transpose();

  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(bias);
  Node* xn = x.node().get();
  Node* kn = kernel.node().get();
  Node* bn = bias ? bias.node().get() : nullptr;
  return make_result(std::move(out), std::move(inputs), [xn, kn, bn, g, pointwise](Node& self) {
    const Tensorf& gy = self.grad;
    ConstMatrixMap weights(kn->value.data(), g.patch(), g.out_c);
    if (bn && bn->requires_grad) {
      Tensorf db(Shape{g.out_c});
      db.vector() = gy.matrix().colwise().sum().transpose();
      bn->accumulate_grad(db);
    }
    const bool need_w = kn->requires_grad;
    const bool need_x = xn->requires_grad;
    Tensorf dw;
    if (need_w) dw = Tensorf(kn->value.shape());
    MatrixMap dw_mat(need_w ? dw.data() : nullptr, g.patch(), g.out_c);
    Tensorf* dx = need_x ? &xn->grad_buffer() : nullptr;
    RowMatrix cols, dcols;
    for (Index n = 0; n < g.batch; ++n) {
      ConstMatrixMap gy_n(gy.data() + n * g.out_pixels() * g.out_c, g.out_pixels(), g.out_c);
      if (pointwise) {
        ConstMatrixMap in_n(xn->value.data() + n * g.out_pixels() * g.in_c, g.out_pixels(),
                            g.in_c);
        if (need_w) dw_mat.noalias() += in_n.transpose() * gy_n;
        if (need_x) {
          MatrixMap dx_n(dx->data() + n * g.out_pixels() * g.in_c, g.out_pixels(), g.in_c);
          dx_n.noalias() += gy_n * weights.transpose();
        }
        continue;
      }
      if (need_w) {
        im2col(xn->value, n, g, cols);
        dw_mat.noalias() += cols.transpose() * gy_n;
      }
      if (need_x) {
        dcols.noalias() = gy_n * weights.transpose();
        col2im_add(dcols, n, g, *dx);
      }
    }
    if (need_w) kn->accumulate_grad(dw);
  });
}

Var depthwise_conv2d(const Var& x, const Var& kernel, const Var& bias, int stride,
                     int padding) {
  const ConvGeometry g = conv_geometry(x.value(), kernel.value(), stride, padding, true);
  check_bias(bias, g.out_c);
  const Index c = g.in_c;

  Tensorf out({g.batch, g.out_h, g.out_w, c});
  const float* w = kernel.value().data();
  for (Index n = 0; n < g.batch; ++n) {
    for (Index yo = 0; yo < g.out_h; ++yo) {
      for (Index xo = 0; xo < g.out_w; ++xo) {
        Eigen::Map<Eigen::ArrayXf> acc(&out.at(n, yo, xo, 0), c);
        for (Index ky = 0; ky < g.kh; ++ky) {
          const Index yi = yo * stride - padding + ky;
          if (yi < 0 || yi >= g.in_h) continue;
          for (Index kx = 0; kx < g.kw; ++kx) {
            const Index xi = xo * stride - padding + kx;
            if (xi < 0 || xi >= g.in_w) continue;
            acc += Eigen::Map<const Eigen::ArrayXf>(&x.value().at(n, yi, xi, 0), c) *
                   Eigen::Map<const Eigen::ArrayXf>(w + (ky * g.kw + kx) * c, c);
          }
        }
      }
    }
  }
  if (bias) out.matrix().rowwise() += bias.value().vector().transpose();

  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(bias);
  Node* xn = x.node().get();
  Node* kn = kernel.node().get();
  Node* bn = bias ? bias.node().get() : nullptr;
  return make_result(std::move(out), std::move(inputs), [xn, kn, bn, g](Node& self) {
    const Tensorf& gy = self.grad;
    const Index c = g.in_c;
    if (bn && bn->requires_grad) {
      Tensorf db(Shape{c});
      db.vector() = gy.matrix().colwise().sum().transpose();
      bn->accumulate_grad(db);
    }
    Tensorf dw(kn->value.shape());
    Tensorf* dx = xn->requires_grad ? &xn->grad_buffer() : nullptr;
    const float* w = kn->value.data();
    for (Index n = 0; n < g.batch; ++n) {
      for (Index yo = 0; yo < g.out_h; ++yo) {
        for (Index xo = 0; xo < g.out_w; ++xo) {
          Eigen::Map<const Eigen::ArrayXf> gy_px(&gy.at(n, yo, xo, 0), c);
          for (Index ky = 0; ky < g.kh; ++ky) {
            const Index yi = yo * g.stride - g.pad + ky;
            if (yi < 0 || yi >= g.in_h) continue;
            for (Index kx = 0; kx < g.kw; ++kx) {
              const Index xi = xo * g.stride - g.pad + kx;
              if (xi < 0 || xi >= g.in_w) continue;
              const Index tap = (ky * g.kw + kx) * c;
              if (kn->requires_grad) {
                Eigen::Map<Eigen::ArrayXf>(dw.data() + tap, c) +=
                    gy_px * Eigen::Map<const Eigen::ArrayXf>(&xn->value.at(n, yi, xi, 0), c);
              }
              if (dx) {
                Eigen::Map<Eigen::ArrayXf>(&dx->at(n, yi, xi, 0), c) +=
                    gy_px * Eigen::Map<const Eigen::ArrayXf>(w + tap, c);
              }
            }
          }
        }
      }
    }
    if (kn->requires_grad) kn->accumulate_grad(dw);
  });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, float eps,
                     Tensorf* batch_mean, Tensorf* batch_var) {
  require_rank4(x.value(), "batch_norm");
  const Index c = x.value().channels();
  require_shape(gamma.shape(), Shape{c}, "batch_norm gamma");
  require_shape(beta.shape(), Shape{c}, "batch_norm beta");
  auto in = x.value().matrix();
  const Index m = in.rows();
  if (m < 1) throw ShapeError("batch_norm over an empty batch");

  const RowVector mean = in.colwise().mean();
  RowMatrix centered = in.rowwise() - mean;
  const RowVector var = centered.array().square().colwise().sum().matrix() / static_cast<float>(m);
  const RowVector inv_std = (var.array() + eps).rsqrt().matrix();

  Tensorf xhat(x.shape());
  xhat.matrix() = centered * inv_std.asDiagonal();
  Tensorf out(x.shape());
  out.matrix() = (xhat.matrix() * gamma.value().vector().asDiagonal()).rowwise() +
                 beta.value().vector().transpose();

  if (batch_mean) *batch_mean = Tensorf(Shape{c}, mean.transpose().array());
  if (batch_var) {
    const float unbias = m > 1 ? static_cast<float>(m) / static_cast<float>(m - 1) : 1.0f;
    *batch_var = Tensorf(Shape{c}, (var.transpose().array() * unbias).eval());
  }

  Node* xn = x.node().get();
  Node* gn = gamma.node().get();
  Node* bn = beta.node().get();
  return make_result(
      std::move(out), {x, gamma, beta},
      [xn, gn, bn, xhat = std::move(xhat), inv_std, m](Node& self) {
        auto gy = self.grad.matrix();
        auto xh = xhat.matrix();
        const RowVector sum_gy = gy.colwise().sum();
        const RowVector sum_gy_xhat = gy.cwiseProduct(xh).colwise().sum();
        if (gn->requires_grad) gn->accumulate_grad(Tensorf(gn->value.shape(), sum_gy_xhat.transpose().array()));
        if (bn->requires_grad) bn->accumulate_grad(Tensorf(bn->value.shape(), sum_gy.transpose().array()));
        if (!xn->requires_grad) return;
        // dx = gamma * inv_std / m * (m * gy - sum(gy) - xhat * sum(gy * xhat))
        const RowVector scale =
            (gn->value.vector().transpose().array() * inv_std.array() / static_cast<float>(m))
                .matrix();
        RowMatrix dx = (gy * static_cast<float>(m)).rowwise() - sum_gy;
        dx -= xh * sum_gy_xhat.asDiagonal();
        xn->grad_buffer().matrix() += dx * scale.asDiagonal();
      });
}

Var batch_norm_infer(const Var& x, const Var& gamma, const Var& beta, const Tensorf& mean,
                     const Tensorf& var, float eps) {
  require_rank4(x.value(), "batch_norm");
  const Index c = x.value().channels();
  require_shape(gamma.shape(), Shape{c}, "batch_norm gamma");
  require_shape(beta.shape(), Shape{c}, "batch_norm beta");
  require_shape(mean.shape(), Shape{c}, "batch_norm mean");
  require_shape(var.shape(), Shape{c}, "batch_norm variance");

  const RowVector inv_std = (var.array() + eps).rsqrt().matrix().transpose();
  const RowVector scale = gamma.value().vector().transpose().cwiseProduct(inv_std);
  const RowVector shift = beta.value().vector().transpose() - mean.vector().transpose().cwiseProduct(scale);
  Tensorf out(x.shape());
  out.matrix() = (x.value().matrix() * scale.asDiagonal()).rowwise() + shift;

  Node* xn = x.node().get();
  Node* gn = gamma.node().get();
  Node* bn = beta.node().get();
  Tensorf mean_copy = mean;
  return make_result(std::move(out), {x, gamma, beta},
                     [xn, gn, bn, scale, inv_std, mean_copy](Node& self) {
                       auto gy = self.grad.matrix();
                       if (bn->requires_grad) {
                         bn->accumulate_grad(Tensorf(bn->value.shape(),
                                                     gy.colwise().sum().transpose().array()));
                       }
                       if (gn->requires_grad) {
                         const RowMatrix xhat =
                             (xn->value.matrix().rowwise() - mean_copy.vector().transpose()) *
                             inv_std.asDiagonal();
                         gn->accumulate_grad(Tensorf(
                             gn->value.shape(),
                             gy.cwiseProduct(xhat).colwise().sum().transpose().array()));
                       }
                       if (xn->requires_grad) {
                         xn->grad_buffer().matrix() += gy * scale.asDiagonal();
                       }
                     });
}

namespace {

template <typename Forward, typename Mask>
Var pointwise_unary(const Var& x, Forward forward, Mask pass_through) {
  Tensorf out(x.shape());
  out.array() = forward(x.value().array());
  Node* xn = x.node().get();
  return make_result(std::move(out), {x}, [xn, pass_through](Node& self) {
    xn->grad_buffer().array() +=
        pass_through(xn->value.array()).select(self.grad.array(), 0.0f);
  });
}

}  // namespace

Var relu(const Var& x) {
  return pointwise_unary(
      x, [](const auto& a) { return a.max(0.0f); },
      [](const auto& a) { return a > 0.0f; });
}

Var relu6(const Var& x) {
  return pointwise_unary(
      x, [](const auto& a) { return a.max(0.0f).min(6.0f); },
      [](const auto& a) { return a > 0.0f && a < 6.0f; });
}

Var max_pool2d(const Var& x, int window, int stride, int padding) {
  require_rank4(x.value(), "max_pool2d");
  const Tensorf& in = x.value();
  const Index n_b = in.batch(), h = in.height(), w = in.width(), c = in.channels();
  const Index oh = conv_output_extent(h, window, stride, padding);
  const Index ow = conv_output_extent(w, window, stride, padding);
  if (oh < 1 || ow < 1) throw ShapeError("pool window larger than input " + in.shape().str());

  Tensorf out({n_b, oh, ow, c}, -std::numeric_limits<float>::infinity());
  std::vector<Index> argmax(static_cast<size_t>(out.size()), -1);
  for (Index n = 0; n < n_b; ++n) {
    for (Index yo = 0; yo < oh; ++yo) {
      for (Index xo = 0; xo < ow; ++xo) {
        const Index o = ((n * oh + yo) * ow + xo) * c;
        for (Index ky = 0; ky < window; ++ky) {
          const Index yi = yo * stride - padding + ky;
          if (yi < 0 || yi >= h) continue;
          for (Index kx = 0; kx < window; ++kx) {
            const Index xi = xo * stride - padding + kx;
            if (xi < 0 || xi >= w) continue;
            const Index i = ((n * h + yi) * w + xi) * c;
            for (Index ch = 0; ch < c; ++ch) {
              if (in[i + ch] > out[o + ch]) {
                out[o + ch] = in[i + ch];
                argmax[static_cast<size_t>(o + ch)] = i + ch;
              }
            }
          }
        }
      }
    }
  }
  Node* xn = x.node().get();
  return make_result(std::move(out), {x}, [xn, argmax = std::move(argmax)](Node& self) {
    Tensorf& dx = xn->grad_buffer();
    for (size_t o = 0; o < argmax.size(); ++o) {
      if (argmax[o] >= 0) dx[argmax[o]] += self.grad[static_cast<Index>(o)];
    }
  });
}

Var adaptive_avg_pool(const Var& x, int bins) {
  require_rank4(x.value(), "adaptive_avg_pool");
  const Tensorf& in = x.value();
  const Index n_b = in.batch(), h = in.height(), w = in.width(), c = in.channels();
  if (bins < 1 || h % bins != 0 || w % bins != 0) {
    throw ShapeError("pooling " + in.shape().str() + " into " + std::to_string(bins) +
                     " bins needs spatial dims divisible by the bin count");
  }
  const Index cell_h = h / bins, cell_w = w / bins;
  const float inv_area = 1.0f / static_cast<float>(cell_h * cell_w);
  Tensorf out({n_b, bins, bins, c});
  for (Index n = 0; n < n_b; ++n) {
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) {
        Eigen::Map<Eigen::ArrayXf>(&out.at(n, y / cell_h, xx / cell_w, 0), c) +=
            Eigen::Map<const Eigen::ArrayXf>(&in.at(n, y, xx, 0), c) * inv_area;
      }
    }
  }
  Node* xn = x.node().get();
  return make_result(std::move(out), {x}, [xn, cell_h, cell_w, inv_area](Node& self) {
    Tensorf& dx = xn->grad_buffer();
    const Index c = dx.channels();
    for (Index n = 0; n < dx.batch(); ++n) {
      for (Index y = 0; y < dx.height(); ++y) {
        for (Index xx = 0; xx < dx.width(); ++xx) {
          Eigen::Map<Eigen::ArrayXf>(&dx.at(n, y, xx, 0), c) +=
              Eigen::Map<const Eigen::ArrayXf>(&self.grad.at(n, y / cell_h, xx / cell_w, 0), c) *
              inv_area;
        }
      }
    }
  });
}

Var upsample_nearest(const Var& x, int factor) {
  require_rank4(x.value(), "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample factor must be >= 1");
  const Tensorf& in = x.value();
  const Index c = in.channels();
  Tensorf out({in.batch(), in.height() * factor, in.width() * factor, c});
  for (Index n = 0; n < out.batch(); ++n) {
    for (Index y = 0; y < out.height(); ++y) {
      for (Index xx = 0; xx < out.width(); ++xx) {
        std::memcpy(&out.at(n, y, xx, 0), &in.at(n, y / factor, xx / factor, 0),
                    static_cast<size_t>(c) * sizeof(float));
      }
    }
  }
  Node* xn = x.node().get();
  return make_result(std::move(out), {x}, [xn, factor](Node& self) {
    Tensorf& dx = xn->grad_buffer();
    const Tensorf& gy = self.grad;
    const Index c = gy.channels();
    for (Index n = 0; n < gy.batch(); ++n) {
      for (Index y = 0; y < gy.height(); ++y) {
        for (Index xx = 0; xx < gy.width(); ++xx) {
          Eigen::Map<Eigen::ArrayXf>(&dx.at(n, y / factor, xx / factor, 0), c) +=
              Eigen::Map<const Eigen::ArrayXf>(&gy.at(n, y, xx, 0), c);
        }
      }
    }
  });
}

Tensorf resize_bilinear(const Tensorf& in, Index out_height, Index out_width) {
  require_rank4(in, "resize_bilinear");
  if (out_height < 1 || out_width < 1) throw ShapeError("resize target must be positive");
  const Index c = in.channels();
  Tensorf out({in.batch(), out_height, out_width, c});
  const Taps ty = bilinear_taps(in.height(), out_height);
  const Taps tx = bilinear_taps(in.width(), out_width);
  using Map = Eigen::Map<const Eigen::ArrayXf>;
  for (Index n = 0; n < in.batch(); ++n) {
    for (Index y = 0; y < out_height; ++y) {
      const size_t yk = static_cast<size_t>(y);
      const float fy = ty.frac[yk];
      for (Index x = 0; x < out_width; ++x) {
        const size_t xk = static_cast<size_t>(x);
        const float fx = tx.frac[xk];
        Eigen::Map<Eigen::ArrayXf>(&out.at(n, y, x, 0), c) =
            (1 - fy) * ((1 - fx) * Map(&in.at(n, ty.lo[yk], tx.lo[xk], 0), c) +
                        fx * Map(&in.at(n, ty.lo[yk], tx.hi[xk], 0), c)) +
            fy * ((1 - fx) * Map(&in.at(n, ty.hi[yk], tx.lo[xk], 0), c) +
                  fx * Map(&in.at(n, ty.hi[yk], tx.hi[xk], 0), c));
      }
    }
  }
  return out;
}

Var resize_bilinear(const Var& x, Index out_height, Index out_width) {
  Tensorf out = resize_bilinear(x.value(), out_height, out_width);
  Node* xn = x.node().get();
  return make_result(std::move(out), {x}, [xn](Node& self) {
    Tensorf& dx = xn->grad_buffer();
    const Tensorf& gy = self.grad;
    const Index c = gy.channels();
    const Taps ty = bilinear_taps(dx.height(), gy.height());
    const Taps tx = bilinear_taps(dx.width(), gy.width());
    for (Index n = 0; n < gy.batch(); ++n) {
      for (Index y = 0; y < gy.height(); ++y) {
        const size_t yk = static_cast<size_t>(y);
        const float fy = ty.frac[yk];
        for (Index x = 0; x < gy.width(); ++x) {
          const size_t xk = static_cast<size_t>(x);
          const float fx = tx.frac[xk];
          Eigen::Map<const Eigen::ArrayXf> g(&gy.at(n, y, x, 0), c);
          auto scatter = [&](Index yi, Index xi, float weight) {
            if (weight != 0.0f) Eigen::Map<Eigen::ArrayXf>(&dx.at(n, yi, xi, 0), c) += weight * g;
          };
          scatter(ty.lo[yk], tx.lo[xk], (1 - fy) * (1 - fx));
          scatter(ty.lo[yk], tx.hi[xk], (1 - fy) * fx);
          scatter(ty.hi[yk], tx.lo[xk], fy * (1 - fx));
          scatter(ty.hi[yk], tx.hi[xk], fy * fx);
        }
      }
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Tensorf& first = parts.front().value();
  require_rank4(first, "concat_channels");
  Index total = 0;
  for (const auto& p : parts) {
    const Tensorf& t = p.value();
    require_rank4(t, "concat_channels");
    if (t.batch() != first.batch() || t.height() != first.height() || t.width() != first.width()) {
      throw ShapeError("concat spatial mismatch: " + first.shape().str() + " vs " + t.shape().str());
    }
    total += t.channels();
  }
  Tensorf out({first.batch(), first.height(), first.width(), total});
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    out.matrix().middleCols(offset, p.value().channels()) = p.value().matrix();
    offsets.push_back(offset);
    offset += p.value().channels();
  }
  std::vector<Node*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node().get());
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [nodes, offsets](Node& self) {
                       for (size_t i = 0; i < nodes.size(); ++i) {
                         Node* n = nodes[i];
                         if (!n->requires_grad) continue;
                         n->grad_buffer().matrix() +=
                             self.grad.matrix().middleCols(offsets[i], n->value.channels());
                       }
                     });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensorf out(a.shape());
  out.array() = a.value().array() + b.value().array();
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_result(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate_grad(self.grad);
    if (bn->requires_grad) bn->accumulate_grad(self.grad);
  });
}

Var softmax(const Var& scores) {
  require_rank4(scores.value(), "softmax");
  Tensorf probs = softmax(scores.value());
  Node* sn = scores.node().get();
  return make_result(probs, {scores}, [sn](Node& self) {
    // dx = p * (g - sum(g * p))
    auto p = self.value.matrix();
    auto g = self.grad.matrix();
    const Eigen::VectorXf dots = p.cwiseProduct(g).rowwise().sum();
    RowMatrix dx = g;
    dx.colwise() -= dots;
    sn->grad_buffer().matrix() += dx.cwiseProduct(p);
  });
}

namespace {

// Normalized per-pixel weights (row order of the NHWC matrix), or empty for
// the plain mean.
std::vector<float> normalized_pixel_weights(const Tensorf& maps, std::span<const LabelGrid> truth,
                                            const LossWeighting& weighting) {
  if (weighting.is_default()) return {};
  const Index classes = maps.channels();
  if (!weighting.class_weights.empty() && static_cast<Index>(weighting.class_weights.size()) != classes) {
    throw ShapeError("class_weights has " + std::to_string(weighting.class_weights.size()) +
                     " entries for " + std::to_string(classes) + " classes");
  }
  const Index hw = maps.height() * maps.width();
  std::vector<float> w(static_cast<size_t>(maps.batch() * hw));
  double total = 0.0;
  for (Index n = 0; n < maps.batch(); ++n) {
    const auto& grid = truth[static_cast<size_t>(n)];
    for (Index i = 0; i < hw; ++i) {
      const int label = grid.data()[i];
      float wi = weighting.class_weights.empty() ? 1.0f : weighting.class_weights[static_cast<size_t>(label)];
      if (label == weighting.ignore_index) wi = 0.0f;
      w[static_cast<size_t>(n * hw + i)] = wi;
      total += wi;
    }
  }
  if (total > 0.0) {
    for (float& wi : w) wi = static_cast<float>(wi / total);
  }
  return w;
}

}  // namespace

Var softmax_cross_entropy(const Var& scores, std::span<const LabelGrid> truth,
                          const LossWeighting& weighting) {
  require_rank4(scores.value(), "softmax_cross_entropy");
  check_label_batch(scores.value(), truth);
  check_finite(scores.value(), "class scores");
  Tensorf probs = softmax(scores.value());
  std::vector<float> weights = normalized_pixel_weights(scores.value(), truth, weighting);

  // log-softmax directly, so confident pixels do not saturate at the clip.
  auto s = scores.value().matrix();
  const Index hw = scores.value().height() * scores.value().width();
  double total = 0.0;
  for (Index n = 0; n < scores.value().batch(); ++n) {
    const auto& grid = truth[static_cast<size_t>(n)];
    for (Index i = 0; i < hw; ++i) {
      const Index r = n * hw + i;
      if (!weights.empty() && weights[static_cast<size_t>(r)] == 0.0f) continue;
      const float peak = s.row(r).maxCoeff();
      const double log_z =
          static_cast<double>(peak) + std::log(static_cast<double>((s.row(r).array() - peak).exp().sum()));
      const double nll = log_z - static_cast<double>(s(r, grid.data()[i]));
      total += weights.empty() ? nll : nll * weights[static_cast<size_t>(r)];
    }
  }
  const auto loss = static_cast<float>(weights.empty() ? total / static_cast<double>(s.rows()) : total);

  Node* sn = scores.node().get();
  std::vector<LabelGrid> labels(truth.begin(), truth.end());
  return make_result(
      Tensorf(Shape{1}, loss), {scores},
      [sn, probs = std::move(probs), labels = std::move(labels), weights = std::move(weights)](Node& self) {
        Tensorf g;
        if (weights.empty()) {
          g = cross_entropy_score_gradient(probs, std::span<const LabelGrid>(labels));
        } else {
          g = probs;
          auto gm = g.matrix();
          const Index hw = probs.height() * probs.width();
          for (Index n = 0; n < probs.batch(); ++n) {
            for (Index i = 0; i < hw; ++i) {
              const Index r = n * hw + i;
              gm(r, labels[static_cast<size_t>(n)].data()[i]) -= 1.0f;
              gm.row(r) *= weights[static_cast<size_t>(r)];
            }
          }
        }
        g.array() *= self.grad[0];
        sn->accumulate_grad(g);
      });
}

Var cross_entropy(const Var& probs, std::span<const LabelGrid> truth, float eps,
                  const LossWeighting& weighting) {
  std::vector<float> weights = normalized_pixel_weights(probs.value(), truth, weighting);
  float loss;
  if (weights.empty()) {
    loss = pixelwise_cross_entropy(probs.value(), truth, eps);
  } else {
    check_label_batch(probs.value(), truth);
    check_finite(probs.value(), "class distribution");
    auto p = probs.value().matrix();
    const Index hw = probs.value().height() * probs.value().width();
    double total = 0.0;
    for (Index n = 0; n < probs.value().batch(); ++n) {
      for (Index i = 0; i < hw; ++i) {
        const Index r = n * hw + i;
        const float q = std::clamp(p(r, truth[static_cast<size_t>(n)].data()[i]), eps, 1.0f - eps);
        total -= static_cast<double>(weights[static_cast<size_t>(r)]) * std::log(static_cast<double>(q));
      }
    }
    loss = static_cast<float>(total);
  }
  Node* pn = probs.node().get();
  std::vector<LabelGrid> labels(truth.begin(), truth.end());
  return make_result(Tensorf(Shape{1}, loss), {probs},
                     [pn, eps, labels = std::move(labels), weights = std::move(weights)](Node& self) {
                       Tensorf& dp = pn->grad_buffer();
                       auto p = pn->value.matrix();
                       auto d = dp.matrix();
                       const Index hw = pn->value.height() * pn->value.width();
                       const float mean_scale = self.grad[0] / static_cast<float>(p.rows());
                       for (Index n = 0; n < pn->value.batch(); ++n) {
                         const auto& grid = labels[static_cast<size_t>(n)];
                         for (Index i = 0; i < hw; ++i) {
                           const Index r = n * hw + i;
                           const float scale =
                               weights.empty() ? mean_scale : self.grad[0] * weights[static_cast<size_t>(r)];
                           const Index k = grid.data()[i];
                           const float q = std::clamp(p(r, k), eps, 1.0f - eps);
                           d(r, k) -= scale / q;
                         }
                       }
                     });
}

Var weighted_sum(const Var& x, const Tensorf& weights) {
  require_shape(weights.shape(), x.shape(), "weighted_sum weights");
  const float total = (x.value().array() * weights.array()).sum();
  Node* xn = x.node().get();
  return make_result(Tensorf(Shape{1}, total), {x}, [xn, weights](Node& self) {
    xn->grad_buffer().array() += weights.array() * self.grad[0];
  });
}

}  // namespace segkit
