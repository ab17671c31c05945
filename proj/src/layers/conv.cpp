// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <limits>
#include <memory>

#include "echoreg/blas.hpp"
#include "echoreg/layers.hpp"

namespace echoreg::layers {
namespace {

struct Volume {
  std::size_t t, h, w, c;
};

struct ConvPlan {
  std::size_t batch;
  Volume in;
  ConvGeometry gt, gh, gw;
  std::size_t ot, oh, ow;
  std::size_t out_channels;

  std::size_t positions() const { return ot * oh * ow; }
  std::size_t patch() const { return gt.filter * gh.filter * gw.filter * in.c; }
  std::size_t in_sample() const { return in.t * in.h * in.w * in.c; }
  bool pointwise() const {
    return gt.filter == 1 && gh.filter == 1 && gw.filter == 1 && gt.stride == 1 &&
           gh.stride == 1 && gw.stride == 1;
  }
};

void require_rank5(const Shape& s, const char* op) {
  if (s.size() != 5) {
    throw ShapeError(std::string(op) + " expects batch x T x H x W x C, got " +
                     shape_to_string(s));
  }
}

ConvPlan plan_conv(const Shape& input, const ConvSpec& spec) {
  require_rank5(input, "conv3d");
  if (input[4] != spec.in_channels) {
    throw ShapeError("conv3d: input has " + std::to_string(input[4]) + " channels, expected " +
                     std::to_string(spec.in_channels));
  }
  ConvPlan p;
  p.batch = input[0];
  p.in = {input[1], input[2], input[3], input[4]};
  p.gt = make_geometry(p.in.t, spec.kernel[0], spec.stride[0], spec.padding);
  p.gh = make_geometry(p.in.h, spec.kernel[1], spec.stride[1], spec.padding);
  p.gw = make_geometry(p.in.w, spec.kernel[2], spec.stride[2], spec.padding);
  try {
    p.ot = conv_output_extent(p.gt);
    p.oh = conv_output_extent(p.gh);
    p.ow = conv_output_extent(p.gw);
  } catch (const std::invalid_argument& e) {
    throw ShapeError(std::string("conv3d: ") + e.what() + " for input " + shape_to_string(input));
  }
  p.out_channels = spec.out_channels;
  return p;
}

// Input coordinate of output index o at kernel offset k, or -1 in padding.
inline long source(const ConvGeometry& g, std::size_t o, std::size_t k) {
  const long i = static_cast<long>(o * g.stride + k) - static_cast<long>(g.pad_start);
  return (i < 0 || i >= static_cast<long>(g.input)) ? -1 : i;
}

// Rows are output positions, columns (kt, kh, kw, c).
void im2col(const ConvPlan& p, const double* x, double* col) {
  const std::size_t c = p.in.c;
  const std::size_t row_width = p.patch();
  std::size_t row = 0;
  for (std::size_t ot = 0; ot < p.ot; ++ot) {
    for (std::size_t oh = 0; oh < p.oh; ++oh) {
      for (std::size_t ow = 0; ow < p.ow; ++ow, ++row) {
        double* dst = col + row * row_width;
        for (std::size_t kt = 0; kt < p.gt.filter; ++kt) {
          const long it = source(p.gt, ot, kt);
          for (std::size_t kh = 0; kh < p.gh.filter; ++kh) {
            const long ih = it < 0 ? -1 : source(p.gh, oh, kh);
            for (std::size_t kw = 0; kw < p.gw.filter; ++kw, dst += c) {
              const long iw = ih < 0 ? -1 : source(p.gw, ow, kw);
              if (iw < 0) {
                std::fill_n(dst, c, 0.0);
              } else {
                const std::size_t off =
                    ((static_cast<std::size_t>(it) * p.in.h + static_cast<std::size_t>(ih)) *
                         p.in.w +
                     static_cast<std::size_t>(iw)) *
                    c;
                std::copy_n(x + off, c, dst);
              }
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvPlan& p, const double* col, double* dx) {
  const std::size_t c = p.in.c;
  const std::size_t row_width = p.patch();
  std::size_t row = 0;
  for (std::size_t ot = 0; ot < p.ot; ++ot) {
    for (std::size_t oh = 0; oh < p.oh; ++oh) {
      for (std::size_t ow = 0; ow < p.ow; ++ow, ++row) {
        const double* src = col + row * row_width;
        for (std::size_t kt = 0; kt < p.gt.filter; ++kt) {
          const long it = source(p.gt, ot, kt);
          for (std::size_t kh = 0; kh < p.gh.filter; ++kh) {
            const long ih = it < 0 ? -1 : source(p.gh, oh, kh);
            for (std::size_t kw = 0; kw < p.gw.filter; ++kw, src += c) {
              const long iw = ih < 0 ? -1 : source(p.gw, ow, kw);
              if (iw < 0) continue;
              double* dst = dx + ((static_cast<std::size_t>(it) * p.in.h +
                                   static_cast<std::size_t>(ih)) *
                                      p.in.w +
                                  static_cast<std::size_t>(iw)) *
                                     c;
              for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Shape conv3d_output_shape(const Shape& input, const ConvSpec& spec) {
  const ConvPlan p = plan_conv(input, spec);
  return {p.batch, p.ot, p.oh, p.ow, p.out_channels};
}

Var conv3d(const Var& input, const Var& weights, const Var& bias, const ConvSpec& spec) {
  const ConvPlan p = plan_conv(input.shape(), spec);
  if (weights.shape() != spec.weight_shape()) {
    throw ShapeError("conv3d: weights " + shape_to_string(weights.shape()) + ", expected " +
                     shape_to_string(spec.weight_shape()));
  }
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv3d: bias " + shape_to_string(bias.shape()) + ", expected (" +
                     std::to_string(spec.out_channels) + ")");
  }
  const std::size_t positions = p.positions();
  const std::size_t patch = p.patch();
  const std::size_t k = p.out_channels;
  Tensor out({p.batch, p.ot, p.oh, p.ow, k});
  const double* x = input.value().data().data();
  const double* w = weights.value().data().data();
  std::vector<double> col(p.pointwise() ? 0 : positions * patch);
  for (std::size_t b = 0; b < p.batch; ++b) {
    const double* xb = x + b * p.in_sample();
    const double* rows = xb;
    if (!p.pointwise()) {
      im2col(p, xb, col.data());
      rows = col.data();
    }
    blas::gemm(false, false, positions, k, patch, 1.0, rows, w, 0.0,
               &out[b * positions * k]);
  }
  if (has_bias) {
    const auto bv = bias.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); i += k) {
      for (std::size_t j = 0; j < k; ++j) o[i + j] += bv[j];
    }
  }

  std::vector<Var> parents{input, weights};
  if (has_bias) parents.push_back(bias);
  return make_op(
      "conv3d", std::move(out), std::move(parents),
      [p, has_bias](const Node& self, const Tensor& g) -> ParentGrads {
        const Var& in = self.parents[0];
        const Var& wt = self.parents[1];
        const std::size_t positions = p.positions();
        const std::size_t patch = p.patch();
        const std::size_t k = p.out_channels;
        const double* x = in.value().data().data();
        const double* w = wt.value().data().data();
        const double* gy = g.data().data();
        ParentGrads grads(self.parents.size());
        Tensor gx, gw;
        if (in.requires_grad()) gx = Tensor(in.shape());
        if (wt.requires_grad()) gw = Tensor(wt.shape());
        std::vector<double> col(p.pointwise() ? 0 : positions * patch);
        std::vector<double> dcol(p.pointwise() || gx.empty() ? 0 : positions * patch);
        for (std::size_t b = 0; b < p.batch; ++b) {
          const double* xb = x + b * p.in_sample();
          const double* gyb = gy + b * positions * k;
          if (!gw.empty()) {
            const double* rows = xb;
            if (!p.pointwise()) {
              im2col(p, xb, col.data());
              rows = col.data();
            }
            blas::gemm(true, false, patch, k, positions, 1.0, rows, gyb, 1.0, &gw[0]);
          }
          if (!gx.empty()) {
            double* gxb = &gx[b * p.in_sample()];
            if (p.pointwise()) {
              blas::gemm(false, true, positions, patch, k, 1.0, gyb, w, 0.0, gxb);
            } else {
              blas::gemm(false, true, positions, patch, k, 1.0, gyb, w, 0.0, dcol.data());
              col2im_add(p, dcol.data(), gxb);
            }
          }
        }
        if (!gx.empty()) grads[0] = std::move(gx);
        if (!gw.empty()) grads[1] = std::move(gw);
        if (has_bias && self.parents[2].requires_grad()) {
          Tensor gb({k});
          for (std::size_t i = 0; i < g.numel(); i += k) {
            for (std::size_t j = 0; j < k; ++j) gb[j] += g[i + j];
          }
          grads[2] = std::move(gb);
        }
        return grads;
      });
}

namespace {

struct PoolPlan {
  std::size_t batch;
  Volume in;
  ConvGeometry gt, gh, gw;
  std::size_t ot, oh, ow;
};

PoolPlan plan_pool(const Shape& input, const PoolSpec& spec) {
  require_rank5(input, "pool3d");
  PoolPlan p;
  p.batch = input[0];
  p.in = {input[1], input[2], input[3], input[4]};
  p.gt = make_geometry(p.in.t, spec.window[0], spec.stride[0], spec.padding);
  p.gh = make_geometry(p.in.h, spec.window[1], spec.stride[1], spec.padding);
  p.gw = make_geometry(p.in.w, spec.window[2], spec.stride[2], spec.padding);
  try {
    p.ot = conv_output_extent(p.gt);
    p.oh = conv_output_extent(p.gh);
    p.ow = conv_output_extent(p.gw);
  } catch (const std::invalid_argument& e) {
    throw ShapeError(std::string("pool3d: ") + e.what() + " for input " + shape_to_string(input));
  }
  return p;
}

struct Range {
  std::size_t lo, hi;
};

// Valid input range of a window; never empty for valid or same padding.
inline Range window(const ConvGeometry& g, std::size_t o) {
  const long start = static_cast<long>(o * g.stride) - static_cast<long>(g.pad_start);
  const long lo = std::max(start, 0L);
  const long hi = std::min(start + static_cast<long>(g.filter), static_cast<long>(g.input));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Calls f(output_offset, input_offsets...) for every valid window position.
template <typename F>
void for_each_window(const PoolPlan& p, F f) {
  const std::size_t c = p.in.c;
  for (std::size_t b = 0; b < p.batch; ++b) {
    for (std::size_t ot = 0; ot < p.ot; ++ot) {
      const Range rt = window(p.gt, ot);
      for (std::size_t oh = 0; oh < p.oh; ++oh) {
        const Range rh = window(p.gh, oh);
        for (std::size_t ow = 0; ow < p.ow; ++ow) {
          const Range rw = window(p.gw, ow);
          const std::size_t out_off = (((b * p.ot + ot) * p.oh + oh) * p.ow + ow) * c;
          f(out_off, b, rt, rh, rw);
        }
      }
    }
  }
}

inline std::size_t in_offset(const PoolPlan& p, std::size_t b, std::size_t t, std::size_t h,
                             std::size_t w) {
  return (((b * p.in.t + t) * p.in.h + h) * p.in.w + w) * p.in.c;
}

Var global_avg_pool(const Var& input) {
  require_rank5(input.shape(), "global average pool");
  const std::size_t batch = input.shape()[0];
  const std::size_t c = input.shape()[4];
  const std::size_t count = input.numel() / (batch * c);
  Tensor out({batch, c});
  const auto x = input.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = &x[(b * count + i) * c];
      for (std::size_t j = 0; j < c; ++j) out[b * c + j] += row[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (double& v : out.data()) v *= inv;
  return make_op("global_avg_pool", std::move(out), {input},
                 [batch, c, count, inv](const Node& self, const Tensor& g) -> ParentGrads {
                   Tensor gx(self.parents[0].shape());
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t i = 0; i < count; ++i) {
                       double* row = &gx[(b * count + i) * c];
                       for (std::size_t j = 0; j < c; ++j) row[j] = g[b * c + j] * inv;
                     }
                   }
                   return {std::move(gx)};
                 });
}

Var max_pool(const Var& input, const PoolPlan& p) {
  const std::size_t c = p.in.c;
  Tensor out({p.batch, p.ot, p.oh, p.ow, c});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const auto x = input.value().data();
  for_each_window(p, [&](std::size_t o, std::size_t b, Range rt, Range rh, Range rw) {
    double* best = &out[o];
    std::size_t* arg = &(*argmax)[o];
    std::fill_n(best, c, -std::numeric_limits<double>::infinity());
    for (std::size_t t = rt.lo; t < rt.hi; ++t) {
      for (std::size_t h = rh.lo; h < rh.hi; ++h) {
        for (std::size_t w = rw.lo; w < rw.hi; ++w) {
          const std::size_t i = in_offset(p, b, t, h, w);
          for (std::size_t j = 0; j < c; ++j) {
            // Strict comparison keeps the first maximum in scan order.
            if (x[i + j] > best[j]) {
              best[j] = x[i + j];
              arg[j] = i + j;
            }
          }
        }
      }
    }
  });
  return make_op("max_pool3d", std::move(out), {input},
                 [argmax](const Node& self, const Tensor& g) -> ParentGrads {
                   Tensor gx(self.parents[0].shape());
                   for (std::size_t o = 0; o < g.numel(); ++o) gx[(*argmax)[o]] += g[o];
                   return {std::move(gx)};
                 });
}

Var avg_pool(const Var& input, const PoolPlan& p) {
  const std::size_t c = p.in.c;
  Tensor out({p.batch, p.ot, p.oh, p.ow, c});
  const auto x = input.value().data();
  for_each_window(p, [&](std::size_t o, std::size_t b, Range rt, Range rh, Range rw) {
    double* acc = &out[o];
    for (std::size_t t = rt.lo; t < rt.hi; ++t) {
      for (std::size_t h = rh.lo; h < rh.hi; ++h) {
        for (std::size_t w = rw.lo; w < rw.hi; ++w) {
          const std::size_t i = in_offset(p, b, t, h, w);
          for (std::size_t j = 0; j < c; ++j) acc[j] += x[i + j];
        }
      }
    }
    const double inv =
        1.0 / static_cast<double>((rt.hi - rt.lo) * (rh.hi - rh.lo) * (rw.hi - rw.lo));
    for (std::size_t j = 0; j < c; ++j) acc[j] *= inv;
  });
  return make_op("avg_pool3d", std::move(out), {input},
                 [p](const Node& self, const Tensor& g) -> ParentGrads {
                   Tensor gx(self.parents[0].shape());
                   const std::size_t c = p.in.c;
                   for_each_window(p, [&](std::size_t o, std::size_t b, Range rt, Range rh,
                                          Range rw) {
                     const double inv = 1.0 / static_cast<double>((rt.hi - rt.lo) *
                                                                  (rh.hi - rh.lo) *
                                                                  (rw.hi - rw.lo));
                     for (std::size_t t = rt.lo; t < rt.hi; ++t) {
                       for (std::size_t h = rh.lo; h < rh.hi; ++h) {
                         for (std::size_t w = rw.lo; w < rw.hi; ++w) {
                           double* dst = &gx[in_offset(p, b, t, h, w)];
                           for (std::size_t j = 0; j < c; ++j) dst[j] += g[o + j] * inv;
                         }
                       }
                     }
                   });
                   return {std::move(gx)};
                 });
}

}  // namespace

Shape pool3d_output_shape(const Shape& input, const PoolSpec& spec) {
  if (spec.kind == PoolKind::kGlobalAvg) {
    require_rank5(input, "global average pool");
    return {input[0], input[4]};
  }
  const PoolPlan p = plan_pool(input, spec);
  return {p.batch, p.ot, p.oh, p.ow, p.in.c};
}

Var pool3d(const Var& input, const PoolSpec& spec) {
  if (spec.kind == PoolKind::kGlobalAvg) return global_avg_pool(input);
  const PoolPlan p = plan_pool(input.shape(), spec);
  return spec.kind == PoolKind::kMax ? max_pool(input, p) : avg_pool(input, p);
}

}  // namespace echoreg::layers
