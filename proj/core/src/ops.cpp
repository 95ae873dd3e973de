#include "forec/ops.hpp"

#include <algorithm>
#include <cmath>

#include "forec/parallel.hpp"

namespace forec::ops {

namespace {

// Valid ox range so that ox*stride + ix0 lands in [0, w).
inline void ox_range(int ix0, int stride, int w, int ow, int& lo, int& hi) {
  lo = 0;
  if (ix0 < 0) lo = (-ix0 + stride - 1) / stride;
  hi = ow;
  if (ix0 < w) {
    int last = (w - 1 - ix0) / stride;
    hi = std::min(ow, last + 1);
  } else {
    hi = lo;
  }
  if (hi < lo) hi = lo;
}

// Output-pixel block width for the register-tiled conv loops.  Sixteen doubles
// form two independent accumulator vectors, which is enough to hide the fma
// latency chain without spilling.
constexpr int kConvBlock = 16;

// Sixteen-lane double accumulator held as a pair of vector-extension values.
// GCC scalarizes a local double[16] into independent scalar fma chains, so
// the lanes are spelled out as native vector types that stay in registers;
// lane values are identical either way, the packed form is just several
// times faster.  Each lane is an independent accumulator, so results do not
// depend on the target's actual vector width.
#if defined(__GNUC__) || defined(__clang__)
typedef double Vd8 __attribute__((vector_size(64), aligned(8), may_alias));

inline Vd8 vload8(const double* p) { return *reinterpret_cast<const Vd8*>(p); }

inline void vsplat(Vd8& v, double x) { v = Vd8{x, x, x, x, x, x, x, x}; }

inline void vfma(Vd8& a0, Vd8& a1, double w, const double* p) {
  a0 += w * vload8(p);
  a1 += w * vload8(p + 8);
}

inline void vdot(Vd8& a0, Vd8& a1, const double* x, const double* y) {
  a0 += vload8(x) * vload8(y);
  a1 += vload8(x + 8) * vload8(y + 8);
}

inline void vstore8(double* p, const Vd8& v) { *reinterpret_cast<Vd8*>(p) = v; }
#else
struct Vd8 {
  double v[8];
};

inline void vsplat(Vd8& v, double x) {
  for (double& e : v.v) e = x;
}

inline void vfma(Vd8& a0, Vd8& a1, double w, const double* p) {
  for (int j = 0; j < 8; ++j) a0.v[j] += w * p[j];
  for (int j = 0; j < 8; ++j) a1.v[j] += w * p[j + 8];
}

inline void vdot(Vd8& a0, Vd8& a1, const double* x, const double* y) {
  for (int j = 0; j < 8; ++j) a0.v[j] += x[j] * y[j];
  for (int j = 0; j < 8; ++j) a1.v[j] += x[j + 8] * y[j + 8];
}

inline void vstore8(double* p, const Vd8& v) {
  for (int j = 0; j < 8; ++j) p[j] = v.v[j];
}
#endif

// Zero-padded copy of [planes,h,w] data, widened to double up front so the
// tap loops below are pure same-width fmas (float-to-double is exact).  Each
// row gets py/px zeros of border plus a block of trailing zeros so the tiled
// loops can always run full kConvBlock-wide iterations; out-of-range lanes
// read zeros and contribute exact zero terms.  For stride-2 kernels each row
// is stored as [even columns | odd columns], which turns every tap into a
// contiguous load.
struct PaddedPlanes {
  std::vector<double> buf;
  int ph = 0;      // rows per plane
  int rowlen = 0;  // doubles per row
  int half = 0;    // offset of the odd-column half when split, else 0

  const double* row(int plane, int y) const {
    return buf.data() + (size_t(plane) * ph + y) * rowlen;
  }
};

PaddedPlanes pad_planes(const float* src, int planes, int h, int w, int py, int px, int stride) {
  PaddedPlanes p;
  p.ph = h + 2 * py;
  int pw = w + 2 * px;
  int slack = kConvBlock * stride;
  if (stride == 2) {
    p.half = (pw + 1) / 2 + slack;
    p.rowlen = 2 * p.half;
  } else {
    p.rowlen = pw + slack;
  }
  p.buf.assign(size_t(planes) * p.ph * p.rowlen, 0.0);
  for (int pl = 0; pl < planes; ++pl) {
    const float* sp = src + size_t(pl) * h * w;
    for (int y = 0; y < h; ++y) {
      double* dst = p.buf.data() + (size_t(pl) * p.ph + y + py) * p.rowlen;
      const float* sr = sp + size_t(y) * w;
      if (stride == 2) {
        for (int x = 0; x < w; ++x) dst[((x + px) & 1 ? p.half : 0) + ((x + px) >> 1)] = double(sr[x]);
      } else {
        for (int x = 0; x < w; ++x) dst[x + px] = double(sr[x]);
      }
    }
  }
  return p;
}

}  // namespace

ConvDims conv_dims(const std::vector<int>& is, const std::vector<int>& ws, int stride, int pad) {
  if (is.size() != 4) throw ShapeError("conv2d input must be 4-D [N,C,H,W]");
  if (ws.size() != 4) throw ShapeError("conv2d weight must be 4-D [Cout,Cin,kh,kw]");
  if (stride < 1) throw ValueError("conv2d stride must be >= 1");
  if (pad < 0) throw ValueError("conv2d pad must be >= 0");
  ConvDims d;
  d.n = is[0];
  d.cin = is[1];
  d.h = is[2];
  d.w = is[3];
  d.cout = ws[0];
  d.kh = ws[2];
  d.kw = ws[3];
  d.stride = stride;
  d.pad = pad;
  if (ws[1] != d.cin)
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(d.cin) +
                     " channels, weight expects " + std::to_string(ws[1]));
  if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad)
    throw ShapeError("conv2d kernel larger than padded input");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                      int stride, int pad) {
  ConvDims d = conv_dims(input.shape, weight.shape, stride, pad);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != d.cout))
    throw ShapeError("conv2d bias must be [Cout]");
  Tensor out = Tensor::zeros({d.n, d.cout, d.oh, d.ow});

  const float* in = input.data.data();
  const float* wt = weight.data.data();
  const float* bs = bias ? bias->data.data() : nullptr;
  float* op = out.data.data();

  if (d.stride <= 2) {
    // Pad once so the tiled loops never branch: invalid taps read zeros and
    // add exact zero terms.  One task per (n, oy) output row keeps every
    // output element owned by a single worker, and per-element summation
    // order stays (ci,ky,kx) ascending.
    PaddedPlanes pin = pad_planes(in, d.n * d.cin, d.h, d.w, d.pad, d.pad, d.stride);
    parallel_for(int64_t(d.n) * d.oh, [&](int64_t task) {
      int n = int(task / d.oh);
      int oy = int(task % d.oh);
      Vd8 acc0, acc1;
      alignas(64) double tmp[kConvBlock];
      for (int co = 0; co < d.cout; ++co) {
        double bias0 = bs ? double(bs[co]) : 0.0;
        const float* w_co = wt + size_t(co) * d.cin * d.kh * d.kw;
        float* out_row = op + (size_t(size_t(n) * d.cout + co) * d.oh + oy) * d.ow;
        for (int ox0 = 0; ox0 < d.ow; ox0 += kConvBlock) {
          int bw = std::min(kConvBlock, d.ow - ox0);
          vsplat(acc0, bias0);
          vsplat(acc1, bias0);
          for (int ci = 0; ci < d.cin; ++ci) {
            int plane = n * d.cin + ci;
            const float* w_ci = w_co + size_t(ci) * d.kh * d.kw;
            for (int ky = 0; ky < d.kh; ++ky) {
              const double* r = pin.row(plane, oy * d.stride + ky);
              const float* w_row = w_ci + size_t(ky) * d.kw;
              if (d.stride == 1) {
                for (int kx = 0; kx < d.kw; ++kx) vfma(acc0, acc1, w_row[kx], r + ox0 + kx);
              } else {
                for (int kx = 0; kx < d.kw; ++kx)
                  vfma(acc0, acc1, w_row[kx], r + ((kx & 1) ? pin.half : 0) + ox0 + (kx >> 1));
              }
            }
          }
          vstore8(tmp, acc0);
          vstore8(tmp + 8, acc1);
          for (int j = 0; j < bw; ++j) out_row[ox0 + j] = float(tmp[j]);
        }
      }
    });
    return out;
  }

  // Generic-stride fallback, same summation order with bounds checks inline.
  parallel_for(int64_t(d.n) * d.oh, [&](int64_t task) {
    int n = int(task / d.oh);
    int oy = int(task % d.oh);
    std::vector<double> acc(size_t(d.ow));
    const float* in_n = in + size_t(n) * d.cin * d.h * d.w;
    for (int co = 0; co < d.cout; ++co) {
      std::fill(acc.begin(), acc.end(), bs ? double(bs[co]) : 0.0);
      const float* w_co = wt + size_t(co) * d.cin * d.kh * d.kw;
      for (int ci = 0; ci < d.cin; ++ci) {
        for (int ky = 0; ky < d.kh; ++ky) {
          int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          const float* in_row = in_n + (size_t(ci) * d.h + iy) * d.w;
          const float* w_row = w_co + (size_t(ci) * d.kh + ky) * d.kw;
          for (int kx = 0; kx < d.kw; ++kx) {
            double wv = w_row[kx];
            int ix0 = kx - d.pad;
            int lo, hi;
            ox_range(ix0, d.stride, d.w, d.ow, lo, hi);
            for (int ox = lo; ox < hi; ++ox) acc[ox] += wv * double(in_row[ox * d.stride + ix0]);
          }
        }
      }
      float* out_row = op + (size_t(size_t(n) * d.cout + co) * d.oh + oy) * d.ow;
      for (int ox = 0; ox < d.ow; ++ox) out_row[ox] = float(acc[ox]);
    }
  });
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weight, int stride, int pad,
                     const Tensor& dout, Tensor* dinput, Tensor* dweight, Tensor* dbias) {
  ConvDims d = conv_dims(input.shape, weight.shape, stride, pad);
  if (dout.shape != std::vector<int>{d.n, d.cout, d.oh, d.ow})
    throw ShapeError("conv2d backward: dout shape mismatch");

  const float* in = input.data.data();
  const float* wt = weight.data.data();
  const float* do_ = dout.data.data();

  // Shared zero-padded copies: dout rows feed both gradient kernels, input
  // rows feed the weight gradient.  G rows/cols of border cover every tap
  // offset, so the tiled loops below have no bounds checks; padding terms
  // multiply by zero and leave the sums exact.
  int G = std::max({d.kh - 1, d.kw - 1, d.pad});
  bool tiled = d.stride <= 2;
  PaddedPlanes pdo;
  if (tiled && (dinput || dweight))
    pdo = pad_planes(do_, d.n * d.cout, d.oh, d.ow, G, G, 1);

  if (dinput && tiled && d.stride == 1) {
    float* di = dinput->data.data();
    // Stride-1 input gradient is a correlation of dout with the flipped
    // kernel, so it tiles exactly like the forward pass.  Contributions per
    // input element are ordered (co,ky,kx) ascending.
    parallel_for(int64_t(d.n) * d.cin, [&](int64_t task) {
      int n = int(task / d.cin);
      int ci = int(task % d.cin);
      float* di_plane = di + size_t(size_t(n) * d.cin + ci) * d.h * d.w;
      Vd8 acc0, acc1;
      alignas(64) double tmp[kConvBlock];
      for (int iy = 0; iy < d.h; ++iy) {
        float* di_row = di_plane + size_t(iy) * d.w;
        for (int ix0 = 0; ix0 < d.w; ix0 += kConvBlock) {
          int bw = std::min(kConvBlock, d.w - ix0);
          vsplat(acc0, 0.0);
          vsplat(acc1, 0.0);
          for (int co = 0; co < d.cout; ++co) {
            const float* w_ci = wt + (size_t(co) * d.cin + ci) * d.kh * d.kw;
            for (int ky = 0; ky < d.kh; ++ky) {
              const double* r = pdo.row(n * d.cout + co, iy + d.pad - ky + G) + G + ix0 + d.pad;
              const float* w_row = w_ci + size_t(ky) * d.kw;
              for (int kx = 0; kx < d.kw; ++kx) vfma(acc0, acc1, w_row[kx], r - kx);
            }
          }
          vstore8(tmp, acc0);
          vstore8(tmp + 8, acc1);
          for (int j = 0; j < bw; ++j) di_row[ix0 + j] += float(tmp[j]);
        }
      }
    });
  } else if (dinput && tiled) {
    float* di = dinput->data.data();
    // Stride-2 taps hit every other input column, so accumulate the even and
    // odd columns of a 2*kConvBlock-wide tile separately; each tap lands in
    // exactly one of the two with contiguous dout loads.
    parallel_for(int64_t(d.n) * d.cin, [&](int64_t task) {
      int n = int(task / d.cin);
      int ci = int(task % d.cin);
      float* di_plane = di + size_t(size_t(n) * d.cin + ci) * d.h * d.w;
      Vd8 e0, e1, o0, o1;
      alignas(64) double tmp_e[kConvBlock];
      alignas(64) double tmp_o[kConvBlock];
      for (int iy = 0; iy < d.h; ++iy) {
        float* di_row = di_plane + size_t(iy) * d.w;
        for (int ix0 = 0; ix0 < d.w; ix0 += 2 * kConvBlock) {
          vsplat(e0, 0.0);
          vsplat(e1, 0.0);
          vsplat(o0, 0.0);
          vsplat(o1, 0.0);
          for (int co = 0; co < d.cout; ++co) {
            const float* w_ci = wt + (size_t(co) * d.cin + ci) * d.kh * d.kw;
            for (int ky = 0; ky < d.kh; ++ky) {
              int ty = iy + d.pad - ky;
              if (ty & 1) continue;
              const double* r = pdo.row(n * d.cout + co, (ty >> 1) + G) + G;
              const float* w_row = w_ci + size_t(ky) * d.kw;
              for (int kx = 0; kx < d.kw; ++kx) {
                int tx = ix0 + d.pad - kx;
                if (!(tx & 1)) {
                  vfma(e0, e1, w_row[kx], r + (tx >> 1));
                } else {
                  vfma(o0, o1, w_row[kx], r + ((tx + 1) >> 1));
                }
              }
            }
          }
          vstore8(tmp_e, e0);
          vstore8(tmp_e + 8, e1);
          vstore8(tmp_o, o0);
          vstore8(tmp_o + 8, o1);
          for (int j = 0; j < kConvBlock && ix0 + 2 * j < d.w; ++j)
            di_row[ix0 + 2 * j] += float(tmp_e[j]);
          for (int j = 0; j < kConvBlock && ix0 + 2 * j + 1 < d.w; ++j)
            di_row[ix0 + 2 * j + 1] += float(tmp_o[j]);
        }
      }
    });
  } else if (dinput) {
    float* di = dinput->data.data();
    // Generic-stride fallback scatters into a per-plane accumulator;
    // contributions per input element are still ordered (co,ky,kx).
    parallel_for(int64_t(d.n) * d.cin, [&](int64_t task) {
      int n = int(task / d.cin);
      int ci = int(task % d.cin);
      std::vector<double> acc(size_t(d.h) * d.w, 0.0);
      for (int co = 0; co < d.cout; ++co) {
        const float* w_co = wt + size_t(co) * d.cin * d.kh * d.kw;
        const float* do_co = do_ + size_t(size_t(n) * d.cout + co) * d.oh * d.ow;
        for (int ky = 0; ky < d.kh; ++ky) {
          const float* w_row = w_co + (size_t(ci) * d.kh + ky) * d.kw;
          for (int oy = 0; oy < d.oh; ++oy) {
            int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            const float* do_row = do_co + size_t(oy) * d.ow;
            double* acc_row = acc.data() + size_t(iy) * d.w;
            for (int kx = 0; kx < d.kw; ++kx) {
              double wv = w_row[kx];
              int ix0 = kx - d.pad;
              int lo, hi;
              ox_range(ix0, d.stride, d.w, d.ow, lo, hi);
              for (int ox = lo; ox < hi; ++ox)
                acc_row[ox * d.stride + ix0] += wv * double(do_row[ox]);
            }
          }
        }
      }
      float* di_plane = di + size_t(size_t(n) * d.cin + ci) * d.h * d.w;
      for (size_t i = 0; i < acc.size(); ++i) di_plane[i] += float(acc[i]);
    });
  }

  if (dweight) {
    float* dw = dweight->data.data();
    PaddedPlanes pin;
    if (tiled) pin = pad_planes(in, d.n * d.cin, d.h, d.w, d.pad, d.pad, d.stride);
    // Each weight gradient is one long dot product.  A serial sum cannot
    // vectorize without reassociation, so split it over kConvBlock fixed
    // lanes and fold the lanes in ascending order at the end; the lane
    // assignment depends only on shapes, never on worker count.
    parallel_for(int64_t(d.cout) * d.cin, [&](int64_t task) {
      int co = int(task / d.cin);
      int ci = int(task % d.cin);
      Vd8 l0, l1;
      alignas(64) double lanes[kConvBlock];
      for (int ky = 0; ky < d.kh; ++ky) {
        for (int kx = 0; kx < d.kw; ++kx) {
          if (tiled) {
            vsplat(l0, 0.0);
            vsplat(l1, 0.0);
            int xoff = d.stride == 2 ? ((kx & 1) ? pin.half : 0) + (kx >> 1) : kx;
            for (int n = 0; n < d.n; ++n) {
              for (int oy = 0; oy < d.oh; ++oy) {
                const double* s = pin.row(n * d.cin + ci, oy * d.stride + ky) + xoff;
                const double* do_row = pdo.row(n * d.cout + co, oy + G) + G;
                for (int ox = 0; ox < d.ow; ox += kConvBlock) vdot(l0, l1, do_row + ox, s + ox);
              }
            }
            vstore8(lanes, l0);
            vstore8(lanes + 8, l1);
          } else {
            for (int j = 0; j < kConvBlock; ++j) lanes[j] = 0.0;
            int ix0 = kx - d.pad;
            int lo, hi;
            ox_range(ix0, d.stride, d.w, d.ow, lo, hi);
            for (int n = 0; n < d.n; ++n) {
              const float* in_c = in + size_t(size_t(n) * d.cin + ci) * d.h * d.w;
              const float* do_c = do_ + size_t(size_t(n) * d.cout + co) * d.oh * d.ow;
              for (int oy = 0; oy < d.oh; ++oy) {
                int iy = oy * d.stride - d.pad + ky;
                if (iy < 0 || iy >= d.h) continue;
                const float* in_row = in_c + size_t(iy) * d.w;
                const float* do_row = do_c + size_t(oy) * d.ow;
                for (int ox = lo; ox < hi; ++ox)
                  lanes[(ox - lo) % kConvBlock] +=
                      double(do_row[ox]) * double(in_row[ox * d.stride + ix0]);
              }
            }
          }
          double acc = 0.0;
          for (int j = 0; j < kConvBlock; ++j) acc += lanes[j];
          dw[((size_t(co) * d.cin + ci) * d.kh + ky) * d.kw + kx] += float(acc);
        }
      }
    });
  }

  if (dbias) {
    float* db = dbias->data.data();
    for (int co = 0; co < d.cout; ++co) {
      double acc = 0.0;
      for (int n = 0; n < d.n; ++n) {
        const float* do_row = do_ + size_t(size_t(n) * d.cout + co) * d.oh * d.ow;
        for (int i = 0; i < d.oh * d.ow; ++i) acc += double(do_row[i]);
      }
      db[co] += float(acc);
    }
  }
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data) v = v > 0.f ? v : 0.f;
  return out;
}

void relu_backward(const Tensor& input, const Tensor& dout, Tensor& dinput) {
  for (size_t i = 0; i < input.data.size(); ++i)
    if (input.data[i] > 0.f) dinput.data[i] += dout.data[i];
}

Tensor upsample_nearest_forward(const Tensor& input, int factor) {
  if (input.ndim() != 4) throw ShapeError("upsample input must be 4-D");
  if (factor < 1) throw ValueError("upsample factor must be >= 1");
  if (factor == 1) return input;
  int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out = Tensor::zeros({n, c, h * factor, w * factor});
  for (int p = 0; p < n * c; ++p) {
    const float* src = input.data.data() + size_t(p) * h * w;
    float* dst = out.data.data() + size_t(p) * h * w * factor * factor;
    for (int y = 0; y < h * factor; ++y) {
      const float* src_row = src + size_t(y / factor) * w;
      float* dst_row = dst + size_t(y) * w * factor;
      for (int x = 0; x < w * factor; ++x) dst_row[x] = src_row[x / factor];
    }
  }
  return out;
}

void upsample_nearest_backward(const Tensor& dout, int factor, Tensor& dinput) {
  int n = dinput.dim(0), c = dinput.dim(1), h = dinput.dim(2), w = dinput.dim(3);
  if (factor == 1) {
    for (size_t i = 0; i < dinput.data.size(); ++i) dinput.data[i] += dout.data[i];
    return;
  }
  for (int p = 0; p < n * c; ++p) {
    const float* src = dout.data.data() + size_t(p) * h * w * factor * factor;
    float* dst = dinput.data.data() + size_t(p) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int fy = 0; fy < factor; ++fy) {
          const float* row = src + (size_t(y) * factor + fy) * w * factor + size_t(x) * factor;
          for (int fx = 0; fx < factor; ++fx) acc += double(row[fx]);
        }
        dst[size_t(y) * w + x] += float(acc);
      }
    }
  }
}

SoftmaxCeResult softmax_ce_forward(const Tensor& logits, const std::vector<LabelMap>& labels) {
  if (logits.ndim() != 4) throw ShapeError("softmax_ce logits must be 4-D [N,C,H,W]");
  int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (int(labels.size()) != n) throw ShapeError("softmax_ce labels batch size mismatch");
  for (const auto& m : labels)
    if (m.h != h || m.w != w) throw ShapeError("softmax_ce label map size mismatch");

  SoftmaxCeResult r;
  r.probs = Tensor::zeros(logits.shape);
  double loss = 0.0;
  int64_t plane = int64_t(h) * w;
  for (int b = 0; b < n; ++b) {
    const float* lg = logits.data.data() + size_t(b) * c * plane;
    float* pr = r.probs.data.data() + size_t(b) * c * plane;
    for (int64_t px = 0; px < plane; ++px) {
      double maxv = lg[px];
      for (int k = 1; k < c; ++k) maxv = std::max(maxv, double(lg[size_t(k) * plane + px]));
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        double e = std::exp(double(lg[size_t(k) * plane + px]) - maxv);
        pr[size_t(k) * plane + px] = float(e);  // unnormalized until divided below
        sum += e;
      }
      double inv = 1.0 / sum;
      for (int k = 0; k < c; ++k) pr[size_t(k) * plane + px] = float(pr[size_t(k) * plane + px] * inv);
      uint8_t lab = labels[size_t(b)].v[size_t(px)];
      if (lab == kIgnoreLabel) continue;
      if (lab >= c)
        throw ValueError("softmax_ce label " + std::to_string(int(lab)) + " out of range for " +
                         std::to_string(c) + " classes");
      loss += std::log(sum) - (double(lg[size_t(lab) * plane + px]) - maxv);
      ++r.valid;
    }
  }
  r.loss = r.valid > 0 ? float(loss / double(r.valid)) : 0.f;
  return r;
}

void softmax_ce_backward(const SoftmaxCeResult& fwd, const std::vector<LabelMap>& labels,
                         float seed, Tensor& dlogits) {
  if (fwd.valid == 0) return;
  int n = fwd.probs.dim(0), c = fwd.probs.dim(1), h = fwd.probs.dim(2), w = fwd.probs.dim(3);
  int64_t plane = int64_t(h) * w;
  float scale = seed / float(fwd.valid);
  for (int b = 0; b < n; ++b) {
    const float* pr = fwd.probs.data.data() + size_t(b) * c * plane;
    float* dl = dlogits.data.data() + size_t(b) * c * plane;
    for (int64_t px = 0; px < plane; ++px) {
      uint8_t lab = labels[size_t(b)].v[size_t(px)];
      if (lab == kIgnoreLabel) continue;
      for (int k = 0; k < c; ++k) {
        float g = pr[size_t(k) * plane + px] - (k == int(lab) ? 1.f : 0.f);
        dl[size_t(k) * plane + px] += scale * g;
      }
    }
  }
}

MaskedMseResult masked_mse_forward(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (!pred.same_shape(target)) throw ShapeError("masked_mse pred/target shape mismatch");
  if (pred.ndim() != 4) throw ShapeError("masked_mse expects 4-D tensors");
  int n = pred.dim(0), c = pred.dim(1), h = pred.dim(2), w = pred.dim(3);
  if (mask.shape != std::vector<int>{n, 1, h, w})
    throw ShapeError("masked_mse mask must be [N,1,H,W]");
  MaskedMseResult r;
  int64_t plane = int64_t(h) * w;
  double sum = 0.0;
  for (int b = 0; b < n; ++b) {
    const float* mk = mask.data.data() + size_t(b) * plane;
    const float* pd = pred.data.data() + size_t(b) * c * plane;
    const float* tg = target.data.data() + size_t(b) * c * plane;
    for (int64_t px = 0; px < plane; ++px) {
      float m = mk[px];
      if (m == 0.f) continue;
      if (m != 1.f) throw ValueError("masked_mse mask must be binary");
      ++r.masked_in;
      for (int k = 0; k < c; ++k) {
        double diff = double(pd[size_t(k) * plane + px]) - double(tg[size_t(k) * plane + px]);
        sum += diff * diff;
      }
    }
  }
  r.loss = r.masked_in > 0 ? float(sum / (double(c) * double(r.masked_in))) : 0.f;
  return r;
}

void masked_mse_backward(const Tensor& pred, const Tensor& target, const Tensor& mask,
                         int64_t masked_in, float seed, Tensor& dpred) {
  if (masked_in == 0) return;
  int n = pred.dim(0), c = pred.dim(1), h = pred.dim(2), w = pred.dim(3);
  int64_t plane = int64_t(h) * w;
  float scale = seed * 2.f / (float(c) * float(masked_in));
  for (int b = 0; b < n; ++b) {
    const float* mk = mask.data.data() + size_t(b) * plane;
    const float* pd = pred.data.data() + size_t(b) * c * plane;
    const float* tg = target.data.data() + size_t(b) * c * plane;
    float* dp = dpred.data.data() + size_t(b) * c * plane;
    for (int64_t px = 0; px < plane; ++px) {
      if (mk[px] == 0.f) continue;
      for (int k = 0; k < c; ++k)
        dp[size_t(k) * plane + px] += scale * (pd[size_t(k) * plane + px] - tg[size_t(k) * plane + px]);
    }
  }
}

Tensor softmax_channels(const Tensor& logits) {
  if (logits.ndim() != 4) throw ShapeError("softmax_channels expects [N,C,H,W]");
  int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  Tensor probs = Tensor::zeros(logits.shape);
  int64_t plane = int64_t(h) * w;
  for (int b = 0; b < n; ++b) {
    const float* lg = logits.data.data() + size_t(b) * c * plane;
    float* pr = probs.data.data() + size_t(b) * c * plane;
    for (int64_t px = 0; px < plane; ++px) {
      double maxv = lg[px];
      for (int k = 1; k < c; ++k) maxv = std::max(maxv, double(lg[size_t(k) * plane + px]));
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        double e = std::exp(double(lg[size_t(k) * plane + px]) - maxv);
        pr[size_t(k) * plane + px] = float(e);
        sum += e;
      }
      double inv = 1.0 / sum;
      for (int k = 0; k < c; ++k) pr[size_t(k) * plane + px] = float(pr[size_t(k) * plane + px] * inv);
    }
  }
  return probs;
}

LabelMap argmax_channels(const Tensor& logits, int n) {
  int c, h, w;
  const float* base;
  if (logits.ndim() == 4) {
    c = logits.dim(1);
    h = logits.dim(2);
    w = logits.dim(3);
    base = logits.data.data() + size_t(n) * c * h * w;
  } else if (logits.ndim() == 3) {
    c = logits.dim(0);
    h = logits.dim(1);
    w = logits.dim(2);
    base = logits.data.data();
  } else {
    throw ShapeError("argmax_channels expects [C,H,W] or [N,C,H,W]");
  }
  LabelMap out(h, w);
  int64_t plane = int64_t(h) * w;
  for (int64_t px = 0; px < plane; ++px) {
    int best = 0;
    float bv = base[px];
    for (int k = 1; k < c; ++k) {
      float v = base[size_t(k) * plane + px];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    out.v[size_t(px)] = uint8_t(best);
  }
  return out;
}

}  // namespace forec::ops
