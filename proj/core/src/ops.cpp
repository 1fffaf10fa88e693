#include "ca3/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ca3::ops {
namespace {

using std::ptrdiff_t;
using std::size_t;

std::string shapes(const Shape& a, const Shape& b) { return to_string(a) + " and " + to_string(b); }

// Geometry of a strided 2-D cross-correlation: "in" is [N,C,H,W], "out" is
// [N,F,OH,OW], weight is [F,C,KH,KW]. Transposed convolutions reuse the same
// kernels with the roles of in/out swapped.
struct Geom {
  size_t n, c, h, w, f, oh, ow, kh, kw, sh, sw, ph, pw;
};

// Output positions o in [lo, hi) for which o*stride + k - pad lands in [0, extent).
inline void valid_range(size_t k, size_t stride, size_t pad, size_t extent, size_t out_extent, size_t& lo,
                        size_t& hi) {
  const auto sk = static_cast<ptrdiff_t>(k);
  const auto sp = static_cast<ptrdiff_t>(pad);
  const auto ss = static_cast<ptrdiff_t>(stride);
  ptrdiff_t l = 0;
  if (sp > sk) l = (sp - sk + ss - 1) / ss;
  const ptrdiff_t last = static_cast<ptrdiff_t>(extent) - 1 + sp - sk;
  ptrdiff_t h = last < 0 ? 0 : last / ss + 1;
  h = std::min<ptrdiff_t>(h, static_cast<ptrdiff_t>(out_extent));
  lo = static_cast<size_t>(l);
  hi = static_cast<size_t>(std::max(h, l));
}

// out[n,f,o] += sum_c,k in[n,c,o*s+k-p] * w[f,c,k]
template <typename T>
void corr_gather(const Geom& g, const T* in, const T* w, T* out) {
  for (size_t n = 0; n < g.n; ++n) {
    for (size_t f = 0; f < g.f; ++f) {
      T* o = out + (n * g.f + f) * g.oh * g.ow;
      for (size_t c = 0; c < g.c; ++c) {
        const T* x = in + (n * g.c + c) * g.h * g.w;
        const T* wk = w + (f * g.c + c) * g.kh * g.kw;
        for (size_t ki = 0; ki < g.kh; ++ki) {
          size_t oy0, oy1;
          valid_range(ki, g.sh, g.ph, g.h, g.oh, oy0, oy1);
          for (size_t kj = 0; kj < g.kw; ++kj) {
            size_t ox0, ox1;
            valid_range(kj, g.sw, g.pw, g.w, g.ow, ox0, ox1);
            const T wv = wk[ki * g.kw + kj];
            for (size_t oy = oy0; oy < oy1; ++oy) {
              const T* xrow = x + (oy * g.sh + ki - g.ph) * g.w + kj - g.pw;
              T* orow = o + oy * g.ow;
              for (size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xrow[ox * g.sw];
            }
          }
        }
      }
    }
  }
}

// in_grad[n,c,o*s+k-p] += sum_f out[n,f,o] * w[f,c,k]
template <typename T>
void corr_scatter(const Geom& g, const T* out, const T* w, T* in) {
  for (size_t n = 0; n < g.n; ++n) {
    for (size_t f = 0; f < g.f; ++f) {
      const T* o = out + (n * g.f + f) * g.oh * g.ow;
      for (size_t c = 0; c < g.c; ++c) {
        T* x = in + (n * g.c + c) * g.h * g.w;
        const T* wk = w + (f * g.c + c) * g.kh * g.kw;
        for (size_t ki = 0; ki < g.kh; ++ki) {
          size_t oy0, oy1;
          valid_range(ki, g.sh, g.ph, g.h, g.oh, oy0, oy1);
          for (size_t kj = 0; kj < g.kw; ++kj) {
            size_t ox0, ox1;
            valid_range(kj, g.sw, g.pw, g.w, g.ow, ox0, ox1);
            const T wv = wk[ki * g.kw + kj];
            for (size_t oy = oy0; oy < oy1; ++oy) {
              T* xrow = x + (oy * g.sh + ki - g.ph) * g.w + kj - g.pw;
              const T* orow = o + oy * g.ow;
              for (size_t ox = ox0; ox < ox1; ++ox) xrow[ox * g.sw] += wv * orow[ox];
            }
          }
        }
      }
    }
  }
}

// w_grad[f,c,k] += sum_n,o in[n,c,o*s+k-p] * out[n,f,o]
template <typename T>
void corr_weight_grad(const Geom& g, const T* in, const T* out, T* wgrad) {
  for (size_t f = 0; f < g.f; ++f) {
    for (size_t c = 0; c < g.c; ++c) {
      T* wk = wgrad + (f * g.c + c) * g.kh * g.kw;
      for (size_t ki = 0; ki < g.kh; ++ki) {
        size_t oy0, oy1;
        valid_range(ki, g.sh, g.ph, g.h, g.oh, oy0, oy1);
        for (size_t kj = 0; kj < g.kw; ++kj) {
          size_t ox0, ox1;
          valid_range(kj, g.sw, g.pw, g.w, g.ow, ox0, ox1);
          T acc = 0;
          for (size_t n = 0; n < g.n; ++n) {
            const T* x = in + (n * g.c + c) * g.h * g.w;
            const T* o = out + (n * g.f + f) * g.oh * g.ow;
            for (size_t oy = oy0; oy < oy1; ++oy) {
              const T* xrow = x + (oy * g.sh + ki - g.ph) * g.w + kj - g.pw;
              const T* orow = o + oy * g.ow;
              for (size_t ox = ox0; ox < ox1; ++ox) acc += xrow[ox * g.sw] * orow[ox];
            }
          }
          wk[ki * g.kw + kj] += acc;
        }
      }
    }
  }
}

// Adds bias[f] to every spatial position of channel f.
template <typename T>
void add_channel_bias(std::span<T> out, std::span<const T> bias, size_t n, size_t f, size_t spatial) {
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < f; ++j) std::fill_n(out.data() + (i * f + j) * spatial, spatial, bias[j]);
}

template <typename T>
void channel_bias_grad(std::span<const T> gout, std::vector<T>& gbias, size_t n, size_t f, size_t spatial) {
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < f; ++j) {
      const T* p = gout.data() + (i * f + j) * spatial;
      T acc = 0;
      for (size_t s = 0; s < spatial; ++s) acc += p[s];
      gbias[j] += acc;
    }
}

// Shared implementation for 1-D and 2-D convolutions. 1-D tensors are viewed
// as 2-D with H = 1.
template <typename T>
BasicTensor<T> conv_impl(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                         const BasicTensor<T>& bias, const ConvParams& p, bool two_d, const char* name) {
  const size_t rank = two_d ? 4 : 3;
  if (input.rank() != rank || weight.rank() != rank) {
    throw ShapeError(std::string(name) + ": expected rank-" + std::to_string(rank) + " input and weight, got " +
                     shapes(input.shape(), weight.shape()));
  }
  if (p.stride < 1) throw ShapeError(std::string(name) + ": stride must be >= 1");
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError(std::string(name) + ": input channels do not match weight channels: input " +
                     to_string(input.shape()) + " vs weight " + to_string(weight.shape()));
  }
  if (bias.size() != weight.dim(0)) {
    throw ShapeError(std::string(name) + ": bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  Geom g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = two_d ? input.dim(2) : 1;
  g.w = input.dim(rank - 1);
  g.f = weight.dim(0);
  g.kh = two_d ? weight.dim(2) : 1;
  g.kw = weight.dim(rank - 1);
  g.sh = two_d ? p.stride : 1;
  g.sw = p.stride;
  g.ph = two_d ? p.padding : 0;
  g.pw = p.padding;
  if (g.kh > g.h + 2 * g.ph || g.kw > g.w + 2 * g.pw) {
    throw ShapeError(std::string(name) + ": kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(input.shape()));
  }
  g.oh = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.ow = (g.w + 2 * g.pw - g.kw) / g.sw + 1;

  Shape out_shape = two_d ? Shape{g.n, g.f, g.oh, g.ow} : Shape{g.n, g.f, g.ow};
  std::vector<T> out(numel(out_shape));
  add_channel_bias<T>(out, bias.data(), g.n, g.f, g.oh * g.ow);
  corr_gather(g, input.data().data(), weight.data().data(), out.data());

  const bool track = tape.wants({&input, &weight, &bias});
  BasicTensor<T> result(std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record(name, result, [g, input, weight, bias, result]() mutable {
      const auto gout = result.grad();
      if (input.requires_grad()) corr_scatter(g, gout.data(), weight.data().data(), input.grad_buffer().data());
      if (weight.requires_grad())
        corr_weight_grad(g, input.data().data(), gout.data(), weight.grad_buffer().data());
      if (bias.requires_grad()) channel_bias_grad(gout, bias.grad_buffer(), g.n, g.f, g.oh * g.ow);
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> conv_transpose_impl(BasicTape<T>& tape, const BasicTensor<T>& input,
                                   const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                                   const ConvParams& p, bool two_d, const char* name) {
  const size_t rank = two_d ? 4 : 3;
  if (input.rank() != rank || weight.rank() != rank) {
    throw ShapeError(std::string(name) + ": expected rank-" + std::to_string(rank) + " input and weight, got " +
                     shapes(input.shape(), weight.shape()));
  }
  if (p.stride < 1) throw ShapeError(std::string(name) + ": stride must be >= 1");
  if (p.output_padding >= p.stride && p.output_padding != 0) {
    throw ShapeError(std::string(name) + ": output_padding must be smaller than stride");
  }
  if (input.dim(1) != weight.dim(0)) {
    throw ShapeError(std::string(name) + ": input channels do not match weight channels: input " +
                     to_string(input.shape()) + " vs weight " + to_string(weight.shape()));
  }
  if (bias.size() != weight.dim(1)) {
    throw ShapeError(std::string(name) + ": bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  // Conv-role geometry: the transposed op's output is the correlation's input.
  Geom g{};
  g.n = input.dim(0);
  g.f = input.dim(1);
  g.c = weight.dim(1);
  g.oh = two_d ? input.dim(2) : 1;
  g.ow = input.dim(rank - 1);
  g.kh = two_d ? weight.dim(2) : 1;
  g.kw = weight.dim(rank - 1);
  g.sh = two_d ? p.stride : 1;
  g.sw = p.stride;
  g.ph = two_d ? p.padding : 0;
  g.pw = p.padding;
  const auto extent = [&](size_t in, size_t k, size_t s, size_t pad) -> size_t {
    const auto full = static_cast<ptrdiff_t>((in - 1) * s + k + p.output_padding);
    const auto e = full - 2 * static_cast<ptrdiff_t>(pad);
    if (e < 1) {
      throw ShapeError(std::string(name) + ": padding removes the whole output for input " + to_string(input.shape()));
    }
    return static_cast<size_t>(e);
  };
  g.h = two_d ? extent(g.oh, g.kh, g.sh, g.ph) : 1;
  g.w = extent(g.ow, g.kw, g.sw, g.pw);

  Shape out_shape = two_d ? Shape{g.n, g.c, g.h, g.w} : Shape{g.n, g.c, g.w};
  std::vector<T> out(numel(out_shape));
  add_channel_bias<T>(out, bias.data(), g.n, g.c, g.h * g.w);
  corr_scatter(g, input.data().data(), weight.data().data(), out.data());

  const bool track = tape.wants({&input, &weight, &bias});
  BasicTensor<T> result(std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record(name, result, [g, input, weight, bias, result]() mutable {
      const auto gout = result.grad();
      if (input.requires_grad()) corr_gather(g, gout.data(), weight.data().data(), input.grad_buffer().data());
      if (weight.requires_grad())
        corr_weight_grad(g, gout.data(), input.data().data(), weight.grad_buffer().data());
      if (bias.requires_grad()) channel_bias_grad(gout, bias.grad_buffer(), g.n, g.c, g.h * g.w);
    });
  }
  return result;
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* name) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(name) + ": shape mismatch " + shapes(a.shape(), b.shape()));
}

// Spatial view used by pooling: [N*C planes, H, W] with H = 1 for 1-D input.
struct PoolGeom {
  size_t planes, h, w, th, tw;
};

PoolGeom pool_geometry(const Shape& in, const std::vector<size_t>& target, const char* name) {
  const size_t spatial = in.size() >= 2 ? in.size() - 2 : 0;
  if (spatial < 1 || spatial > 2) {
    throw ShapeError(std::string(name) + ": expected [N,C,L] or [N,C,H,W] input, got " + to_string(in));
  }
  if (target.size() != spatial) {
    throw ShapeError(std::string(name) + ": target has " + std::to_string(target.size()) +
                     " extents for input " + to_string(in));
  }
  for (size_t i = 0; i < spatial; ++i) {
    if (target[i] < 1 || target[i] > in[2 + i]) {
      throw ShapeError(std::string(name) + ": target " + to_string(target) + " must lie within [1, input] for input " +
                       to_string(in) + " (upsampling not supported)");
    }
  }
  PoolGeom g{};
  g.planes = in[0] * in[1];
  g.h = spatial == 2 ? in[2] : 1;
  g.w = in.back();
  g.th = spatial == 2 ? target[0] : 1;
  g.tw = target.back();
  return g;
}

inline size_t window_start(size_t i, size_t len, size_t target) { return (i * len) / target; }
inline size_t window_end(size_t i, size_t len, size_t target) { return ((i + 1) * len + target - 1) / target; }

Shape pooled_shape(const Shape& in, const std::vector<size_t>& target) {
  Shape s{in[0], in[1]};
  s.insert(s.end(), target.begin(), target.end());
  return s;
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const ConvParams& p) {
  if (kernel > in + 2 * p.padding) return 0;
  return (in + 2 * p.padding - kernel) / p.stride + 1;
}

std::size_t conv_transpose_out_extent(std::size_t in, std::size_t kernel, const ConvParams& p) {
  const auto full = static_cast<std::ptrdiff_t>((in - 1) * p.stride + kernel + p.output_padding);
  const auto e = full - 2 * static_cast<std::ptrdiff_t>(p.padding);
  return e < 1 ? 0 : static_cast<std::size_t>(e);
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
  }
  return "?";
}

template <typename T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, ConvParams params) {
  return conv_impl(tape, input, weight, bias, params, true, "conv2d");
}

template <typename T>
BasicTensor<T> conv1d(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, ConvParams params) {
  return conv_impl(tape, input, weight, bias, params, false, "conv1d");
}

template <typename T>
BasicTensor<T> conv_transpose2d(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, ConvParams params) {
  return conv_transpose_impl(tape, input, weight, bias, params, true, "conv_transpose2d");
}

template <typename T>
BasicTensor<T> conv_transpose1d(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, ConvParams params) {
  return conv_transpose_impl(tape, input, weight, bias, params, false, "conv_transpose1d");
}

template <typename T>
BasicTensor<T> linear(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(0)) {
    throw ShapeError("linear: input " + to_string(input.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  if (bias.size() != weight.dim(1)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  const size_t n = input.dim(0), d = input.dim(1), m = weight.dim(1);
  std::vector<T> out(n * m);
  const T* x = input.data().data();
  const T* w = weight.data().data();
  for (size_t i = 0; i < n; ++i) {
    T* o = out.data() + i * m;
    std::copy_n(bias.data().data(), m, o);
    for (size_t k = 0; k < d; ++k) {
      const T xv = x[i * d + k];
      const T* wr = w + k * m;
      for (size_t j = 0; j < m; ++j) o[j] += xv * wr[j];
    }
  }
  const bool track = tape.wants({&input, &weight, &bias});
  BasicTensor<T> result(Shape{n, m}, std::move(out), track);
  if (track) {
    tape.record("linear", result, [=]() mutable {
      const T* go = result.grad().data();
      if (input.requires_grad()) {
        T* gx = input.grad_buffer().data();
        const T* wv = weight.data().data();
        for (size_t i = 0; i < n; ++i)
          for (size_t k = 0; k < d; ++k) {
            T acc = 0;
            for (size_t j = 0; j < m; ++j) acc += go[i * m + j] * wv[k * m + j];
            gx[i * d + k] += acc;
          }
      }
      if (weight.requires_grad()) {
        T* gw = weight.grad_buffer().data();
        const T* xv = input.data().data();
        for (size_t i = 0; i < n; ++i)
          for (size_t k = 0; k < d; ++k) {
            const T a = xv[i * d + k];
            for (size_t j = 0; j < m; ++j) gw[k * m + j] += a * go[i * m + j];
          }
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad_buffer();
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j < m; ++j) gb[j] += go[i * m + j];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> elementwise(BasicTape<T>& tape, Activation act, const BasicTensor<T>& input) {
  const auto x = input.data();
  std::vector<T> out(x.size());
  switch (act) {
    case Activation::elu:
      for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : std::expm1(x[i]);
      break;
    case Activation::sigmoid:
      for (size_t i = 0; i < x.size(); ++i) {
        // Split by sign so exp never overflows.
        if (x[i] >= T(0)) {
          out[i] = T(1) / (T(1) + std::exp(-x[i]));
        } else {
          const T e = std::exp(x[i]);
          out[i] = e / (T(1) + e);
        }
      }
      break;
    case Activation::relu:
      for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      break;
  }
  const bool track = tape.wants({&input});
  BasicTensor<T> result(input.shape(), std::move(out), track);
  if (track) {
    tape.record(to_string(act), result, [act, input, result]() mutable {
      const auto go = result.grad();
      const auto y = result.data();
      const auto xv = input.data();
      auto& gx = input.grad_buffer();
      switch (act) {
        case Activation::elu:
          // d/dx expm1(x) = expm1(x) + 1 on the negative branch.
          for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (xv[i] > T(0) ? T(1) : y[i] + T(1));
          break;
        case Activation::sigmoid:
          for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i] * (T(1) - y[i]);
          break;
        case Activation::relu:
          for (size_t i = 0; i < go.size(); ++i) gx[i] += xv[i] > T(0) ? go[i] : T(0);
          break;
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> exp(BasicTape<T>& tape, const BasicTensor<T>& input) {
  const auto x = input.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
  const bool track = tape.wants({&input});
  BasicTensor<T> result(input.shape(), std::move(out), track);
  if (track) {
    tape.record("exp", result, [input, result]() mutable {
      const auto go = result.grad();
      const auto y = result.data();
      auto& gx = input.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> adaptive_avg_pool(BasicTape<T>& tape, const BasicTensor<T>& input,
                                 const std::vector<std::size_t>& target) {
  const PoolGeom g = pool_geometry(input.shape(), target, "adaptive_avg_pool");
  std::vector<T> out(g.planes * g.th * g.tw);
  const T* x = input.data().data();
  for (size_t p = 0; p < g.planes; ++p) {
    const T* plane = x + p * g.h * g.w;
    for (size_t i = 0; i < g.th; ++i) {
      const size_t y0 = window_start(i, g.h, g.th), y1 = window_end(i, g.h, g.th);
      for (size_t j = 0; j < g.tw; ++j) {
        const size_t x0 = window_start(j, g.w, g.tw), x1 = window_end(j, g.w, g.tw);
        T acc = 0;
        for (size_t y = y0; y < y1; ++y)
          for (size_t xx = x0; xx < x1; ++xx) acc += plane[y * g.w + xx];
        out[(p * g.th + i) * g.tw + j] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  const bool track = tape.wants({&input});
  BasicTensor<T> result(pooled_shape(input.shape(), target), std::move(out), track);
  if (track) {
    tape.record("adaptive_avg_pool", result, [g, input, result]() mutable {
      const auto go = result.grad();
      T* gx = input.grad_buffer().data();
      for (size_t p = 0; p < g.planes; ++p) {
        T* plane = gx + p * g.h * g.w;
        for (size_t i = 0; i < g.th; ++i) {
          const size_t y0 = window_start(i, g.h, g.th), y1 = window_end(i, g.h, g.th);
          for (size_t j = 0; j < g.tw; ++j) {
            const size_t x0 = window_start(j, g.w, g.tw), x1 = window_end(j, g.w, g.tw);
            const T share = go[(p * g.th + i) * g.tw + j] / static_cast<T>((y1 - y0) * (x1 - x0));
            for (size_t y = y0; y < y1; ++y)
              for (size_t xx = x0; xx < x1; ++xx) plane[y * g.w + xx] += share;
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> adaptive_max_pool(BasicTape<T>& tape, const BasicTensor<T>& input,
                                 const std::vector<std::size_t>& target) {
  const PoolGeom g = pool_geometry(input.shape(), target, "adaptive_max_pool");
  std::vector<T> out(g.planes * g.th * g.tw);
  std::vector<size_t> argmax(out.size());
  const T* x = input.data().data();
  for (size_t p = 0; p < g.planes; ++p) {
    const size_t base = p * g.h * g.w;
    for (size_t i = 0; i < g.th; ++i) {
      const size_t y0 = window_start(i, g.h, g.th), y1 = window_end(i, g.h, g.th);
      for (size_t j = 0; j < g.tw; ++j) {
        const size_t x0 = window_start(j, g.w, g.tw), x1 = window_end(j, g.w, g.tw);
        size_t best = base + y0 * g.w + x0;
        for (size_t y = y0; y < y1; ++y)
          for (size_t xx = x0; xx < x1; ++xx)
            if (x[base + y * g.w + xx] > x[best]) best = base + y * g.w + xx;
        const size_t o = (p * g.th + i) * g.tw + j;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  const bool track = tape.wants({&input});
  BasicTensor<T> result(pooled_shape(input.shape(), target), std::move(out), track);
  if (track) {
    tape.record("adaptive_max_pool", result, [argmax = std::move(argmax), input, result]() mutable {
      const auto go = result.grad();
      auto& gx = input.grad_buffer();
      for (size_t o = 0; o < go.size(); ++o) gx[argmax[o]] += go[o];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> concat_channels(BasicTape<T>& tape, const std::vector<BasicTensor<T>>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = inputs.front().shape();
  if (first.size() < 2) throw ShapeError("concat_channels: inputs need a channel axis, got " + to_string(first));
  size_t channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    const bool same = s.size() == first.size() && s[0] == first[0] && std::equal(s.begin() + 2, s.end(), first.begin() + 2);
    if (!same) {
      throw ShapeError("concat_channels: batch/spatial mismatch " + shapes(first, s) +
                       "; pool inputs to a common spatial shape first");
    }
    channels += s[1];
  }
  const size_t n = first[0];
  const size_t spatial = numel(first) / (first[0] * first[1]);
  Shape out_shape = first;
  out_shape[1] = channels;
  std::vector<T> out(numel(out_shape));
  size_t offset = 0;
  for (const auto& t : inputs) {
    const size_t block = t.dim(1) * spatial;
    for (size_t i = 0; i < n; ++i)
      std::copy_n(t.data().data() + i * block, block, out.data() + i * channels * spatial + offset);
    offset += block;
  }
  bool track = false;
  for (const auto& t : inputs) track = track || tape.wants({&t});
  BasicTensor<T> result(std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("concat_channels", result, [inputs, result, n, channels, spatial]() mutable {
      const auto go = result.grad();
      size_t off = 0;
      for (auto& t : inputs) {
        const size_t block = t.dim(1) * spatial;
        if (t.requires_grad()) {
          auto& gx = t.grad_buffer();
          for (size_t i = 0; i < n; ++i) {
            const T* src = go.data() + i * channels * spatial + off;
            T* dst = gx.data() + i * block;
            for (size_t k = 0; k < block; ++k) dst[k] += src[k];
          }
        }
        off += block;
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> slice_channels(BasicTape<T>& tape, const BasicTensor<T>& input, std::size_t begin, std::size_t end) {
  if (input.rank() < 2 || begin >= end || end > input.dim(1)) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + to_string(input.shape()));
  }
  const size_t n = input.dim(0), c = input.dim(1);
  const size_t spatial = input.size() / (n * c);
  const size_t width = (end - begin) * spatial;
  Shape out_shape = input.shape();
  out_shape[1] = end - begin;
  std::vector<T> out(n * width);
  for (size_t i = 0; i < n; ++i)
    std::copy_n(input.data().data() + (i * c + begin) * spatial, width, out.data() + i * width);
  const bool track = tape.wants({&input});
  BasicTensor<T> result(std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("slice_channels", result, [=]() mutable {
      const auto go = result.grad();
      auto& gx = input.grad_buffer();
      for (size_t i = 0; i < n; ++i)
        for (size_t k = 0; k < width; ++k) gx[(i * c + begin) * spatial + k] += go[i * width + k];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> reshape(BasicTape<T>& tape, const BasicTensor<T>& input, Shape shape) {
  BasicTensor<T> copy = input.reshaped(std::move(shape));
  const bool track = tape.wants({&input});
  if (!track) return copy;
  BasicTensor<T> result(copy.shape(), std::vector<T>(copy.data().begin(), copy.data().end()), true);
  tape.record("reshape", result, [input, result]() mutable {
    const auto go = result.grad();
    auto& gx = input.grad_buffer();
    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
  return result;
}

template <typename T>
BasicTensor<T> flatten(BasicTape<T>& tape, const BasicTensor<T>& input) {
  return reshape(tape, input, Shape{input.dim(0), input.size() / input.dim(0)});
}

template <typename T>
BasicTensor<T> split_stack(BasicTape<T>& tape, const BasicTensor<T>& input, std::size_t k) {
  if (input.rank() != 2) throw ShapeError("split_stack: expected [N, D] input, got " + to_string(input.shape()));
  const size_t d = input.dim(1);
  if (k == 0 || d % k != 0) {
    throw ShapeError("split_stack: k = " + std::to_string(k) + " does not divide D = " + std::to_string(d));
  }
  return reshape(tape, input, Shape{input.dim(0), k, d / k});
}

namespace {

enum class Binary { add, sub, mul };

template <typename T>
BasicTensor<T> binary(BasicTape<T>& tape, Binary kind, const BasicTensor<T>& a, const BasicTensor<T>& b,
                      const char* name) {
  require_same_shape(a, b, name);
  const auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    switch (kind) {
      case Binary::add: out[i] = x[i] + y[i]; break;
      case Binary::sub: out[i] = x[i] - y[i]; break;
      case Binary::mul: out[i] = x[i] * y[i]; break;
    }
  }
  const bool track = tape.wants({&a, &b});
  BasicTensor<T> result(a.shape(), std::move(out), track);
  if (track) {
    tape.record(name, result, [kind, a, b, result]() mutable {
      const auto go = result.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad_buffer();
        const auto yb = b.data();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += kind == Binary::mul ? go[i] * yb[i] : go[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad_buffer();
        const auto xa = a.data();
        for (size_t i = 0; i < go.size(); ++i) {
          switch (kind) {
            case Binary::add: gb[i] += go[i]; break;
            case Binary::sub: gb[i] -= go[i]; break;
            case Binary::mul: gb[i] += go[i] * xa[i]; break;
          }
        }
      }
    });
  }
  return result;
}

}  // namespace

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(tape, Binary::add, a, b, "add");
}
template <typename T>
BasicTensor<T> sub(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(tape, Binary::sub, a, b, "sub");
}
template <typename T>
BasicTensor<T> mul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(tape, Binary::mul, a, b, "mul");
}

template <typename T>
BasicTensor<T> scale(BasicTape<T>& tape, const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  const bool track = tape.wants({&a});
  BasicTensor<T> result(a.shape(), std::move(out), track);
  if (track) {
    tape.record("scale", result, [a, result, factor]() mutable {
      const auto go = result.grad();
      auto& ga = a.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * factor;
    });
  }
  return result;
}

namespace {

template <typename T>
BasicTensor<T> reduce_all(BasicTape<T>& tape, const BasicTensor<T>& a, bool average, const char* name) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  const T div = average ? static_cast<T>(a.size()) : T(1);
  const bool track = tape.wants({&a});
  BasicTensor<T> result(Shape{1}, std::vector<T>{acc / div}, track);
  if (track) {
    tape.record(name, result, [a, result, div]() mutable {
      const T go = result.grad()[0] / div;
      for (auto& g : a.grad_buffer()) g += go;
    });
  }
  return result;
}

}  // namespace

template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& a) {
  return reduce_all(tape, a, false, "sum");
}
template <typename T>
BasicTensor<T> mean(BasicTape<T>& tape, const BasicTensor<T>& a) {
  return reduce_all(tape, a, true, "mean");
}

template <typename T>
BasicTensor<T> mse(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& x_hat) {
  require_same_shape(x, x_hat, "mse");
  const auto a = x.data(), b = x_hat.data();
  T acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  const T count = static_cast<T>(a.size());
  const bool track = tape.wants({&x, &x_hat});
  BasicTensor<T> result(Shape{1}, std::vector<T>{acc / count}, track);
  if (track) {
    tape.record("mse", result, [x, x_hat, result, count]() mutable {
      const T go = result.grad()[0] * T(2) / count;
      const auto a = x.data(), b = x_hat.data();
      if (x.requires_grad()) {
        auto& g = x.grad_buffer();
        for (size_t i = 0; i < a.size(); ++i) g[i] += go * (a[i] - b[i]);
      }
      if (x_hat.requires_grad()) {
        auto& g = x_hat.grad_buffer();
        for (size_t i = 0; i < a.size(); ++i) g[i] -= go * (a[i] - b[i]);
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> per_sample_mse(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& x_hat) {
  require_same_shape(x, x_hat, "per_sample_mse");
  const size_t n = x.dim(0);
  const size_t width = x.size() / n;
  const auto a = x.data(), b = x_hat.data();
  std::vector<T> out(n);
  for (size_t i = 0; i < n; ++i) {
    T acc = 0;
    for (size_t k = 0; k < width; ++k) {
      const T d = a[i * width + k] - b[i * width + k];
      acc += d * d;
    }
    out[i] = acc / static_cast<T>(width);
  }
  const bool track = tape.wants({&x, &x_hat});
  BasicTensor<T> result(Shape{n}, std::move(out), track);
  if (track) {
    tape.record("per_sample_mse", result, [x, x_hat, result, n, width]() mutable {
      const auto go = result.grad();
      const auto a = x.data(), b = x_hat.data();
      const T scale2 = T(2) / static_cast<T>(width);
      for (size_t i = 0; i < n; ++i) {
        const T gi = go[i] * scale2;
        if (gi == T(0)) continue;
        for (size_t k = 0; k < width; ++k) {
          const size_t j = i * width + k;
          const T d = gi * (a[j] - b[j]);
          if (x.requires_grad()) x.grad_buffer()[j] += d;
          if (x_hat.requires_grad()) x_hat.grad_buffer()[j] -= d;
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> bce(BasicTape<T>& tape, const BasicTensor<T>& target, const BasicTensor<T>& prediction, T pos_weight) {
  if (target.size() != prediction.size()) {
    throw ShapeError("bce: shape mismatch " + shapes(target.shape(), prediction.shape()));
  }
  const T eps = static_cast<T>(kBceEpsilon);
  const auto y = target.data(), p = prediction.data();
  const size_t n = y.size();
  T acc = 0;
  for (size_t i = 0; i < n; ++i) {
    if (y[i] != T(0) && y[i] != T(1)) throw DataError("bce: target values must be 0 or 1");
    const T q = std::clamp(p[i], eps, T(1) - eps);
    acc -= pos_weight * y[i] * std::log(q) + (T(1) - y[i]) * std::log(T(1) - q);
  }
  const bool track = tape.wants({&prediction});
  BasicTensor<T> result(Shape{1}, std::vector<T>{acc / static_cast<T>(n)}, track);
  if (track) {
    tape.record("bce", result, [target, prediction, result, eps, pos_weight, n]() mutable {
      const T go = result.grad()[0] / static_cast<T>(n);
      const auto y = target.data(), p = prediction.data();
      auto& g = prediction.grad_buffer();
      for (size_t i = 0; i < n; ++i) {
        if (p[i] < eps || p[i] > T(1) - eps) continue;  // clamped: flat
        g[i] += go * (-pos_weight * y[i] / p[i] + (T(1) - y[i]) / (T(1) - p[i]));
      }
    });
  }
  return result;
}

#define CA3_INSTANTIATE_OPS(T)                                                                                  \
  template BasicTensor<T> conv2d(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>&, ConvParams);                                           \
  template BasicTensor<T> conv1d(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>&, ConvParams);                                           \
  template BasicTensor<T> conv_transpose2d(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                           const BasicTensor<T>&, ConvParams);                                 \
  template BasicTensor<T> conv_transpose1d(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                           const BasicTensor<T>&, ConvParams);                                 \
  template BasicTensor<T> linear(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>&);                                                       \
  template BasicTensor<T> elementwise(BasicTape<T>&, Activation, const BasicTensor<T>&);                       \
  template BasicTensor<T> exp(BasicTape<T>&, const BasicTensor<T>&);                                           \
  template BasicTensor<T> adaptive_avg_pool(BasicTape<T>&, const BasicTensor<T>&, const std::vector<size_t>&); \
  template BasicTensor<T> adaptive_max_pool(BasicTape<T>&, const BasicTensor<T>&, const std::vector<size_t>&); \
  template BasicTensor<T> concat_channels(BasicTape<T>&, const std::vector<BasicTensor<T>>&);                  \
  template BasicTensor<T> slice_channels(BasicTape<T>&, const BasicTensor<T>&, size_t, size_t);                \
  template BasicTensor<T> reshape(BasicTape<T>&, const BasicTensor<T>&, Shape);                                \
  template BasicTensor<T> flatten(BasicTape<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> split_stack(BasicTape<T>&, const BasicTensor<T>&, size_t);                           \
  template BasicTensor<T> add(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> sub(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale(BasicTape<T>&, const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> sum(BasicTape<T>&, const BasicTensor<T>&);                                           \
  template BasicTensor<T> mean(BasicTape<T>&, const BasicTensor<T>&);                                          \
  template BasicTensor<T> mse(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> per_sample_mse(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> bce(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T);

CA3_INSTANTIATE_OPS(float)
CA3_INSTANTIATE_OPS(double)

#undef CA3_INSTANTIATE_OPS

}  // namespace ca3::ops
