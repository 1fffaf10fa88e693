#pragma once

// Independent reference implementations used as oracles by the unit and
// acceptance tests. They are written as plain nested loops over the
// mathematical definitions and share no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "ca3/random.hpp"
#include "ca3/tensor.hpp"

namespace ca3::test {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// out[n][o][y][x] = b[o] + sum_{c,i,j} in[n][c][y*s+i-p][x*s+j-p] * w[o][c][i][j]
inline std::vector<double> direct_conv2d(const Tensor& in, const Tensor& w, const Tensor& b, std::size_t s,
                                         std::size_t p, std::size_t& oh, std::size_t& ow) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  oh = (h + 2 * p - kh) / s + 1;
  ow = (wd + 2 * p - kw) / s + 1;
  std::vector<double> out(n * o * oh * ow);
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = b[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long yy = static_cast<long>(y * s + i) - static_cast<long>(p);
                const long xx = static_cast<long>(x * s + j) - static_cast<long>(p);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(in[((bn * c + ic) * h + yy) * wd + xx]) *
                       w[((oc * c + ic) * kh + i) * kw + j];
              }
          out[((bn * o + oc) * oh + y) * ow + x] = acc;
        }
  return out;
}

// Transposed convolution by scattering every input pixel:
// out[n][o][y*s+i-p][x*s+j-p] += in[n][c][y][x] * w[c][o][i][j]
inline std::vector<double> direct_conv_transpose2d(const Tensor& in, const Tensor& w, const Tensor& b, std::size_t s,
                                                   std::size_t p, std::size_t op, std::size_t& oh, std::size_t& ow) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const std::size_t o = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  oh = (h - 1) * s + kh + op - 2 * p;
  ow = (wd - 1) * s + kw + op - 2 * p;
  std::vector<double> out(n * o * oh * ow);
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t k = 0; k < oh * ow; ++k) out[(bn * o + oc) * oh * ow + k] = b[oc];
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < wd; ++x)
          for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long yy = static_cast<long>(y * s + i) - static_cast<long>(p);
                const long xx = static_cast<long>(x * s + j) - static_cast<long>(p);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(oh) || xx >= static_cast<long>(ow)) continue;
                out[((bn * o + oc) * oh + yy) * ow + xx] +=
                    static_cast<double>(in[((bn * c + ic) * h + y) * wd + x]) * w[((ic * o + oc) * kh + i) * kw + j];
              }
  return out;
}

// 1-D convolution written independently of the 2-D oracle.
inline std::vector<double> direct_conv1d(const Tensor& in, const Tensor& w, const Tensor& b, std::size_t s,
                                         std::size_t p, std::size_t& ol) {
  const std::size_t n = in.dim(0), c = in.dim(1), l = in.dim(2), o = w.dim(0), k = w.dim(2);
  ol = (l + 2 * p - k) / s + 1;
  std::vector<double> out(n * o * ol);
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t t = 0; t < ol; ++t) {
        double acc = b[oc];
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t i = 0; i < k; ++i) {
            const long pos = static_cast<long>(t * s + i) - static_cast<long>(p);
            if (pos >= 0 && pos < static_cast<long>(l)) acc += static_cast<double>(in[(bn * c + ic) * l + pos]) * w[(oc * c + ic) * k + i];
          }
        out[(bn * o + oc) * ol + t] = acc;
      }
  return out;
}

inline std::vector<double> direct_conv_transpose1d(const Tensor& in, const Tensor& w, const Tensor& b, std::size_t s,
                                                   std::size_t p, std::size_t op, std::size_t& ol) {
  const std::size_t n = in.dim(0), c = in.dim(1), l = in.dim(2), o = w.dim(1), k = w.dim(2);
  ol = (l - 1) * s + k + op - 2 * p;
  std::vector<double> out(n * o * ol);
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t t = 0; t < ol; ++t) out[(bn * o + oc) * ol + t] = b[oc];
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t t = 0; t < l; ++t)
        for (std::size_t oc = 0; oc < o; ++oc)
          for (std::size_t i = 0; i < k; ++i) {
            const long pos = static_cast<long>(t * s + i) - static_cast<long>(p);
            if (pos >= 0 && pos < static_cast<long>(ol)) {
              out[(bn * o + oc) * ol + pos] += static_cast<double>(in[(bn * c + ic) * l + t]) * w[(ic * o + oc) * k + i];
            }
          }
  return out;
}

// Average over the window [floor(i*L/T), ceil((i+1)*L/T)) along each axis.
inline std::vector<double> direct_adaptive_avg2d(const Tensor& in, std::size_t th, std::size_t tw) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  std::vector<double> out;
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j) {
          const std::size_t y0 = i * h / th, y1 = ((i + 1) * h + th - 1) / th;
          const std::size_t x0 = j * w / tw, x1 = ((j + 1) * w + tw - 1) / tw;
          double acc = 0;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) acc += in[((bn * c + ch) * h + y) * w + x];
          out.push_back(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
        }
  return out;
}

// P(anomaly outscores typical) over all pairs, ties counted 1/2.
inline double pairwise_auc(const std::vector<float>& scores, const std::vector<int>& labels) {
  std::uint64_t twice_wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) twice_wins += 2;
      else if (scores[i] == scores[j]) twice_wins += 1;
    }
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pairs));
}

inline double max_abs_diff(std::span<const float> a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace ca3::test
