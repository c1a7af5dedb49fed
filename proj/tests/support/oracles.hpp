#pragma once

// Straight-loop reference implementations. Deliberately written without any
// of the library's ops so they can serve as independent checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace scopeformer::oracle {

using Vec = std::vector<double>;

// a [M,K] row-major, b [K,N]
inline Vec matmul(const Vec& a, const Vec& b, std::size_t M, std::size_t K, std::size_t N) {
  Vec c(M * N, 0.0);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += a[i * K + k] * b[k * N + j];
      c[i * N + j] = s;
    }
  return c;
}

// NHWC input, HWIO weights; explicit symmetric padding `pad`.
inline Vec conv2d(const Vec& x, const Vec& w, std::size_t B, std::size_t H, std::size_t W,
                  std::size_t Ci, std::size_t k, std::size_t Co, std::size_t stride, std::size_t pad,
                  std::size_t& Ho, std::size_t& Wo) {
  Ho = (H + 2 * pad - k) / stride + 1;
  Wo = (W + 2 * pad - k) / stride + 1;
  Vec y(B * Ho * Wo * Co, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox)
        for (std::size_t co = 0; co < Co; ++co) {
          double s = 0.0;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                s += x[((b * H + iy) * W + ix) * Ci + ci] * w[((ky * k + kx) * Ci + ci) * Co + co];
              }
            }
          y[((b * Ho + oy) * Wo + ox) * Co + co] = s;
        }
  return y;
}

// Depthwise as C independent single-channel convolutions.
inline Vec depthwise(const Vec& x, const Vec& w, std::size_t B, std::size_t H, std::size_t W,
                     std::size_t C, std::size_t k, std::size_t stride, std::size_t pad, std::size_t& Ho,
                     std::size_t& Wo) {
  Ho = (H + 2 * pad - k) / stride + 1;
  Wo = (W + 2 * pad - k) / stride + 1;
  Vec y(B * Ho * Wo * C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    Vec xc(B * H * W), wc(k * k);
    for (std::size_t i = 0; i < B * H * W; ++i) xc[i] = x[i * C + c];
    for (std::size_t i = 0; i < k * k; ++i) wc[i] = w[i * C + c];
    std::size_t ho = 0, wo = 0;
    const Vec yc = conv2d(xc, wc, B, H, W, 1, k, 1, stride, pad, ho, wo);
    for (std::size_t i = 0; i < B * Ho * Wo; ++i) y[i * C + c] = yc[i];
  }
  return y;
}

inline Vec softmax_rows(const Vec& x, std::size_t rows, std::size_t cols) {
  Vec y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[r * cols + c] - mx);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = std::exp(x[r * cols + c] - mx) / z;
  }
  return y;
}

inline Vec layer_norm_rows(const Vec& x, const Vec& g, const Vec& b, std::size_t rows, std::size_t cols,
                           double eps) {
  Vec y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[r * cols + c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[r * cols + c] - mu) * (x[r * cols + c] - mu);
    var /= static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      y[r * cols + c] = (x[r * cols + c] - mu) / std::sqrt(var + eps) * g[c] + b[c];
    }
  }
  return y;
}

// Bias-free multi-head attention on x [T, D] (one batch item), weights [D, D].
inline Vec attention(const Vec& x, const Vec& wq, const Vec& wk, const Vec& wv, const Vec& wo,
                     std::size_t T, std::size_t D, std::size_t heads) {
  const Vec q = matmul(x, wq, T, D, D);
  const Vec k = matmul(x, wk, T, D, D);
  const Vec v = matmul(x, wv, T, D, D);
  const std::size_t dh = D / heads;
  Vec concat(T * D, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < T; ++i) {
      Vec scores(T);
      for (std::size_t j = 0; j < T; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += q[i * D + h * dh + d] * k[j * D + h * dh + d];
        scores[j] = s / std::sqrt(static_cast<double>(dh));
      }
      const Vec p = softmax_rows(scores, 1, T);
      for (std::size_t d = 0; d < dh; ++d) {
        double s = 0.0;
        for (std::size_t j = 0; j < T; ++j) s += p[j] * v[j * D + h * dh + d];
        concat[i * D + h * dh + d] = s;
      }
    }
  }
  return matmul(concat, wo, T, D, D);
}

// (1/B) sum_b sum_l w_l * -(y log p + (1-y) log(1-p)), p clipped to [eps, 1-eps].
inline double weighted_log_loss(const Vec& p, const Vec& y, const Vec& w_raw, std::size_t B, std::size_t L,
                                double eps) {
  double wsum = 0.0;
  for (double v : w_raw) wsum += v;
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l) {
      const double pc = std::min(std::max(p[b * L + l], eps), 1.0 - eps);
      const double t = y[b * L + l];
      total += (w_raw[l] / wsum) * -(t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc));
    }
  return total / static_cast<double>(B);
}

// Transformer parameter count for the pre-norm encoder used here.
inline std::size_t vit_parameters(std::size_t F, std::size_t N, std::size_t D, std::size_t depth, std::size_t hidden,
                                  std::size_t labels, bool class_token) {
  const std::size_t T = N + (class_token ? 1 : 0);
  const std::size_t per_layer = 4 * D * D + (D * hidden + hidden) + (hidden * D + D) + 4 * D;
  return F * D + T * D + (class_token ? D : 0) + depth * per_layer + 2 * D + D * labels + labels;
}

}  // namespace scopeformer::oracle
