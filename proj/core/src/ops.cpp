#include "scopeformer/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "parallel.hpp"

namespace scopeformer {

namespace {

std::atomic<std::size_t> g_threads{1};

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << shape_to_string(a.shape()) << " vs "
     << shape_to_string(b.shape());
  throw ShapeError(os.str());
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Forward, typename Derivative>
Tensor unary(OpKind kind, const Tensor& x, Forward f, Derivative df) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return OpBuilder::make(kind, x.shape(), std::move(out), {x},
                         [df](std::span<const double> g, std::span<const Tensor> in,
                              std::span<const double> y) {
                           if (!in[0].requires_grad()) return;
                           auto gx = grad_buffer(in[0]);
                           auto xv = in[0].data();
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], y[i]);
                         });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

namespace detail {

void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t threads = g_threads.load(std::memory_order_relaxed);
  if (threads <= 1 || n < 2 * min_chunk) {
    body(0, n);
    return;
  }
  const std::size_t workers = std::min(threads, (n + min_chunk - 1) / min_chunk);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin < end) pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace detail

void set_num_threads(std::size_t n) { g_threads.store(std::max<std::size_t>(1, n)); }

std::size_t num_threads() { return g_threads.load(); }

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return OpBuilder::make(OpKind::Add, a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<const Tensor> in,
                            std::span<const double>) {
                           for (const auto& t : in) {
                             if (!t.requires_grad()) continue;
                             auto gt = grad_buffer(t);
                             for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                           }
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return OpBuilder::make(OpKind::Sub, a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<const Tensor> in,
                            std::span<const double>) {
                           if (in[0].requires_grad()) {
                             auto ga = grad_buffer(in[0]);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (in[1].requires_grad()) {
                             auto gb = grad_buffer(in[1]);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                           }
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return OpBuilder::make(OpKind::Mul, a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<const Tensor> in,
                            std::span<const double>) {
                           auto av = in[0].data();
                           auto bv = in[1].data();
                           if (in[0].requires_grad()) {
                             auto ga = grad_buffer(in[0]);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                           }
                           if (in[1].requires_grad()) {
                             auto gb = grad_buffer(in[1]);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                           }
                         });
}

Tensor relu(const Tensor& x) {
  return unary(
      OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      OpKind::Gelu, x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      OpKind::Sigmoid, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      OpKind::Scale, x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

namespace {

std::size_t trailing_count(const Tensor& x, const Tensor& b, const char* op) {
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= xs.size();
  for (std::size_t i = 0; ok && i < bs.size(); ++i) {
    ok = bs[bs.size() - 1 - i] == xs[xs.size() - 1 - i];
  }
  if (!ok) shape_mismatch(op, x, b);
  return x.numel() / b.numel();
}

}  // namespace

Tensor broadcast_add(const Tensor& x, const Tensor& b) {
  const std::size_t reps = trailing_count(x, b, "broadcast_add");
  const std::size_t n = b.numel();
  auto xs = x.data();
  auto bs = b.data();
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xs[r * n + i] + bs[i];
  }
  return OpBuilder::make(OpKind::BroadcastAdd, x.shape(), std::move(out), {x, b},
                         [reps, n](std::span<const double> g, std::span<const Tensor> in,
                                   std::span<const double>) {
                           if (in[0].requires_grad()) {
                             auto gx = grad_buffer(in[0]);
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           }
                           if (in[1].requires_grad()) {
                             auto gb = grad_buffer(in[1]);
                             for (std::size_t r = 0; r < reps; ++r) {
                               for (std::size_t i = 0; i < n; ++i) gb[i] += g[r * n + i];
                             }
                           }
                         });
}

Tensor broadcast_mul(const Tensor& x, const Tensor& b) {
  const std::size_t reps = trailing_count(x, b, "broadcast_mul");
  const std::size_t n = b.numel();
  auto xs = x.data();
  auto bs = b.data();
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xs[r * n + i] * bs[i];
  }
  return OpBuilder::make(OpKind::BroadcastMul, x.shape(), std::move(out), {x, b},
                         [reps, n](std::span<const double> g, std::span<const Tensor> in,
                                   std::span<const double>) {
                           auto xv = in[0].data();
                           auto bv = in[1].data();
                           if (in[0].requires_grad()) {
                             auto gx = grad_buffer(in[0]);
                             for (std::size_t r = 0; r < reps; ++r) {
                               for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += g[r * n + i] * bv[i];
                             }
                           }
                           if (in[1].requires_grad()) {
                             auto gb = grad_buffer(in[1]);
                             for (std::size_t r = 0; r < reps; ++r) {
                               for (std::size_t i = 0; i < n; ++i) gb[i] += g[r * n + i] * xv[r * n + i];
                             }
                           }
                         });
}

Tensor expand(const Tensor& x, std::size_t n) {
  if (n == 0) throw ShapeError("expand: count must be >= 1");
  Shape shape{n};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  auto xs = x.data();
  std::vector<double> out;
  out.reserve(n * xs.size());
  for (std::size_t r = 0; r < n; ++r) out.insert(out.end(), xs.begin(), xs.end());
  const std::size_t m = xs.size();
  return OpBuilder::make(OpKind::Expand, std::move(shape), std::move(out), {x},
                         [n, m](std::span<const double> g, std::span<const Tensor> in,
                                std::span<const double>) {
                           if (!in[0].requires_grad()) return;
                           auto gx = grad_buffer(in[0]);
                           for (std::size_t r = 0; r < n; ++r) {
                             for (std::size_t i = 0; i < m; ++i) gx[i] += g[r * m + i];
                           }
                         });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || as.size() != bs.size()) shape_mismatch("matmul", a, b);
  const std::size_t r = as.size();
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (as[i] != bs[i]) shape_mismatch("matmul", a, b);
    batch *= as[i];
  }
  const std::size_t M = as[r - 2];
  const std::size_t K = as[r - 1];
  const std::size_t N = bs[r - 1];
  if (bs[r - 2] != K) shape_mismatch("matmul", a, b);

  Shape out_shape = as;
  out_shape[r - 1] = N;
  std::vector<double> out(batch * M * N, 0.0);
  auto av = a.data();
  auto bv = b.data();
  detail::parallel_for(batch * M, 64, [&](std::size_t begin, std::size_t end) {
    for (std::size_t row = begin; row < end; ++row) {
      const std::size_t p = row / M;
      const double* arow = av.data() + row * K;
      const double* bmat = bv.data() + p * K * N;
      double* crow = out.data() + row * N;
      for (std::size_t k = 0; k < K; ++k) {
        const double aik = arow[k];
        const double* brow = bmat + k * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
      }
    }
  });

  return OpBuilder::make(
      OpKind::Matmul, std::move(out_shape), std::move(out), {a, b},
      [batch, M, K, N](std::span<const double> g, std::span<const Tensor> in,
                       std::span<const double>) {
        auto av = in[0].data();
        auto bv = in[1].data();
        if (in[0].requires_grad()) {
          // dA = dC . B^T
          auto ga = grad_buffer(in[0]);
          for (std::size_t p = 0; p < batch; ++p) {
            for (std::size_t i = 0; i < M; ++i) {
              const double* grow = g.data() + (p * M + i) * N;
              double* garow = ga.data() + (p * M + i) * K;
              for (std::size_t k = 0; k < K; ++k) {
                const double* brow = bv.data() + (p * K + k) * N;
                double acc = 0.0;
                for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                garow[k] += acc;
              }
            }
          }
        }
        if (in[1].requires_grad()) {
          // dB = A^T . dC
          auto gb = grad_buffer(in[1]);
          for (std::size_t p = 0; p < batch; ++p) {
            for (std::size_t i = 0; i < M; ++i) {
              const double* arow = av.data() + (p * M + i) * K;
              const double* grow = g.data() + (p * M + i) * N;
              for (std::size_t k = 0; k < K; ++k) {
                const double aik = arow[k];
                double* gbrow = gb.data() + (p * K + k) * N;
                for (std::size_t j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
              }
            }
          }
        }
      });
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               Padding padding) {
  if (kernel == 0 || stride == 0) throw ShapeError("convolution kernel and stride must be >= 1");
  const std::size_t pad = padding == Padding::Same ? kernel / 2 : 0;
  if (in + 2 * pad < kernel) {
    std::ostringstream os;
    os << "kernel " << kernel << " larger than padded input extent " << in + 2 * pad;
    throw ShapeError(os.str());
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t B, H, W, Cin, Cout, k, stride, pad, Ho, Wo;
};

ConvGeometry conv_geometry(const Tensor& x, std::size_t k, std::size_t cin, std::size_t cout,
                           std::size_t stride, Padding padding) {
  ConvGeometry g{};
  g.B = x.shape()[0];
  g.H = x.shape()[1];
  g.W = x.shape()[2];
  g.Cin = cin;
  g.Cout = cout;
  g.k = k;
  g.stride = stride;
  g.pad = padding == Padding::Same ? k / 2 : 0;
  g.Ho = conv_output_extent(g.H, k, stride, padding);
  g.Wo = conv_output_extent(g.W, k, stride, padding);
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, Padding padding) {
  if (x.rank() != 4 || w.rank() != 4 || w.shape()[0] != w.shape()[1] ||
      w.shape()[2] != x.shape()[3]) {
    shape_mismatch("conv2d", x, w);
  }
  const auto geo = conv_geometry(x, w.shape()[0], w.shape()[2], w.shape()[3], stride, padding);
  std::vector<double> out(geo.B * geo.Ho * geo.Wo * geo.Cout, 0.0);
  auto xv = x.data();
  auto wv = w.data();
  detail::parallel_for(geo.B * geo.Ho, 4, [&](std::size_t begin, std::size_t end) {
    for (std::size_t row = begin; row < end; ++row) {
      const std::size_t b = row / geo.Ho;
      const std::size_t oh = row % geo.Ho;
      for (std::size_t ow = 0; ow < geo.Wo; ++ow) {
        double* o = out.data() + ((b * geo.Ho + oh) * geo.Wo + ow) * geo.Cout;
        for (std::size_t kh = 0; kh < geo.k; ++kh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geo.stride + kh) -
                                    static_cast<std::ptrdiff_t>(geo.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(geo.H)) continue;
          for (std::size_t kw = 0; kw < geo.k; ++kw) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geo.stride + kw) -
                                      static_cast<std::ptrdiff_t>(geo.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(geo.W)) continue;
            const double* xp =
                xv.data() + ((b * geo.H + static_cast<std::size_t>(ih)) * geo.W +
                             static_cast<std::size_t>(iw)) * geo.Cin;
            const double* wp = wv.data() + (kh * geo.k + kw) * geo.Cin * geo.Cout;
            for (std::size_t ci = 0; ci < geo.Cin; ++ci) {
              const double xval = xp[ci];
              const double* wrow = wp + ci * geo.Cout;
              for (std::size_t co = 0; co < geo.Cout; ++co) o[co] += xval * wrow[co];
            }
          }
        }
      }
    }
  });

  return OpBuilder::make(
      OpKind::Conv2d, {geo.B, geo.Ho, geo.Wo, geo.Cout}, std::move(out), {x, w},
      [geo](std::span<const double> g, std::span<const Tensor> in, std::span<const double>) {
        auto xv = in[0].data();
        auto wv = in[1].data();
        const bool need_x = in[0].requires_grad();
        const bool need_w = in[1].requires_grad();
        std::span<double> gx = need_x ? grad_buffer(in[0]) : std::span<double>{};
        std::span<double> gw = need_w ? grad_buffer(in[1]) : std::span<double>{};
        for (std::size_t b = 0; b < geo.B; ++b) {
          for (std::size_t oh = 0; oh < geo.Ho; ++oh) {
            for (std::size_t ow = 0; ow < geo.Wo; ++ow) {
              const double* go = g.data() + ((b * geo.Ho + oh) * geo.Wo + ow) * geo.Cout;
              for (std::size_t kh = 0; kh < geo.k; ++kh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geo.stride + kh) -
                                          static_cast<std::ptrdiff_t>(geo.pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(geo.H)) continue;
                for (std::size_t kw = 0; kw < geo.k; ++kw) {
                  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geo.stride + kw) -
                                            static_cast<std::ptrdiff_t>(geo.pad);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(geo.W)) continue;
                  const std::size_t xoff = ((b * geo.H + static_cast<std::size_t>(ih)) * geo.W +
                                            static_cast<std::size_t>(iw)) * geo.Cin;
                  const std::size_t woff = (kh * geo.k + kw) * geo.Cin * geo.Cout;
                  for (std::size_t ci = 0; ci < geo.Cin; ++ci) {
                    const double* wrow = wv.data() + woff + ci * geo.Cout;
                    if (need_x) {
                      double acc = 0.0;
                      for (std::size_t co = 0; co < geo.Cout; ++co) acc += go[co] * wrow[co];
                      gx[xoff + ci] += acc;
                    }
                    if (need_w) {
                      const double xval = xv[xoff + ci];
                      double* gwrow = gw.data() + woff + ci * geo.Cout;
                      for (std::size_t co = 0; co < geo.Cout; ++co) gwrow[co] += xval * go[co];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, std::size_t stride, Padding padding) {
  if (x.rank() != 4 || w.rank() != 3 || w.shape()[0] != w.shape()[1] ||
      w.shape()[2] != x.shape()[3]) {
    shape_mismatch("depthwise_conv2d", x, w);
  }
  const std::size_t C = x.shape()[3];
  const auto geo = conv_geometry(x, w.shape()[0], C, C, stride, padding);
  std::vector<double> out(geo.B * geo.Ho * geo.Wo * C, 0.0);
  auto xv = x.data();
  auto wv = w.data();
  for (std::size_t b = 0; b < geo.B; ++b) {
    for (std::size_t oh = 0; oh < geo.Ho; ++oh) {
      for (std::size_t ow = 0; ow < geo.Wo; ++ow) {
        double* o = out.data() + ((b * geo.Ho + oh) * geo.Wo + ow) * C;
        for (std::size_t kh = 0; kh < geo.k; ++kh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geo.stride + kh) -
                                    static_cast<std::ptrdiff_t>(geo.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(geo.H)) continue;
          for (std::size_t kw = 0; kw < geo.k; ++kw) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geo.stride + kw) -
                                      static_cast<std::ptrdiff_t>(geo.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(geo.W)) continue;
            const double* xp = xv.data() + ((b * geo.H + static_cast<std::size_t>(ih)) * geo.W +
                                            static_cast<std::size_t>(iw)) * C;
            const double* wp = wv.data() + (kh * geo.k + kw) * C;
            for (std::size_t c = 0; c < C; ++c) o[c] += xp[c] * wp[c];
          }
        }
      }
    }
  }

  return OpBuilder::make(
      OpKind::DepthwiseConv2d, {geo.B, geo.Ho, geo.Wo, C}, std::move(out), {x, w},
      [geo, C](std::span<const double> g, std::span<const Tensor> in, std::span<const double>) {
        auto xv = in[0].data();
        auto wv = in[1].data();
        const bool need_x = in[0].requires_grad();
        const bool need_w = in[1].requires_grad();
        std::span<double> gx = need_x ? grad_buffer(in[0]) : std::span<double>{};
        std::span<double> gw = need_w ? grad_buffer(in[1]) : std::span<double>{};
        for (std::size_t b = 0; b < geo.B; ++b) {
          for (std::size_t oh = 0; oh < geo.Ho; ++oh) {
            for (std::size_t ow = 0; ow < geo.Wo; ++ow) {
              const double* go = g.data() + ((b * geo.Ho + oh) * geo.Wo + ow) * C;
              for (std::size_t kh = 0; kh < geo.k; ++kh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geo.stride + kh) -
                                          static_cast<std::ptrdiff_t>(geo.pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(geo.H)) continue;
                for (std::size_t kw = 0; kw < geo.k; ++kw) {
                  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * geo.stride + kw) -
                                            static_cast<std::ptrdiff_t>(geo.pad);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(geo.W)) continue;
                  const std::size_t xoff = ((b * geo.H + static_cast<std::size_t>(ih)) * geo.W +
                                            static_cast<std::size_t>(iw)) * C;
                  const std::size_t woff = (kh * geo.k + kw) * C;
                  for (std::size_t c = 0; c < C; ++c) {
                    if (need_x) gx[xoff + c] += go[c] * wv[woff + c];
                    if (need_w) gw[woff + c] += go[c] * xv[xoff + c];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  const auto s = split_at(x.shape(), ax);
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(xv[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  return OpBuilder::make(OpKind::Softmax, x.shape(), std::move(out), {x},
                         [s](std::span<const double> g, std::span<const Tensor> in,
                             std::span<const double> y) {
                           if (!in[0].requires_grad()) return;
                           auto gx = grad_buffer(in[0]);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t i = 0; i < s.inner; ++i) {
                               const std::size_t base = o * s.extent * s.inner + i;
                               double dot = 0.0;
                               for (std::size_t e = 0; e < s.extent; ++e) {
                                 dot += g[base + e * s.inner] * y[base + e * s.inner];
                               }
                               for (std::size_t e = 0; e < s.extent; ++e) {
                                 const std::size_t k = base + e * s.inner;
                                 gx[k] += y[k] * (g[k] - dot);
                               }
                             }
                           }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t D = x.shape().back();
  if (gamma.rank() != 1 || gamma.numel() != D) shape_mismatch("layer_norm", x, gamma);
  if (beta.rank() != 1 || beta.numel() != D) shape_mismatch("layer_norm", x, beta);
  const std::size_t rows = x.numel() / D;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * D;
    double mu = 0.0;
    for (std::size_t d = 0; d < D; ++d) mu += xr[d];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t d = 0; d < D; ++d) var += (xr[d] - mu) * (xr[d] - mu);
    var /= static_cast<double>(D);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t d = 0; d < D; ++d) out[r * D + d] = (xr[d] - mu) * inv * gv[d] + bv[d];
  }
  return OpBuilder::make(
      OpKind::LayerNorm, x.shape(), std::move(out), {x, gamma, beta},
      [rows, D, eps](std::span<const double> g, std::span<const Tensor> in,
                     std::span<const double>) {
        auto xv = in[0].data();
        auto gv = in[1].data();
        const bool need_x = in[0].requires_grad();
        const bool need_g = in[1].requires_grad();
        const bool need_b = in[2].requires_grad();
        std::span<double> gx = need_x ? grad_buffer(in[0]) : std::span<double>{};
        std::span<double> gg = need_g ? grad_buffer(in[1]) : std::span<double>{};
        std::span<double> gb = need_b ? grad_buffer(in[2]) : std::span<double>{};
        std::vector<double> xhat(D);
        std::vector<double> dxhat(D);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = xv.data() + r * D;
          const double* gr = g.data() + r * D;
          double mu = 0.0;
          for (std::size_t d = 0; d < D; ++d) mu += xr[d];
          mu /= static_cast<double>(D);
          double var = 0.0;
          for (std::size_t d = 0; d < D; ++d) var += (xr[d] - mu) * (xr[d] - mu);
          var /= static_cast<double>(D);
          const double inv = 1.0 / std::sqrt(var + eps);
          double sum_dxhat = 0.0;
          double sum_dxhat_xhat = 0.0;
          for (std::size_t d = 0; d < D; ++d) {
            xhat[d] = (xr[d] - mu) * inv;
            dxhat[d] = gr[d] * gv[d];
            sum_dxhat += dxhat[d];
            sum_dxhat_xhat += dxhat[d] * xhat[d];
            if (need_g) gg[d] += gr[d] * xhat[d];
            if (need_b) gb[d] += gr[d];
          }
          if (need_x) {
            const double n = static_cast<double>(D);
            for (std::size_t d = 0; d < D; ++d) {
              gx[r * D + d] += inv / n * (n * dxhat[d] - sum_dxhat - xhat[d] * sum_dxhat_xhat);
            }
          }
        }
      });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) shape_mismatch("concat", parts.front(), p);
    out_shape[ax] += s[ax];
  }
  const auto out_split = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;  // offset of each part along the axis
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const auto ps = split_at(p.shape(), ax);
    auto pv = p.data();
    const std::size_t chunk = ps.extent * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk,
                  out.data() + o * out_split.extent * out_split.inner + offset * out_split.inner);
    }
    offset += ps.extent;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return OpBuilder::make(
      OpKind::Concat, std::move(out_shape), std::move(out), std::move(inputs),
      [ax, out_split, offsets](std::span<const double> g, std::span<const Tensor> in,
                               std::span<const double>) {
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (!in[k].requires_grad()) continue;
          const auto ps = split_at(in[k].shape(), ax);
          const std::size_t chunk = ps.extent * ps.inner;
          auto gp = grad_buffer(in[k]);
          for (std::size_t o = 0; o < ps.outer; ++o) {
            const double* src =
                g.data() + o * out_split.extent * out_split.inner + offsets[k] * out_split.inner;
            for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
          }
        }
      });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape.empty() || shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                     shape_to_string(shape));
  }
  return OpBuilder::make(OpKind::Reshape, std::move(shape), x.to_vector(), {x},
                         [](std::span<const double> g, std::span<const Tensor> in,
                            std::span<const double>) {
                           if (!in[0].requires_grad()) return;
                           auto gx = grad_buffer(in[0]);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

Tensor transpose(const Tensor& x, std::vector<std::size_t> perm) {
  const auto& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  {
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(r);
    std::iota(iota.begin(), iota.end(), 0);
    if (sorted != iota) throw ShapeError("transpose: invalid permutation for " + shape_to_string(in_shape));
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
  // Stride in the input for each output axis.
  std::vector<std::size_t> gather(r);
  for (std::size_t i = 0; i < r; ++i) gather[i] = in_strides[perm[i]];

  // Maps each output flat index to its input flat index.
  const std::size_t n = x.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    source[flat] = src;
    for (std::size_t a = r; a-- > 0;) {
      ++idx[a];
      src += gather[a];
      if (idx[a] < out_shape[a]) break;
      src -= gather[a] * idx[a];
      idx[a] = 0;
    }
  }
  auto xv = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[source[i]];
  return OpBuilder::make(OpKind::Transpose, std::move(out_shape), std::move(out), {x},
                         [source = std::move(source)](std::span<const double> g,
                                                      std::span<const Tensor> in,
                                                      std::span<const double>) {
                           if (!in[0].requires_grad()) return;
                           auto gx = grad_buffer(in[0]);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[source[i]] += g[i];
                         });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
  const auto s = split_at(x.shape(), ax);
  if (begin >= end || end > s.extent) {
    std::ostringstream os;
    os << "slice: range [" << begin << ", " << end << ") invalid for extent " << s.extent
       << " of " << shape_to_string(x.shape());
    throw ShapeError(os.str());
  }
  Shape out_shape = x.shape();
  out_shape[ax] = end - begin;
  const std::size_t len = (end - begin) * s.inner;
  auto xv = x.data();
  std::vector<double> out;
  out.reserve(s.outer * len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = xv.data() + o * s.extent * s.inner + begin * s.inner;
    out.insert(out.end(), src, src + len);
  }
  return OpBuilder::make(OpKind::Slice, std::move(out_shape), std::move(out), {x},
                         [s, begin, len](std::span<const double> g, std::span<const Tensor> in,
                                         std::span<const double>) {
                           if (!in[0].requires_grad()) return;
                           auto gx = grad_buffer(in[0]);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             double* dst = gx.data() + o * s.extent * s.inner + begin * s.inner;
                             for (std::size_t i = 0; i < len; ++i) dst[i] += g[o * len + i];
                           }
                         });
}

namespace {

Tensor reduce_axis(const Tensor& x, int axis, bool average) {
  const OpKind kind = average ? OpKind::Mean : OpKind::Sum;
  const std::size_t ax = normalize_axis(axis, x.rank(), average ? "mean" : "sum");
  const auto s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  if (out_shape.empty()) out_shape = {1};
  const double factor = average ? 1.0 / static_cast<double>(s.extent) : 1.0;
  auto xv = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = xv.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  if (average) {
    for (auto& v : out) v *= factor;
  }
  return OpBuilder::make(kind, std::move(out_shape), std::move(out), {x},
                         [s, factor](std::span<const double> g, std::span<const Tensor> in,
                                     std::span<const double>) {
                           if (!in[0].requires_grad()) return;
                           auto gx = grad_buffer(in[0]);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t e = 0; e < s.extent; ++e) {
                               double* dst = gx.data() + (o * s.extent + e) * s.inner;
                               const double* src = g.data() + o * s.inner;
                               for (std::size_t i = 0; i < s.inner; ++i) dst[i] += factor * src[i];
                             }
                           }
                         });
}

}  // namespace

Tensor sum(const Tensor& x, int axis) { return reduce_axis(x, axis, false); }

Tensor mean(const Tensor& x, int axis) { return reduce_axis(x, axis, true); }

Tensor sum_all(const Tensor& x) { return reduce_axis(reshape(x, {x.numel()}), 0, false); }

Tensor mean_all(const Tensor& x) { return reduce_axis(reshape(x, {x.numel()}), 0, true); }

Tensor dropout(const Tensor& x, double p, std::span<const double> uniform_draws) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (uniform_draws.size() != x.numel()) {
    throw ShapeError("dropout: need one draw per element of " + shape_to_string(x.shape()));
  }
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = uniform_draws[i] < p ? 0.0 : keep;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

}  // namespace scopeformer
