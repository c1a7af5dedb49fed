#include "scopeformer/imaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace scopeformer {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace

WindowTriple default_windows() { return {WindowSpec{40, 80}, WindowSpec{80, 200}, WindowSpec{40, 380}}; }

double apply_window(double hu, const WindowSpec& window) {
  if (!(window.width > 0.0)) throw std::invalid_argument("window width must be > 0");
  const double lo = window.center - window.width / 2.0;
  return std::clamp((hu - lo) / window.width, 0.0, 1.0);
}

Tensor hu_window_stack(const CtSlice& slice, const WindowTriple& windows) {
  const std::size_t n = slice.rows * slice.cols;
  if (n == 0 || slice.pixel_values.size() != n) {
    throw std::invalid_argument("hu_window_stack: slice geometry does not match its pixel count");
  }
  std::vector<double> out(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double hu = slice.hu(i);
    for (std::size_t c = 0; c < 3; ++c) out[i * 3 + c] = apply_window(hu, windows[c]);
  }
  return Tensor::from({slice.rows, slice.cols, 3}, std::move(out));
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_height, std::size_t out_width) {
  if (image.rank() != 3 || out_height == 0 || out_width == 0) {
    throw ShapeError("resize_bilinear: expected [H,W,C] input and non-zero output size");
  }
  const std::size_t H = image.shape()[0];
  const std::size_t W = image.shape()[1];
  const std::size_t C = image.shape()[2];
  const auto src = image.data();
  // Source coordinate and blend weight per output index along one axis.
  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      t[o] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(H, out_height);
  const auto tx = taps(W, out_width);
  std::vector<double> out(out_height * out_width * C);
  for (std::size_t y = 0; y < out_height; ++y) {
    for (std::size_t x = 0; x < out_width; ++x) {
      const auto& a = ty[y];
      const auto& b = tx[x];
      for (std::size_t c = 0; c < C; ++c) {
        const double v00 = src[(a.i0 * W + b.i0) * C + c];
        const double v01 = src[(a.i0 * W + b.i1) * C + c];
        const double v10 = src[(a.i1 * W + b.i0) * C + c];
        const double v11 = src[(a.i1 * W + b.i1) * C + c];
        const double top = v00 + (v01 - v00) * b.frac;
        const double bottom = v10 + (v11 - v10) * b.frac;
        out[(y * out_width + x) * C + c] = top + (bottom - top) * a.frac;
      }
    }
  }
  return Tensor::from({out_height, out_width, C}, std::move(out));
}

std::vector<std::uint8_t> encode_sfi(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("encode_sfi: expected [H,W,C], got " + shape_to_string(image.shape()));
  std::vector<std::uint8_t> out{'S', 'F', 'I', '1'};
  for (auto e : image.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  out.reserve(out.size() + image.numel() * 4);
  for (double v : image.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_sfi(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "SFI1", 4) != 0) {
    throw std::runtime_error("not an SFI1 image");
  }
  const std::size_t H = get_u32(bytes, 4);
  const std::size_t W = get_u32(bytes, 8);
  const std::size_t C = get_u32(bytes, 12);
  if (H == 0 || W == 0 || C == 0) throw std::runtime_error("SFI1 image with zero extent");
  const std::size_t n = H * W * C;
  if (bytes.size() != 16 + 4 * n) {
    throw std::runtime_error("SFI1 payload size " + std::to_string(bytes.size() - 16) +
                             " does not match " + std::to_string(H) + "x" + std::to_string(W) + "x" +
                             std::to_string(C));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(get_u32(bytes, 16 + 4 * i));
  return Tensor::from({H, W, C}, std::move(values));
}

void write_sfi(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_sfi(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Tensor read_sfi(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_sfi(bytes);
}

}  // namespace scopeformer
