#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scopeformer/dicom.hpp"
#include "scopeformer/tensor.hpp"

namespace scopeformer {

/// A Hounsfield window; width must be positive.
struct WindowSpec {
  double center = 40.0;
  double width = 80.0;

  bool operator==(const WindowSpec&) const = default;
};

using WindowTriple = std::array<WindowSpec, 3>;

/// brain (40, 80), subdural (80, 200), soft tissue (40, 380).
WindowTriple default_windows();

/// clamp((hu - (center - width/2)) / width, 0, 1)
double apply_window(double hu, const WindowSpec& window);

/// [rows, cols, 3]; channel c is the slice under window c.
Tensor hu_window_stack(const CtSlice& slice, const WindowTriple& windows);

/// Bilinear resampling of [H, W, C] with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t out_height, std::size_t out_width);

/// .sfi: "SFI1", u32 H, u32 W, u32 C, then H*W*C little-endian f32.
std::vector<std::uint8_t> encode_sfi(const Tensor& image);
Tensor decode_sfi(std::span<const std::uint8_t> bytes);
void write_sfi(const std::filesystem::path& path, const Tensor& image);
Tensor read_sfi(const std::filesystem::path& path);

}  // namespace scopeformer
