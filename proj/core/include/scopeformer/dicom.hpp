#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scopeformer {

/// One CT slice as stored: raw values plus the linear map to Hounsfield units.
struct CtSlice {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> pixel_values;  // decoded 16-bit stored values
  bool pixel_signed = false;
  double rescale_slope = 1.0;
  double rescale_intercept = 0.0;
  std::string source_id;
  /// Set when slope or intercept was absent and the default was used.
  bool rescale_defaulted = false;

  double hu(std::size_t i) const { return rescale_slope * pixel_values[i] + rescale_intercept; }
};

class DicomError : public std::runtime_error {
 public:
  enum class Kind { UnsupportedFormat, Unsupported, Corrupt };

  DicomError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr const char* kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

/// Parses the supported subset: 128-byte preamble + "DICM", explicit VR
/// little endian, uncompressed single-frame 16-bit monochrome PixelData.
CtSlice parse_dicom_lite(std::span<const std::uint8_t> bytes, std::string source_id = {});
CtSlice read_dicom_lite(const std::filesystem::path& path);

struct DicomWriteOptions {
  bool write_rescale = true;
  std::string transfer_syntax = kExplicitVrLittleEndian;
};

/// Fixture writer producing files in the subset read by parse_dicom_lite.
std::vector<std::uint8_t> write_dicom_lite(const CtSlice& slice, const DicomWriteOptions& options = {});
void save_dicom_lite(const std::filesystem::path& path, const CtSlice& slice,
                     const DicomWriteOptions& options = {});

}  // namespace scopeformer
