#include "scopeformer/dicom.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

namespace scopeformer {

namespace {

constexpr std::size_t kPreambleSize = 128;
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element) {
  return (static_cast<std::uint32_t>(group) << 16) | element;
}

constexpr std::uint32_t kTransferSyntax = tag(0x0002, 0x0010);
constexpr std::uint32_t kSamplesPerPixel = tag(0x0028, 0x0002);
constexpr std::uint32_t kPhotometric = tag(0x0028, 0x0004);
constexpr std::uint32_t kNumberOfFrames = tag(0x0028, 0x0008);
constexpr std::uint32_t kRows = tag(0x0028, 0x0010);
constexpr std::uint32_t kColumns = tag(0x0028, 0x0011);
constexpr std::uint32_t kBitsAllocated = tag(0x0028, 0x0100);
constexpr std::uint32_t kPixelRepresentation = tag(0x0028, 0x0103);
constexpr std::uint32_t kRescaleIntercept = tag(0x0028, 0x1052);
constexpr std::uint32_t kRescaleSlope = tag(0x0028, 0x1053);
constexpr std::uint32_t kPixelData = tag(0x7FE0, 0x0010);
constexpr std::uint32_t kItem = tag(0xFFFE, 0xE000);
constexpr std::uint32_t kItemDelimiter = tag(0xFFFE, 0xE00D);
constexpr std::uint32_t kSequenceDelimiter = tag(0xFFFE, 0xE0DD);

bool has_long_length(const char vr[2]) {
  static constexpr std::array<const char*, 13> kLong = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                                        "SV", "UC", "UN", "UR", "UT", "UV"};
  for (const char* v : kLong) {
    if (vr[0] == v[0] && vr[1] == v[1]) return true;
  }
  return false;
}

std::string tag_string(std::uint32_t t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "(%04X,%04X)", t >> 16, t & 0xFFFF);
  return buf;
}

[[noreturn]] void corrupt(const std::string& message) {
  throw DicomError(DicomError::Kind::Corrupt, message);
}

[[noreturn]] void unsupported(const std::string& message) {
  throw DicomError(DicomError::Kind::Unsupported, message);
}

struct Element {
  std::uint32_t tag = 0;
  char vr[2] = {0, 0};
  std::uint32_t length = 0;
  std::size_t value_offset = 0;
  std::size_t header_offset = 0;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t size() const { return bytes_.size(); }

  std::uint16_t u16(std::size_t at) const {
    require(at, 2, "u16");
    return static_cast<std::uint16_t>(bytes_[at] | (bytes_[at + 1] << 8));
  }

  std::uint32_t u32(std::size_t at) const {
    require(at, 4, "u32");
    return static_cast<std::uint32_t>(bytes_[at]) | (static_cast<std::uint32_t>(bytes_[at + 1]) << 8) |
           (static_cast<std::uint32_t>(bytes_[at + 2]) << 16) |
           (static_cast<std::uint32_t>(bytes_[at + 3]) << 24);
  }

  std::string text(std::size_t at, std::size_t len) const {
    require(at, len, "string value");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at), len);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
    std::size_t start = 0;
    while (start < s.size() && s[start] == ' ') ++start;
    return s.substr(start);
  }

  void require(std::size_t at, std::size_t len, const char* what) const {
    if (at > bytes_.size() || len > bytes_.size() - at) {
      std::ostringstream os;
      os << "truncated " << what << ": need " << len << " bytes at offset " << at << ", file has "
         << bytes_.size();
      corrupt(os.str());
    }
  }

  // Explicit VR element header at `at`.
  Element header(std::size_t at) const {
    Element e;
    e.header_offset = at;
    require(at, 8, "element header");
    e.tag = tag(u16(at), u16(at + 2));
    if ((e.tag >> 16) == 0xFFFE) {
      e.length = u32(at + 4);
      e.value_offset = at + 8;
      return e;
    }
    e.vr[0] = static_cast<char>(bytes_[at + 4]);
    e.vr[1] = static_cast<char>(bytes_[at + 5]);
    if (e.vr[0] < 'A' || e.vr[0] > 'Z' || e.vr[1] < 'A' || e.vr[1] > 'Z') {
      corrupt("invalid VR at offset " + std::to_string(at + 4) + " for " + tag_string(e.tag));
    }
    if (has_long_length(e.vr)) {
      e.length = u32(at + 8);
      e.value_offset = at + 12;
    } else {
      e.length = u16(at + 6);
      e.value_offset = at + 8;
    }
    return e;
  }

  // Skips an undefined-length sequence starting at `at` (first item header);
  // returns the offset just past its delimiter.
  std::size_t skip_sequence(std::size_t at) const {
    while (true) {
      const Element item = header(at);
      if (item.tag == kSequenceDelimiter) return item.value_offset;
      if (item.tag != kItem) corrupt("expected sequence item at offset " + std::to_string(at));
      if (item.length != kUndefinedLength) {
        require(item.value_offset, item.length, "sequence item");
        at = item.value_offset + item.length;
        continue;
      }
      at = item.value_offset;
      while (true) {
        const Element e = header(at);
        if (e.tag == kItemDelimiter) {
          at = e.value_offset;
          break;
        }
        at = skip_element(e);
      }
    }
  }

  std::size_t skip_element(const Element& e) const {
    if (e.length == kUndefinedLength) {
      if ((e.vr[0] == 'S' && e.vr[1] == 'Q') || (e.vr[0] == 'U' && e.vr[1] == 'N')) {
        return skip_sequence(e.value_offset);
      }
      corrupt("undefined length on " + tag_string(e.tag) + " at offset " +
              std::to_string(e.header_offset));
    }
    require(e.value_offset, e.length, "element value");
    return e.value_offset + e.length;
  }

 private:
  std::span<const std::uint8_t> bytes_;
};

double parse_decimal_string(const std::string& s, std::uint32_t t) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (!s.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) corrupt("malformed decimal string \"" + s + "\" in " + tag_string(t));
  return v;
}

// Little-endian byte sink.
class Writer {
 public:
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }

  void element(std::uint32_t t, const char* vr, std::span<const std::uint8_t> value) {
    u16(static_cast<std::uint16_t>(t >> 16));
    u16(static_cast<std::uint16_t>(t & 0xFFFF));
    raw(vr, 2);
    if (has_long_length(vr)) {
      u16(0);
      u32(static_cast<std::uint32_t>(value.size()));
    } else {
      u16(static_cast<std::uint16_t>(value.size()));
    }
    raw(value.data(), value.size());
  }

  void string_element(std::uint32_t t, const char* vr, std::string s, char pad) {
    if (s.size() % 2) s.push_back(pad);
    element(t, vr, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }

  void us_element(std::uint32_t t, std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v & 0xFF), static_cast<std::uint8_t>(v >> 8)};
    element(t, "US", b);
  }

  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

std::string decimal_string(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::invalid_argument("cannot format decimal string");
  return std::string(buf, ptr);
}

}  // namespace

CtSlice parse_dicom_lite(std::span<const std::uint8_t> bytes, std::string source_id) {
  if (bytes.size() < kPreambleSize + 4) {
    throw DicomError(DicomError::Kind::UnsupportedFormat,
                     "not a DICOM file: " + std::to_string(bytes.size()) +
                         " bytes is shorter than preamble + magic");
  }
  if (std::memcmp(bytes.data() + kPreambleSize, "DICM", 4) != 0) {
    throw DicomError(DicomError::Kind::UnsupportedFormat,
                     "not a DICOM file: missing \"DICM\" magic at offset 128");
  }
  const Reader r(bytes);
  CtSlice slice;
  slice.source_id = std::move(source_id);
  std::optional<std::size_t> rows, cols, bits;
  std::optional<double> slope, intercept;
  std::optional<Element> pixel_data;
  std::size_t at = kPreambleSize + 4;
  while (at < r.size()) {
    const Element e = r.header(at);
    if (e.tag == kPixelData) {
      if (e.length == kUndefinedLength) {
        unsupported("encapsulated (compressed) PixelData is not supported");
      }
      pixel_data = e;
      if (e.value_offset > r.size() || e.length > r.size() - e.value_offset) {
        std::ostringstream os;
        os << "truncated PixelData: " << e.length << " bytes declared at offset " << e.value_offset
           << ", only " << (r.size() - std::min(r.size(), e.value_offset)) << " available";
        corrupt(os.str());
      }
      at = e.value_offset + e.length;
      continue;
    }
    const std::size_t next = r.skip_element(e);
    switch (e.tag) {
      case kTransferSyntax: {
        const std::string ts = r.text(e.value_offset, e.length);
        if (ts != kExplicitVrLittleEndian) unsupported("transfer syntax " + ts + " is not supported");
        break;
      }
      case kSamplesPerPixel:
        if (r.u16(e.value_offset) != 1) unsupported("only single-sample (monochrome) images are supported");
        break;
      case kPhotometric: {
        const std::string pi = r.text(e.value_offset, e.length);
        if (pi != "MONOCHROME1" && pi != "MONOCHROME2") {
          unsupported("photometric interpretation " + pi + " is not supported");
        }
        break;
      }
      case kNumberOfFrames: {
        const std::string frames = r.text(e.value_offset, e.length);
        if (!frames.empty() && frames != "1") unsupported("multi-frame images are not supported");
        break;
      }
      case kRows: rows = r.u16(e.value_offset); break;
      case kColumns: cols = r.u16(e.value_offset); break;
      case kBitsAllocated: bits = r.u16(e.value_offset); break;
      case kPixelRepresentation: slice.pixel_signed = r.u16(e.value_offset) == 1; break;
      case kRescaleIntercept:
        intercept = parse_decimal_string(r.text(e.value_offset, e.length), e.tag);
        break;
      case kRescaleSlope:
        slope = parse_decimal_string(r.text(e.value_offset, e.length), e.tag);
        break;
      default: break;
    }
    at = next;
  }

  if (!rows || !cols || *rows == 0 || *cols == 0) corrupt("missing or zero Rows/Columns");
  if (!bits) corrupt("missing BitsAllocated");
  if (*bits != 16) unsupported("BitsAllocated " + std::to_string(*bits) + " is not supported (need 16)");
  if (!pixel_data) corrupt("missing PixelData");
  slice.rows = *rows;
  slice.cols = *cols;
  const std::size_t needed = slice.rows * slice.cols * 2;
  if (pixel_data->length < needed) {
    std::ostringstream os;
    os << "truncated PixelData: " << rows.value() << "x" << cols.value() << " needs " << needed
       << " bytes at offset " << pixel_data->value_offset << ", element holds " << pixel_data->length;
    corrupt(os.str());
  }
  slice.pixel_values.resize(slice.rows * slice.cols);
  for (std::size_t i = 0; i < slice.pixel_values.size(); ++i) {
    const std::uint16_t raw = r.u16(pixel_data->value_offset + 2 * i);
    slice.pixel_values[i] = slice.pixel_signed ? static_cast<std::int16_t>(raw) : raw;
  }
  slice.rescale_defaulted = !slope || !intercept;
  slice.rescale_slope = slope.value_or(1.0);
  slice.rescale_intercept = intercept.value_or(0.0);
  if (slice.rescale_slope == 0.0) corrupt("RescaleSlope must be non-zero");
  return slice;
}

CtSlice read_dicom_lite(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_dicom_lite(bytes, path.stem().string());
}

std::vector<std::uint8_t> write_dicom_lite(const CtSlice& slice, const DicomWriteOptions& options) {
  if (slice.rows == 0 || slice.cols == 0 || slice.rows > 0xFFFF || slice.cols > 0xFFFF ||
      slice.pixel_values.size() != slice.rows * slice.cols) {
    throw std::invalid_argument("write_dicom_lite: inconsistent slice geometry");
  }
  Writer meta;
  const std::uint8_t version[2] = {0x00, 0x01};
  meta.element(tag(0x0002, 0x0001), "OB", version);
  meta.string_element(tag(0x0002, 0x0002), "UI", "1.2.840.10008.5.1.4.1.1.2", '\0');
  meta.string_element(kTransferSyntax, "UI", options.transfer_syntax, '\0');

  Writer w;
  w.bytes().assign(kPreambleSize, 0);
  w.raw("DICM", 4);
  const auto meta_length = static_cast<std::uint32_t>(meta.bytes().size());
  const std::uint8_t group_length[4] = {
      static_cast<std::uint8_t>(meta_length & 0xFF), static_cast<std::uint8_t>((meta_length >> 8) & 0xFF),
      static_cast<std::uint8_t>((meta_length >> 16) & 0xFF), static_cast<std::uint8_t>(meta_length >> 24)};
  w.element(tag(0x0002, 0x0000), "UL", group_length);
  w.raw(meta.bytes().data(), meta.bytes().size());

  w.string_element(tag(0x0008, 0x0060), "CS", "CT", ' ');
  w.us_element(kSamplesPerPixel, 1);
  w.string_element(kPhotometric, "CS", "MONOCHROME2", ' ');
  w.us_element(kRows, static_cast<std::uint16_t>(slice.rows));
  w.us_element(kColumns, static_cast<std::uint16_t>(slice.cols));
  w.us_element(kBitsAllocated, 16);
  w.us_element(tag(0x0028, 0x0101), 16);
  w.us_element(tag(0x0028, 0x0102), 15);
  w.us_element(kPixelRepresentation, slice.pixel_signed ? 1 : 0);
  if (options.write_rescale) {
    w.string_element(kRescaleIntercept, "DS", decimal_string(slice.rescale_intercept), ' ');
    w.string_element(kRescaleSlope, "DS", decimal_string(slice.rescale_slope), ' ');
  }
  std::vector<std::uint8_t> pixels;
  pixels.reserve(slice.pixel_values.size() * 2);
  for (std::int32_t v : slice.pixel_values) {
    const bool fits = slice.pixel_signed ? (v >= -32768 && v <= 32767) : (v >= 0 && v <= 65535);
    if (!fits) throw std::invalid_argument("write_dicom_lite: pixel value out of 16-bit range");
    const auto raw = static_cast<std::uint16_t>(v);
    pixels.push_back(static_cast<std::uint8_t>(raw & 0xFF));
    pixels.push_back(static_cast<std::uint8_t>(raw >> 8));
  }
  w.element(kPixelData, "OW", pixels);
  return std::move(w.bytes());
}

void save_dicom_lite(const std::filesystem::path& path, const CtSlice& slice,
                     const DicomWriteOptions& options) {
  const auto bytes = write_dicom_lite(slice, options);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace scopeformer
