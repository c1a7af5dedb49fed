#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "scopeformer/dicom.hpp"
#include "scopeformer/imaging.hpp"

namespace scopeformer {
namespace {

const std::filesystem::path kFixtures = SCOPEFORMER_FIXTURE_DIR;

DicomError::Kind kind_of(const std::string& file) {
  try {
    read_dicom_lite(kFixtures / file);
  } catch (const DicomError& e) {
    return e.kind();
  }
  ADD_FAILURE() << file << " parsed without error";
  return DicomError::Kind::Corrupt;
}

TEST(Dicom, UnsignedFixture) {
  const CtSlice s = read_dicom_lite(kFixtures / "ct_4x4_unsigned.dcm");
  ASSERT_EQ(s.rows, 4u);
  ASSERT_EQ(s.cols, 4u);
  EXPECT_FALSE(s.pixel_signed);
  EXPECT_FALSE(s.rescale_defaulted);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(s.pixel_values[i], static_cast<std::int32_t>(100 * i));
    EXPECT_EQ(s.hu(i), 100.0 * i - 1024.0);
  }
}

TEST(Dicom, SignedFixtureWithSequence) {
  const CtSlice s = read_dicom_lite(kFixtures / "ct_2x3_signed_sq.dcm");
  ASSERT_EQ(s.rows, 2u);
  ASSERT_EQ(s.cols, 3u);
  EXPECT_TRUE(s.pixel_signed);
  for (std::size_t i = 0; i < 6; ++i) {
    const int v = -300 + 50 * static_cast<int>(i);
    EXPECT_EQ(s.pixel_values[i], v);
    EXPECT_EQ(s.hu(i), 2.0 * v - 5.0);
  }
}

TEST(Dicom, MissingRescaleDefaults) {
  const CtSlice s = read_dicom_lite(kFixtures / "ct_2x2_no_rescale.dcm");
  EXPECT_TRUE(s.rescale_defaulted);
  EXPECT_EQ(s.rescale_slope, 1.0);
  EXPECT_EQ(s.rescale_intercept, 0.0);
  EXPECT_EQ(s.pixel_values, (std::vector<std::int32_t>{0, 1, 65534, 65535}));
}

TEST(Dicom, ErrorKinds) {
  EXPECT_EQ(kind_of("not_dicom.dcm"), DicomError::Kind::UnsupportedFormat);
  EXPECT_EQ(kind_of("implicit_vr_ts.dcm"), DicomError::Kind::Unsupported);
  EXPECT_EQ(kind_of("encapsulated_pixels.dcm"), DicomError::Kind::Unsupported);
  EXPECT_EQ(kind_of("truncated_pixels.dcm"), DicomError::Kind::Corrupt);
}

TEST(Dicom, TruncationMessageCarriesOffset) {
  try {
    read_dicom_lite(kFixtures / "truncated_pixels.dcm");
    FAIL();
  } catch (const DicomError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
}

TEST(Dicom, FixturesRoundTripThroughWriter) {
  for (const char* f : {"ct_4x4_unsigned.dcm", "ct_2x3_signed_sq.dcm", "ct_2x2_no_rescale.dcm"}) {
    const CtSlice a = read_dicom_lite(kFixtures / f);
    const CtSlice b = parse_dicom_lite(write_dicom_lite(a));
    EXPECT_EQ(a.pixel_values, b.pixel_values) << f;
    EXPECT_EQ(a.pixel_signed, b.pixel_signed) << f;
    EXPECT_EQ(a.rescale_slope, b.rescale_slope) << f;
    EXPECT_EQ(a.rescale_intercept, b.rescale_intercept) << f;
  }
}

TEST(Dicom, ZeroSlopeIsCorrupt) {
  CtSlice s;
  s.rows = 1;
  s.cols = 2;
  s.pixel_values = {1, 2};
  s.rescale_slope = 0.0;
  try {
    parse_dicom_lite(write_dicom_lite(s));
    FAIL();
  } catch (const DicomError& e) {
    EXPECT_EQ(e.kind(), DicomError::Kind::Corrupt);
  }
}

TEST(Window, CenterMapsToHalfAndClamps) {
  for (const WindowSpec w : {WindowSpec{40, 80}, WindowSpec{80, 200}, WindowSpec{40, 380}, WindowSpec{-600, 1500}}) {
    EXPECT_NEAR(apply_window(w.center, w), 0.5, 1e-12);
    EXPECT_EQ(apply_window(w.center - w.width, w), 0.0);
    EXPECT_EQ(apply_window(w.center + w.width, w), 1.0);
  }
}

TEST(Window, StackUsesOneWindowPerChannel) {
  CtSlice s;
  s.rows = 1;
  s.cols = 1;
  s.pixel_values = {1104};
  s.rescale_intercept = -1024.0;  // HU 80
  const Tensor t = hu_window_stack(s, default_windows());
  ASSERT_EQ(t.shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(t.data()[0], 1.0);                              // 40 +- 40
  EXPECT_NEAR(t.data()[1], 0.5, 1e-12);                     // 80 +- 100
  EXPECT_NEAR(t.data()[2], (80.0 - (40.0 - 190.0)) / 380.0, 1e-12);
}

TEST(Resize, IdentityWhenSizeUnchanged) {
  const Tensor img = Tensor::from({2, 3, 1}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(resize_bilinear(img, 2, 3).to_vector(), img.to_vector());
}

TEST(Resize, HalfPixelUpsampleByHand) {
  // 1x2 -> 1x4 samples the source at -0.25, 0.25, 0.75, 1.25, clamped to [0, 1].
  const Tensor img = Tensor::from({1, 2, 1}, {0.0, 4.0});
  const auto out = resize_bilinear(img, 1, 4).to_vector();
  const std::vector<double> want{0.0, 1.0, 3.0, 4.0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], want[i], 1e-12);
}

TEST(Resize, DownsampleAveragesNeighbours) {
  const Tensor img = Tensor::from({2, 2, 1}, {0.0, 1.0, 2.0, 3.0});
  EXPECT_NEAR(resize_bilinear(img, 1, 1).item(), 1.5, 1e-12);
}

TEST(Sfi, RoundTripIsBitExactForFloatValues) {
  std::vector<double> v;
  for (int i = 0; i < 24; ++i) v.push_back(static_cast<double>(static_cast<float>(0.1 * i - 0.7)));
  const Tensor img = Tensor::from({2, 4, 3}, v);
  const auto path = std::filesystem::temp_directory_path() / "scopeformer_sfi_test.sfi";
  write_sfi(path, img);
  const Tensor back = read_sfi(path);
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_EQ(back.to_vector(), img.to_vector());
  std::filesystem::remove(path);
}

TEST(Sfi, HeaderLayout) {
  const auto bytes = encode_sfi(Tensor::from({1, 2, 1}, {1.0, -2.0}));
  ASSERT_EQ(bytes.size(), 16u + 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SFI1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 1);
  // 1.0f = 0x3F800000 little endian
  EXPECT_EQ(bytes[16 + 3], 0x3F);
  EXPECT_EQ(bytes[16 + 2], 0x80);
}

TEST(Sfi, RejectsBadMagicAndTruncation) {
  auto bytes = encode_sfi(Tensor::from({1, 2, 1}, {1.0, -2.0}));
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_sfi(truncated), std::runtime_error);
  bytes[0] = 'X';
  EXPECT_THROW(decode_sfi(bytes), std::runtime_error);
}

}  // namespace
}  // namespace scopeformer
