#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "echoflow/etns.hpp"
#include "echoflow/manifest.hpp"
#include "echoflow/video.hpp"

using namespace echoflow;

namespace {

VideoTensor random_video(std::size_t t, std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed,
                         double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  VideoTensor v(t, h, w, c);
  for (float& x : v.data) x = static_cast<float>(uniform(rng, lo, hi));
  return v;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "echoflow_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an echoflow::Error";
  return ErrorCode::invalid_argument;
}

}  // namespace

TEST(Etns, WriteReadIdentical) {
  const auto v = random_video(4, 8, 8, 1, 1);
  const auto path = temp_path("rt.etns").string();
  write_video(path, v);
  const auto bytes = read_file_bytes(path);
  EXPECT_EQ(bytes.size(), 12u + 4 * 8 + 4 * 256);
  EXPECT_EQ(read_video(path), v);
  EXPECT_EQ(encode_etns(to_ndarray(read_video(path))), std::string(bytes.begin(), bytes.end()));
}

TEST(Etns, HeaderLayoutIsBitExact) {
  NdArray a{{2, 1}, {1.0f, -2.5f}};
  const auto s = encode_etns(a);
  const unsigned char expected[] = {'E', 'T', 'N', 'S', '1', 0, 0, 0, 1, 2, 0, 0,
                                    2,   0,   0,   0,   0,   0, 0, 0, 1, 0, 0, 0,
                                    0,   0,   0,   0,   0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0};
  ASSERT_EQ(s.size(), sizeof(expected));
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(static_cast<unsigned char>(s[i]), expected[i]) << i;
}

TEST(Etns, PropertyRoundTripRandomDims) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    NdArray a;
    const auto nd = uniform_index(rng, 1, 4);
    for (std::size_t i = 0; i < nd; ++i) a.dims.push_back(uniform_index(rng, 1, 64 / nd));
    a.data.resize(a.element_count());
    for (auto& v : a.data) v = std::bit_cast<float>(static_cast<std::uint32_t>(rng()) & 0x7f7fffffu);
    const auto bytes = encode_etns(a);
    const std::vector<unsigned char> buf(bytes.begin(), bytes.end());
    EXPECT_EQ(encode_etns(decode_etns(buf)), bytes);
  }
}

TEST(Etns, DistinctFormatErrors) {
  auto bytes = encode_etns(NdArray{{2, 2}, {1, 2, 3, 4}});
  std::vector<unsigned char> buf(bytes.begin(), bytes.end());

  auto bad_magic = buf;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_etns(bad_magic); }), ErrorCode::bad_magic);

  auto truncated = buf;
  truncated.resize(truncated.size() - 3);
  EXPECT_EQ(code_of([&] { decode_etns(truncated); }), ErrorCode::truncated);

  auto longer = buf;
  longer.push_back(0);
  EXPECT_EQ(code_of([&] { decode_etns(longer); }), ErrorCode::truncated);

  auto overflow = buf;
  for (int i = 0; i < 8; ++i) overflow[12 + i] = 0xff;
  for (int i = 0; i < 8; ++i) overflow[20 + i] = 0xff;
  EXPECT_EQ(code_of([&] { decode_etns(overflow); }), ErrorCode::dim_overflow);

  auto dtype = buf;
  dtype[8] = 7;
  EXPECT_EQ(code_of([&] { decode_etns(dtype); }), ErrorCode::unsupported_dtype);
}

TEST(Normalize, UniformBecomesOne) {
  VideoTensor v(3, 4, 4, 1, 200.0f);
  auto r = normalize_video(v);
  EXPECT_FALSE(r.degenerate);
  for (float x : r.video.data) EXPECT_EQ(x, 1.0f);
}

TEST(Normalize, IdempotentAndScaleInvariant) {
  const auto v = random_video(3, 5, 5, 1, 3);
  const auto once = normalize_video(v).video;
  EXPECT_EQ(normalize_video(once).video, once);
  VideoTensor scaled = v;
  for (float& x : scaled.data) x *= 8.0f;  // power of two keeps the comparison exact
  EXPECT_EQ(normalize_video(scaled).video, once);
  EXPECT_EQ(*std::max_element(once.data.begin(), once.data.end()), 1.0f);
}

TEST(Normalize, AllZeroFlagged) {
  VideoTensor v(2, 3, 3, 1, 0.0f);
  auto r = normalize_video(v);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.video, v);
}

TEST(SectorMask, AllOnesIsIdentity) {
  const auto v = random_video(2, 6, 7, 1, 4);
  EXPECT_EQ(apply_sector_mask(v, SectorMask(6, 7, 1)), v);
}

TEST(SectorMask, MatchesPerPixelMultiplyOracle) {
  auto v = random_video(3, 10, 12, 2, 5);
  for (std::size_t t = 0; t < 3; ++t)  // burned-in corner annotation
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) v.at(t, y, x, 0) = v.at(t, y, x, 1) = 1.0f;
  SectorMask m(10, 12, 1);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) m(y, x) = 0;
  Rng rng(6);
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 4; x < 12; ++x) m(y, x) = uniform(rng, 0, 1) < 0.8 ? 1 : 0;

  const auto out = apply_sector_mask(v, m);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 12; ++x)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out.at(t, y, x, c), v.at(t, y, x, c) * float(m(y, x)));
  EXPECT_EQ(out.at(1, 1, 1, 0), 0.0f);
}

TEST(SectorMask, DimMismatch) {
  EXPECT_EQ(code_of([] { apply_sector_mask(VideoTensor(1, 4, 4, 1), SectorMask(4, 5)); }),
            ErrorCode::shape_mismatch);
}

TEST(SectorMask, EstimateFlickeringDisk) {
  VideoTensor v(8, 32, 32, 1, 0.3f);
  const double cy = 15, cx = 17, radius = 8;
  for (std::size_t t = 0; t < v.frames; ++t)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        if (std::hypot(double(y) - cy, double(x) - cx) <= radius) v.at(t, y, x) = (t % 2) ? 0.9f : 0.1f;

  // oracle: per-pixel temporal standard deviation
  SectorMask oracle(32, 32, 0);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      double s = 0, q = 0;
      for (std::size_t t = 0; t < 8; ++t) {
        s += v.at(t, y, x);
        q += v.at(t, y, x) * v.at(t, y, x);
      }
      oracle(y, x) = std::sqrt(std::max(0.0, q / 8 - (s / 8) * (s / 8))) > 0.05 ? 1 : 0;
    }
  const auto m = estimate_sector_mask(v, 0.05);
  std::size_t disagree = 0;
  for (std::size_t i = 0; i < m.inside.size(); ++i) disagree += m.inside[i] != oracle.inside[i];
  EXPECT_EQ(disagree, 0u);  // a disk is already closed, connected and hole-free
}

TEST(SectorMask, StaticVideoFails) {
  EXPECT_EQ(code_of([] { estimate_sector_mask(VideoTensor(4, 8, 8, 1, 0.5f), 0.01); }),
            ErrorCode::degenerate_input);
}

TEST(SectorMask, ZeroThresholdOnNoiseIsFullFrame) {
  const auto m = estimate_sector_mask(random_video(5, 9, 11, 1, 8), 0.0);
  EXPECT_EQ(m.count(), 99u);
}

TEST(Resize, ConstantStaysConstant) {
  VideoTensor v(2, 7, 5, 1, 5.0f);
  for (auto [h, w] : {std::pair{1, 1}, {3, 9}, {112, 112}, {7, 5}}) {
    const auto out = resize_bilinear(v, h, w);
    for (float x : out.data) EXPECT_EQ(x, 5.0f);
  }
}

TEST(Resize, TwoByTwoToOne) {
  VideoTensor v(1, 2, 2, 1);
  v.data = {0, 1, 2, 3};
  // half-pixel centres: the single output sample sits at (0.5, 0.5)
  EXPECT_FLOAT_EQ(resize_bilinear(v, 1, 1).data[0], 1.5f);
}

TEST(Resize, IdentityAndRangeProperty) {
  const auto v = random_video(3, 13, 17, 1, 9, -2.0, 5.0);
  EXPECT_EQ(resize_bilinear(v, 13, 17), v);
  const auto out = resize_bilinear(v, 29, 6);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto in_b = v.data.begin() + long(t * 13 * 17), out_b = out.data.begin() + long(t * 29 * 6);
    const auto [lo, hi] = std::minmax_element(in_b, in_b + 13 * 17);
    for (auto it = out_b; it != out_b + 29 * 6; ++it) {
      EXPECT_GE(*it, *lo);
      EXPECT_LE(*it, *hi);
    }
  }
}

TEST(Grayscale, Luma) {
  const auto one = random_video(2, 3, 3, 1, 10);
  EXPECT_EQ(to_grayscale(one), one);
  VideoTensor white(1, 2, 2, 3, 1.0f), red(1, 2, 2, 3, 0.0f);
  for (std::size_t i = 0; i < 4; ++i) red.data[3 * i] = 1.0f;
  for (float x : to_grayscale(white).data) EXPECT_FLOAT_EQ(x, 1.0f);
  for (float x : to_grayscale(red).data) EXPECT_FLOAT_EQ(x, 0.299f);
  EXPECT_EQ(code_of([] { to_grayscale(VideoTensor(1, 2, 2, 2)); }), ErrorCode::invalid_argument);
}

TEST(Clips, SingleFeasibleStart) {
  const auto v = random_video(32, 4, 4, 1, 11);
  const auto clips = sample_clips(v, 5, 32, 123);
  ASSERT_EQ(clips.size(), 5u);
  for (const auto& c : clips) {
    EXPECT_EQ(c.start, 0u);
    EXPECT_EQ(c.video, v);
  }
}

TEST(Clips, SeededStartsMatchGeneratorOracle) {
  const auto v = random_video(100, 3, 3, 1, 12);
  const auto clips = sample_clips(v, 5, 32, 2024);
  std::mt19937_64 oracle(2024);
  std::uniform_int_distribution<std::size_t> dist(0, 68);
  for (const auto& c : clips) {
    EXPECT_EQ(c.start, dist(oracle));
    EXPECT_LE(c.start, 68u);
    EXPECT_EQ(c.video, slice_frames(v, c.start, 32));  // contiguous slice
  }
  const auto again = sample_clips(v, 5, 32, 2024);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(again[i].video, clips[i].video);
}

TEST(Clips, TooShortRejected) {
  EXPECT_EQ(code_of([] { sample_clips(VideoTensor(20, 2, 2, 1), 5, 32, 1); }), ErrorCode::insufficient_frames);
}

TEST(Manifest, RoundTripAndPatientInvariant) {
  Manifest m;
  m.rows = {{"s1", "p1", "v/s1.etns", "f/s1.etns", 1, Split::train},
            {"s2", "p1", "v/s2.etns", "f/s2.etns", 1, Split::train},
            {"s3", "p2", "v/s3.etns", "", 0, Split::test}};
  const auto text = format_manifest(m);
  EXPECT_EQ(text.substr(0, text.find('\n')), kManifestHeader);
  std::istringstream in(text);
  const auto back = parse_manifest(in);
  ASSERT_EQ(back.rows.size(), 3u);
  EXPECT_EQ(format_manifest(back), text);

  m.rows[1].split = Split::val;
  EXPECT_THROW(validate(m), Error);
  m.rows[1].split = Split::train;
  m.rows[1].scan_id = "s1";
  EXPECT_THROW(validate(m), Error);
}
