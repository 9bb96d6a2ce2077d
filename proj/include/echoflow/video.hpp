#pragma once

// Video container and the deterministic preprocessing stages:
// grayscale -> sector mask -> max-intensity normalization -> bilinear resize.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "echoflow/error.hpp"
#include "echoflow/etns.hpp"
#include "echoflow/rng.hpp"

namespace echoflow {

// T x H x W x C, frame-major, channel fastest.
struct VideoTensor {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  VideoTensor() = default;
  VideoTensor(std::size_t t, std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : frames(t), height(h), width(w), channels(c), data(t * h * w * c, fill) {
    require(t >= 1 && h >= 1 && w >= 1 && c >= 1, ErrorCode::invalid_argument,
            "VideoTensor dims must all be >= 1");
  }

  std::size_t frame_size() const { return height * width * channels; }
  std::size_t index(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) const {
    return ((t * height + y) * width + x) * channels + c;
  }
  float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) { return data[index(t, y, x, c)]; }
  float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) const { return data[index(t, y, x, c)]; }

  bool same_shape(const VideoTensor& o) const {
    return frames == o.frames && height == o.height && width == o.width && channels == o.channels;
  }
  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const VideoTensor&, const VideoTensor&) = default;
};

inline std::string shape_string(const VideoTensor& v) {
  return std::to_string(v.frames) + "x" + std::to_string(v.height) + "x" + std::to_string(v.width) + "x" +
         std::to_string(v.channels);
}

inline void validate(const VideoTensor& v) {
  require(v.frames >= 1 && v.height >= 1 && v.width >= 1 && v.channels >= 1, ErrorCode::invalid_argument,
          "VideoTensor dims must all be >= 1");
  require(v.data.size() == v.frames * v.height * v.width * v.channels, ErrorCode::shape_mismatch,
          "VideoTensor data length does not match dims " + shape_string(v));
  require(v.all_finite(), ErrorCode::non_finite, "VideoTensor contains non-finite values");
}

inline NdArray to_ndarray(const VideoTensor& v) {
  return NdArray{{v.frames, v.height, v.width, v.channels}, v.data};
}

inline VideoTensor from_ndarray(NdArray array) {
  require(array.dims.size() == 4, ErrorCode::shape_mismatch,
          "video tensors are 4-D (T,H,W,C); file has " + std::to_string(array.dims.size()) + " dims");
  VideoTensor v;
  v.frames = array.dims[0];
  v.height = array.dims[1];
  v.width = array.dims[2];
  v.channels = array.dims[3];
  v.data = std::move(array.data);
  validate(v);
  return v;
}

inline VideoTensor read_video(const std::string& path) { return from_ndarray(read_etns(path)); }
inline void write_video(const std::string& path, const VideoTensor& v) { write_etns(path, to_ndarray(v)); }

// ---------------------------------------------------------------------------
// normalization

struct Normalized {
  VideoTensor video;
  bool degenerate = false;  // max intensity was <= 0; video returned unchanged
};

inline Normalized normalize_video(const VideoTensor& v) {
  validate(v);
  const float peak = *std::max_element(v.data.begin(), v.data.end());
  if (!(peak > 0.0f)) return {v, true};
  Normalized out{v, false};
  for (float& x : out.video.data) x /= peak;
  return out;
}

// ---------------------------------------------------------------------------
// sector masking

struct SectorMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> inside;  // row-major, 1 = inside the scan sector

  SectorMask() = default;
  SectorMask(std::size_t h, std::size_t w, std::uint8_t fill = 1) : height(h), width(w), inside(h * w, fill) {}

  std::uint8_t operator()(std::size_t y, std::size_t x) const { return inside[y * width + x]; }
  std::uint8_t& operator()(std::size_t y, std::size_t x) { return inside[y * width + x]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), 1)); }
};

inline VideoTensor apply_sector_mask(const VideoTensor& v, const SectorMask& mask) {
  require(mask.height == v.height && mask.width == v.width, ErrorCode::shape_mismatch,
          "mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + " but frames are " +
              std::to_string(v.height) + "x" + std::to_string(v.width));
  VideoTensor out = v;
  for (std::size_t t = 0; t < v.frames; ++t)
    for (std::size_t y = 0; y < v.height; ++y)
      for (std::size_t x = 0; x < v.width; ++x)
        if (!mask(y, x))
          for (std::size_t c = 0; c < v.channels; ++c) out.at(t, y, x, c) = 0.0f;
  return out;
}

namespace detail {

inline SectorMask morph(const SectorMask& m, int radius, bool dilate) {
  SectorMask out(m.height, m.width, 0);
  const int h = static_cast<int>(m.height), w = static_cast<int>(m.width);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool hit = !dilate;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
          const bool v = m(yy, xx) != 0;
          if (dilate && v) hit = true;
          if (!dilate && !v) hit = false;
        }
      out(y, x) = hit ? 1 : 0;
    }
  return out;
}

// Labels 4-connected components with value `target`; returns per-pixel label
// (-1 for other pixels) and component sizes.
inline std::pair<std::vector<int>, std::vector<std::size_t>> components(const SectorMask& m, std::uint8_t target) {
  std::vector<int> label(m.inside.size(), -1);
  std::vector<std::size_t> sizes;
  const std::size_t h = m.height, w = m.width;
  for (std::size_t start = 0; start < label.size(); ++start) {
    if (m.inside[start] != target || label[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t size = 0;
    std::queue<std::size_t> q;
    q.push(start);
    label[start] = id;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      ++size;
      const std::size_t y = p / w, x = p % w;
      const std::size_t nbr[4] = {y > 0 ? p - w : p, y + 1 < h ? p + w : p, x > 0 ? p - 1 : p, x + 1 < w ? p + 1 : p};
      for (std::size_t n : nbr)
        if (m.inside[n] == target && label[n] < 0) {
          label[n] = id;
          q.push(n);
        }
    }
    sizes.push_back(size);
  }
  return {std::move(label), std::move(sizes)};
}

}  // namespace detail

// Inside = temporal standard deviation above `var_threshold`, closed with a
// 5x5 structuring element, reduced to the largest 4-connected region and
// hole-filled.
inline SectorMask estimate_sector_mask(const VideoTensor& v, double var_threshold) {
  validate(v);
  require(v.frames >= 2, ErrorCode::insufficient_frames, "sector estimation needs at least 2 frames");
  SectorMask raw(v.height, v.width, 0);
  const double n = static_cast<double>(v.frames * v.channels);
  for (std::size_t y = 0; y < v.height; ++y)
    for (std::size_t x = 0; x < v.width; ++x) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t t = 0; t < v.frames; ++t)
        for (std::size_t c = 0; c < v.channels; ++c) {
          const double val = v.at(t, y, x, c);
          sum += val;
          sq += val * val;
        }
      const double mean = sum / n;
      const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
      raw(y, x) = sd > var_threshold ? 1 : 0;
    }
  require(raw.count() > 0, ErrorCode::degenerate_input,
          "no pixel varies above the threshold; cannot locate the scan sector");

  SectorMask closed = detail::morph(detail::morph(raw, 2, true), 2, false);
  if (closed.count() == 0) closed = raw;

  auto [label, sizes] = detail::components(closed, 1);
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  SectorMask out(v.height, v.width, 0);
  for (std::size_t i = 0; i < label.size(); ++i) out.inside[i] = label[i] == keep ? 1 : 0;

  // fill holes: background components that never touch the border
  auto [bg, bg_sizes] = detail::components(out, 0);
  std::vector<bool> touches(bg_sizes.size(), false);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      if ((y == 0 || x == 0 || y + 1 == out.height || x + 1 == out.width) && bg[y * out.width + x] >= 0)
        touches[static_cast<std::size_t>(bg[y * out.width + x])] = true;
  for (std::size_t i = 0; i < bg.size(); ++i)
    if (bg[i] >= 0 && !touches[static_cast<std::size_t>(bg[i])]) out.inside[i] = 1;
  return out;
}

// ---------------------------------------------------------------------------
// resampling

// Half-pixel-centred bilinear resampling of every frame, edge-clamped.
inline VideoTensor resize_bilinear(const VideoTensor& v, std::size_t out_h, std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, ErrorCode::invalid_argument, "resize target dims must be >= 1");
  validate(v);
  if (out_h == v.height && out_w == v.width) return v;
  VideoTensor out(v.frames, out_h, out_w, v.channels);
  const double sy = static_cast<double>(v.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(v.width) / static_cast<double>(out_w);

  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t n_out, std::size_t n_in, double scale) {
    std::vector<Tap> t(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
      const double src = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      t[i] = {i0, std::min(i0 + 1, n_in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, v.height, sy);
  const auto tx = taps(out_w, v.width, sx);

  for (std::size_t t = 0; t < v.frames; ++t)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        for (std::size_t c = 0; c < v.channels; ++c) {
          const double a = v.at(t, ty[y].i0, tx[x].i0, c), b = v.at(t, ty[y].i0, tx[x].i1, c);
          const double d = v.at(t, ty[y].i1, tx[x].i0, c), e = v.at(t, ty[y].i1, tx[x].i1, c);
          const double top = a + (b - a) * tx[x].f;
          const double bottom = d + (e - d) * tx[x].f;
          out.at(t, y, x, c) = static_cast<float>(top + (bottom - top) * ty[y].f);
        }
  return out;
}

inline constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;

inline VideoTensor to_grayscale(const VideoTensor& v) {
  require(v.channels == 1 || v.channels == 3, ErrorCode::invalid_argument,
          "grayscale conversion needs 1 or 3 channels, got " + std::to_string(v.channels));
  if (v.channels == 1) return v;
  VideoTensor out(v.frames, v.height, v.width, 1);
  for (std::size_t i = 0, n = out.data.size(); i < n; ++i) {
    const double r = v.data[3 * i], g = v.data[3 * i + 1], b = v.data[3 * i + 2];
    out.data[i] = static_cast<float>(double(kLumaR) * r + double(kLumaG) * g + double(kLumaB) * b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// clips

inline constexpr std::size_t kDefaultClipLen = 32;
inline constexpr std::size_t kDefaultEvalClips = 5;

struct Clip {
  VideoTensor video;
  std::string scan_id;
  std::size_t start = 0;
};

inline VideoTensor slice_frames(const VideoTensor& v, std::size_t start, std::size_t len) {
  require(len >= 1 && start + len <= v.frames, ErrorCode::insufficient_frames,
          "frame slice [" + std::to_string(start) + ", " + std::to_string(start + len) + ") exceeds " +
              std::to_string(v.frames) + " frames");
  VideoTensor out;
  out.frames = len;
  out.height = v.height;
  out.width = v.width;
  out.channels = v.channels;
  const auto fs = v.frame_size();
  out.data.assign(v.data.begin() + static_cast<std::ptrdiff_t>(start * fs),
                  v.data.begin() + static_cast<std::ptrdiff_t>((start + len) * fs));
  return out;
}

// Independent uniform draws from [0, frames - clip_len]; clips may overlap.
inline std::vector<std::size_t> sample_clip_starts(std::size_t frames, std::size_t n_clips, std::size_t clip_len,
                                                   std::uint64_t seed) {
  require(clip_len >= 1, ErrorCode::invalid_argument, "clip_len must be >= 1");
  require(frames >= clip_len, ErrorCode::insufficient_frames,
          "video has " + std::to_string(frames) + " frames, fewer than clip length " + std::to_string(clip_len));
  Rng rng(seed);
  std::vector<std::size_t> starts(n_clips);
  for (auto& s : starts) s = uniform_index(rng, 0, frames - clip_len);
  return starts;
}

inline std::vector<Clip> sample_clips(const VideoTensor& v, std::size_t n_clips, std::size_t clip_len,
                                      std::uint64_t seed, const std::string& scan_id = {}) {
  std::vector<Clip> clips;
  for (std::size_t s : sample_clip_starts(v.frames, n_clips, clip_len, seed))
    clips.push_back({slice_frames(v, s, clip_len), scan_id, s});
  return clips;
}

// ---------------------------------------------------------------------------

struct PreprocessOptions {
  std::size_t out_height = 112;
  std::size_t out_width = 112;
  double mask_threshold = 0.01;  // temporal std threshold used when no mask is supplied
};

struct Preprocessed {
  VideoTensor video;
  SectorMask mask;
  bool degenerate = false;
};

// Fixed stage order: grayscale, mask, normalize, resize.
inline Preprocessed preprocess_video(const VideoTensor& raw, const PreprocessOptions& opt,
                                     const std::optional<SectorMask>& mask = std::nullopt) {
  VideoTensor gray = to_grayscale(raw);
  SectorMask m = mask ? *mask : estimate_sector_mask(gray, opt.mask_threshold);
  auto norm = normalize_video(apply_sector_mask(gray, m));
  return {resize_bilinear(norm.video, opt.out_height, opt.out_width), std::move(m), norm.degenerate};
}

}  // namespace echoflow
