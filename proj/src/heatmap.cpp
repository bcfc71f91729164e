#include "ctld/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "ctld/error.hpp"

namespace ctld {

bool FlipSpec::is_involution() const {
  const int k = static_cast<int>(permutation.size());
  for (int i = 0; i < k; ++i) {
    const int p = permutation[static_cast<std::size_t>(i)];
    if (p < 0 || p >= k) return false;
    if (permutation[static_cast<std::size_t>(p)] != i) return false;
  }
  return true;
}

HeatmapStack encode(const LandmarkSet& landmarks, int height, int width, float sigma) {
  if (height % 4 != 0 || width % 4 != 0)
    throw ConfigError("encode: input extents must be divisible by 4");
  if (!(sigma > 0.0f)) throw ConfigError("encode: sigma must be positive");
  const int k = landmarks.k();
  const int h = height / 4, w = width / 4;

  HeatmapStack out;
  out.sigma = sigma;
  out.maps = Tensor<float>({h, w, k});
  out.out_of_bounds.assign(static_cast<std::size_t>(k), 0);
  const float inv = 1.0f / (2.0f * sigma * sigma);

  for (int i = 0; i < k; ++i) {
    const Eigen::Vector2f& p = landmarks.points[static_cast<std::size_t>(i)];
    if (!(p.x() >= 0.0f && p.x() < static_cast<float>(width) && p.y() >= 0.0f &&
          p.y() < static_cast<float>(height)) ||
        !std::isfinite(p.x()) || !std::isfinite(p.y())) {
      out.out_of_bounds[static_cast<std::size_t>(i)] = 1;
      continue;  // channel stays all zero
    }
    const int cx = std::clamp(static_cast<int>(std::lround(p.x() / 4.0f)), 0, w - 1);
    const int cy = std::clamp(static_cast<int>(std::lround(p.y() / 4.0f)), 0, h - 1);
    for (int y = 0; y < h; ++y) {
      const float dy2 = static_cast<float>((y - cy) * (y - cy));
      for (int x = 0; x < w; ++x) {
        const float dx2 = static_cast<float>((x - cx) * (x - cx));
        out.maps(y, x, i) = std::exp(-(dx2 + dy2) * inv);
      }
    }
  }
  return out;
}

DecodedLandmarks decode(const Tensor<float>& maps) {
  if (maps.rank() != 3) throw ConfigError("decode: expected h x w x K maps");
  const int h = maps.dim(0), w = maps.dim(1), k = maps.dim(2);

  DecodedLandmarks out;
  out.landmarks.points.resize(static_cast<std::size_t>(k));
  out.degenerate.assign(static_cast<std::size_t>(k), 0);
  for (int i = 0; i < k; ++i) {
    float best = maps(0, 0, i);
    int bx = 0, by = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (maps(y, x, i) > best) {
          best = maps(y, x, i);
          bx = x;
          by = y;
        }
    if (best == 0.0f) {
      out.degenerate[static_cast<std::size_t>(i)] = 1;
      bx = 0;
      by = 0;
    }
    out.landmarks.points[static_cast<std::size_t>(i)] =
        Eigen::Vector2f(static_cast<float>(4 * bx), static_cast<float>(4 * by));
  }
  return out;
}

std::pair<Image, LandmarkSet> hflip(const Image& image, const LandmarkSet& landmarks,
                                    const FlipSpec& spec) {
  if (image.rank() != 3) throw ConfigError("hflip: expected H x W x C image");
  if (static_cast<int>(spec.permutation.size()) != landmarks.k())
    throw ConfigError("hflip: flip permutation size does not match landmark count");
  if (!spec.is_involution()) throw ConfigError("hflip: permutation is not an involution");
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);

  Image flipped(image.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) flipped(y, x, ch) = image(y, w - 1 - x, ch);

  LandmarkSet lm;
  lm.points.resize(landmarks.points.size());
  for (int i = 0; i < landmarks.k(); ++i) {
    const Eigen::Vector2f& src = landmarks.points[static_cast<std::size_t>(spec.permutation[static_cast<std::size_t>(i)])];
    lm.points[static_cast<std::size_t>(i)] = Eigen::Vector2f(static_cast<float>(w - 1) - src.x(), src.y());
  }
  return {std::move(flipped), std::move(lm)};
}

namespace {

float bilinear(const Image& img, float sx, float sy, int ch) {
  const int h = img.dim(0), w = img.dim(1);
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const float fx = sx - static_cast<float>(x0);
  const float fy = sy - static_cast<float>(y0);
  auto at = [&](int y, int x) -> float {
    if (x < 0 || x >= w || y < 0 || y >= h) return 0.0f;  // zero padding
    return img(y, x, ch);
  };
  const float top = at(y0, x0) * (1.0f - fx) + at(y0, x0 + 1) * fx;
  const float bot = at(y0 + 1, x0) * (1.0f - fx) + at(y0 + 1, x0 + 1) * fx;
  return top * (1.0f - fy) + bot * fy;
}

}  // namespace

LandmarkSet rescale_landmarks(const LandmarkSet& landmarks, int height, int width, float factor) {
  if (!(factor > 0.0f)) throw ConfigError("rescale: factor must be positive");
  const float cx = static_cast<float>(width - 1) / 2.0f;
  const float cy = static_cast<float>(height - 1) / 2.0f;
  LandmarkSet lm;
  lm.points.reserve(landmarks.points.size());
  for (const auto& p : landmarks.points)
    lm.points.emplace_back(cx + factor * (p.x() - cx), cy + factor * (p.y() - cy));
  return lm;
}

std::pair<Image, LandmarkSet> rescale(const Image& image, const LandmarkSet& landmarks,
                                      float factor) {
  if (!(factor > 0.0f)) throw ConfigError("rescale: factor must be positive");
  if (image.rank() != 3) throw ConfigError("rescale: expected H x W x C image");
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const float cx = static_cast<float>(w - 1) / 2.0f;
  const float cy = static_cast<float>(h - 1) / 2.0f;

  Image scaled(image.shape());
  for (int y = 0; y < h; ++y) {
    const float sy = cy + (static_cast<float>(y) - cy) / factor;
    for (int x = 0; x < w; ++x) {
      const float sx = cx + (static_cast<float>(x) - cx) / factor;
      for (int ch = 0; ch < c; ++ch) scaled(y, x, ch) = bilinear(image, sx, sy, ch);
    }
  }
  return {std::move(scaled), rescale_landmarks(landmarks, h, w, factor)};
}

bool landmarks_in_bounds(const LandmarkSet& landmarks, int height, int width) {
  for (const auto& p : landmarks.points)
    if (!(p.x() >= 0.0f && p.x() < static_cast<float>(width) && p.y() >= 0.0f &&
          p.y() < static_cast<float>(height)))
      return false;
  return true;
}

}  // namespace ctld
