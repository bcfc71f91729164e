#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

#include "ctld/tensor.hpp"

namespace ctld {

/// H x W x 3 float image, values in [0,1].
using Image = Tensor<float>;

/// Ordered 2D points in input-pixel coordinates.
struct LandmarkSet {
  std::vector<Eigen::Vector2f> points;
  int k() const { return static_cast<int>(points.size()); }
};

/// Left/right landmark pairing under horizontal mirroring; an involution.
struct FlipSpec {
  std::vector<int> permutation;
  bool is_involution() const;
};

/// K Gaussian response maps at 1/4 input resolution, stored h x w x K.
/// out_of_bounds[k] marks landmarks outside the image (all-zero channel).
struct HeatmapStack {
  Tensor<float> maps;
  float sigma = 1.5f;
  std::vector<std::uint8_t> out_of_bounds;
};

struct DecodedLandmarks {
  LandmarkSet landmarks;
  std::vector<std::uint8_t> degenerate;  // all-zero channels, decoded as (0,0)
};

/// Landmarks -> heatmaps: coordinates are divided by 4 and rounded to the
/// nearest heatmap pixel (clamped for in-image landmarks); channel k is
/// exp(-((a-x)^2+(b-y)^2)/(2 sigma^2)) over all pixels (a,b).
HeatmapStack encode(const LandmarkSet& landmarks, int height, int width, float sigma = 1.5f);

/// Heatmaps -> landmarks: per-channel argmax times 4. Ties break at the
/// smallest row-major index.
DecodedLandmarks decode(const Tensor<float>& maps);

/// Mirror the image columns and remap landmarks (x -> W-1-x, reordered by
/// the flip permutation).
std::pair<Image, LandmarkSet> hflip(const Image& image, const LandmarkSet& landmarks,
                                    const FlipSpec& spec);

/// Scale about the image center with bilinear resampling; the canvas size
/// is preserved (zero padding outside). Landmarks follow the same affine
/// map and may leave the canvas; callers decide whether to reject.
std::pair<Image, LandmarkSet> rescale(const Image& image, const LandmarkSet& landmarks,
                                      float factor);

/// The landmark half of rescale(); lets callers test bounds before
/// resampling the image.
LandmarkSet rescale_landmarks(const LandmarkSet& landmarks, int height, int width, float factor);

bool landmarks_in_bounds(const LandmarkSet& landmarks, int height, int width);

}  // namespace ctld
