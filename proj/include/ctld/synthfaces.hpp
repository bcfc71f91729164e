#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctld/heatmap.hpp"
#include "ctld/rng.hpp"
#include "ctld/tensor.hpp"

namespace ctld {

// Landmark ordering (fixed; the flip permutation below pairs left/right):
//   0 left eye outer corner    7 nose tip
//   1 left eye inner corner    8 philtrum top
//   2 right eye inner corner   9 philtrum bottom
//   3 right eye outer corner  10 mouth left corner
//   4 left eye center         11 mouth right corner
//   5 right eye center        12 upper lip center
//   6 nose bridge             13 lower lip center
// "Left"/"right" are image-side, so left.x < right.x.
inline constexpr int kNumLandmarks = 14;
inline constexpr std::array<int, kNumLandmarks> kFlipPermutation = {3, 2, 1, 0, 5,  4, 6,
                                                                    7, 8, 9, 11, 10, 12, 13};

FlipSpec default_flip_spec();

/// Bounded shape/color parameters of one synthetic identity.
struct IdentityParams {
  int id = 0;
  float aspect = 1.0f;        // [0.85, 1.10] face width factor
  float eye_spacing = 0.5f;   // [0.42, 0.58] of face half-width
  float eye_height = 0.32f;   // [0.25, 0.40] of face half-height above center
  float eye_radius = 0.2f;    // [0.16, 0.24] of face half-width
  float nose_length = 0.35f;  // [0.28, 0.42] of face half-height
  float mouth_width = 0.6f;   // [0.50, 0.70] of face half-width
  float mouth_height = 0.56f; // [0.50, 0.62] of face half-height below center
  float mouth_curve = 0.0f;   // [-0.06, 0.06] of face half-height
  float lip_fullness = 1.0f;  // [0.80, 1.30]
  std::array<float, 3> skin{0.85f, 0.65f, 0.55f};
  std::array<float, 3> lip{0.65f, 0.22f, 0.28f};
  std::array<float, 3> iris{0.25f, 0.2f, 0.15f};
  std::array<float, 3> background{0.1f, 0.12f, 0.16f};
};

bool identity_in_bounds(const IdentityParams& p);

/// Per-sample pose/lighting perturbation. Defaults mean "no jitter".
struct Jitter {
  float shift_x = 0.0f;  // [-0.02, 0.02] of image size
  float shift_y = 0.0f;
  float scale = 1.0f;       // [0.94, 1.06]
  float brightness = 0.0f;  // [-0.06, 0.06]
};

Jitter sample_jitter(Rng& rng);

struct Sample {
  Image image;  // size x size x 3 in [0,1]
  LandmarkSet landmarks;
  int identity = 0;
};

/// Deterministic map (seed, id) -> identity parameters; id must be < num_classes.
IdentityParams make_identity(std::uint64_t seed, int id, int num_classes);

/// Landmark positions for the given identity and jitter (analytic; the
/// renderer places features exactly here).
LandmarkSet canonical_landmarks(const IdentityParams& identity, const Jitter& jitter, int size);

/// size must be divisible by 32 (and hence by 4).
Sample render(const IdentityParams& identity, const Jitter& jitter, int size);

struct ManifestRecord {
  std::string image;  // path relative to the dataset root
  LandmarkSet landmarks;
  int identity = 0;
  std::string split;  // train / val / test
};

struct Manifest {
  std::string root;
  std::vector<ManifestRecord> records;
  int k = kNumLandmarks;
  int num_classes = 0;
  int image_size = 0;
  std::vector<int> flip_permutation;
  std::uint64_t seed = 0;
  int format_version = 1;

  int count(const std::string& split) const;
};

struct DatasetConfig {
  int num_classes = 10;
  int samples_per_id = 40;
  int image_size = 64;
  std::uint64_t seed = 7;
  std::array<double, 3> split_fractions{0.7, 0.1, 0.2};  // train / val / test
  std::string out_dir;
};

/// Renders every sample to PNG under out_dir/images and writes
/// out_dir/manifest.json. Fully deterministic in (seed, config).
Manifest build_dataset(const DatasetConfig& cfg);

void save_manifest(const Manifest& m, const std::string& path);
/// Loads and validates a manifest; referenced image files must exist.
Manifest load_manifest(const std::string& path);

struct LoadedSample {
  Image image;
  LandmarkSet landmarks;
  int identity = 0;
};

std::vector<LoadedSample> load_split(const Manifest& m, const std::string& split);

}  // namespace ctld
