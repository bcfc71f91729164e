#include "ctld/synthfaces.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctld/error.hpp"
#include "ctld/png_io.hpp"

namespace fs = std::filesystem;

namespace ctld {

FlipSpec default_flip_spec() {
  return FlipSpec{{kFlipPermutation.begin(), kFlipPermutation.end()}};
}

namespace {

struct Range {
  float lo, hi;
  bool contains(float v) const { return v >= lo && v <= hi; }
  float draw(Rng& rng) const { return rng.uniformf(lo, hi); }
};

constexpr Range kAspect{0.85f, 1.10f};
constexpr Range kEyeSpacing{0.42f, 0.58f};
constexpr Range kEyeHeight{0.25f, 0.40f};
constexpr Range kEyeRadius{0.16f, 0.24f};
constexpr Range kNoseLength{0.28f, 0.42f};
constexpr Range kMouthWidth{0.50f, 0.70f};
constexpr Range kMouthHeight{0.50f, 0.62f};
constexpr Range kMouthCurve{-0.06f, 0.06f};
constexpr Range kLipFullness{0.80f, 1.30f};
constexpr Range kSkinR{0.74f, 0.90f}, kSkinG{0.54f, 0.70f}, kSkinB{0.44f, 0.60f};
constexpr Range kLipR{0.55f, 0.72f}, kLipG{0.14f, 0.28f}, kLipB{0.20f, 0.34f};
constexpr Range kIrisR{0.10f, 0.40f}, kIrisG{0.10f, 0.35f}, kIrisB{0.05f, 0.30f};
constexpr Range kBgR{0.05f, 0.25f}, kBgG{0.05f, 0.25f}, kBgB{0.08f, 0.30f};

// Feature geometry shared by the renderer and canonical_landmarks.
struct FaceLayout {
  float cx, cy, rx, ry;
  float eye_y, eye_xl, eye_xr, eye_w, eye_h;
  float nose_top_y, nose_tip_y;
  float mouth_y, mouth_half, curve, lip_half_thick;
  float phil_top_y, phil_bot_y;
};

FaceLayout layout(const IdentityParams& p, const Jitter& j, int size) {
  const float s = static_cast<float>(size);
  FaceLayout f{};
  f.cx = s * (0.5f + j.shift_x);
  f.cy = s * (0.52f + j.shift_y);
  f.rx = 0.30f * s * p.aspect * j.scale;
  f.ry = 0.38f * s * j.scale;
  f.eye_y = f.cy - p.eye_height * f.ry;
  f.eye_xl = f.cx - p.eye_spacing * f.rx;
  f.eye_xr = f.cx + p.eye_spacing * f.rx;
  f.eye_w = p.eye_radius * f.rx;
  f.eye_h = 0.55f * f.eye_w;
  f.nose_top_y = f.eye_y + 0.08f * f.ry;
  f.nose_tip_y = f.nose_top_y + p.nose_length * f.ry;
  f.mouth_y = f.cy + p.mouth_height * f.ry;
  f.mouth_half = 0.5f * p.mouth_width * f.rx;
  f.curve = p.mouth_curve * f.ry;
  f.lip_half_thick = 0.07f * f.ry * p.lip_fullness;
  const float lip_top = f.mouth_y - f.lip_half_thick;
  f.phil_top_y = f.nose_tip_y + 0.30f * (lip_top - f.nose_tip_y);
  f.phil_bot_y = f.nose_tip_y + 0.75f * (lip_top - f.nose_tip_y);
  return f;
}

// Soft-edged primitives; cov in [0,1] blends color over the canvas.
void blend(Image& img, int x, int y, const std::array<float, 3>& color, float cov) {
  if (cov <= 0.0f) return;
  cov = std::min(cov, 1.0f);
  for (int c = 0; c < 3; ++c)
    img(y, x, c) = (1.0f - cov) * img(y, x, c) + cov * color[static_cast<std::size_t>(c)];
}

void fill_ellipse(Image& img, float cx, float cy, float a, float b,
                  const std::array<float, 3>& color) {
  const int h = img.dim(0), w = img.dim(1);
  const int x0 = std::max(0, static_cast<int>(cx - a - 2)), x1 = std::min(w - 1, static_cast<int>(cx + a + 2));
  const int y0 = std::max(0, static_cast<int>(cy - b - 2)), y1 = std::min(h - 1, static_cast<int>(cy + b + 2));
  const float edge = std::min(a, b);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const float qx = (static_cast<float>(x) - cx) / a;
      const float qy = (static_cast<float>(y) - cy) / b;
      const float q = std::sqrt(qx * qx + qy * qy);
      blend(img, x, y, color, (1.0f - q) * edge + 0.5f);
    }
}

void fill_vline(Image& img, float cx, float y_top, float y_bot, float half_w,
                const std::array<float, 3>& color) {
  const int h = img.dim(0), w = img.dim(1);
  const int x0 = std::max(0, static_cast<int>(cx - half_w - 2)), x1 = std::min(w - 1, static_cast<int>(cx + half_w + 2));
  const int y0 = std::max(0, static_cast<int>(y_top - 1)), y1 = std::min(h - 1, static_cast<int>(y_bot + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const float dx = std::abs(static_cast<float>(x) - cx) - half_w;
      const float dy = std::max({y_top - static_cast<float>(y), static_cast<float>(y) - y_bot, 0.0f});
      blend(img, x, y, color, 0.5f - std::max(dx, dy));
    }
}

// Lip band: centerline y = mouth_y + curve*((x-cx)/half)^2, elliptic
// thickness profile with a 0.8 px floor so corner landmarks sit inside.
void fill_lips(Image& img, const FaceLayout& f, const std::array<float, 3>& color) {
  const int h = img.dim(0), w = img.dim(1);
  const float reach = f.mouth_half + 1.5f;
  const int x0 = std::max(0, static_cast<int>(f.cx - reach - 1)), x1 = std::min(w - 1, static_cast<int>(f.cx + reach + 1));
  const int y0 = std::max(0, static_cast<int>(f.mouth_y - std::abs(f.curve) - f.lip_half_thick - 3));
  const int y1 = std::min(h - 1, static_cast<int>(f.mouth_y + std::abs(f.curve) + f.lip_half_thick + 3));
  for (int x = x0; x <= x1; ++x) {
    const float u = (static_cast<float>(x) - f.cx) / f.mouth_half;
    const float v = (static_cast<float>(x) - f.cx) / reach;
    if (std::abs(v) > 1.0f) continue;
    const float yc = f.mouth_y + f.curve * u * u;
    const float th = f.lip_half_thick * std::sqrt(1.0f - v * v) + 0.8f;
    for (int y = y0; y <= y1; ++y)
      blend(img, x, y, color, th - std::abs(static_cast<float>(y) - yc) + 0.5f);
  }
}

std::array<float, 3> scaled(const std::array<float, 3>& c, float f) {
  return {c[0] * f, c[1] * f, c[2] * f};
}

}  // namespace

bool identity_in_bounds(const IdentityParams& p) {
  return kAspect.contains(p.aspect) && kEyeSpacing.contains(p.eye_spacing) &&
         kEyeHeight.contains(p.eye_height) && kEyeRadius.contains(p.eye_radius) &&
         kNoseLength.contains(p.nose_length) && kMouthWidth.contains(p.mouth_width) &&
         kMouthHeight.contains(p.mouth_height) && kMouthCurve.contains(p.mouth_curve) &&
         kLipFullness.contains(p.lip_fullness) && kSkinR.contains(p.skin[0]) &&
         kSkinG.contains(p.skin[1]) && kSkinB.contains(p.skin[2]) && kLipR.contains(p.lip[0]) &&
         kLipG.contains(p.lip[1]) && kLipB.contains(p.lip[2]) && kIrisR.contains(p.iris[0]) &&
         kIrisG.contains(p.iris[1]) && kIrisB.contains(p.iris[2]) &&
         kBgR.contains(p.background[0]) && kBgG.contains(p.background[1]) &&
         kBgB.contains(p.background[2]);
}

Jitter sample_jitter(Rng& rng) {
  Jitter j;
  j.shift_x = rng.uniformf(-0.02f, 0.02f);
  j.shift_y = rng.uniformf(-0.02f, 0.02f);
  j.scale = rng.uniformf(0.94f, 1.06f);
  j.brightness = rng.uniformf(-0.06f, 0.06f);
  return j;
}

IdentityParams make_identity(std::uint64_t seed, int id, int num_classes) {
  if (id < 0 || id >= num_classes) throw ConfigError("make_identity: id out of range");
  Rng rng(Rng::substream(seed ^ 0x1de57ull, static_cast<std::uint64_t>(id)));
  IdentityParams p;
  p.id = id;
  p.aspect = kAspect.draw(rng);
  p.eye_spacing = kEyeSpacing.draw(rng);
  p.eye_height = kEyeHeight.draw(rng);
  p.eye_radius = kEyeRadius.draw(rng);
  p.nose_length = kNoseLength.draw(rng);
  p.mouth_width = kMouthWidth.draw(rng);
  p.mouth_height = kMouthHeight.draw(rng);
  p.mouth_curve = kMouthCurve.draw(rng);
  p.lip_fullness = kLipFullness.draw(rng);
  p.skin = {kSkinR.draw(rng), kSkinG.draw(rng), kSkinB.draw(rng)};
  p.lip = {kLipR.draw(rng), kLipG.draw(rng), kLipB.draw(rng)};
  p.iris = {kIrisR.draw(rng), kIrisG.draw(rng), kIrisB.draw(rng)};
  p.background = {kBgR.draw(rng), kBgG.draw(rng), kBgB.draw(rng)};
  return p;
}

LandmarkSet canonical_landmarks(const IdentityParams& identity, const Jitter& jitter, int size) {
  const FaceLayout f = layout(identity, jitter, size);
  LandmarkSet lm;
  lm.points = {
      {f.eye_xl - f.eye_w, f.eye_y},  // 0 left eye outer
      {f.eye_xl + f.eye_w, f.eye_y},  // 1 left eye inner
      {f.eye_xr - f.eye_w, f.eye_y},  // 2 right eye inner
      {f.eye_xr + f.eye_w, f.eye_y},  // 3 right eye outer
      {f.eye_xl, f.eye_y},            // 4 left eye center
      {f.eye_xr, f.eye_y},            // 5 right eye center
      {f.cx, f.nose_top_y},           // 6 nose bridge
      {f.cx, f.nose_tip_y},           // 7 nose tip
      {f.cx, f.phil_top_y},           // 8 philtrum top
      {f.cx, f.phil_bot_y},           // 9 philtrum bottom
      {f.cx - f.mouth_half, f.mouth_y + f.curve},   // 10 mouth left
      {f.cx + f.mouth_half, f.mouth_y + f.curve},   // 11 mouth right
      {f.cx, f.mouth_y - 0.80f * f.lip_half_thick}, // 12 upper lip center
      {f.cx, f.mouth_y + 0.90f * f.lip_half_thick}, // 13 lower lip center
  };
  return lm;
}

Sample render(const IdentityParams& identity, const Jitter& jitter, int size) {
  if (size % 32 != 0) throw ConfigError("render: size must be divisible by 32");
  const FaceLayout f = layout(identity, jitter, size);

  Sample s;
  s.identity = identity.id;
  s.image = Image({size, size, 3});
  Image& img = s.image;

  // Background: gentle vertical gradient.
  for (int y = 0; y < size; ++y) {
    const float t = 0.85f + 0.3f * static_cast<float>(y) / static_cast<float>(size);
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img(y, x, c) = identity.background[static_cast<std::size_t>(c)] * t;
  }

  fill_ellipse(img, f.cx, f.cy, f.rx, f.ry, identity.skin);

  // Brows.
  const std::array<float, 3> brow = scaled(identity.skin, 0.35f);
  const float brow_y = f.eye_y - 0.16f * f.ry;
  fill_ellipse(img, f.eye_xl, brow_y, f.eye_w * 1.2f, 0.35f * f.eye_h + 0.4f, brow);
  fill_ellipse(img, f.eye_xr, brow_y, f.eye_w * 1.2f, 0.35f * f.eye_h + 0.4f, brow);

  // Eyes: sclera + iris.
  const std::array<float, 3> sclera{0.93f, 0.93f, 0.92f};
  fill_ellipse(img, f.eye_xl, f.eye_y, f.eye_w, f.eye_h, sclera);
  fill_ellipse(img, f.eye_xr, f.eye_y, f.eye_w, f.eye_h, sclera);
  fill_ellipse(img, f.eye_xl, f.eye_y, 0.45f * f.eye_w, 0.85f * f.eye_h, identity.iris);
  fill_ellipse(img, f.eye_xr, f.eye_y, 0.45f * f.eye_w, 0.85f * f.eye_h, identity.iris);

  // Nose: shaded ridge plus nostril dots at the tip.
  const std::array<float, 3> nose_shade = scaled(identity.skin, 0.82f);
  fill_vline(img, f.cx, f.nose_top_y, f.nose_tip_y, 0.035f * f.rx + 0.6f, nose_shade);
  const std::array<float, 3> nostril = scaled(identity.skin, 0.55f);
  fill_ellipse(img, f.cx - 0.09f * f.rx, f.nose_tip_y, 0.8f, 0.6f, nostril);
  fill_ellipse(img, f.cx + 0.09f * f.rx, f.nose_tip_y, 0.8f, 0.6f, nostril);

  // Philtrum groove.
  fill_vline(img, f.cx, f.phil_top_y, f.phil_bot_y, 0.018f * f.rx + 0.4f, scaled(identity.skin, 0.9f));

  fill_lips(img, f, identity.lip);

  // Lighting jitter.
  const float gain = 1.0f + jitter.brightness;
  for (Eigen::Index i = 0; i < img.size(); ++i)
    img.data()[i] = std::clamp(img.data()[i] * gain, 0.0f, 1.0f);

  s.landmarks = canonical_landmarks(identity, jitter, size);
  return s;
}

int Manifest::count(const std::string& split) const {
  int n = 0;
  for (const auto& r : records)
    if (r.split == split) ++n;
  return n;
}

void save_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json lms = nlohmann::json::array();
    for (const auto& p : r.landmarks.points) lms.push_back({p.x(), p.y()});
    records.push_back({{"image", r.image},
                       {"identity", r.identity},
                       {"split", r.split},
                       {"landmarks", lms}});
  }
  const nlohmann::json j = {{"format_version", m.format_version},
                            {"k", m.k},
                            {"num_classes", m.num_classes},
                            {"image_size", m.image_size},
                            {"flip_permutation", m.flip_permutation},
                            {"seed", m.seed},
                            {"records", records}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad manifest: " + std::string(e.what()));
  }
  Manifest m;
  m.root = fs::path(path).parent_path().string();
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != 1) throw DataError("unsupported manifest version");
  m.k = j.at("k").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  m.image_size = j.at("image_size").get<int>();
  m.flip_permutation = j.at("flip_permutation").get<std::vector<int>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& rj : j.at("records")) {
    ManifestRecord r;
    r.image = rj.at("image").get<std::string>();
    r.identity = rj.at("identity").get<int>();
    r.split = rj.at("split").get<std::string>();
    for (const auto& pj : rj.at("landmarks"))
      r.landmarks.points.emplace_back(pj.at(0).get<float>(), pj.at(1).get<float>());
    if (r.landmarks.k() != m.k) throw DataError("manifest record has wrong landmark count");
    if (!fs::exists(fs::path(m.root) / r.image))
      throw DataError("manifest references missing image: " + r.image);
    m.records.push_back(std::move(r));
  }
  return m;
}

Manifest build_dataset(const DatasetConfig& cfg) {
  const double fsum = cfg.split_fractions[0] + cfg.split_fractions[1] + cfg.split_fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (cfg.num_classes < 1 || cfg.samples_per_id < 1) throw ConfigError("empty dataset requested");
  if (cfg.image_size % 32 != 0) throw ConfigError("image size must be divisible by 32");

  std::error_code ec;
  fs::create_directories(fs::path(cfg.out_dir) / "images", ec);
  if (ec) throw DataError("cannot create dataset directory: " + cfg.out_dir);

  const int total = cfg.num_classes * cfg.samples_per_id;
  const int n_train = static_cast<int>(std::lround(total * cfg.split_fractions[0]));
  const int n_val = static_cast<int>(std::lround(total * cfg.split_fractions[1]));
  if (n_train + n_val > total) throw ConfigError("split fractions leave no test samples");

  Rng split_rng(Rng::substream(cfg.seed ^ 0x5911ull, 1));
  const std::vector<int> order = shuffled_indices(split_rng, total);
  std::vector<std::string> split_of(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    const char* s = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = s;
  }

  Manifest m;
  m.root = cfg.out_dir;
  m.num_classes = cfg.num_classes;
  m.image_size = cfg.image_size;
  m.flip_permutation.assign(kFlipPermutation.begin(), kFlipPermutation.end());
  m.seed = cfg.seed;

  for (int id = 0; id < cfg.num_classes; ++id) {
    const IdentityParams identity = make_identity(cfg.seed, id, cfg.num_classes);
    const std::uint64_t id_stream = Rng::substream(cfg.seed ^ 0x7e4d3ull, static_cast<std::uint64_t>(id));
    for (int k = 0; k < cfg.samples_per_id; ++k) {
      Rng rng(Rng::substream(id_stream, static_cast<std::uint64_t>(k)));
      const Sample s = render(identity, sample_jitter(rng), cfg.image_size);

      char name[64];
      std::snprintf(name, sizeof(name), "images/id%03d_s%03d.png", id, k);
      write_png_rgb((fs::path(cfg.out_dir) / name).string(), s.image);

      ManifestRecord r;
      r.image = name;
      r.identity = id;
      r.split = split_of[static_cast<std::size_t>(id * cfg.samples_per_id + k)];
      r.landmarks = s.landmarks;
      m.records.push_back(std::move(r));
    }
  }
  save_manifest(m, (fs::path(cfg.out_dir) / "manifest.json").string());
  return m;
}

std::vector<LoadedSample> load_split(const Manifest& m, const std::string& split) {
  std::vector<LoadedSample> out;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    LoadedSample s;
    s.image = read_png_rgb((fs::path(m.root) / r.image).string());
    s.landmarks = r.landmarks;
    s.identity = r.identity;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ctld
