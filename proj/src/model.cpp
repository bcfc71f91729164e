#include "ctld/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "ctld/checkpoint.hpp"
#include "ctld/error.hpp"
#include "ctld/ops.hpp"
#include "ctld/rng.hpp"

namespace ctld {

Variant variant_from_string(const std::string& s) {
  if (s == "FE") return Variant::FE;
  if (s == "FTP") return Variant::FTP;
  if (s == "FT") return Variant::FT;
  if (s == "CTD-CD") return Variant::CTD_CD;
  if (s == "CTD-ED") return Variant::CTD_ED;
  if (s == "CTD-Com") return Variant::CTD_Com;
  throw ConfigError("unknown variant: " + s +
                    " (expected FE, FTP, FT, CTD-CD, CTD-ED or CTD-Com)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::FE: return "FE";
    case Variant::FTP: return "FTP";
    case Variant::FT: return "FT";
    case Variant::CTD_CD: return "CTD-CD";
    case Variant::CTD_ED: return "CTD-ED";
    case Variant::CTD_Com: return "CTD-Com";
  }
  return "?";
}

bool variant_uses_logits(Variant v) { return v == Variant::CTD_CD || v == Variant::CTD_Com; }
bool variant_uses_embeddings(Variant v) { return v == Variant::CTD_ED || v == Variant::CTD_Com; }
bool variant_uses_regularizer(Variant v) { return variant_uses_logits(v) || variant_uses_embeddings(v); }

nlohmann::json encoder_spec_to_json(const EncoderSpec& spec) {
  return {{"stem_width", spec.stem_width}, {"stage_widths", spec.stage_widths}};
}

EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
  EncoderSpec spec;
  spec.stem_width = j.at("stem_width").get<int>();
  const auto w = j.at("stage_widths").get<std::vector<int>>();
  if (w.size() != 4) throw DataError("encoder spec: expected 4 stage widths");
  std::copy(w.begin(), w.end(), spec.stage_widths.begin());
  return spec;
}

namespace {

Tensor<float> he_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
  Tensor<float> t(std::move(shape));
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniformf(-limit, limit);
  return t;
}

void add_conv(ParamStore<float>& store, Rng& rng, const std::string& name, int cout, int k, int cin) {
  store.add(name + ".w", he_uniform(rng, {cout, k, k, cin}, k * k * cin));
  store.add(name + ".b", Tensor<float>({cout}));
}

void add_deconv(ParamStore<float>& store, Rng& rng, const std::string& name, int cin, int k, int cout) {
  store.add(name + ".w", he_uniform(rng, {cin, k, k, cout}, k * k * cin));
  store.add(name + ".b", Tensor<float>({cout}));
}

void init_encoder(ParamStore<float>& store, Rng& rng, const EncoderSpec& spec) {
  add_conv(store, rng, "enc.stem", spec.stem_width, 7, 3);
  int cin = spec.stem_width;
  for (int s = 0; s < 4; ++s) {
    const int w = spec.stage_widths[static_cast<std::size_t>(s)];
    const std::string base = "enc.s" + std::to_string(s + 1);
    add_conv(store, rng, base + ".a", w, 3, cin);
    add_conv(store, rng, base + ".b", w, 3, w);
    cin = w;
  }
}

void init_decoder(ParamStore<float>& store, Rng& rng, const EncoderSpec& spec, int num_landmarks) {
  int cin = spec.embed_dim();
  for (int d = 0; d < 3; ++d) {
    add_deconv(store, rng, "dec.d" + std::to_string(d + 1), cin, 4, kDecoderWidth);
    cin = kDecoderWidth;
  }
  add_conv(store, rng, "dec.out", num_landmarks, 1, kDecoderWidth);
}

bool is_encoder_param(const std::string& name) { return name.rfind("enc.", 0) == 0; }
bool is_final_stage_param(const std::string& name) { return name.rfind("enc.s4.", 0) == 0; }

}  // namespace

SourceModel make_source_model(const EncoderSpec& spec, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("source model needs at least 2 classes");
  SourceModel m;
  m.spec = spec;
  m.num_classes = num_classes;
  Rng rng(Rng::substream(seed, 0x5e0d));
  init_encoder(m.params, rng, spec);
  m.params.add("cls.w", he_uniform(rng, {num_classes, spec.embed_dim()}, spec.embed_dim()));
  m.params.add("cls.b", Tensor<float>({num_classes}));
  return m;
}

TargetModel transfer_init(const SourceModel& source, Variant variant, int num_landmarks,
                          std::uint64_t seed) {
  TargetModel t;
  t.spec = source.spec;
  t.num_landmarks = num_landmarks;
  t.variant = variant;

  for (const auto& name : source.params.names()) {
    if (!is_encoder_param(name)) continue;
    const bool frozen = variant == Variant::FE ||
                        (variant == Variant::FTP && !is_final_stage_param(name));
    t.params.add(name, source.params.at(name).value, !frozen);
  }
  Rng rng(Rng::substream(seed, 0xdec0));
  init_decoder(t.params, rng, t.spec, num_landmarks);
  if (variant_uses_logits(variant)) {
    if (!source.params.contains("cls.w") || !source.params.contains("cls.b"))
      throw ConfigError(to_string(variant) + " requires a source model with a classifier head");
    t.params.add("cls.w", source.params.at("cls.w").value);
    t.params.add("cls.b", source.params.at("cls.b").value);
  }
  return t;
}

NodeId ParamBinder::operator()(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  NodeId id = store_ ? g_.param(*store_, name) : g_.constant(const_store_->at(name).value);
  cache_.emplace(name, id);
  return id;
}

EncoderNodes encode_features(Graph<float>& g, ParamBinder& p, const EncoderSpec& spec,
                             NodeId image) {
  const auto& shape = g.value(image).shape();
  if (shape.size() != 4 || shape[3] != 3)
    throw ConfigError("encode_features: expected N x H x W x 3 image batch");
  if (shape[1] % EncoderSpec::downsample != 0 || shape[2] % EncoderSpec::downsample != 0)
    throw ConfigError("encode_features: image extents must be divisible by 32");

  NodeId x = relu(g, conv2d(g, image, p("enc.stem.w"), p("enc.stem.b"), 2, 3));
  for (int s = 1; s <= 4; ++s) {
    const std::string base = "enc.s" + std::to_string(s);
    NodeId a = relu(g, conv2d(g, x, p(base + ".a.w"), p(base + ".a.b"), 2, 1));
    NodeId b = conv2d(g, a, p(base + ".b.w"), p(base + ".b.b"), 1, 1);
    x = relu(g, add(g, a, b));
  }
  return {x, global_avg_pool(g, x)};
}

NodeId decode_heatmaps(Graph<float>& g, ParamBinder& p, const EncoderSpec& spec,
                       int num_landmarks, NodeId spatial) {
  const auto& shape = g.value(spatial).shape();
  if (shape.size() != 4 || shape[3] != spec.embed_dim())
    throw ConfigError("decode_heatmaps: spatial map channels do not match encoder spec");
  NodeId x = spatial;
  for (int d = 1; d <= 3; ++d) {
    const std::string base = "dec.d" + std::to_string(d);
    x = relu(g, deconv2d(g, x, p(base + ".w"), p(base + ".b"), 2, 1));
  }
  NodeId out = conv2d(g, x, p("dec.out.w"), p("dec.out.b"), 1, 0);
  (void)num_landmarks;
  return out;
}

NodeId classifier_logits(Graph<float>& g, ParamBinder& p, NodeId embedding) {
  return dense(g, embedding, p("cls.w"), p("cls.b"));
}

void save_source_model(const SourceModel& model, const std::string& path) {
  nlohmann::json meta = {{"kind", "source"},
                         {"num_classes", model.num_classes},
                         {"encoder", encoder_spec_to_json(model.spec)}};
  save_checkpoint(path, model.params, meta);
}

SourceModel load_source_model(const std::string& path) {
  SourceModel m;
  const nlohmann::json meta = load_checkpoint(path, m.params);
  if (meta.value("kind", "") != "source")
    throw DataError("checkpoint is not a source model: " + path);
  m.num_classes = meta.at("num_classes").get<int>();
  m.spec = encoder_spec_from_json(meta.at("encoder"));
  return m;
}

void save_target_model(const TargetModel& model, const std::string& path) {
  nlohmann::json meta = {{"kind", "target"},
                         {"variant", to_string(model.variant)},
                         {"num_landmarks", model.num_landmarks},
                         {"encoder", encoder_spec_to_json(model.spec)}};
  save_checkpoint(path, model.params, meta);
}

TargetModel load_target_model(const std::string& path) {
  TargetModel m;
  const nlohmann::json meta = load_checkpoint(path, m.params);
  if (meta.value("kind", "") != "target")
    throw DataError("checkpoint is not a target model: " + path);
  m.variant = variant_from_string(meta.at("variant").get<std::string>());
  m.num_landmarks = meta.at("num_landmarks").get<int>();
  m.spec = encoder_spec_from_json(meta.at("encoder"));
  return m;
}

}  // namespace ctld
