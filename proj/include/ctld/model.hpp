#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>

#include <nlohmann/json_fwd.hpp>

#include "ctld/graph.hpp"
#include "ctld/params.hpp"

namespace ctld {

enum class Variant { FE, FTP, FT, CTD_CD, CTD_ED, CTD_Com };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

/// Variant needs the retained classifier head on the target.
bool variant_uses_logits(Variant v);
/// Variant aligns encoder embeddings.
bool variant_uses_embeddings(Variant v);
/// Variant adds any regularizer at all (lambda path active).
bool variant_uses_regularizer(Variant v);

/// Convolutional encoder: 7x7 stride-2 stem, then four stride-2 stages of
/// two 3x3 convs with a skip connection. Total downsampling 32; the
/// embedding is the global average pool of the final map.
struct EncoderSpec {
  int stem_width = 16;
  std::array<int, 4> stage_widths{16, 32, 64, 128};
  static constexpr int downsample = 32;
  int embed_dim() const { return stage_widths[3]; }
};

nlohmann::json encoder_spec_to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const nlohmann::json& j);

struct SourceModel {
  EncoderSpec spec;
  int num_classes = 10;
  ParamStore<float> params;  // enc.*, cls.*
};

struct TargetModel {
  EncoderSpec spec;
  int num_landmarks = 14;
  Variant variant = Variant::FT;
  ParamStore<float> params;  // enc.*, dec.*, optionally cls.*
  bool has_classifier() const { return params.contains("cls.w"); }
};

inline constexpr int kDecoderWidth = 256;

/// He-uniform conv/deconv/dense weights, zero biases, seeded.
SourceModel make_source_model(const EncoderSpec& spec, int num_classes, std::uint64_t seed);

/// Initialize a target model from a trained source: encoder copied
/// bit-exact, decoder freshly initialized, classifier head copied for
/// variants that regularize logits. Freeze mask: FE freezes the whole
/// encoder, FTP all but the final stage, the rest train everything.
TargetModel transfer_init(const SourceModel& source, Variant variant, int num_landmarks,
                          std::uint64_t seed);

/// Resolves parameter names to graph nodes; trainable stores get bound
/// param nodes, const stores get constants (inference mode).
class ParamBinder {
 public:
  ParamBinder(Graph<float>& g, ParamStore<float>& store) : g_(g), store_(&store) {}
  ParamBinder(Graph<float>& g, const ParamStore<float>& store) : g_(g), const_store_(&store) {}
  NodeId operator()(const std::string& name);

 private:
  Graph<float>& g_;
  ParamStore<float>* store_ = nullptr;
  const ParamStore<float>* const_store_ = nullptr;
  std::unordered_map<std::string, NodeId> cache_;
};

struct EncoderNodes {
  NodeId spatial;    // N x H/32 x W/32 x widths[3]
  NodeId embedding;  // N x embed_dim
};

/// Image extents must be divisible by 32.
EncoderNodes encode_features(Graph<float>& g, ParamBinder& p, const EncoderSpec& spec,
                             NodeId image);

/// Three 256-channel 4x4 stride-2 deconvolutions (ReLU after each), then a
/// 1x1 conv to K channels; raw logits, no output activation.
NodeId decode_heatmaps(Graph<float>& g, ParamBinder& p, const EncoderSpec& spec,
                       int num_landmarks, NodeId spatial);

/// Classifier head on the pooled embedding.
NodeId classifier_logits(Graph<float>& g, ParamBinder& p, NodeId embedding);

// Checkpoint wrappers; the header meta carries the model kind, variant
// and encoder spec so models reconstruct without external context.
void save_source_model(const SourceModel& model, const std::string& path);
SourceModel load_source_model(const std::string& path);
void save_target_model(const TargetModel& model, const std::string& path);
TargetModel load_target_model(const std::string& path);

}  // namespace ctld
