#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lips/encoder.hpp"
#include "lips/layers.hpp"
#include "lips/tensor.hpp"

namespace lips {

inline constexpr std::array<int64_t, 3> kMaskFeatureStrides = {8, 16, 32};

struct PixelDecoderConfig {
  int depth = 3;
  int64_t width = 128;
  int heads = 8;
  int points = 4;
  int64_t ffn_dim = 512;
  // Adds a stride-4 per-pixel embedding (lateral from encoder level 1,
  // smoothing conv, 1x1 mask projection) as in the unmodified baseline.
  bool stride4_mask_features = false;
};

void validate(const PixelDecoderConfig& cfg);

/// One level's slice of a flattened token sequence.
struct LevelRange {
  int64_t start = 0;
  int64_t h = 0;
  int64_t w = 0;
  int64_t stride = 0;

  int64_t length() const { return h * w; }
};

struct TokenSequence {
  Tensor tokens;  // N x width
  std::vector<LevelRange> levels;

  int64_t num_tokens() const { return tokens.dim(0); }
};

TokenSequence flatten_levels(const std::vector<FeatureLevel>& levels);
std::vector<FeatureLevel> unflatten_levels(const TokenSequence& seq,
                                           const std::vector<FeatureLevel>& like);

/// Normalized cell centers of every token on its own level grid, N x 2 (x, y).
Tensor reference_points(const std::vector<LevelRange>& levels);

struct DeformAttnWeights {
  LinearLayer value;    // D -> D
  LinearLayer offsets;  // D -> heads * levels * points * 2
  LinearLayer logits;   // D -> heads * levels * points
  LinearLayer output;   // D -> D
  int heads = 0;
  int levels = 0;
  int points = 0;

  template <class Self, class F>
  static void fields(Self& self, const std::string& p, F&& f) {
    LinearLayer::fields(self.value, p + ".value", f);
    LinearLayer::fields(self.offsets, p + ".offsets", f);
    LinearLayer::fields(self.logits, p + ".logits", f);
    LinearLayer::fields(self.output, p + ".output", f);
  }
};

DeformAttnWeights make_deform_attn(WeightInit& init, int64_t width, int heads, int levels,
                                   int points);

/// Per-token sampling offsets (N x heads*levels*points*2, in units of the
/// target level's cells, (x, y) pairs) and attention weights
/// (N x heads*levels*points, softmax-normalized over levels*points per head).
struct SamplingPlan {
  Tensor offsets;
  Tensor weights;
};

SamplingPlan predict_sampling(const Tensor& queries, const DeformAttnWeights& w);

/// Weighted multi-point gather over the per-level value maps, before the
/// output projection. `value` is N_v x D already projected.
Tensor deform_aggregate(const Tensor& value, const std::vector<LevelRange>& levels,
                        const Tensor& refs, const SamplingPlan& plan, int heads, int points);

/// d <upstream, deform_aggregate> / d plan.offsets, same layout as offsets.
Tensor deform_aggregate_offset_grad(const Tensor& value, const std::vector<LevelRange>& levels,
                                    const Tensor& refs, const SamplingPlan& plan, int heads,
                                    int points, const Tensor& upstream);

/// Multi-scale deformable attention. `queries` carries positional
/// information already; reference points come from its level layout.
Tensor msdeform_attn(const TokenSequence& queries, const TokenSequence& values,
                     const DeformAttnWeights& w);

struct DeformLayerWeights {
  DeformAttnWeights attn;
  NormLayer norm1;
  LinearLayer ffn1;
  LinearLayer ffn2;
  NormLayer norm2;

  template <class Self, class F>
  static void fields(Self& self, const std::string& p, F&& f) {
    DeformAttnWeights::fields(self.attn, p + ".attn", f);
    NormLayer::fields(self.norm1, p + ".norm1", f);
    LinearLayer::fields(self.ffn1, p + ".ffn1", f);
    LinearLayer::fields(self.ffn2, p + ".ffn2", f);
    NormLayer::fields(self.norm2, p + ".norm2", f);
  }
};

/// Pre-norm: x = x + attn(norm1(x) + pos, norm1(x)); x = x + ffn(norm2(x)).
TokenSequence deform_encoder_layer(const TokenSequence& seq, const Tensor& pos,
                                   const DeformLayerWeights& w);

struct PixelDecoderWeights {
  Tensor level_embed;  // routed levels x width
  std::vector<DeformLayerWeights> layers;
  NormLayer encoder_norm;            // after the last pre-norm layer
  std::array<ConvLayer, 3> lateral;  // 1x1, per mask-feature stride
  std::array<ConvLayer, 3> smooth;   // 3x3
  bool has_stride4 = false;
  ConvLayer lateral4;
  ConvLayer smooth4;
  ConvLayer mask_proj;

  template <class Self, class F>
  static void fields(Self& self, F&& f) {
    f(std::string("pixel_decoder.level_embed"), self.level_embed);
    for (size_t i = 0; i < self.layers.size(); ++i) {
      DeformLayerWeights::fields(self.layers[i], "pixel_decoder.layer" + std::to_string(i), f);
    }
    NormLayer::fields(self.encoder_norm, "pixel_decoder.encoder_norm", f);
    for (size_t i = 0; i < 3; ++i) {
      const std::string s = std::to_string(kMaskFeatureStrides[i]);
      ConvLayer::fields(self.lateral[i], "pixel_decoder.lateral_s" + s, f);
      ConvLayer::fields(self.smooth[i], "pixel_decoder.smooth_s" + s, f);
    }
    if (self.has_stride4) {
      ConvLayer::fields(self.lateral4, "pixel_decoder.lateral_s4", f);
      ConvLayer::fields(self.smooth4, "pixel_decoder.smooth_s4", f);
      ConvLayer::fields(self.mask_proj, "pixel_decoder.mask_proj", f);
    }
  }
};

/// `level1_channels` is only used when cfg.stride4_mask_features is set.
PixelDecoderWeights build_pixel_decoder(uint64_t seed, const PixelDecoderConfig& cfg,
                                        int num_levels, int64_t level1_channels);

struct MaskFeatures {
  std::array<Tensor, 3> scales;  // width x ceil(H/s) x ceil(W/s) for s = 8, 16, 32
  Tensor per_pixel;              // finest embedding used for mask logits
  int64_t per_pixel_stride = 8;
};

/// Fuses routed levels and expands them into the three mask-feature scales.
/// `stride4_source` is encoder level 1 and is required iff
/// cfg.stride4_mask_features.
MaskFeatures run_pixel_decoder(const std::vector<FeatureLevel>& routed, int64_t input_h,
                               int64_t input_w, const PixelDecoderConfig& cfg,
                               const PixelDecoderWeights& weights,
                               const FeatureLevel* stride4_source = nullptr);

/// Index into `strides` of the level nearest to `target` in log scale;
/// ties go to the finer level.
size_t nearest_level(const std::vector<int64_t>& strides, int64_t target);

}  // namespace lips
