#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lips/layers.hpp"
#include "lips/pixel_decoder.hpp"
#include "lips/tensor.hpp"

namespace lips {

struct QueryDecoderConfig {
  int num_queries = 100;
  int num_layers = 9;
  int64_t hidden_dim = 256;
  int heads = 8;
  int64_t ffn_dim = 2048;
  int num_classes = 150;  // excludes the trailing no-object slot
  float mask_threshold = 0.5f;
};

void validate(const QueryDecoderConfig& cfg);

/// Mask-feature scale used by decoder layer `layer`: cycles 1/32, 1/16, 1/8
/// and returns an index into MaskFeatures::scales.
int scale_for_layer(int layer);

/// Boolean Q x N matrix, true where attention is allowed.
struct AttentionMask {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<uint8_t> allowed;

  static AttentionMask all(int64_t rows, int64_t cols, bool value);
  bool at(int64_t r, int64_t c) const { return allowed[static_cast<size_t>(r * cols + c)] != 0; }
  void set(int64_t r, int64_t c, bool v) { allowed[static_cast<size_t>(r * cols + c)] = v ? 1 : 0; }
};

/// Projections for multi-head attention; key/value inputs may have a
/// different width than the queries.
struct AttentionWeights {
  LinearLayer q;
  LinearLayer k;
  LinearLayer v;
  LinearLayer out;
  int heads = 1;

  template <class Self, class F>
  static void fields(Self& self, const std::string& p, F&& f) {
    LinearLayer::fields(self.q, p + ".q", f);
    LinearLayer::fields(self.k, p + ".k", f);
    LinearLayer::fields(self.v, p + ".v", f);
    LinearLayer::fields(self.out, p + ".out", f);
  }
};

AttentionWeights make_attention(WeightInit& init, int64_t dim, int64_t kv_dim, int heads);

/// Scaled dot-product multi-head attention. Rows of `mask` with no allowed
/// key fall back to attending everywhere. `mask` may be null (unmasked).
Tensor multihead_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                           const AttentionWeights& w, const AttentionMask* mask);

Tensor masked_cross_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                              const AttentionMask& mask, const AttentionWeights& w);

struct QueryLayerWeights {
  AttentionWeights cross;
  NormLayer cross_norm;
  AttentionWeights self;
  NormLayer self_norm;
  LinearLayer ffn1;
  LinearLayer ffn2;
  NormLayer ffn_norm;

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F&& f) {
    AttentionWeights::fields(s.cross, p + ".cross", f);
    NormLayer::fields(s.cross_norm, p + ".cross_norm", f);
    AttentionWeights::fields(s.self, p + ".self", f);
    NormLayer::fields(s.self_norm, p + ".self_norm", f);
    LinearLayer::fields(s.ffn1, p + ".ffn1", f);
    LinearLayer::fields(s.ffn2, p + ".ffn2", f);
    NormLayer::fields(s.ffn_norm, p + ".ffn_norm", f);
  }
};

struct PredictionHeadWeights {
  NormLayer decoder_norm;
  LinearLayer class_head;                // D -> num_classes + 1
  std::array<LinearLayer, 3> mask_mlp;   // D -> D -> D -> mask width

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F&& f) {
    NormLayer::fields(s.decoder_norm, p + ".decoder_norm", f);
    LinearLayer::fields(s.class_head, p + ".class", f);
    for (size_t i = 0; i < 3; ++i) {
      LinearLayer::fields(s.mask_mlp[i], p + ".mask_mlp" + std::to_string(i), f);
    }
  }
};

struct QueryDecoderWeights {
  Tensor query_feat;   // Q x D
  Tensor query_pos;    // Q x D
  Tensor level_embed;  // 3 x mask width
  std::vector<QueryLayerWeights> layers;
  PredictionHeadWeights heads;

  template <class Self, class F>
  static void fields(Self& self, F&& f) {
    f(std::string("query_decoder.query_feat"), self.query_feat);
    f(std::string("query_decoder.query_pos"), self.query_pos);
    f(std::string("query_decoder.level_embed"), self.level_embed);
    for (size_t i = 0; i < self.layers.size(); ++i) {
      QueryLayerWeights::fields(self.layers[i], "query_decoder.layer" + std::to_string(i), f);
    }
    PredictionHeadWeights::fields(self.heads, "head", f);
  }
};

QueryDecoderWeights build_query_decoder(uint64_t seed, const QueryDecoderConfig& cfg,
                                        int64_t mask_width);

struct Prediction {
  Tensor class_logits;  // Q x (num_classes + 1)
  Tensor mask_logits;   // Q x h x w at the per-pixel embedding resolution
};

/// mask_logits[q, y, x] = <embed[q], features[:, y, x]>.
Tensor mask_logits_from_embed(const Tensor& embed, const Tensor& features);

/// Class logits from a linear head and mask logits from a 3-layer MLP
/// embedding, both on the decoder-normalized query states.
Prediction predict_heads(const Tensor& queries, const Tensor& per_pixel,
                         const PredictionHeadWeights& w);

struct DecoderOutput {
  Tensor class_logits;
  Tensor mask_logits;
  std::vector<Prediction> predictions;  // initial + one per layer; back() is final
};

struct QueryDecoderOptions {
  // When false, every layer attends over all positions.
  bool use_attention_masks = true;
};

/// Derives the next layer's attention mask from a mask prediction.
AttentionMask attention_mask_from_logits(const Tensor& mask_logits, int64_t h, int64_t w,
                                         float threshold);

DecoderOutput run_query_decoder(const MaskFeatures& features, const QueryDecoderConfig& cfg,
                                const QueryDecoderWeights& weights,
                                const QueryDecoderOptions& options = {});

}  // namespace lips
