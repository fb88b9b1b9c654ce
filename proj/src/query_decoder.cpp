#include "lips/query_decoder.hpp"

#include <cmath>
#include <limits>

#include "lips/instrument.hpp"
#include "lips/kernels.hpp"

namespace lips {

void validate(const QueryDecoderConfig& cfg) {
  require_config(cfg.num_queries >= 1, "query decoder needs at least one query");
  require_config(cfg.num_layers >= 1, "query decoder needs at least one layer");
  require_config(cfg.hidden_dim > 0 && cfg.heads > 0 && cfg.hidden_dim % cfg.heads == 0,
                 "query decoder hidden_dim must be a positive multiple of heads");
  require_config(cfg.ffn_dim >= 1, "query decoder ffn_dim must be positive");
  require_config(cfg.num_classes >= 1, "query decoder needs at least one class");
  require_config(cfg.mask_threshold > 0.0f && cfg.mask_threshold < 1.0f,
                 "mask threshold must lie in (0, 1)");
}

int scale_for_layer(int layer) { return 2 - layer % 3; }

AttentionMask AttentionMask::all(int64_t rows, int64_t cols, bool value) {
  return {rows, cols, std::vector<uint8_t>(static_cast<size_t>(rows * cols), value ? 1 : 0)};
}

AttentionWeights make_attention(WeightInit& init, int64_t dim, int64_t kv_dim, int heads) {
  return {make_linear(init, dim, dim), make_linear(init, kv_dim, dim), make_linear(init, kv_dim, dim),
          make_linear(init, dim, dim), heads};
}

Tensor multihead_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                           const AttentionWeights& w, const AttentionMask* mask) {
  require_shape(key.rank() == 2 && value.rank() == 2 && key.dim(0) == value.dim(0),
                "attention keys and values must have the same token count");
  const Tensor q = w.q(query);
  const Tensor k = w.k(key);
  const Tensor v = w.v(value);
  const int64_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  require_shape(k.dim(1) == d && v.dim(1) == d, "attention projection widths differ");
  require_shape(d % w.heads == 0, "attention width must be divisible by heads");
  if (mask) {
    require_shape(mask->rows == nq && mask->cols == nk,
                  "attention mask must be " + std::to_string(nq) + " x " + std::to_string(nk));
  }
  const int64_t dh = d / w.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();

  Tensor ctx({nq, d});
  std::vector<float> scores(static_cast<size_t>(nk));
  for (int64_t i = 0; i < nq; ++i) {
    bool any_allowed = mask == nullptr;
    for (int64_t j = 0; j < nk && !any_allowed; ++j) any_allowed = mask->at(i, j);
    for (int64_t h = 0; h < w.heads; ++h) {
      const float* qi = &q.at(i, h * dh);
      for (int64_t j = 0; j < nk; ++j) {
        if (any_allowed && mask && !mask->at(i, j)) {
          scores[static_cast<size_t>(j)] = kNegInf;
          continue;
        }
        const float* kj = &k.at(j, h * dh);
        float s = 0.0f;
        for (int64_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        scores[static_cast<size_t>(j)] = s * scale;
      }
      softmax_inplace(scores);
      float* out = &ctx.at(i, h * dh);
      for (int64_t j = 0; j < nk; ++j) {
        const float a = scores[static_cast<size_t>(j)];
        if (a == 0.0f) continue;
        const float* vj = &v.at(j, h * dh);
        for (int64_t c = 0; c < dh; ++c) out[c] += a * vj[c];
      }
    }
  }
  instrument::add_macs(2 * nq * nk * d);
  instrument::add_call("attention");
  return w.out(ctx);
}

Tensor masked_cross_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                              const AttentionMask& mask, const AttentionWeights& w) {
  return multihead_attention(query, key, value, w, &mask);
}

QueryDecoderWeights build_query_decoder(uint64_t seed, const QueryDecoderConfig& cfg,
                                        int64_t mask_width) {
  validate(cfg);
  require_config(mask_width > 0, "mask width must be positive");
  WeightInit init(seed);
  const int64_t d = cfg.hidden_dim;
  QueryDecoderWeights w;
  w.query_feat = init.uniform({cfg.num_queries, d}, 1.0f);
  w.query_pos = init.uniform({cfg.num_queries, d}, 1.0f);
  w.level_embed = init.uniform({3, mask_width}, 0.5f);
  for (int i = 0; i < cfg.num_layers; ++i) {
    QueryLayerWeights layer;
    layer.cross = make_attention(init, d, mask_width, cfg.heads);
    layer.cross_norm = make_norm(d);
    layer.self = make_attention(init, d, d, cfg.heads);
    layer.self_norm = make_norm(d);
    layer.ffn1 = make_linear(init, d, cfg.ffn_dim);
    layer.ffn2 = make_linear(init, cfg.ffn_dim, d);
    layer.ffn_norm = make_norm(d);
    w.layers.push_back(std::move(layer));
  }
  w.heads.decoder_norm = make_norm(d);
  w.heads.class_head = make_linear(init, d, cfg.num_classes + 1);
  w.heads.mask_mlp[0] = make_linear(init, d, d);
  w.heads.mask_mlp[1] = make_linear(init, d, d);
  w.heads.mask_mlp[2] = make_linear(init, d, mask_width);
  return w;
}

Tensor mask_logits_from_embed(const Tensor& embed, const Tensor& features) {
  require_shape(embed.rank() == 2 && features.rank() == 3 && embed.dim(1) == features.dim(0),
                "mask embedding width must equal the feature channel count");
  const int64_t h = features.dim(1), w = features.dim(2);
  // Q x C times C x HW, expressed as a bias-free linear over HW outputs.
  const Tensor logits = linear(embed, flatten_hw(features), Tensor());
  return logits.reshaped({embed.dim(0), h, w});
}

Prediction predict_heads(const Tensor& queries, const Tensor& per_pixel,
                         const PredictionHeadWeights& w) {
  StageScope stage(Stage::head);
  const Tensor normed = w.decoder_norm(queries);
  Prediction p;
  p.class_logits = w.class_head(normed);
  Tensor embed = relu(w.mask_mlp[0](normed));
  embed = relu(w.mask_mlp[1](embed));
  embed = w.mask_mlp[2](embed);
  p.mask_logits = mask_logits_from_embed(embed, per_pixel);
  return p;
}

AttentionMask attention_mask_from_logits(const Tensor& mask_logits, int64_t h, int64_t w,
                                         float threshold) {
  const Tensor resized = bilinear_resize(mask_logits, h, w);
  const int64_t q = resized.dim(0);
  AttentionMask mask = AttentionMask::all(q, h * w, false);
  for (int64_t i = 0; i < q * h * w; ++i) {
    mask.allowed[static_cast<size_t>(i)] = sigmoid(resized[i]) >= threshold ? 1 : 0;
  }
  return mask;
}

DecoderOutput run_query_decoder(const MaskFeatures& features, const QueryDecoderConfig& cfg,
                                const QueryDecoderWeights& weights,
                                const QueryDecoderOptions& options) {
  validate(cfg);
  const int64_t mask_width = features.per_pixel.dim(0);
  for (const Tensor& s : features.scales) {
    require_config(s.rank() == 3 && s.dim(0) == mask_width,
                   "all mask-feature scales must share the per-pixel channel count");
  }
  require_config(weights.query_feat.dim(0) == cfg.num_queries &&
                     weights.query_feat.dim(1) == cfg.hidden_dim,
                 "query weights do not match the decoder config");
  require_config(weights.level_embed.dim(1) == mask_width,
                 "query decoder weights expect mask width " +
                     std::to_string(weights.level_embed.dim(1)) + ", features have " +
                     std::to_string(mask_width));
  require_config(static_cast<int>(weights.layers.size()) == cfg.num_layers,
                 "query decoder weights do not match the layer count");

  StageScope stage(Stage::query_decoder);

  // Keys carry sine position plus a per-scale embedding; values are raw.
  std::array<Tensor, 3> memory;
  std::array<Tensor, 3> memory_keys;
  for (size_t s = 0; s < 3; ++s) {
    const Tensor& f = features.scales[s];
    memory[s] = flatten_hw(f);
    Tensor pos = flatten_hw(sine_positional_encoding(f.dim(1), f.dim(2), mask_width));
    for (int64_t i = 0; i < pos.dim(0); ++i) {
      for (int64_t c = 0; c < mask_width; ++c) {
        pos.at(i, c) += weights.level_embed.at(static_cast<int64_t>(s), c);
      }
    }
    add_inplace(pos, memory[s]);
    memory_keys[s] = std::move(pos);
  }

  DecoderOutput out;
  Tensor tgt = weights.query_feat;
  out.predictions.push_back(predict_heads(tgt, features.per_pixel, weights.heads));

  for (int i = 0; i < cfg.num_layers; ++i) {
    const QueryLayerWeights& lw = weights.layers[static_cast<size_t>(i)];
    const size_t s = static_cast<size_t>(scale_for_layer(i));
    const Tensor& f = features.scales[s];
    const AttentionMask mask =
        options.use_attention_masks
            ? attention_mask_from_logits(out.predictions.back().mask_logits, f.dim(1), f.dim(2),
                                         cfg.mask_threshold)
            : AttentionMask::all(cfg.num_queries, f.dim(1) * f.dim(2), true);

    Tensor x = masked_cross_attention(add(tgt, weights.query_pos), memory_keys[s], memory[s], mask,
                                      lw.cross);
    add_inplace(x, tgt);
    tgt = lw.cross_norm(x);

    const Tensor qk = add(tgt, weights.query_pos);
    x = multihead_attention(qk, qk, tgt, lw.self, nullptr);
    add_inplace(x, tgt);
    tgt = lw.self_norm(x);

    x = lw.ffn2(relu(lw.ffn1(tgt)));
    add_inplace(x, tgt);
    tgt = lw.ffn_norm(x);

    out.predictions.push_back(predict_heads(tgt, features.per_pixel, weights.heads));
  }
  out.class_logits = out.predictions.back().class_logits;
  out.mask_logits = out.predictions.back().mask_logits;
  return out;
}

}  // namespace lips
