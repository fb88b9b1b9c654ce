#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lips/cost_model.hpp"
#include "lips/instrument.hpp"
#include "lips/pipeline.hpp"
#include "lips/query_decoder.hpp"
#include "oracles.hpp"

using namespace lips;

namespace {

AttentionWeights random_attention(uint64_t seed, int64_t d, int64_t kv, int heads) {
  WeightInit init(seed);
  return make_attention(init, d, kv, heads);
}

MaskFeatures random_features(std::mt19937_64& rng, int64_t width, int64_t h8, int64_t w8) {
  MaskFeatures f;
  for (size_t i = 0; i < 3; ++i) {
    const int64_t div = int64_t{1} << i;
    f.scales[i] = oracle::random_tensor(rng, {width, (h8 + div - 1) / div, (w8 + div - 1) / div});
  }
  f.per_pixel = f.scales[0];
  return f;
}

QueryDecoderConfig small_cfg(int queries, int layers) {
  QueryDecoderConfig cfg;
  cfg.num_queries = queries;
  cfg.num_layers = layers;
  cfg.hidden_dim = 16;
  cfg.heads = 4;
  cfg.ffn_dim = 32;
  cfg.num_classes = 5;
  return cfg;
}

}  // namespace

TEST(MaskedAttention, AllAllowedEqualsUnmasked) {
  std::mt19937_64 rng(51);
  const auto w = random_attention(1, 16, 8, 4);
  const Tensor q = oracle::random_tensor(rng, {5, 16});
  const Tensor kv = oracle::random_tensor(rng, {12, 8});
  const Tensor a = masked_cross_attention(q, kv, kv, AttentionMask::all(5, 12, true), w);
  const Tensor b = multihead_attention(q, kv, kv, w, nullptr);
  for (int64_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(MaskedAttention, SingleAllowedKeyClosedForm) {
  std::mt19937_64 rng(52);
  const auto w = random_attention(2, 16, 8, 4);
  const Tensor q = oracle::random_tensor(rng, {4, 16});
  const Tensor key = oracle::random_tensor(rng, {10, 8});
  const Tensor value = oracle::random_tensor(rng, {10, 8});
  AttentionMask mask = AttentionMask::all(4, 10, false);
  const int64_t pick[] = {0, 3, 9, 3};
  for (int64_t i = 0; i < 4; ++i) mask.set(i, pick[i], true);
  const Tensor out = masked_cross_attention(q, key, value, mask, w);
  const Tensor proj = w.out(w.v(value));
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t c = 0; c < 16; ++c) EXPECT_NEAR(out.at(i, c), proj.at(pick[i], c), 1e-5);
  }
}

TEST(MaskedAttention, AllDisallowedRowFallsBack) {
  std::mt19937_64 rng(53);
  const auto w = random_attention(3, 16, 16, 2);
  const Tensor q = oracle::random_tensor(rng, {3, 16});
  const Tensor kv = oracle::random_tensor(rng, {7, 16});
  AttentionMask mask = AttentionMask::all(3, 7, true);
  for (int64_t j = 0; j < 7; ++j) mask.set(1, j, false);
  mask.set(2, 4, false);
  const Tensor out = masked_cross_attention(q, kv, kv, mask, w);
  const Tensor open = multihead_attention(q, kv, kv, w, nullptr);
  for (int64_t c = 0; c < 16; ++c) {
    EXPECT_EQ(out.at(1, c), open.at(1, c));
    EXPECT_EQ(out.at(0, c), open.at(0, c));
  }
  EXPECT_THROW(masked_cross_attention(q, kv, kv, AttentionMask::all(3, 6, true), w),
               InvalidShapeError);
}

TEST(PredictHeads, ZeroEmbedOneHotAndShapes) {
  std::mt19937_64 rng(54);
  WeightInit init(4);
  PredictionHeadWeights w;
  w.decoder_norm = make_norm(16);
  w.class_head = make_linear(init, 16, 6);
  for (auto& l : w.mask_mlp) l = make_linear(init, 16, 16);
  const Tensor feats = oracle::random_tensor(rng, {16, 3, 4});
  const Tensor q = oracle::random_tensor(rng, {7, 16});

  PredictionHeadWeights zero = w;
  zero.mask_mlp[2].weight = Tensor({16, 16}, 0.0f);
  zero.mask_mlp[2].bias = Tensor({16}, 0.0f);
  const Prediction p = predict_heads(q, feats, zero);
  EXPECT_EQ(p.class_logits.shape(), (Shape{7, 6}));
  EXPECT_EQ(p.mask_logits.shape(), (Shape{7, 3, 4}));
  for (float v : p.mask_logits.data()) {
    EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(sigmoid(v), 0.5f);
  }

  Tensor onehot({2, 16});
  onehot.at(0, 5) = 1.0f;
  onehot.at(1, 11) = 1.0f;
  const Tensor m = mask_logits_from_embed(onehot, feats);
  for (int64_t y = 0; y < 3; ++y) {
    for (int64_t x = 0; x < 4; ++x) {
      EXPECT_EQ(m.at(0, y, x), feats.at(5, y, x));
      EXPECT_EQ(m.at(1, y, x), feats.at(11, y, x));
    }
  }
}

TEST(QueryDecoder, PredictionCountShapesAndFiniteness) {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const int layers = 1 + trial % 4;
    const auto cfg = small_cfg(1 + trial % 6, layers);
    const MaskFeatures f = random_features(rng, 8, 4, 6);
    const auto w = build_query_decoder(300 + trial, cfg, 8);
    const DecoderOutput out = run_query_decoder(f, cfg, w);
    ASSERT_EQ(out.predictions.size(), static_cast<size_t>(layers + 1));
    for (const Prediction& p : out.predictions) {
      EXPECT_EQ(p.class_logits.shape(), (Shape{cfg.num_queries, 6}));
      EXPECT_EQ(p.mask_logits.shape(), (Shape{cfg.num_queries, 4, 6}));
      for (float v : p.class_logits.data()) ASSERT_TRUE(std::isfinite(v));
      for (float v : p.mask_logits.data()) ASSERT_TRUE(std::isfinite(v));
    }
    EXPECT_EQ(out.class_logits, out.predictions.back().class_logits);
  }
}

TEST(QueryDecoder, DefaultShapesAt640) {
  // Ten prediction sets of Q x (C+1) and Q x 80 x 80; only shapes matter.
  QueryDecoderConfig cfg;
  cfg.hidden_dim = 16;
  cfg.heads = 4;
  cfg.ffn_dim = 16;
  MaskFeatures f;
  f.scales = {Tensor({8, 80, 80}, 0.01f), Tensor({8, 40, 40}, 0.01f), Tensor({8, 20, 20}, 0.01f)};
  f.per_pixel = f.scales[0];
  const DecoderOutput out = run_query_decoder(f, cfg, build_query_decoder(1, cfg, 8));
  ASSERT_EQ(out.predictions.size(), 10u);
  EXPECT_EQ(out.class_logits.shape(), (Shape{100, 151}));
  EXPECT_EQ(out.mask_logits.shape(), (Shape{100, 80, 80}));
}

TEST(QueryDecoder, ScaleCycling) {
  int visits[3] = {0, 0, 0};
  for (int i = 0; i < 9; ++i) ++visits[scale_for_layer(i)];
  EXPECT_EQ(visits[0], 3);
  EXPECT_EQ(visits[1], 3);
  EXPECT_EQ(visits[2], 3);
  EXPECT_EQ(scale_for_layer(0), 2);
  EXPECT_EQ(scale_for_layer(1), 1);
  EXPECT_EQ(scale_for_layer(2), 0);
}

TEST(QueryDecoder, ForcedAllowedMasksEqualMaskFreeRun) {
  std::mt19937_64 rng(56);
  const auto cfg = small_cfg(4, 3);
  const MaskFeatures f = random_features(rng, 8, 4, 4);
  const auto w = build_query_decoder(9, cfg, 8);
  QueryDecoderOptions off;
  off.use_attention_masks = false;
  const DecoderOutput a = run_query_decoder(f, cfg, w, off);

  // Mask-free reference: the same layer recipe with unmasked attention.
  std::array<Tensor, 3> mem, keys;
  for (size_t s = 0; s < 3; ++s) {
    mem[s] = flatten_hw(f.scales[s]);
    keys[s] = flatten_hw(sine_positional_encoding(f.scales[s].dim(1), f.scales[s].dim(2), 8));
    for (int64_t i = 0; i < keys[s].dim(0); ++i) {
      for (int64_t c = 0; c < 8; ++c) keys[s].at(i, c) += w.level_embed.at(static_cast<int64_t>(s), c);
    }
    add_inplace(keys[s], mem[s]);
  }
  Tensor tgt = w.query_feat;
  for (int i = 0; i < 3; ++i) {
    const auto& lw = w.layers[static_cast<size_t>(i)];
    const size_t s = static_cast<size_t>(scale_for_layer(i));
    Tensor x = multihead_attention(add(tgt, w.query_pos), keys[s], mem[s], lw.cross, nullptr);
    add_inplace(x, tgt);
    tgt = lw.cross_norm(x);
    const Tensor qk = add(tgt, w.query_pos);
    x = multihead_attention(qk, qk, tgt, lw.self, nullptr);
    add_inplace(x, tgt);
    tgt = lw.self_norm(x);
    x = lw.ffn2(relu(lw.ffn1(tgt)));
    add_inplace(x, tgt);
    tgt = lw.ffn_norm(x);
  }
  const Prediction ref = predict_heads(tgt, f.per_pixel, w.heads);
  EXPECT_EQ(a.class_logits, ref.class_logits);
  EXPECT_EQ(a.mask_logits, ref.mask_logits);
}

TEST(QueryDecoder, DimensionMismatchThrows) {
  std::mt19937_64 rng(57);
  const auto cfg = small_cfg(2, 1);
  const MaskFeatures f = random_features(rng, 8, 2, 2);
  EXPECT_THROW(run_query_decoder(f, cfg, build_query_decoder(1, cfg, 12)), InvalidConfigError);
  auto other = cfg;
  other.num_layers = 2;
  EXPECT_THROW(run_query_decoder(f, other, build_query_decoder(1, cfg, 8)), InvalidConfigError);
}

TEST(QueryDecoder, DoublingQueriesMatchesCostDecomposition) {
  // Query-decoder MACs as a function of Q: a constant part (key and value
  // projections of the memory), terms linear in Q (query-side projections,
  // FFN, cross-attention scores, mask resizes) and the quadratic
  // self-attention term 2 * L * Q^2 * D.
  ModelConfig cfg = preset_config("lips_2");
  cfg.input_h = cfg.input_w = 64;
  cfg.query_decoder.hidden_dim = 32;
  cfg.query_decoder.ffn_dim = 64;
  cfg.query_decoder.num_classes = 7;
  const Tensor img = synthetic_image(1, 64, 64);
  auto qd_macs = [&](int q) {
    ModelConfig c = cfg;
    c.query_decoder.num_queries = q;
    const ForwardResult r = run_forward(c, build_model(c), img);
    const CostReport rep = profile_model(c, std::nullopt);
    EXPECT_EQ(rep.entry(Stage::query_decoder).macs, r.counters.stage_macs(Stage::query_decoder));
    return r.counters.stage_macs(Stage::query_decoder);
  };
  const int q = 5;
  const int64_t a = qd_macs(q), b = qd_macs(2 * q);
  const int64_t l = cfg.query_decoder.num_layers, d = cfg.query_decoder.hidden_dim;
  const int64_t dm = cfg.pixel_decoder.width;
  const int64_t tokens[3] = {8 * 8, 4 * 4, 2 * 2};
  int64_t constant = 0;
  for (int i = 0; i < l; ++i) constant += 2 * tokens[scale_for_layer(i)] * dm * d;
  const int64_t quad = 2 * l * q * q * d;
  const int64_t linear_part = a - quad - constant;
  EXPECT_GT(linear_part, 0);
  EXPECT_EQ(b, constant + 2 * linear_part + 4 * quad);
}
