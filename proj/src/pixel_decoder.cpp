#include "lips/pixel_decoder.hpp"

#include <cmath>

#include "lips/instrument.hpp"
#include "lips/kernels.hpp"

namespace lips {

void validate(const PixelDecoderConfig& cfg) {
  require_config(cfg.depth >= 1, "pixel decoder depth must be >= 1, got " +
                                     std::to_string(cfg.depth));
  require_config(cfg.width > 0 && cfg.heads > 0 && cfg.width % cfg.heads == 0,
                 "pixel decoder width must be a positive multiple of heads");
  require_config(cfg.width % 4 == 0, "pixel decoder width must be divisible by 4");
  require_config(cfg.points >= 1, "pixel decoder needs at least one sampling point");
  require_config(cfg.ffn_dim >= 1, "pixel decoder ffn_dim must be positive");
}

TokenSequence flatten_levels(const std::vector<FeatureLevel>& levels) {
  require_config(!levels.empty(), "cannot flatten an empty level list");
  const int64_t c = levels.front().tensor.dim(0);
  int64_t n = 0;
  for (const auto& l : levels) {
    require_shape(l.tensor.rank() == 3 && l.tensor.dim(0) == c,
                  "all levels must share a channel count");
    n += l.tensor.dim(1) * l.tensor.dim(2);
  }
  TokenSequence seq;
  seq.tokens = Tensor({n, c});
  int64_t start = 0;
  for (const auto& l : levels) {
    const int64_t h = l.tensor.dim(1), w = l.tensor.dim(2);
    const Tensor flat = flatten_hw(l.tensor);
    std::copy(flat.data().begin(), flat.data().end(), seq.tokens.data().begin() + start * c);
    seq.levels.push_back({start, h, w, l.stride});
    start += h * w;
  }
  return seq;
}

std::vector<FeatureLevel> unflatten_levels(const TokenSequence& seq,
                                           const std::vector<FeatureLevel>& like) {
  require_shape(seq.levels.size() == like.size(), "level count mismatch in unflatten");
  std::vector<FeatureLevel> out;
  for (size_t i = 0; i < like.size(); ++i) {
    const LevelRange& r = seq.levels[i];
    out.push_back({like[i].level_index, like[i].stride, unflatten_hw(seq.tokens, r.start, r.h, r.w)});
  }
  return out;
}

Tensor reference_points(const std::vector<LevelRange>& levels) {
  int64_t n = 0;
  for (const auto& l : levels) n += l.length();
  Tensor refs({n, 2});
  for (const auto& l : levels) {
    for (int64_t y = 0; y < l.h; ++y) {
      for (int64_t x = 0; x < l.w; ++x) {
        const int64_t i = l.start + y * l.w + x;
        refs.at(i, 0) = static_cast<float>((x + 0.5) / static_cast<double>(l.w));
        refs.at(i, 1) = static_cast<float>((y + 0.5) / static_cast<double>(l.h));
      }
    }
  }
  return refs;
}

DeformAttnWeights make_deform_attn(WeightInit& init, int64_t width, int heads, int levels,
                                   int points) {
  DeformAttnWeights w;
  const int64_t samples = static_cast<int64_t>(heads) * levels * points;
  w.value = make_linear(init, width, width);
  w.offsets = make_linear(init, width, samples * 2);
  w.logits = make_linear(init, width, samples);
  w.output = make_linear(init, width, width);
  w.heads = heads;
  w.levels = levels;
  w.points = points;
  return w;
}

SamplingPlan predict_sampling(const Tensor& queries, const DeformAttnWeights& w) {
  SamplingPlan plan;
  plan.offsets = w.offsets(queries);
  plan.weights = w.logits(queries);
  const int64_t group = static_cast<int64_t>(w.levels) * w.points;
  require_shape(plan.weights.dim(1) == group * w.heads, "attention logit width mismatch");
  auto data = plan.weights.data();
  for (int64_t off = 0; off < plan.weights.size(); off += group) {
    softmax_inplace(data.subspan(static_cast<size_t>(off), static_cast<size_t>(group)));
  }
  return plan;
}

namespace {

std::vector<Tensor> level_maps(const Tensor& value, const std::vector<LevelRange>& levels) {
  std::vector<Tensor> maps;
  maps.reserve(levels.size());
  for (const auto& l : levels) maps.push_back(unflatten_hw(value, l.start, l.h, l.w));
  return maps;
}

void check_plan(const Tensor& value, const std::vector<LevelRange>& levels, const Tensor& refs,
                const SamplingPlan& plan, int heads, int points) {
  const int64_t n = refs.dim(0);
  const int64_t samples = static_cast<int64_t>(heads) * static_cast<int64_t>(levels.size()) * points;
  require_shape(value.rank() == 2 && value.dim(1) % heads == 0,
                "value width must be divisible by heads");
  require_shape(plan.offsets.rank() == 2 && plan.offsets.dim(0) == n &&
                    plan.offsets.dim(1) == samples * 2,
                "sampling offsets must be N x heads*levels*points*2");
  require_shape(plan.weights.rank() == 2 && plan.weights.dim(0) == n &&
                    plan.weights.dim(1) == samples,
                "sampling weights must be N x heads*levels*points");
}

}  // namespace

Tensor deform_aggregate(const Tensor& value, const std::vector<LevelRange>& levels,
                        const Tensor& refs, const SamplingPlan& plan, int heads, int points) {
  check_plan(value, levels, refs, plan, heads, points);
  const int64_t n = refs.dim(0), d = value.dim(1), dh = d / heads;
  const int64_t nl = static_cast<int64_t>(levels.size());
  const std::vector<Tensor> maps = level_maps(value, levels);

  Tensor out({n, d});
  std::vector<float> sample(static_cast<size_t>(dh));
  for (int64_t q = 0; q < n; ++q) {
    const double rx = refs.at(q, 0), ry = refs.at(q, 1);
    for (int64_t h = 0; h < heads; ++h) {
      float* acc = &out.at(q, h * dh);
      for (int64_t l = 0; l < nl; ++l) {
        const LevelRange& lv = levels[static_cast<size_t>(l)];
        for (int64_t p = 0; p < points; ++p) {
          const int64_t s = (h * nl + l) * points + p;
          const double x_px = rx * lv.w + plan.offsets.at(q, 2 * s) - 0.5;
          const double y_px = ry * lv.h + plan.offsets.at(q, 2 * s + 1) - 0.5;
          const float a = plan.weights.at(q, s);
          detail::sample_pixel(maps[static_cast<size_t>(l)], h * dh, dh, x_px, y_px, sample.data());
          for (int64_t c = 0; c < dh; ++c) acc[c] += a * sample[static_cast<size_t>(c)];
        }
      }
    }
  }
  instrument::add_macs(n * heads * nl * points * dh * 5);
  return out;
}

Tensor deform_aggregate_offset_grad(const Tensor& value, const std::vector<LevelRange>& levels,
                                    const Tensor& refs, const SamplingPlan& plan, int heads,
                                    int points, const Tensor& upstream) {
  check_plan(value, levels, refs, plan, heads, points);
  const int64_t n = refs.dim(0), d = value.dim(1), dh = d / heads;
  require_shape(upstream.rank() == 2 && upstream.dim(0) == n && upstream.dim(1) == d,
                "upstream must be N x D");
  const int64_t nl = static_cast<int64_t>(levels.size());
  const std::vector<Tensor> maps = level_maps(value, levels);

  Tensor grad(plan.offsets.shape());
  for (int64_t q = 0; q < n; ++q) {
    const double rx = refs.at(q, 0), ry = refs.at(q, 1);
    for (int64_t h = 0; h < heads; ++h) {
      const float* up = &upstream.at(q, h * dh);
      for (int64_t l = 0; l < nl; ++l) {
        const LevelRange& lv = levels[static_cast<size_t>(l)];
        for (int64_t p = 0; p < points; ++p) {
          const int64_t s = (h * nl + l) * points + p;
          const double x_px = rx * lv.w + plan.offsets.at(q, 2 * s) - 0.5;
          const double y_px = ry * lv.h + plan.offsets.at(q, 2 * s + 1) - 0.5;
          double gx = 0.0, gy = 0.0;
          detail::sample_pixel_grad(maps[static_cast<size_t>(l)], h * dh, dh, x_px, y_px, up, &gx,
                                    &gy);
          // Offsets are in cell units, so d x_px / d offset = 1.
          const double a = plan.weights.at(q, s);
          grad.at(q, 2 * s) = static_cast<float>(a * gx);
          grad.at(q, 2 * s + 1) = static_cast<float>(a * gy);
        }
      }
    }
  }
  return grad;
}

Tensor msdeform_attn(const TokenSequence& queries, const TokenSequence& values,
                     const DeformAttnWeights& w) {
  require_shape(queries.levels.size() == values.levels.size(),
                "msdeform_attn query/value level count mismatch");
  for (size_t i = 0; i < queries.levels.size(); ++i) {
    const LevelRange& a = queries.levels[i];
    const LevelRange& b = values.levels[i];
    require_shape(a.start == b.start && a.h == b.h && a.w == b.w,
                  "msdeform_attn query/value level metadata mismatch");
  }
  require_shape(static_cast<int>(values.levels.size()) == w.levels,
                "msdeform_attn weights expect " + std::to_string(w.levels) + " levels");
  instrument::add_call("msdeform_attn");
  const Tensor refs = reference_points(queries.levels);
  const SamplingPlan plan = predict_sampling(queries.tokens, w);
  const Tensor value = w.value(values.tokens);
  const Tensor agg = deform_aggregate(value, values.levels, refs, plan, w.heads, w.points);
  return w.output(agg);
}

TokenSequence deform_encoder_layer(const TokenSequence& seq, const Tensor& pos,
                                   const DeformLayerWeights& w) {
  const TokenSequence normed{w.norm1(seq.tokens), seq.levels};
  const TokenSequence queries{add(normed.tokens, pos), seq.levels};
  Tensor x = msdeform_attn(queries, normed, w.attn);
  add_inplace(x, seq.tokens);
  Tensor f = w.ffn2(relu(w.ffn1(w.norm2(x))));
  add_inplace(f, x);
  return {std::move(f), seq.levels};
}

PixelDecoderWeights build_pixel_decoder(uint64_t seed, const PixelDecoderConfig& cfg,
                                        int num_levels, int64_t level1_channels) {
  validate(cfg);
  require_config(num_levels >= 1, "pixel decoder needs at least one routed level");
  WeightInit init(seed);
  const int64_t d = cfg.width;
  PixelDecoderWeights w;
  w.level_embed = init.uniform({num_levels, d}, 0.5f);
  for (int i = 0; i < cfg.depth; ++i) {
    DeformLayerWeights layer;
    layer.attn = make_deform_attn(init, d, cfg.heads, num_levels, cfg.points);
    layer.norm1 = make_norm(d);
    layer.ffn1 = make_linear(init, d, cfg.ffn_dim);
    layer.ffn2 = make_linear(init, cfg.ffn_dim, d);
    layer.norm2 = make_norm(d);
    w.layers.push_back(std::move(layer));
  }
  w.encoder_norm = make_norm(d);
  for (size_t i = 0; i < 3; ++i) {
    w.lateral[i] = make_conv(init, d, d, 1, 1);
    w.smooth[i] = make_conv(init, d, d, 3, 1);
  }
  w.has_stride4 = cfg.stride4_mask_features;
  if (w.has_stride4) {
    require_config(level1_channels > 0, "stride-4 mask features need encoder level 1 channels");
    w.lateral4 = make_conv(init, level1_channels, d, 1, 1);
    w.smooth4 = make_conv(init, d, d, 3, 1);
    w.mask_proj = make_conv(init, d, d, 1, 1);
  }
  return w;
}

size_t nearest_level(const std::vector<int64_t>& strides, int64_t target) {
  require_config(!strides.empty(), "no levels to choose from");
  size_t best = 0;
  double best_dist = std::abs(std::log2(static_cast<double>(strides[0]) / target));
  for (size_t i = 1; i < strides.size(); ++i) {
    const double dist = std::abs(std::log2(static_cast<double>(strides[i]) / target));
    if (dist < best_dist - 1e-12 ||
        (std::abs(dist - best_dist) <= 1e-12 && strides[i] < strides[best])) {
      best = i;
      best_dist = dist;
    }
  }
  return best;
}

MaskFeatures run_pixel_decoder(const std::vector<FeatureLevel>& routed, int64_t input_h,
                               int64_t input_w, const PixelDecoderConfig& cfg,
                               const PixelDecoderWeights& weights,
                               const FeatureLevel* stride4_source) {
  validate(cfg);
  require_config(!routed.empty(), "pixel decoder needs at least one routed level");
  require_config(static_cast<int>(weights.layers.size()) == cfg.depth,
                 "pixel decoder weights do not match configured depth");
  require_config(weights.level_embed.dim(0) == static_cast<int64_t>(routed.size()),
                 "pixel decoder weights do not match the routed level count");
  for (const auto& l : routed) {
    require_shape(l.tensor.dim(0) == cfg.width,
                  "routed level channels must equal pixel decoder width");
  }
  require_config(cfg.stride4_mask_features == (stride4_source != nullptr),
                 "stride-4 source must be given exactly when stride-4 mask features are enabled");

  StageScope stage(Stage::pixel_decoder);
  const int64_t d = cfg.width;
  TokenSequence seq = flatten_levels(routed);

  Tensor pos({seq.num_tokens(), d});
  for (size_t l = 0; l < seq.levels.size(); ++l) {
    const LevelRange& r = seq.levels[l];
    const Tensor pe = flatten_hw(sine_positional_encoding(r.h, r.w, d));
    for (int64_t i = 0; i < r.length(); ++i) {
      for (int64_t c = 0; c < d; ++c) {
        pos.at(r.start + i, c) = pe.at(i, c) + weights.level_embed.at(static_cast<int64_t>(l), c);
      }
    }
  }
  for (const auto& layer : weights.layers) seq = deform_encoder_layer(seq, pos, layer);
  seq.tokens = weights.encoder_norm(seq.tokens);
  const std::vector<FeatureLevel> fused = unflatten_levels(seq, routed);

  std::vector<int64_t> strides;
  for (const auto& l : fused) strides.push_back(l.stride);

  // Top-down: start from the nearest fused level coarser than every mask
  // scale, if any, then walk the mask scales from coarse to fine.
  Tensor prev;
  int64_t coarse_stride = 0;
  for (const auto& l : fused) {
    if (l.stride > kMaskFeatureStrides.back() && (coarse_stride == 0 || l.stride < coarse_stride)) {
      coarse_stride = l.stride;
      prev = l.tensor;
    }
  }

  MaskFeatures out;
  for (int ti = 2; ti >= 0; --ti) {
    const int64_t s = kMaskFeatureStrides[static_cast<size_t>(ti)];
    const int64_t th = ceil_div(input_h, s), tw = ceil_div(input_w, s);
    Tensor src = fused[nearest_level(strides, s)].tensor;
    src = bilinear_resize(src, th, tw);
    Tensor lat = weights.lateral[static_cast<size_t>(ti)](src);
    if (!prev.empty()) add_inplace(lat, bilinear_resize(prev, th, tw));
    out.scales[static_cast<size_t>(ti)] = weights.smooth[static_cast<size_t>(ti)](lat);
    prev = out.scales[static_cast<size_t>(ti)];
  }

  if (cfg.stride4_mask_features) {
    require_config(weights.has_stride4, "pixel decoder weights lack the stride-4 branch");
    const int64_t th = ceil_div(input_h, 4), tw = ceil_div(input_w, 4);
    Tensor lat = weights.lateral4(bilinear_resize(stride4_source->tensor, th, tw));
    add_inplace(lat, bilinear_resize(out.scales[0], th, tw));
    out.per_pixel = weights.mask_proj(weights.smooth4(lat));
    out.per_pixel_stride = 4;
  } else {
    out.per_pixel = out.scales[0];
    out.per_pixel_stride = kMaskFeatureStrides[0];
  }
  return out;
}

}  // namespace lips
