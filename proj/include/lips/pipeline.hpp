#pragma once

#include <cstdint>
#include <vector>

#include "lips/encoder.hpp"
#include "lips/instrument.hpp"
#include "lips/model_config.hpp"
#include "lips/pixel_decoder.hpp"
#include "lips/query_decoder.hpp"

namespace lips {

struct ModelWeights {
  EncoderWeights encoder;
  CompressionWeights compression;
  PixelDecoderWeights pixel_decoder;
  QueryDecoderWeights query_decoder;

  template <class Self, class F>
  static void fields(Self& self, F&& f) {
    EncoderWeights::fields(self.encoder, f);
    CompressionWeights::fields(self.compression, f);
    PixelDecoderWeights::fields(self.pixel_decoder, f);
    QueryDecoderWeights::fields(self.query_decoder, f);
  }
};

/// Seeded synthetic weights for every stage; each stage draws from its own
/// stream derived from cfg.seed.
ModelWeights build_model(const ModelConfig& cfg);

/// Deterministic 3 x h x w image with values in [0, 1).
Tensor synthetic_image(uint64_t seed, int64_t h, int64_t w);

struct ForwardResult {
  FeaturePyramid pyramid;
  std::vector<FeatureLevel> routed;
  MaskFeatures mask_features;
  DecoderOutput decoder;
  MacCounters counters;
};

/// Encoder, routing, pixel decoder and query decoder on `image`, with
/// instrumented counters for the whole pass.
ForwardResult run_forward(const ModelConfig& cfg, const ModelWeights& weights, const Tensor& image,
                          const QueryDecoderOptions& options = {});

}  // namespace lips
