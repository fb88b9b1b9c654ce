#include "lips/pipeline.hpp"

#include "lips/init.hpp"

namespace lips {
namespace {

uint64_t stream_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer keeps neighbouring seeds' streams unrelated.
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

ModelWeights build_model(const ModelConfig& cfg) {
  validate(cfg);
  ModelWeights w;
  w.encoder = build_toy_encoder(stream_seed(cfg.seed, 0), cfg.encoder_channels);
  w.compression = build_compression(stream_seed(cfg.seed, 1), cfg.routing, cfg.encoder_channels);
  w.pixel_decoder = build_pixel_decoder(stream_seed(cfg.seed, 2), cfg.pixel_decoder,
                                        static_cast<int>(cfg.routing.selected_levels.size()),
                                        cfg.encoder_channels[0]);
  w.query_decoder =
      build_query_decoder(stream_seed(cfg.seed, 3), cfg.query_decoder, cfg.pixel_decoder.width);
  return w;
}

Tensor synthetic_image(uint64_t seed, int64_t h, int64_t w) {
  WeightInit init(stream_seed(seed, 100));
  Tensor img({3, h, w});
  for (float& v : img.data()) v = 0.5f * (init.uniform(1.0f) + 1.0f);
  return img;
}

ForwardResult run_forward(const ModelConfig& cfg, const ModelWeights& weights, const Tensor& image,
                          const QueryDecoderOptions& options) {
  validate(cfg);
  ForwardResult r;
  CounterScope scope(r.counters);
  r.pyramid = run_encoder(weights.encoder, image);
  r.routed = route_and_compress(r.pyramid, cfg.routing, weights.compression);
  const FeatureLevel* s4 = cfg.pixel_decoder.stride4_mask_features ? &r.pyramid.level(1) : nullptr;
  r.mask_features = run_pixel_decoder(r.routed, image.dim(1), image.dim(2), cfg.pixel_decoder,
                                      weights.pixel_decoder, s4);
  r.decoder = run_query_decoder(r.mask_features, cfg.query_decoder, weights.query_decoder, options);
  return r;
}

}  // namespace lips
