#include <gtest/gtest.h>

#include "lips/encoder.hpp"
#include "lips/tensor_io.hpp"
#include "oracles.hpp"

using namespace lips;

TEST(ToyEncoder, DeterministicAndSeedSensitive) {
  const auto a = to_named(build_toy_encoder(11));
  const auto b = to_named(build_toy_encoder(11));
  const auto c = to_named(build_toy_encoder(12));
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), c.size());
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs = differs || a[i].second != c[i].second;
  EXPECT_TRUE(differs);
}

TEST(ToyEncoder, ParameterCountMatchesClosedForm) {
  for (auto ch : {std::array<int64_t, 4>{32, 64, 128, 256}, std::array<int64_t, 4>{4, 8, 12, 20}}) {
    const int64_t expect = (3 * 9 * ch[0] + ch[0]) + (ch[0] * 9 * ch[0] + ch[0]) +
                           (ch[0] * 9 * ch[1] + ch[1]) + (ch[1] * 9 * ch[2] + ch[2]) +
                           (ch[2] * 9 * ch[3] + ch[3]);
    EXPECT_EQ(count_parameters(build_toy_encoder(1, ch)), expect);
    EXPECT_EQ(toy_encoder_parameter_count(ch), expect);
  }
  EXPECT_THROW(build_toy_encoder(1, {32, 32, 64, 128}), InvalidConfigError);
}

TEST(ToyEncoder, PyramidShapes) {
  const auto w = build_toy_encoder(3, {4, 8, 12, 16});
  const FeaturePyramid p = run_encoder(w, Tensor({3, 64, 64}, 0.5f));
  ASSERT_EQ(p.levels.size(), 4u);
  const int64_t sizes[] = {16, 8, 4, 2};
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(p.levels[i].level_index, static_cast<int>(i) + 1);
    EXPECT_EQ(p.levels[i].stride, kPyramidStrides[i]);
    EXPECT_EQ(p.levels[i].tensor.shape(), (Shape{w.channels[i], sizes[i], sizes[i]}));
  }
  const FeaturePyramid q = run_encoder(w, Tensor({3, 128, 256}, 0.5f));
  EXPECT_EQ(q.level(1).tensor.shape(), (Shape{4, 32, 64}));
  EXPECT_THROW(run_encoder(w, Tensor({3, 48, 64})), InvalidInputError);
  EXPECT_THROW(run_encoder(w, Tensor({1, 64, 64})), InvalidInputError);
}

TEST(ToyEncoder, ZeroImageZeroBiasGivesZeroFeatures) {
  auto w = build_toy_encoder(4, {4, 8, 12, 16});
  EncoderWeights::fields(w, [](const std::string& name, Tensor& t) {
    if (name.ends_with(".bias")) t = Tensor(t.shape(), 0.0f);
  });
  const FeaturePyramid p = run_encoder(w, Tensor({3, 64, 64}, 0.0f));
  for (const auto& l : p.levels) {
    for (float v : l.tensor.data()) EXPECT_EQ(v, 0.0f);
  }
}

namespace {

FeaturePyramid pyramid_640() {
  // Shapes only matter here; channels are kept tiny.
  FeaturePyramid p;
  const int64_t c[] = {2, 3, 4, 5};
  for (int i = 0; i < 4; ++i) {
    const int64_t s = kPyramidStrides[static_cast<size_t>(i)];
    p.levels.push_back({i + 1, s, Tensor({c[i], 640 / s, 640 / s}, 0.1f)});
  }
  return p;
}

}  // namespace

TEST(Routing, CompressionGeometry) {
  const FeaturePyramid p = pyramid_640();
  RoutingConfig cfg;
  cfg.output_channels = 4;
  const std::array<int64_t, 4> ch = {2, 3, 4, 5};
  const auto w = build_compression(5, cfg, ch);
  const auto two = route_and_compress(p, cfg, w);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].tensor.shape(), (Shape{4, 80, 80}));
  EXPECT_EQ(two[1].tensor.shape(), (Shape{4, 40, 40}));

  cfg.selected_levels = {1, 2, 3, 4};
  const auto all = route_and_compress(p, cfg, build_compression(5, cfg, ch));
  ASSERT_EQ(all.size(), 4u);
  const int64_t strides[] = {8, 16, 32, 96};
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(all[i].stride, strides[i]);
    EXPECT_EQ(all[i].tensor.dim(0), 4);
  }
  EXPECT_EQ(all[3].tensor.dim(1), 7);

  cfg.selected_levels = {1};
  EXPECT_EQ(route_and_compress(p, cfg, build_compression(5, cfg, ch)).size(), 1u);
}

TEST(Routing, LevelsAreIndependentAndTokensMonotone) {
  const FeaturePyramid p = pyramid_640();
  const std::array<int64_t, 4> ch = {2, 3, 4, 5};
  RoutingConfig full;
  full.output_channels = 4;
  full.selected_levels = {1, 2, 3, 4};
  const auto ref = route_and_compress(p, full, build_compression(9, full, ch));
  int64_t prev_tokens = 0;
  for (const std::vector<int>& set : {std::vector<int>{1}, {1, 2}, {1, 2, 3}, {1, 2, 3, 4}}) {
    RoutingConfig cfg = full;
    cfg.selected_levels = set;
    const auto out = route_and_compress(p, cfg, build_compression(9, cfg, ch));
    int64_t tokens = 0;
    for (size_t i = 0; i < out.size(); ++i) {
      EXPECT_EQ(out[i].tensor, ref[static_cast<size_t>(set[i] - 1)].tensor);
      tokens += out[i].tensor.dim(1) * out[i].tensor.dim(2);
    }
    EXPECT_GT(tokens, prev_tokens);
    prev_tokens = tokens;
  }
  RoutingConfig sparse = full;
  sparse.selected_levels = {2, 4};
  const auto out = route_and_compress(p, sparse, build_compression(9, sparse, ch));
  EXPECT_EQ(out[0].tensor, ref[1].tensor);
  EXPECT_EQ(out[1].tensor, ref[3].tensor);
}

TEST(Routing, Validation) {
  RoutingConfig cfg;
  cfg.selected_levels = {};
  EXPECT_THROW(validate(cfg), InvalidConfigError);
  cfg.selected_levels = {2, 1};
  EXPECT_THROW(validate(cfg), InvalidConfigError);
  cfg.selected_levels = {5};
  EXPECT_THROW(validate(cfg), InvalidConfigError);
  cfg.selected_levels = {1};
  cfg.compression_strides[0] = 0;
  EXPECT_THROW(validate(cfg), InvalidConfigError);

  RoutingConfig ok;
  FeaturePyramid partial;
  partial.levels.push_back({1, 4, Tensor({2, 8, 8})});
  const auto w = build_compression(1, ok, {2, 3, 4, 5});
  EXPECT_THROW(route_and_compress(partial, ok, w), InvalidConfigError);
}

TEST(WeightDir, RoundTrip) {
  const auto w = build_toy_encoder(21, {4, 8, 12, 16});
  const auto dir = std::filesystem::temp_directory_path() / "lips_weight_roundtrip";
  std::filesystem::remove_all(dir);
  save_weight_dir(dir, to_named(w));
  EncoderWeights loaded = build_toy_encoder(22, {4, 8, 12, 16});
  from_named(loaded, load_weight_dir(dir));
  EXPECT_EQ(to_named(loaded), to_named(w));
  std::filesystem::remove_all(dir);
}
