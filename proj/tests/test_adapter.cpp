#include <memory>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace augsal;

namespace {

/// In-memory runtime with a fixed geometry that can be told to misbehave.
class FakeRuntime : public AdapterRuntime {
 public:
  std::size_t latent_channels = 4, factor = 2, low = 5, high = 7;
  bool bad_latent = false, bad_features = false, bad_decode = false;
  std::optional<std::pair<std::size_t, Tensor>> last_injection;

  Tensor encode(const Tensor& rgb) override {
    return Tensor(latent_channels + (bad_latent ? 1 : 0), rgb.height() / factor, rgb.width() / factor, 0.25);
  }
  Tensor decode(const Tensor& z) override {
    Tensor out(3, z.height() * factor + (bad_decode ? 1 : 0), z.width() * factor, 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i % 2 ? 1.7 : -0.4;
    return out;
  }
  Tensor noise(const Tensor& z) override { return z; }
  RuntimeInversion invert(const Tensor& rgb, const std::vector<std::string>& tokens) override {
    const std::size_t h = rgb.height() / factor, w = rgb.width() / factor;
    RuntimeInversion r{encode(rgb), encode(rgb), Tensor(low + (bad_features ? 1 : 0), h, w, 0.1),
                       Tensor(high, h, w, 0.2), {}};
    for (std::size_t i = 0; i < tokens.size(); ++i) r.attention.emplace_back(1, h, w, 1.0 / tokens.size());
    return r;
  }
  Tensor denoise(const Tensor& noisy, const std::vector<std::string>&,
                 const std::optional<std::pair<std::size_t, Tensor>>& inject) override {
    last_injection = inject;
    return noisy;
  }
  bool knows_token(const std::string& t) override { return t != "zebra"; }
  std::vector<std::pair<double, double>> latent_range() override { return {latent_channels, {0.0, 1.0}}; }
};

BackboneConfig adapter_config() {
  BackboneConfig c;
  c.implementation = BackboneKind::kPretrainedAdapter;
  c.downsample_factor = 2;
  c.feature_channels_low = 5;
  c.feature_channels_high = 7;
  return c;
}

ImageTensor gray(std::size_t h, std::size_t w) { return ImageTensor(Tensor(3, h, w, 0.5)); }

}  // namespace

TEST(Adapter, RequiresRuntimeAndMatchingImplementation) {
  EXPECT_ERROR_CODE(PretrainedAdapter(adapter_config(), nullptr), ErrorCode::kConfig);
  BackboneConfig tiny = adapter_config();
  tiny.implementation = BackboneKind::kTiny;
  EXPECT_ERROR_CODE(PretrainedAdapter(tiny, std::make_shared<FakeRuntime>()), ErrorCode::kConfig);
  EXPECT_ERROR_CODE(TinyBackbone{adapter_config()}, ErrorCode::kConfig);
}

TEST(Adapter, WellFormedRuntimePassesThrough) {
  auto rt = std::make_shared<FakeRuntime>();
  const PretrainedAdapter bb(adapter_config(), rt);
  const Prompt prompt = {"a", "red", "circle"};
  const Inversion inv = bb.invert_and_extract(gray(8, 12), prompt);
  EXPECT_EQ(inv.latent.height(), 4u);
  EXPECT_EQ(inv.features.low_level().channels(), 5u);
  EXPECT_EQ(inv.attention.size(), 3u);
  const ImageTensor img = bb.decode(inv.latent);
  for (double v : img.tensor().values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const AttentionInjection inj{Tensor(1, 4, 6, 0.5), 1};
  bb.denoise(inv.noisy_latent, prompt, inj);
  ASSERT_TRUE(rt->last_injection);
  EXPECT_EQ(rt->last_injection->first, 1u);
  EXPECT_FALSE(bb.in_vocabulary("zebra"));
  EXPECT_EQ(bb.latent_range().size(), 4u);
}

TEST(Adapter, MalformedRuntimeOutputsAreRejected) {
  auto rt = std::make_shared<FakeRuntime>();
  const PretrainedAdapter bb(adapter_config(), rt);
  rt->bad_latent = true;
  EXPECT_ERROR_CODE(bb.encode(gray(8, 8)), ErrorCode::kDimsMismatch);
  rt->bad_latent = false;
  rt->bad_features = true;
  EXPECT_ERROR_CODE(bb.invert_and_extract(gray(8, 8), {"a"}), ErrorCode::kDimsMismatch);
  rt->bad_features = false;
  rt->bad_decode = true;
  EXPECT_ERROR_CODE(bb.decode(LatentTensor(Tensor(4, 4, 4, 0.0))), ErrorCode::kDimsMismatch);
}

TEST(Adapter, ArgumentsAreCheckedBeforeCallingRuntime) {
  auto rt = std::make_shared<FakeRuntime>();
  const PretrainedAdapter bb(adapter_config(), rt);
  EXPECT_ERROR_CODE(bb.encode(gray(7, 8)), ErrorCode::kDimsMismatch);
  EXPECT_ERROR_CODE(bb.invert_and_extract(gray(8, 8), {}), ErrorCode::kInvalidArgument);
  const LatentTensor z(Tensor(4, 4, 4, 0.0));
  EXPECT_ERROR_CODE(bb.denoise(z, {"a"}, AttentionInjection{Tensor(1, 4, 4, 0.1), 1}), ErrorCode::kInvalidArgument);
  EXPECT_ERROR_CODE(bb.denoise(z, {"a"}, AttentionInjection{Tensor(1, 3, 4, 0.1), 0}), ErrorCode::kDimsMismatch);
  EXPECT_FALSE(rt->last_injection);
}

TEST(Adapter, DecoderFitWorksThroughTheInterface) {
  auto rt = std::make_shared<FakeRuntime>();
  const PretrainedAdapter bb(adapter_config(), rt);
  EXPECT_ERROR_CODE(bb.approximate_decoder_matrix(256, 4), ErrorCode::kRankDeficient);
}
