#include "sculpt/conditioning.hpp"
#include "sculpt/synthetic.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace sculpt;

namespace {

Image random_image(std::uint64_t seed, int w, int h, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Image img(w, h, 3);
  for (double& v : img.pixels) v = lo + (hi - lo) * rng.uniform();
  return img;
}

double max_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

}  // namespace

TEST(ValidateInput, Rejects) {
  EXPECT_THROW(validate_input_image(Image(4, 16, 3)), ContractViolation);
  EXPECT_THROW(validate_input_image(Image(16, 16, 1)), ContractViolation);
  Image bad(16, 16, 3, 0.5);
  bad.pixels[5] = 1.5;
  EXPECT_THROW(validate_input_image(bad), ContractViolation);
  EXPECT_NO_THROW(validate_input_image(Image(8, 8, 3, 0.2)));
}

TEST(Preprocess, SquareAtModelResolutionIsNoOpResize) {
  const Image img = random_image(1, 128, 128, 0.0, 0.9);
  const auto p = preprocess(img);
  ASSERT_EQ(p.record.op_names(), (std::vector<std::string>{"resize"}));
  const auto& r = std::get<ResizeOp>(p.record.ops[0]);
  EXPECT_EQ(r.from_width, 128);
  EXPECT_EQ(r.to_width, 128);
  EXPECT_EQ(p.image.pixels, img.pixels);
}

TEST(Preprocess, LandscapeCropsCenterSquare) {
  const Image img = random_image(2, 200, 100, 0.0, 0.9);
  const auto p = preprocess(img);
  ASSERT_EQ(p.record.op_names(), (std::vector<std::string>{"crop", "resize"}));
  const auto& c = std::get<CropOp>(p.record.ops[0]);
  EXPECT_EQ(c.side, 100);
  EXPECT_EQ(c.x, 50);
  EXPECT_EQ(c.y, 0);
  EXPECT_EQ(p.image.width, 128);
  EXPECT_EQ(p.image.height, 128);
  EXPECT_EQ(replay(p.record, img).pixels, p.image.pixels);
}

TEST(Preprocess, ForegroundCropWithMargin) {
  Image img(100, 100, 3, 1.0);
  for (int y = 40; y < 60; ++y)
    for (int x = 20; x < 30; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.2;
  const auto p = preprocess(img);
  ASSERT_EQ(p.record.op_names(), (std::vector<std::string>{"crop", "resize"}));
  const auto& c = std::get<CropOp>(p.record.ops[0]);
  EXPECT_EQ(c.side, 24);  // ceil(1.2 * 20)
  EXPECT_EQ(c.x, 13);
  EXPECT_EQ(c.y, 38);
  EXPECT_FALSE(c.center_fallback);
}

TEST(Preprocess, EmptyForegroundFallsBackToCenterCrop) {
  const Image white(60, 40, 3, 1.0);
  const auto p = preprocess(white);
  ASSERT_EQ(p.record.op_names(), (std::vector<std::string>{"crop", "resize"}));
  const auto& c = std::get<CropOp>(p.record.ops[0]);
  EXPECT_TRUE(c.center_fallback);
  EXPECT_EQ(c.side, 40);
  EXPECT_EQ(c.x, 10);
}

TEST(Preprocess, BackgroundSnapIsRecordedAndReplayed) {
  Image img = random_image(3, 64, 64, 0.0, 0.5);
  for (int x = 0; x < 64; ++x)
    for (int c = 0; c < 3; ++c) img.at(0, x, c) = 0.97;
  const auto p = preprocess(img);
  ASSERT_EQ(p.record.op_names().front(), "background");
  const auto& bg = std::get<BackgroundOp>(p.record.ops[0]);
  int snapped = 0;
  for (auto m : bg.mask) snapped += m;
  EXPECT_EQ(snapped, 64);
  EXPECT_NE(bg.mask_id(), 0u);
  EXPECT_EQ(replay(p.record, img).pixels, p.image.pixels);

  Image edges(64, 64, 1, 0.5);
  const Image replayed = replay(TransformRecord{64, 64, {bg}}, edges);
  EXPECT_EQ(replayed.at(0, 10), 0.0);
  EXPECT_EQ(replayed.at(1, 10), 0.5);
}

TEST(Replay, WrongSizeIsContractViolation) {
  const auto p = preprocess(random_image(4, 90, 70, 0.0, 0.9));
  EXPECT_THROW(replay(p.record, Image(70, 90, 3)), ContractViolation);
}

TEST(Replay, RoundTripIsBitwiseOnSyntheticImages) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    SyntheticOptions o;
    o.width = 80 + static_cast<int>(s) * 17;
    o.height = 90 + static_cast<int>(s) * 9;
    o.stripes = s % 2 == 1;
    const Image img = synthetic_object(s, o);
    const auto p = preprocess(img);
    ASSERT_EQ(replay(p.record, img).pixels, p.image.pixels);
    const Image edges = replay(p.record, extract_edges(img));
    ASSERT_EQ(edges.width, p.image.width);
    ASSERT_EQ(edges.height, p.image.height);
    ASSERT_EQ(edges.channels, 1);
  }
}

TEST(SobelEdges, ConstantImageIsZero) {
  const Image e = sobel_edges(Image(20, 12, 3, 0.3));
  for (double v : e.pixels) ASSERT_EQ(v, 0.0);
}

TEST(SobelEdges, VerticalStepPeaksOnBoundary) {
  Image img(10, 6, 3, 0.0);
  for (int y = 0; y < 6; ++y)
    for (int x = 5; x < 10; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;
  const Image e = sobel_edges(img);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 10; ++x) EXPECT_EQ(e.at(y, x), (x == 4 || x == 5) ? 1.0 : 0.0) << x;
}

TEST(SobelEdges, MatchesConvolutionOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image img = random_image(10 + s, 17 + static_cast<int>(s), 13);
    const Image e = sobel_edges(img);
    const Image ref = oracle::sobel(img);
    EXPECT_LT(max_diff(e, ref), 1e-6);
    for (double v : e.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(SobelEdges, InvariantToBrightnessOffset) {
  const Image img = random_image(5, 24, 24, 0.0, 0.7);
  Image brighter = img;
  for (double& v : brighter.pixels) v += 0.25;
  EXPECT_LT(max_diff(sobel_edges(img), sobel_edges(brighter)), 1e-12);
}

TEST(EdgeRegistry, UnknownIdListsRegistered) {
  try {
    extract_edges(Image(8, 8, 3), "pidinet");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sobel"), std::string::npos);
  }
  EdgeRegistry::instance().add("flat", [](const Image& im) { return Image(im.width, im.height, 1, 0.0); });
  EXPECT_EQ(extract_edges(Image(8, 8, 3, 0.5), "flat").channels, 1);
}

TEST(ReferenceEmbedder, ShapeDependsOnlyOnConfig) {
  const ReferenceEmbedder emb(EmbedderConfig{});
  EXPECT_EQ(emb.tokens(), 64);
  const auto a = emb.embed(random_image(6, 128, 128), ConditionOrigin::style);
  const auto b = emb.embed(Image(128, 128, 3, 1.0), ConditionOrigin::style);
  EXPECT_EQ(a.tokens.rows(), 64);
  EXPECT_EQ(a.tokens.cols(), 32);
  EXPECT_EQ(b.tokens.rows(), 64);
  EXPECT_EQ(a.origin, ConditionOrigin::style);
}

TEST(ReferenceEmbedder, ZeroImageZeroBias) {
  EmbedderConfig cfg;
  cfg.bias = false;
  const ReferenceEmbedder emb(cfg);
  EXPECT_EQ(emb.embed(Image(128, 128, 3, 0.0), ConditionOrigin::content).tokens.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ReferenceEmbedder, DeterministicAndMatchesOracle) {
  const ReferenceEmbedder emb(EmbedderConfig{32, 8, 5, 11, true});
  const Image img = random_image(7, 32, 32);
  const auto a = emb.embed(img, ConditionOrigin::content);
  EXPECT_TRUE(oracle::bitwise_equal(a.tokens, emb.embed(img, ConditionOrigin::content).tokens));
  // patch t covers rows 8*(t/4).., cols 8*(t%4)..; features in (y, x, c) order
  Matrix patches(16, 192);
  for (int t = 0; t < 16; ++t) {
    int col = 0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) patches(t, col++) = img.at(8 * (t / 4) + y, 8 * (t % 4) + x, c);
  }
  Matrix ref = oracle::matmul(patches, emb.projection());
  for (Eigen::Index r = 0; r < ref.rows(); ++r) ref.row(r) += emb.bias().row(0);
  EXPECT_LT(oracle::max_abs_diff(a.tokens, ref), 1e-6);
}

TEST(ReferenceEmbedder, BadSizes) {
  EXPECT_THROW(ReferenceEmbedder(EmbedderConfig{100, 16, 32, 7, true}), ContractViolation);
  const ReferenceEmbedder emb(EmbedderConfig{});
  EXPECT_THROW(emb.embed(Image(120, 120, 3), ConditionOrigin::content), ContractViolation);
}

TEST(MeanEmbedding, TokenwiseMean) {
  const ConditionEmbedding a{Matrix::Constant(2, 3, 1.0), ConditionOrigin::style};
  const ConditionEmbedding b{Matrix::Constant(2, 3, 3.0), ConditionOrigin::style};
  const std::vector<ConditionEmbedding> both{a, b};
  EXPECT_EQ(mean_embedding(both).tokens, Matrix::Constant(2, 3, 2.0));
  const std::vector<ConditionEmbedding> mixed{a, {Matrix::Zero(3, 3), ConditionOrigin::style}};
  EXPECT_THROW(mean_embedding(mixed), ContractViolation);
}

TEST(ImageIo, PngRoundTripQuantizes) {
  const Image img = random_image(8, 13, 9);
  const auto path = std::filesystem::temp_directory_path() / "sculpt_test_roundtrip.png";
  write_png(path, img);
  const Image back = read_png(path);
  EXPECT_EQ(back.width, 13);
  EXPECT_EQ(back.height, 9);
  EXPECT_LE(max_diff(back, img), 0.5 / 255.0 + 1e-12);
  std::filesystem::remove(path);
  EXPECT_THROW(read_png(path), Error);
}

TEST(ResizeBilinear, IdentityAndConstant) {
  const Image img = random_image(9, 16, 16);
  EXPECT_EQ(resize_bilinear(img, 16, 16).pixels, img.pixels);
  const Image flat = resize_bilinear(Image(7, 5, 3, 0.4), 33, 21);
  for (double v : flat.pixels) ASSERT_NEAR(v, 0.4, 1e-15);
}
