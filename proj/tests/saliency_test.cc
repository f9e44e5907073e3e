#include "specsim/saliency.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "specsim/idx.h"
#include "test_util.h"

namespace specsim {
namespace {

using testing::random_image;

const ImageShape kMnist{28, 28, 1};

Model zero_model(Arch arch, ImageShape shape = kMnist) {
  std::vector<Tensor> params;
  for (const Shape& s : Model::parameter_shapes(arch, shape, 10)) params.emplace_back(s);
  return Model(arch, shape, 10, std::move(params));
}

// CNN-A fitted to the synthetic fixture; shared by the tests that need a
// model with structured (non-random) sensitivities.
const Model& fixture_cnn() {
  static const Model model = [] {
    const Dataset data = load_mnist_dir(SPECSIM_FIXTURE_DIR, Split::kTrain);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.batch_size = 4;
    cfg.epochs = 4;
    return train(build(Arch::kCnnA, kMnist, 10, 3), data, cfg).model;
  }();
  return model;
}

Image flip_horizontal(const Image& x) {
  Image out(x.shape());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < x.height(); ++y)
      for (std::size_t i = 0; i < x.width(); ++i)
        out.at(y, i, c) = x.at(y, x.width() - 1 - i, c);
  return out;
}

double max_abs(const Image& a, const Image& b) {
  return max_abs_diff(a.values(), b.values());
}

TEST(SpectrumSaliencyTest, ZeroModelGivesZeroMap) {
  const Image x = random_image(kMnist, 1);
  for (Arch arch : {Arch::kMlp2, Arch::kCnnA, Arch::kCnnB}) {
    const Model m = zero_model(arch);
    for (double v : spectrum_saliency(m, x, 3).values.values()) EXPECT_EQ(v, 0.0);
    for (double v : spatial_saliency(m, x, 3).values.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(SpectrumSaliencyTest, ChainAndDctPathsAgree) {
  for (Arch arch : {Arch::kMlp2, Arch::kCnnA, Arch::kCnnB}) {
    const Model m = build(arch, kMnist, 10, 4);
    for (unsigned seed = 0; seed < 3; ++seed) {
      const Image x = random_image(kMnist, seed);
      const Image chain = spectrum_saliency_chain(forward_fn(m), x, seed, 10);
      EXPECT_LE(max_abs(chain, spectrum_saliency_dct(m, x, seed)), 1e-6) << arch_id(arch);
    }
  }
  const Model rgb = build(Arch::kCnnA, {12, 16, 3}, 10, 5);
  const Image x = random_image({12, 16, 3}, 9);
  EXPECT_LE(max_abs(spectrum_saliency(rgb, x, 2).values, spectrum_saliency_dct(rgb, x, 2)),
            1e-6);
}

TEST(SpectrumSaliencyTest, LinearModelMatchesHandComputation) {
  const ImageShape shape{4, 4, 1};
  const Tensor w = testing::random_tensor({3, 16}, 11);
  const Tensor b = testing::random_tensor({3}, 12);
  const testing::LinearObjective oracle(shape, w, b);
  const ForwardFn linear = [&](Tape& tape, Var in) {
    return tape.affine(tape.flatten(in), tape.leaf(w, false), tape.leaf(b, false));
  };
  const Image x = random_image(shape, 13);
  const Image got = spectrum_saliency_chain(linear, x, 1, 3);
  // D(W^T (p - e_y)) from the definition sum.
  const Image g = oracle.loss_and_grad(x, 1).grad;
  const std::vector<double> expected =
      testing::brute_force_dct2({g.values().begin(), g.values().end()}, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got[i], expected[i], 1e-12);
}

// Half the pixels are exactly 0, so relu(x) sits on its kink there. The chain
// path must evaluate the network at x itself, not at IDCT(DCT(x)), whose
// ~1e-16 round-trip error would decide those kinks at random.
TEST(SpectrumSaliencyTest, ChainPathEvaluatesNetworkAtExactInput) {
  const ImageShape shape{8, 8, 1};
  Image x = random_image(shape, 15);
  for (std::size_t i = 0; i < x.size(); i += 2) x[i] = 0.0;
  const Tensor w = testing::random_tensor({3, 64}, 16);
  const Tensor b = testing::random_tensor({3}, 17);
  Tensor seen;
  const ForwardFn net = [&](Tape& tape, Var in) {
    seen = tape.value(in);
    return tape.affine(tape.flatten(tape.relu(in)), tape.leaf(w, false), tape.leaf(b, false));
  };
  const Image chain = spectrum_saliency_chain(net, x, 2, 3);
  EXPECT_EQ(seen, x.to_tensor());

  Tape tape;
  const Var in = tape.leaf(x.to_tensor(), true);
  tape.backward(tape.softmax_cross_entropy(net(tape, in), 2));
  const Image direct = dct2(Image::from_tensor(tape.grad(in))).coefficients;
  EXPECT_LE(max_abs(chain, direct), 1e-12);
}

TEST(SpectrumSaliencyTest, IsDctOfSpatialMap) {
  const Model m = build(Arch::kCnnB, kMnist, 10, 6);
  const Image x = random_image(kMnist, 14);
  const SaliencyMap spatial = spatial_saliency(m, x, 7);
  const Image via_dct = dct2(spatial.values).coefficients;
  const SaliencyMap spectrum = spectrum_saliency(m, x, 7);
  EXPECT_LE(max_abs(via_dct, spectrum.values), 1e-6);
  EXPECT_EQ(spectrum.model, "cnn-b");
  EXPECT_EQ(spectrum.reduction, Reduction::kSingleImage);
}

TEST(SpectrumSaliencyTest, RejectsBadInput) {
  const Model m = build(Arch::kMlp2, kMnist, 10, 1);
  EXPECT_THROW(spectrum_saliency(m, random_image(kMnist, 1), 10), std::invalid_argument);
  EXPECT_THROW(spectrum_saliency(m, random_image({28, 20, 1}, 1), 0),
               std::invalid_argument);
}

TEST(SpatialSaliencyTest, FlipIsNotEquivariantOnTrainedCnn) {
  const Model& m = fixture_cnn();
  const Dataset data = load_mnist_dir(SPECSIM_FIXTURE_DIR, Split::kTest);
  const Image& x = data.images[0];
  const Image flipped_map = spatial_saliency(m, flip_horizontal(x), data.labels[0]).values;
  const Image map_flipped = flip_horizontal(spatial_saliency(m, x, data.labels[0]).values);
  EXPECT_GT(max_abs(flipped_map, map_flipped), 1e-3);
}

TEST(AverageSaliencyTest, OneImageWithoutTransformIsAbsoluteMap) {
  const Model m = build(Arch::kCnnA, kMnist, 10, 7);
  const Image x = random_image(kMnist, 15);
  const std::size_t label = 4;
  const SaliencyMap avg = average_saliency(m, std::span(&x, 1), std::span(&label, 1),
                                           std::nullopt, 1, Rng(1));
  const Image single = spectrum_saliency(m, x, label).values;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(avg.values[i], std::abs(single[i]), 1e-15);
  }
  EXPECT_EQ(avg.reduction, Reduction::kAveraged);
}

TEST(AverageSaliencyTest, IdentityTransformMatchesPlainAverage) {
  const Model m = build(Arch::kCnnA, kMnist, 10, 8);
  const std::vector<Image> xs{random_image(kMnist, 16), random_image(kMnist, 17)};
  const std::vector<std::size_t> ys{1, 8};
  SpectrumTransformParams identity;
  identity.sigma = 0.0;
  identity.rho = 0.0;
  const SaliencyMap a = average_saliency(m, xs, ys, std::nullopt, 1, Rng(1));
  const SaliencyMap b = average_saliency(m, xs, ys, identity, 1, Rng(2));
  EXPECT_LE(max_abs(a.values, b.values), 1e-6);
}

TEST(AverageSaliencyTest, PermutationInvariant) {
  const Model m = build(Arch::kMlp2, kMnist, 10, 9);
  std::vector<Image> xs;
  std::vector<std::size_t> ys;
  for (unsigned i = 0; i < 5; ++i) {
    xs.push_back(random_image(kMnist, 20 + i));
    ys.push_back(i);
  }
  const SaliencyMap a = average_saliency(m, xs, ys, std::nullopt, 1, Rng(1));
  std::reverse(xs.begin(), xs.end());
  std::reverse(ys.begin(), ys.end());
  const SaliencyMap b = average_saliency(m, xs, ys, std::nullopt, 1, Rng(1));
  EXPECT_LE(max_abs(a.values, b.values), 1e-12);
}

TEST(AverageSaliencyTest, TransformedDrawsAverageMapsAtTransformedInputs) {
  const Model m = build(Arch::kCnnA, kMnist, 10, 10);
  const Image x = random_image(kMnist, 30);
  const std::size_t label = 2;
  const SpectrumTransformParams params;
  const Rng rng(77);
  const SaliencyMap avg =
      average_saliency(m, std::span(&x, 1), std::span(&label, 1), params, 3, rng);
  Image expected(kMnist);
  for (std::size_t d = 0; d < 3; ++d) {
    Rng r = rng.derive(0, d);
    const Image z = spectrum_transform(x, params, r);
    const Image s = spectrum_saliency(m, z, label).values;
    for (std::size_t i = 0; i < x.size(); ++i) expected[i] += std::abs(s[i]) / 3.0;
  }
  EXPECT_LE(max_abs(avg.values, expected), 1e-12);
}

TEST(AverageSaliencyTest, RejectsEmptyOrMismatchedInput) {
  const Model m = build(Arch::kMlp2, kMnist, 10, 9);
  const std::vector<Image> xs{random_image(kMnist, 1)};
  const std::vector<std::size_t> none;
  EXPECT_THROW(average_saliency(m, {}, none, std::nullopt, 1, Rng(1)),
               std::invalid_argument);
  EXPECT_THROW(average_saliency(m, xs, none, std::nullopt, 1, Rng(1)),
               std::invalid_argument);
}

TEST(CosineTest, IdentityNegationAndScale) {
  const Image a = random_image(kMnist, 40, -1.0, 1.0);
  Image neg = a, scaled = a;
  for (double& v : neg.values()) v = -v;
  for (double& v : scaled.values()) v *= 3.0;
  EXPECT_NEAR(saliency_cosine(a, a), 1.0, 1e-12);
  EXPECT_NEAR(saliency_cosine(a, neg), -1.0, 1e-12);
  EXPECT_NEAR(saliency_cosine(a, scaled), 1.0, 1e-12);
}

TEST(CosineTest, SymmetricAndBounded) {
  const Image a = random_image(kMnist, 41, -1.0, 1.0);
  const Image b = random_image(kMnist, 42, -1.0, 1.0);
  EXPECT_DOUBLE_EQ(saliency_cosine(a, b), saliency_cosine(b, a));
  EXPECT_LE(std::abs(saliency_cosine(a, b)), 1.0);
}

TEST(CosineTest, ZeroNormAndShapeMismatchThrow) {
  EXPECT_THROW(saliency_cosine(Image(kMnist), random_image(kMnist, 1)),
               std::invalid_argument);
  EXPECT_THROW(saliency_cosine(random_image(kMnist, 1), random_image({28, 28, 3}, 1)),
               std::invalid_argument);
}

TEST(DiversityCheckTest, IdentityTransformHasNoDiversity) {
  const Model m = build(Arch::kCnnA, kMnist, 10, 11);
  SpectrumTransformParams identity;
  identity.sigma = 0.0;
  identity.rho = 0.0;
  const DiversityReport r =
      proposition1_check(m, random_image(kMnist, 50), 3, identity, 5, Rng(1));
  EXPECT_EQ(r.pairwise.size(), 10u);
  EXPECT_EQ(r.from_base.size(), 5u);
  for (double d : r.pairwise) EXPECT_LE(d, 1e-6);
  for (double d : r.from_base) EXPECT_LE(d, 1e-6);
}

TEST(DiversityCheckTest, RandomTransformsAreDistinct) {
  const Model& m = fixture_cnn();
  const DiversityReport r =
      proposition1_check(m, random_image(kMnist, 51), 3, SpectrumTransformParams{}, 6,
                         Rng(2));
  for (double d : r.pairwise) EXPECT_GT(d, 0.0);
  for (double d : r.from_base) EXPECT_GT(d, 0.0);
  EXPECT_GT(r.min_pairwise, 0.0);
  EXPECT_GE(r.mean_from_base, r.min_from_base);
}

TEST(DiversityCheckTest, SingleDrawReportsOnlyBaseDistance) {
  const Model m = build(Arch::kCnnA, kMnist, 10, 12);
  const DiversityReport r = proposition1_check(m, random_image(kMnist, 52), 1,
                                               SpectrumTransformParams{}, 1, Rng(3));
  EXPECT_TRUE(r.pairwise.empty());
  EXPECT_EQ(r.mean_pairwise, 0.0);
  ASSERT_EQ(r.from_base.size(), 1u);
  EXPECT_EQ(r.mean_from_base, r.from_base[0]);
}

TEST(DiversityCheckTest, TransformedMapIsMaskedDctOfGradient) {
  // With a single draw the reported distance is the cosine distance between
  // dct2(grad at x) and dct2(grad at T(x)) * M, rebuilt here by hand.
  const Model m = build(Arch::kMlp2, kMnist, 10, 13);
  const Image x = random_image(kMnist, 53);
  const SpectrumTransformParams params;
  const Rng rng(4);
  Rng r = rng.derive(0);
  const SpectrumDraw draw = sample_spectrum_draw(kMnist, params, r);
  const Image z = apply_spectrum_transform(x, draw);
  Image transformed = dct2(loss_and_input_grad(m, z, 6).grad).coefficients;
  for (std::size_t i = 0; i < transformed.size(); ++i) transformed[i] *= draw.mask[i];
  const Image base = dct2(loss_and_input_grad(m, x, 6).grad).coefficients;
  const DiversityReport report = proposition1_check(m, x, 6, params, 1, rng);
  EXPECT_NEAR(report.from_base[0], 1.0 - saliency_cosine(base, transformed), 1e-12);
}

TEST(PgmTest, HeaderAndPayloadLayout) {
  const Image map = random_image({5, 7, 1}, 60);
  const std::vector<std::uint8_t> bytes = encode_pgm(map);
  const std::string header = "P5\n7 5\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 35);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  const auto payload = std::span(bytes).subspan(header.size());
  EXPECT_EQ(*std::min_element(payload.begin(), payload.end()), 0);
  EXPECT_EQ(*std::max_element(payload.begin(), payload.end()), 255);
}

TEST(PgmTest, ConstantMapIsMidGray) {
  const std::vector<std::uint8_t> bytes = encode_pgm(Image({3, 4, 2}, 0.7));
  const PgmImage pgm = parse_pgm(bytes);
  EXPECT_EQ(pgm.width, 4u);
  EXPECT_EQ(pgm.height, 3u);
  for (std::uint8_t p : pgm.pixels) EXPECT_EQ(p, 128);
}

TEST(PgmTest, RoundTripWithinQuantisation) {
  const ImageShape shape{9, 6, 3};
  const Image map = random_image(shape, 61, -2.0, 5.0);
  const auto path = std::filesystem::temp_directory_path() / "specsim_pgm_test.pgm";
  export_pgm(map, path);
  const PgmImage pgm = read_pgm(path);
  std::filesystem::remove(path);
  // Oracle: channel mean, then min-max normalisation.
  std::vector<double> mean(shape.plane_size(), 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += map.plane(c)[i] / 3.0;
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  ASSERT_EQ(pgm.pixels.size(), mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double normalised = (mean[i] - *lo) / (*hi - *lo);
    EXPECT_LE(std::abs(pgm.pixels[i] / 255.0 - normalised), 1.0 / 255.0);
  }
}

TEST(PgmTest, MalformedFilesThrow) {
  const std::string bad_magic = "P2\n1 1\n255\nx";
  EXPECT_THROW(parse_pgm(std::span(reinterpret_cast<const std::uint8_t*>(bad_magic.data()),
                                   bad_magic.size())),
               std::runtime_error);
  std::vector<std::uint8_t> short_payload = encode_pgm(random_image({4, 4, 1}, 1));
  short_payload.pop_back();
  EXPECT_THROW(parse_pgm(short_payload), std::runtime_error);
  EXPECT_THROW(read_pgm("/nonexistent/x.pgm"), std::runtime_error);
}

}  // namespace
}  // namespace specsim
