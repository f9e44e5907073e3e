#include "specsim/harness.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "specsim/idx.h"
#include "test_util.h"

namespace specsim {
namespace {

const std::filesystem::path kFixture = SPECSIM_FIXTURE_DIR;
const ImageShape kMnist{28, 28, 1};

struct Zoo {
  Model cnn_a;
  Model mlp;
};

// Two small models fitted to the synthetic fixture.
const Zoo& zoo() {
  static const Zoo z = [] {
    const Dataset data = load_mnist_dir(kFixture, Split::kTrain);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.batch_size = 4;
    cfg.epochs = 4;
    return Zoo{train(build(Arch::kCnnA, kMnist, 10, 1), data, cfg).model,
               train(build(Arch::kMlp2, kMnist, 10, 2), data, cfg).model};
  }();
  return z;
}

Dataset test_images(std::size_t n) {
  return load_mnist_dir(kFixture, Split::kTest).head(n);
}

AttackConfig quick_s2i() {
  AttackConfig cfg;
  cfg.iterations = 3;
  cfg.spectrum.n_transforms = 2;
  cfg.enabled.s2i = true;
  return cfg;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) << 24 | b[at + 1] << 16 | b[at + 2] << 8 |
         b[at + 3];
}

IdxError::Kind idx_error_kind(const std::vector<std::uint8_t>& images,
                              const std::vector<std::uint8_t>& labels) {
  const auto dir = std::filesystem::temp_directory_path() / "specsim_idx_test";
  std::filesystem::create_directories(dir);
  write_file(dir / "i.idx", images);
  write_file(dir / "l.idx", labels);
  try {
    load_idx(dir / "i.idx", dir / "l.idx");
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return IdxError::Kind::kIo;
}

TEST(IdxTest, FixtureParsesBitExactly) {
  const std::vector<std::uint8_t> images = read_file(kFixture / "train-images-idx3-ubyte");
  const std::vector<std::uint8_t> labels = read_file(kFixture / "train-labels-idx1-ubyte");
  // Header fields read straight from the bytes.
  EXPECT_EQ(be32(images, 0), 0x00000803u);
  EXPECT_EQ(be32(images, 4), 48u);
  EXPECT_EQ(be32(images, 8), 28u);
  EXPECT_EQ(be32(labels, 0), 0x00000801u);
  const IdxImages parsed = parse_idx_images(images);
  EXPECT_EQ(parsed.count, 48u);
  EXPECT_EQ(parsed.pixels.size(), 48u * 784);
  std::uint64_t sum = 0;
  for (std::uint8_t p : parsed.pixels) sum += p;
  EXPECT_EQ(sum, 1099078u);
  EXPECT_EQ(encode_idx_images(parsed), images);
  EXPECT_EQ(encode_idx_labels(parse_idx_labels(labels)), labels);
}

TEST(IdxTest, LoadsScaledImages) {
  const Dataset data = load_mnist_dir(kFixture, Split::kTrain);
  ASSERT_EQ(data.size(), 48u);
  EXPECT_EQ(data.image_shape(), kMnist);
  double first_sum = 0.0;
  for (double v : data.images[0].values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    first_sum += v * 255.0;
  }
  EXPECT_NEAR(first_sum, 22805.0, 1e-6);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(data.labels[i], i % 10);
}

TEST(IdxTest, FourImageFixtureAndExactScaling) {
  IdxImages images{4, 28, 28, std::vector<std::uint8_t>(4 * 784, 0)};
  images.pixels[0] = 255;
  images.pixels[785] = 51;
  const std::vector<std::uint8_t> labels{3, 1, 4, 1};
  const auto dir = std::filesystem::temp_directory_path() / "specsim_idx_four";
  std::filesystem::create_directories(dir);
  write_file(dir / "i.idx", encode_idx_images(images));
  write_file(dir / "l.idx", encode_idx_labels(labels));
  const Dataset data = load_idx(dir / "i.idx", dir / "l.idx");
  ASSERT_EQ(data.size(), 4u);
  for (const Image& img : data.images) EXPECT_EQ(img.shape(), kMnist);
  EXPECT_EQ(data.images[0][0], 1.0);
  EXPECT_EQ(data.images[1][1], 0.2);
  EXPECT_EQ(data.labels, (std::vector<std::size_t>{3, 1, 4, 1}));
}

TEST(IdxTest, StructuredErrors) {
  const std::vector<std::uint8_t> images = read_file(kFixture / "t10k-images-idx3-ubyte");
  const std::vector<std::uint8_t> labels = read_file(kFixture / "t10k-labels-idx1-ubyte");

  std::vector<std::uint8_t> bad = images;
  bad[3] = 0x01;  // label magic in the image file
  EXPECT_EQ(idx_error_kind(bad, labels), IdxError::Kind::kWrongMagic);
  EXPECT_EQ(idx_error_kind(images, images), IdxError::Kind::kWrongMagic);

  bad.assign(images.begin(), images.end() - 1);
  EXPECT_EQ(idx_error_kind(bad, labels), IdxError::Kind::kTruncated);
  bad.assign(images.begin(), images.begin() + 6);
  EXPECT_EQ(idx_error_kind(bad, labels), IdxError::Kind::kTruncated);

  std::vector<std::uint8_t> short_labels(labels.begin(), labels.end() - 1);
  short_labels[7] -= 1;  // consistent file with one fewer label
  EXPECT_EQ(idx_error_kind(images, short_labels), IdxError::Kind::kCountMismatch);

  bad = labels;
  bad.back() = 10;
  EXPECT_EQ(idx_error_kind(images, bad), IdxError::Kind::kBadLabel);

  try {
    load_mnist_dir("/nonexistent", Split::kTest);
    ADD_FAILURE() << "no error";
  } catch (const IdxError& e) {
    EXPECT_EQ(e.kind(), IdxError::Kind::kIo);
  }
}

TEST(TransferTest, ZeroBudgetNeverSucceeds) {
  const Zoo& z = zoo();
  AttackConfig cfg = quick_s2i();
  cfg.epsilon = 0.0;
  const TransferReport r = evaluate_transfer({{"cnn-a", &z.cnn_a}},
                                             {{"cnn-a", &z.cnn_a}, {"mlp-2", &z.mlp}},
                                             test_images(16), cfg, 1);
  ASSERT_EQ(r.victims.size(), 2u);
  for (const VictimResult& v : r.victims) {
    EXPECT_GT(v.eligible, 0u);
    EXPECT_EQ(v.successes, 0u);
    EXPECT_EQ(v.success_rate(), 0.0);
  }
}

TEST(TransferTest, ReportFieldsAndWhiteBoxFlag) {
  const Zoo& z = zoo();
  const Dataset data = test_images(16);
  const TransferReport r = evaluate_transfer(
      {{"cnn-a", &z.cnn_a}}, {{"self", &z.cnn_a}, {"mlp-2", &z.mlp}}, data, quick_s2i(), 3);
  EXPECT_EQ(r.substitute, "cnn-a");
  EXPECT_EQ(r.seed, 3u);
  EXPECT_EQ(r.sample_count, 16u);
  EXPECT_TRUE(r.victims[0].white_box);
  EXPECT_FALSE(r.victims[1].white_box);
  EXPECT_EQ(r.mean_black_box(), r.victims[1].success_rate());
  // Eligibility is the victim's clean accuracy on the evaluated images.
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    correct += predict_label(z.mlp, data.images[i]) == data.labels[i];
  }
  EXPECT_EQ(r.victims[1].eligible, correct);
  for (const VictimResult& v : r.victims) {
    EXPECT_LE(v.successes, v.eligible);
    EXPECT_GE(v.success_rate(), 0.0);
    EXPECT_LE(v.success_rate(), 1.0);
  }
}

TEST(TransferTest, WhiteBoxCountMatchesDirectAttacks) {
  const Zoo& z = zoo();
  const Dataset data = test_images(8);
  AttackConfig cfg;
  cfg.iterations = 3;
  const TransferReport r =
      evaluate_transfer({{"a", &z.cnn_a}}, {{"a", &z.cnn_a}}, data, cfg, 5);
  const ModelObjective objective(z.cnn_a);
  std::size_t eligible = 0, successes = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict_label(z.cnn_a, data.images[i]) != data.labels[i]) continue;
    ++eligible;
    const AdversarialResult adv =
        attack_ifgsm(objective, data.images[i], data.labels[i], cfg, Rng(5).derive(i));
    successes += adv.success;
  }
  EXPECT_EQ(r.victims[0].eligible, eligible);
  EXPECT_EQ(r.victims[0].successes, successes);
}

TEST(TransferTest, DeterministicAndThreadInvariant) {
  const Zoo& z = zoo();
  const Dataset data = test_images(12);
  AttackConfig cfg = quick_s2i();
  cfg.enabled.di = true;
  const std::vector<NamedModel> sub{{"cnn-a", &z.cnn_a}};
  const std::vector<NamedModel> victims{{"mlp-2", &z.mlp}};
  const TransferReport a = evaluate_transfer(sub, victims, data, cfg, 9, 1);
  const TransferReport b = evaluate_transfer(sub, victims, data, cfg, 9, 1);
  const TransferReport c = evaluate_transfer(sub, victims, data, cfg, 9, 3);
  std::ostringstream sa, sb, sc;
  write_transfer_csv(a, sa);
  write_transfer_csv(b, sb);
  write_transfer_csv(c, sc);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str(), sc.str());
}

TEST(TransferTest, EnsembleSubstituteJoinsNames) {
  const Zoo& z = zoo();
  const TransferReport r =
      evaluate_transfer({{"cnn-a", &z.cnn_a}, {"mlp-2", &z.mlp}}, {{"mlp-2", &z.mlp}},
                        test_images(4), quick_s2i(), 1);
  EXPECT_EQ(r.substitute, "cnn-a+mlp-2");
  EXPECT_TRUE(r.victims[0].white_box);
  EXPECT_EQ(r.mean_black_box(), 0.0);
}

TEST(TransferTest, MismatchesThrow) {
  const Zoo& z = zoo();
  const Model other = build(Arch::kMlp2, {14, 14, 1}, 10, 1);
  const Dataset data = test_images(4);
  EXPECT_THROW(evaluate_transfer({}, {{"v", &z.mlp}}, data, quick_s2i(), 1),
               std::invalid_argument);
  EXPECT_THROW(evaluate_transfer({{"s", &other}}, {{"v", &z.mlp}}, data, quick_s2i(), 1),
               std::invalid_argument);
  EXPECT_THROW(evaluate_transfer({{"s", &z.cnn_a}}, {{"v", &other}}, data, quick_s2i(), 1),
               std::invalid_argument);
}

TEST(AblationTest, SingleValueGridEqualsEvaluateTransfer) {
  const Zoo& z = zoo();
  const Dataset data = test_images(8);
  const std::vector<NamedModel> sub{{"cnn-a", &z.cnn_a}};
  const std::vector<NamedModel> victims{{"mlp-2", &z.mlp}};
  const std::vector<AblationPoint> points = ablate(AblationParameter::kRho, {0.3}, sub,
                                                   victims, data, quick_s2i(), 4);
  ASSERT_EQ(points.size(), 1u);
  AttackConfig direct = quick_s2i();
  direct.spectrum.rho = 0.3;
  const TransferReport r = evaluate_transfer(sub, victims, data, direct, 4);
  EXPECT_EQ(points[0].report.victims[0].successes, r.victims[0].successes);
  EXPECT_EQ(points[0].report.victims[0].eligible, r.victims[0].eligible);
}

TEST(AblationTest, ParameterNamesAndValues) {
  for (AblationParameter p : {AblationParameter::kSigma, AblationParameter::kRho,
                              AblationParameter::kNTransforms,
                              AblationParameter::kBlockSize}) {
    EXPECT_EQ(parse_parameter(parameter_name(p)), p);
  }
  EXPECT_EQ(parse_parameter("n"), AblationParameter::kNTransforms);
  EXPECT_EQ(parse_parameter("block"), AblationParameter::kBlockSize);
  EXPECT_THROW(parse_parameter("gamma"), std::invalid_argument);

  const AttackConfig base;
  EXPECT_EQ(with_parameter(base, AblationParameter::kNTransforms, 5).spectrum.n_transforms,
            5u);
  EXPECT_EQ(with_parameter(base, AblationParameter::kBlockSize, 7).spectrum.block_size, 7u);
  EXPECT_DOUBLE_EQ(with_parameter(base, AblationParameter::kSigma, 0.1).spectrum.sigma,
                   0.1);
  EXPECT_THROW(with_parameter(base, AblationParameter::kNTransforms, 2.5),
               std::invalid_argument);
}

TEST(CsvTest, TransferSchema) {
  TransferReport r;
  r.victims = {{"cnn-b", false, 180, 61}, {"cnn-a", true, 190, 189}};
  std::ostringstream out;
  write_transfer_csv(r, out);
  EXPECT_EQ(out.str(),
            "victim,white_box,eligible,successes,success_rate\n"
            "cnn-b,0,180,61,0.3389\n"
            "cnn-a,1,190,189,0.9947\n");
}

TEST(CsvTest, AblationSchema) {
  TransferReport r;
  r.victims = {{"cnn-b", false, 4, 1}, {"mlp-2", false, 5, 2}};
  std::ostringstream out;
  write_ablation_csv(AblationParameter::kSigma, {{16.0 / 255.0, r}}, out);
  EXPECT_EQ(out.str(),
            "parameter,value,victim,white_box,eligible,successes,success_rate\n"
            "sigma,16,cnn-b,0,4,1,0.2500\n"
            "sigma,16,mlp-2,0,5,2,0.4000\n"
            "sigma,16,mean_black_box,0,,,0.3250\n");
}

TEST(CsvTest, RatesUseFourDecimals) {
  EXPECT_EQ(format_rate(0.0), "0.0000");
  EXPECT_EQ(format_rate(1.0), "1.0000");
  EXPECT_EQ(format_rate(2.0 / 3.0), "0.6667");
}

}  // namespace
}  // namespace specsim
