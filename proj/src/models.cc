#include "specsim/models.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "json.hpp"
#include "specsim/rng.h"

namespace specsim {
namespace {

constexpr std::size_t kMlpHidden = 128;
constexpr std::size_t kCnnBHidden = 64;
constexpr char kMagicPrefix[] = "SAKW";
constexpr char kMagicVersion[] = "0001";

std::size_t fan_in(const Shape& weight_shape) {
  // conv {O, C, k, k} or affine {out, in}
  return shape_size(weight_shape) / weight_shape[0];
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  return v;
}

void check_input(const Model& model, const Image& x) {
  if (x.shape() != model.input_shape()) {
    throw std::invalid_argument("model expects input " +
                                shape_string(model.input_shape()) + ", got " +
                                shape_string(x.shape()));
  }
}

}  // namespace

std::string_view arch_id(Arch arch) {
  switch (arch) {
    case Arch::kMlp2: return "mlp-2";
    case Arch::kCnnA: return "cnn-a";
    case Arch::kCnnB: return "cnn-b";
  }
  return "unknown";
}

Arch parse_arch(std::string_view id) {
  if (id == "mlp-2") return Arch::kMlp2;
  if (id == "cnn-a") return Arch::kCnnA;
  if (id == "cnn-b") return Arch::kCnnB;
  throw std::invalid_argument("unknown architecture '" + std::string(id) +
                              "' (expected mlp-2, cnn-a or cnn-b)");
}

std::vector<Shape> Model::parameter_shapes(Arch arch, ImageShape in,
                                           std::size_t k) {
  if (in.size() == 0 || k < 2) {
    throw std::invalid_argument("model needs a non-empty input and K >= 2, got " +
                                shape_string(in) + ", K=" + std::to_string(k));
  }
  const std::size_t c = in.channels;
  switch (arch) {
    case Arch::kMlp2:
      return {{kMlpHidden, in.size()}, {kMlpHidden}, {k, kMlpHidden}, {k}};
    case Arch::kCnnA: {
      if (in.height < 4 || in.width < 4) break;
      const std::size_t flat = 32 * (in.height / 2 / 2) * (in.width / 2 / 2);
      return {{16, c, 3, 3}, {16}, {32, 16, 3, 3}, {32}, {k, flat}, {k}};
    }
    case Arch::kCnnB: {
      if (in.height < 4 || in.width < 4) break;
      const std::size_t flat = 16 * (in.height / 2 / 2) * (in.width / 2 / 2);
      return {{8, c, 5, 5},  {8},          {16, 8, 3, 3}, {16},
              {16, 16, 3, 3}, {16},        {kCnnBHidden, flat},
              {kCnnBHidden},  {k, kCnnBHidden}, {k}};
    }
  }
  throw std::invalid_argument("input " + shape_string(in) +
                              " too small for " + std::string(arch_id(arch)));
}

Model::Model(Arch arch, ImageShape input_shape, std::size_t num_classes,
             std::vector<Tensor> parameters)
    : arch_(arch),
      input_shape_(input_shape),
      num_classes_(num_classes),
      parameters_(std::move(parameters)) {
  const auto shapes = parameter_shapes(arch, input_shape, num_classes);
  if (shapes.size() != parameters_.size()) {
    throw std::invalid_argument("model expects " + std::to_string(shapes.size()) +
                                " parameter tensors, got " +
                                std::to_string(parameters_.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i] != parameters_[i].shape()) {
      throw std::invalid_argument("parameter " + std::to_string(i) + " has shape " +
                                  shape_string(parameters_[i].shape()) +
                                  ", expected " + shape_string(shapes[i]));
    }
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters_) n += p.size();
  return n;
}

Var Model::forward(Tape& tape, Var input, bool param_grads,
                   std::vector<Var>* param_vars) const {
  std::vector<Var> p;
  p.reserve(parameters_.size());
  for (const Tensor& t : parameters_) p.push_back(tape.borrowed_leaf(t, param_grads));
  if (param_vars) *param_vars = p;

  Var h = input;
  switch (arch_) {
    case Arch::kMlp2:
      h = tape.relu(tape.affine(tape.flatten(h), p[0], p[1]));
      return tape.affine(h, p[2], p[3]);
    case Arch::kCnnA:
      h = tape.max_pool2d(tape.relu(tape.conv2d(h, p[0], p[1])));
      h = tape.max_pool2d(tape.relu(tape.conv2d(h, p[2], p[3])));
      return tape.affine(tape.flatten(h), p[4], p[5]);
    case Arch::kCnnB:
      h = tape.max_pool2d(tape.relu(tape.conv2d(h, p[0], p[1])));
      h = tape.relu(tape.conv2d(h, p[2], p[3]));
      h = tape.max_pool2d(tape.relu(tape.conv2d(h, p[4], p[5])));
      h = tape.relu(tape.affine(tape.flatten(h), p[6], p[7]));
      return tape.affine(h, p[8], p[9]);
  }
  throw std::logic_error("unhandled architecture");
}

Tensor Model::logits(const Image& x) const {
  check_input(*this, x);
  Tape tape;
  const Var in = tape.leaf(x.to_tensor(), false);
  return tape.value(forward(tape, in));
}

Model build(Arch arch, ImageShape input_shape, std::size_t num_classes,
            std::uint64_t seed) {
  const auto shapes = Model::parameter_shapes(arch, input_shape, num_classes);
  Rng rng(seed);
  std::vector<Tensor> params;
  double bound = 1.0;
  for (const Shape& s : shapes) {
    // Biases follow their weight tensor and share its fan-in bound.
    if (s.size() > 1) bound = 1.0 / std::sqrt(static_cast<double>(fan_in(s)));
    Tensor t(s);
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    params.push_back(std::move(t));
  }
  return Model(arch, input_shape, num_classes, std::move(params));
}

std::size_t argmax(const Tensor& logits) {
  const auto v = logits.values();
  return static_cast<std::size_t>(
      std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

Tensor predict(const Model& model, const Image& x) { return model.logits(x); }

std::size_t predict_label(const Model& model, const Image& x) {
  return argmax(model.logits(x));
}

double accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) {
    throw std::invalid_argument("accuracy: empty evaluation set");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict_label(model, data.images[i]) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

LossAndGrad loss_and_input_grad(const Model& model, const Image& x,
                                std::size_t label) {
  check_input(model, x);
  if (label >= model.num_classes()) {
    throw std::invalid_argument("label " + std::to_string(label) +
                                " outside [0, " +
                                std::to_string(model.num_classes()) + ")");
  }
  Tape tape;
  const Var in = tape.leaf(x.to_tensor(), true);
  const Var loss = tape.softmax_cross_entropy(model.forward(tape, in), label);
  tape.backward(loss);
  return {tape.value(loss)[0], Image::from_tensor(tape.grad(in))};
}

namespace {

ParamGrads batch_grads(const Model& model, std::span<const Image> images,
                       std::span<const std::size_t> labels,
                       std::size_t* correct) {
  if (images.empty() || images.size() != labels.size()) {
    throw std::invalid_argument("param_grads: need a non-empty batch with one "
                                "label per image");
  }
  ParamGrads out;
  for (const Tensor& p : model.parameters()) out.grads.emplace_back(p.shape());
  const double inv = 1.0 / static_cast<double>(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_input(model, images[i]);
    if (labels[i] >= model.num_classes()) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) +
                                  " outside [0, " +
                                  std::to_string(model.num_classes()) + ")");
    }
    Tape tape;
    const Var in = tape.leaf(images[i].to_tensor(), false);
    std::vector<Var> pv;
    const Var logits = model.forward(tape, in, /*param_grads=*/true, &pv);
    if (correct && argmax(tape.value(logits)) == labels[i]) ++*correct;
    const Var loss = tape.softmax_cross_entropy(logits, labels[i]);
    tape.backward(loss);
    out.loss += inv * tape.value(loss)[0];
    for (std::size_t k = 0; k < pv.size(); ++k) {
      const Tensor g = tape.grad(pv[k]);
      Tensor& acc = out.grads[k];
      for (std::size_t j = 0; j < g.size(); ++j) acc[j] += inv * g[j];
    }
  }
  return out;
}

}  // namespace

ParamGrads param_grads(const Model& model, std::span<const Image> images,
                       std::span<const std::size_t> labels) {
  return batch_grads(model, images, labels, nullptr);
}

void TrainConfig::validate() const {
  // A zero rate is accepted (null update); negative or NaN rates are not.
  if (!(learning_rate >= 0.0)) {
    throw std::invalid_argument("learning rate must be >= 0");
  }
  if (batch_size == 0) {
    throw std::invalid_argument("batch size must be >= 1");
  }
}

double sgd_step(Model& model, std::span<const Image> images,
                std::span<const std::size_t> labels, double learning_rate) {
  ParamGrads g = param_grads(model, images, labels);
  auto& params = model.mutable_parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t j = 0; j < params[k].size(); ++j) {
      params[k][j] -= learning_rate * g.grads[k][j];
    }
  }
  return g.loss;
}

TrainResult train(Model model, const Dataset& data, const TrainConfig& config) {
  config.validate();
  if (data.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  data.validate();
  if (data.image_shape() != model.input_shape()) {
    throw std::invalid_argument("train: dataset images are " +
                                shape_string(data.image_shape()) +
                                " but the model expects " +
                                shape_string(model.input_shape()));
  }
  const Rng master(config.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<EpochLog> log;
  std::vector<Image> batch_images;
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = master.derive(epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch_images.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_images.push_back(data.images[order[i]]);
        batch_labels.push_back(data.labels[order[i]]);
      }
      ParamGrads g = batch_grads(model, batch_images, batch_labels, &correct);
      auto& params = model.mutable_parameters();
      for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t j = 0; j < params[k].size(); ++j) {
          params[k][j] -= config.learning_rate * g.grads[k][j];
        }
      }
      loss_sum += g.loss;
      ++batches;
    }
    log.push_back({epoch + 1, loss_sum / static_cast<double>(batches),
                   static_cast<double>(correct) / static_cast<double>(data.size())});
  }
  return {std::move(model), std::move(log)};
}

std::vector<std::uint8_t> serialize_weights(const Model& model) {
  nlohmann::json header;
  header["arch"] = std::string(arch_id(model.arch()));
  const ImageShape& s = model.input_shape();
  header["input_shape"] = {s.height, s.width, s.channels};
  header["num_classes"] = model.num_classes();
  nlohmann::json shapes = nlohmann::json::array();
  for (const Tensor& p : model.parameters()) shapes.push_back(p.shape());
  header["tensors"] = shapes;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 + text.size() + 8 * model.parameter_count());
  out.insert(out.end(), kMagicPrefix, kMagicPrefix + 4);
  out.insert(out.end(), kMagicVersion, kMagicVersion + 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const Tensor& p : model.parameters()) {
    for (double v : p.values()) put_f64(out, v);
  }
  return out;
}

Model deserialize_weights(std::span<const std::uint8_t> bytes) {
  using Kind = WeightFileError::Kind;
  if (bytes.size() < 8) {
    throw WeightFileError(Kind::kTruncated, "weight file shorter than its magic");
  }
  if (!std::equal(kMagicPrefix, kMagicPrefix + 4, bytes.begin())) {
    throw WeightFileError(Kind::kMagicMismatch, "not a weight file (bad magic)");
  }
  if (!std::equal(kMagicVersion, kMagicVersion + 4, bytes.begin() + 4)) {
    throw WeightFileError(
        Kind::kVersionMismatch,
        "unsupported weight file version '" +
            std::string(bytes.begin() + 4, bytes.begin() + 8) + "'");
  }
  if (bytes.size() < 12) {
    throw WeightFileError(Kind::kTruncated, "weight file header length missing");
  }
  const std::size_t header_len = get_le(bytes.subspan(8), 4);
  if (bytes.size() < 12 + header_len) {
    throw WeightFileError(Kind::kTruncated, "weight file header truncated");
  }
  const std::string text(bytes.begin() + 12,
                         bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));

  Arch arch;
  ImageShape input;
  std::size_t classes = 0;
  std::vector<Shape> listed;
  try {
    const auto header = nlohmann::json::parse(text);
    arch = parse_arch(header.at("arch").get<std::string>());
    const auto in = header.at("input_shape").get<std::vector<std::size_t>>();
    if (in.size() != 3) throw std::invalid_argument("input_shape must have 3 entries");
    input = {in[0], in[1], in[2]};
    classes = header.at("num_classes").get<std::size_t>();
    listed = header.at("tensors").get<std::vector<Shape>>();
  } catch (const std::exception& e) {
    throw WeightFileError(Kind::kHeaderInvalid,
                          std::string("invalid weight file header: ") + e.what());
  }

  std::vector<Shape> expected;
  try {
    expected = Model::parameter_shapes(arch, input, classes);
  } catch (const std::invalid_argument& e) {
    throw WeightFileError(Kind::kShapeMismatch, e.what());
  }
  if (expected != listed) {
    throw WeightFileError(Kind::kShapeMismatch,
                          "tensor shapes in header do not match " +
                              std::string(arch_id(arch)) + " with input " +
                              shape_string(input) + " and K=" +
                              std::to_string(classes));
  }
  std::size_t count = 0;
  for (const Shape& s : expected) count += shape_size(s);
  const std::size_t payload = bytes.size() - 12 - header_len;
  if (payload < 8 * count) {
    throw WeightFileError(Kind::kTruncated,
                          "weight payload has " + std::to_string(payload) +
                              " bytes, expected " + std::to_string(8 * count));
  }
  if (payload > 8 * count) {
    throw WeightFileError(Kind::kShapeMismatch,
                          "weight payload has " + std::to_string(payload) +
                              " bytes, expected " + std::to_string(8 * count));
  }

  std::vector<Tensor> params;
  std::size_t offset = 12 + header_len;
  for (const Shape& s : expected) {
    Tensor t(s);
    for (double& v : t.values()) {
      v = std::bit_cast<double>(get_le(bytes.subspan(offset), 8));
      offset += 8;
    }
    params.push_back(std::move(t));
  }
  return Model(arch, input, classes, std::move(params));
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw WeightFileError(WeightFileError::Kind::kIo,
                          "cannot open '" + path.string() + "' for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw WeightFileError(WeightFileError::Kind::kIo,
                          "failed writing '" + path.string() + "'");
  }
}

Model load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw WeightFileError(WeightFileError::Kind::kIo,
                          "cannot open '" + path.string() + "'");
  }
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

}  // namespace specsim
