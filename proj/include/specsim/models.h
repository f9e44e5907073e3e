#ifndef SPECSIM_MODELS_H_
#define SPECSIM_MODELS_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "specsim/autodiff.h"
#include "specsim/dataset.h"
#include "specsim/tensor.h"

namespace specsim {

// MLP-2:  flatten -> affine 128 -> relu -> affine K
// CNN-A:  conv3x3 16 -> relu -> pool -> conv3x3 32 -> relu -> pool -> affine K
// CNN-B:  conv5x5 8 -> relu -> pool -> conv3x3 16 -> relu -> conv3x3 16 ->
//         relu -> pool -> affine 64 -> relu -> affine K
enum class Arch { kMlp2, kCnnA, kCnnB };

std::string_view arch_id(Arch arch);
// Accepts "mlp-2", "cnn-a", "cnn-b". Throws std::invalid_argument otherwise.
Arch parse_arch(std::string_view id);

class Model {
 public:
  Model(Arch arch, ImageShape input_shape, std::size_t num_classes,
        std::vector<Tensor> parameters);

  // Parameter tensor shapes, in storage order.
  static std::vector<Shape> parameter_shapes(Arch arch, ImageShape input_shape,
                                             std::size_t num_classes);

  Arch arch() const { return arch_; }
  const ImageShape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<Tensor>& parameters() const { return parameters_; }
  std::vector<Tensor>& mutable_parameters() { return parameters_; }
  std::size_t parameter_count() const;

  // Records the forward pass on `tape`; `input` must be a {C, H, W} node.
  // Parameter leaves borrow this model's storage, so the model must outlive
  // the tape. Returns the parameter leaves through `param_vars` if non-null.
  Var forward(Tape& tape, Var input, bool param_grads = false,
              std::vector<Var>* param_vars = nullptr) const;

  Tensor logits(const Image& x) const;

  bool operator==(const Model& other) const = default;

 private:
  Arch arch_;
  ImageShape input_shape_;
  std::size_t num_classes_;
  std::vector<Tensor> parameters_;
};

// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Model build(Arch arch, ImageShape input_shape, std::size_t num_classes,
            std::uint64_t seed);

Tensor predict(const Model& model, const Image& x);
std::size_t predict_label(const Model& model, const Image& x);
std::size_t argmax(const Tensor& logits);
// Fraction of correctly classified examples. Throws on an empty dataset.
double accuracy(const Model& model, const Dataset& data);

struct LossAndGrad {
  double loss = 0.0;
  Image grad;
};

// J(x, y) and dJ/dx by a reverse sweep. Throws std::invalid_argument on a
// shape mismatch or a label outside [0, K).
LossAndGrad loss_and_input_grad(const Model& model, const Image& x,
                                std::size_t label);

struct ParamGrads {
  double loss = 0.0;  // mean over the batch
  std::vector<Tensor> grads;
};

// Gradient of the mean cross-entropy over the given examples.
ParamGrads param_grads(const Model& model, std::span<const Image> images,
                       std::span<const std::size_t> labels);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;       // running mean of minibatch losses
  double train_accuracy = 0.0;  // on the pre-update predictions
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
};

// Plain minibatch SGD, reshuffling each epoch from the config seed.
TrainResult train(Model model, const Dataset& data, const TrainConfig& config);

// One SGD step on the given batch; returns the batch loss before the step.
double sgd_step(Model& model, std::span<const Image> images,
                std::span<const std::size_t> labels, double learning_rate);

// Weight file: "SAKW0001", uint32 little-endian header length, UTF-8 JSON
// header, then every parameter as little-endian IEEE-754 binary64 in
// parameter_shapes() order.
class WeightFileError : public std::runtime_error {
 public:
  enum class Kind {
    kIo,
    kMagicMismatch,
    kVersionMismatch,
    kHeaderInvalid,
    kShapeMismatch,
    kTruncated,
  };
  WeightFileError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> serialize_weights(const Model& model);
Model deserialize_weights(std::span<const std::uint8_t> bytes);
void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);

}  // namespace specsim

#endif  // SPECSIM_MODELS_H_
