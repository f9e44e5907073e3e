#ifndef SPECSIM_ATTACKS_H_
#define SPECSIM_ATTACKS_H_

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "specsim/models.h"
#include "specsim/rng.h"
#include "specsim/spectral.h"
#include "specsim/tensor.h"

namespace specsim {

// What the attacker differentiates: a single substitute or a weighted
// ensemble of substitutes.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual ImageShape input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual LossAndGrad loss_and_grad(const Image& x, std::size_t label) const = 0;
  virtual std::size_t predict(const Image& x) const = 0;
};

class ModelObjective final : public Objective {
 public:
  explicit ModelObjective(const Model& model) : model_(model) {}
  ImageShape input_shape() const override { return model_.input_shape(); }
  std::size_t num_classes() const override { return model_.num_classes(); }
  LossAndGrad loss_and_grad(const Image& x, std::size_t label) const override {
    return loss_and_input_grad(model_, x, label);
  }
  std::size_t predict(const Image& x) const override {
    return predict_label(model_, x);
  }

 private:
  const Model& model_;
};

struct WeightedModel {
  const Model* model = nullptr;
  double weight = 0.0;
};

// Weighted sum of per-model cross-entropy losses, differentiated on one tape.
// Weights must be non-negative and sum to 1 within 1e-9; all models must share
// input shape and class count.
LossAndGrad ensemble_loss(const std::vector<WeightedModel>& members,
                          const Image& x, std::size_t label);

class EnsembleObjective final : public Objective {
 public:
  explicit EnsembleObjective(std::vector<WeightedModel> members);
  // Equal weights 1/n.
  static EnsembleObjective uniform(const std::vector<const Model*>& models);

  ImageShape input_shape() const override;
  std::size_t num_classes() const override;
  LossAndGrad loss_and_grad(const Image& x, std::size_t label) const override {
    return ensemble_loss(members_, x, label);
  }
  // argmax of the weighted logit sum.
  std::size_t predict(const Image& x) const override;

 private:
  std::vector<WeightedModel> members_;
};

struct Augmentations {
  bool mi = false;
  bool di = false;
  bool ti = false;
  bool si = false;
  bool s2i = false;

  bool any() const { return mi || di || ti || si || s2i; }
};

// Where the gradient of an augmented copy is taken.
//   kTransformedPoint: evaluate dJ/dz at the augmented input z = T(x) and use
//     it directly as the update direction for x (default).
//   kBackpropThroughTransform: differentiate J(T(x)) w.r.t. x with the random
//     draws frozen, i.e. apply the transform's Jacobian transpose. Also applies
//     the 2^-i chain factor to scale copies.
// Input diversity is always differentiated through (its map is a pixel
// selection, so the transformed-point gradient would be misaligned).
enum class GradientPlacement { kTransformedPoint, kBackpropThroughTransform };

struct AttackConfig {
  double epsilon = 16.0 / 255.0;
  std::size_t iterations = 10;
  std::optional<double> step;  // defaults to epsilon / iterations
  double momentum = 1.0;
  double di_probability = 0.5;
  std::size_t ti_kernel = 7;
  std::size_t si_copies = 5;
  SpectrumTransformParams spectrum;
  Augmentations enabled;
  GradientPlacement placement = GradientPlacement::kTransformedPoint;

  double alpha() const;
  // Throws std::invalid_argument on any violated constraint.
  void validate(const ImageShape& shape) const;
  // e.g. "S2I-MI-FGSM", "S2I-TI-DIM", "I-FGSM".
  std::string name() const;
};

struct AdversarialResult {
  Image adversarial;
  Image perturbation;              // adversarial - clean
  std::vector<double> loss_trace;  // mean loss of each iteration's gradient evaluations
  bool success = false;            // substitute prediction != label
};

// min(max(x_adv, x - eps), x + eps), then into [0, 1].
Image clip_to_ball(const Image& x_adv, const Image& x, double epsilon);

// g_accum' = mu * g_accum + g / ||g||_1, with 0 / 0 = 0.
Image momentum_update(const Image& g_accum, const Image& g, double mu);

// Input-diversity map: optional nearest-neighbour resize to a random size in
// [H, round(1.1 H)), random zero padding up to round(1.1 H), resize back to H.
// Stored as a per-plane pixel selection (-1 selects zero padding).
struct DiversityMap {
  bool applied = false;
  ImageShape shape;
  std::vector<std::ptrdiff_t> source;

  Image apply(const Image& x) const;
  // Transpose of apply() (scatter-add).
  Image adjoint(const Image& g) const;
};

DiversityMap sample_diversity_map(const ImageShape& shape, double probability,
                                  Rng& rng);
Image di_transform(const Image& x, double probability, Rng& rng);

// Normalised k x k linear (pyramid) kernel, row-major; k must be odd.
Tensor ti_kernel(std::size_t k);
// Per-channel convolution with ti_kernel(k), output the size of the input.
// Borders replicate the edge value so constant gradients pass through.
Image ti_smooth(const Image& grad, std::size_t k);

// Mean over i < copies of the gradient at x / 2^i (transformed-point
// placement) or of the full derivative 2^-i * grad(x / 2^i) (backprop).
Image si_average_grad(const Objective& objective, const Image& x,
                      std::size_t label, std::size_t copies,
                      GradientPlacement placement =
                          GradientPlacement::kTransformedPoint);

// A composed FGSM-family attack. Per iteration the input pipeline is
// DI -> {S2I draws x SI copies}; the gradient pipeline is average -> TI ->
// MI -> sign.
class Attack {
 public:
  explicit Attack(AttackConfig config) : config_(std::move(config)) {}

  const AttackConfig& config() const { return config_; }
  std::string name() const { return config_.name(); }

  AdversarialResult run(const Objective& objective, const Image& x,
                        std::size_t label, const Rng& rng) const;

  // The averaged (pre-TI, pre-momentum) gradient for one iteration.
  Image estimate_gradient(const Objective& objective, const Image& x_t,
                          std::size_t label, const Rng& iteration_rng,
                          double* mean_loss = nullptr) const;

 private:
  AttackConfig config_;
};

Attack compose(const AttackConfig& config);

// I-FGSM: every augmentation disabled regardless of config.enabled.
AdversarialResult attack_ifgsm(const Objective& objective, const Image& x,
                               std::size_t label, const AttackConfig& config,
                               const Rng& rng);
// S2I-FGSM: only the spectrum augmentation enabled.
AdversarialResult attack_s2i(const Objective& objective, const Image& x,
                             std::size_t label, const AttackConfig& config,
                             const Rng& rng);

// Mean of the per-draw gradients at the given frozen transformed inputs.
Image average_gradients(const Objective& objective,
                        const std::vector<Image>& transformed_inputs,
                        std::size_t label);

}  // namespace specsim

#endif  // SPECSIM_ATTACKS_H_
