#include "specsim/attacks.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace specsim {
namespace {

void require_same_shape(const char* op, const Image& a, const Image& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void add_scaled(Image& acc, const Image& g, double factor) {
  auto a = acc.values();
  auto b = g.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += factor * b[i];
}

// Nearest-neighbour source index along one axis when resizing `from` -> `to`.
std::size_t nearest(std::size_t i, std::size_t from, std::size_t to) {
  return std::min(from - 1, i * from / to);
}

}  // namespace

// ---------------------------------------------------------------------------
// Ensemble

LossAndGrad ensemble_loss(const std::vector<WeightedModel>& members,
                          const Image& x, std::size_t label) {
  if (members.empty()) {
    throw std::invalid_argument("ensemble_loss: no models");
  }
  double total = 0.0;
  for (const WeightedModel& m : members) {
    if (m.model == nullptr || !(m.weight >= 0.0)) {
      throw std::invalid_argument("ensemble_loss: null model or negative weight");
    }
    total += m.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("ensemble_loss: weights sum to " +
                                std::to_string(total) + ", expected 1");
  }
  for (const WeightedModel& m : members) {
    if (m.model->input_shape() != x.shape()) {
      throw std::invalid_argument("ensemble_loss: model expects " +
                                  shape_string(m.model->input_shape()) +
                                  ", got " + shape_string(x.shape()));
    }
    if (label >= m.model->num_classes()) {
      throw std::invalid_argument("ensemble_loss: label " + std::to_string(label) +
                                  " outside [0, " +
                                  std::to_string(m.model->num_classes()) + ")");
    }
  }
  Tape tape;
  const Var in = tape.leaf(x.to_tensor(), true);
  std::optional<Var> sum;
  for (const WeightedModel& m : members) {
    const Var loss = tape.scale(
        tape.softmax_cross_entropy(m.model->forward(tape, in), label), m.weight);
    sum = sum ? tape.add(*sum, loss) : loss;
  }
  tape.backward(*sum);
  return {tape.value(*sum)[0], Image::from_tensor(tape.grad(in))};
}

EnsembleObjective::EnsembleObjective(std::vector<WeightedModel> members)
    : members_(std::move(members)) {
  if (members_.empty()) {
    throw std::invalid_argument("ensemble: no models");
  }
  double total = 0.0;
  for (const WeightedModel& m : members_) {
    if (m.model == nullptr || !(m.weight >= 0.0)) {
      throw std::invalid_argument("ensemble: null model or negative weight");
    }
    if (m.model->input_shape() != members_.front().model->input_shape() ||
        m.model->num_classes() != members_.front().model->num_classes()) {
      throw std::invalid_argument(
          "ensemble: models disagree on input shape or class count");
    }
    total += m.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("ensemble: weights sum to " +
                                std::to_string(total) + ", expected 1");
  }
}

EnsembleObjective EnsembleObjective::uniform(
    const std::vector<const Model*>& models) {
  std::vector<WeightedModel> members;
  for (const Model* m : models) {
    members.push_back({m, 1.0 / static_cast<double>(models.size())});
  }
  return EnsembleObjective(std::move(members));
}

ImageShape EnsembleObjective::input_shape() const {
  return members_.front().model->input_shape();
}

std::size_t EnsembleObjective::num_classes() const {
  return members_.front().model->num_classes();
}

std::size_t EnsembleObjective::predict(const Image& x) const {
  Tensor sum({num_classes()});
  for (const WeightedModel& m : members_) {
    const Tensor logits = m.model->logits(x);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += m.weight * logits[i];
  }
  return argmax(sum);
}

// ---------------------------------------------------------------------------
// Config

double AttackConfig::alpha() const {
  if (step) return *step;
  return iterations == 0 ? 0.0 : epsilon / static_cast<double>(iterations);
}

void AttackConfig::validate(const ImageShape& shape) const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("attack: epsilon must lie in [0, 1]");
  }
  if (iterations == 0) {
    throw std::invalid_argument("attack: iterations must be positive");
  }
  const double a = alpha();
  if (!(a >= 0.0) || (epsilon > 0.0 && a == 0.0)) {
    throw std::invalid_argument("attack: step size must be positive");
  }
  if (a > epsilon) {
    throw std::invalid_argument("attack: step size " + std::to_string(a) +
                                " exceeds epsilon " + std::to_string(epsilon));
  }
  if (!(momentum >= 0.0)) {
    throw std::invalid_argument("attack: momentum decay must be >= 0");
  }
  if (!(di_probability >= 0.0 && di_probability <= 1.0)) {
    throw std::invalid_argument("attack: DI probability must lie in [0, 1]");
  }
  if (ti_kernel == 0 || ti_kernel % 2 == 0) {
    throw std::invalid_argument("attack: TI kernel length must be odd");
  }
  if (si_copies == 0) {
    throw std::invalid_argument("attack: SI copies must be positive");
  }
  if (enabled.s2i) spectrum.validate(shape);
}

std::string AttackConfig::name() const {
  // Paper-style names: S2I-SI-TI-DIM, S2I-MI-FGSM, TI-DIM, ...
  std::string prefix;
  if (enabled.s2i) prefix += "S2I-";
  if (enabled.si) prefix += "SI-";
  if (enabled.ti) prefix += "TI-";
  if (enabled.di && enabled.mi) return prefix + "DIM";
  if (enabled.di) return prefix + "DI-FGSM";
  if (enabled.mi) return prefix + "MI-FGSM";
  if (prefix.empty()) return "I-FGSM";
  return prefix + "FGSM";
}

// ---------------------------------------------------------------------------
// Building blocks

Image clip_to_ball(const Image& x_adv, const Image& x, double epsilon) {
  require_same_shape("clip_to_ball", x_adv, x);
  Image out = x_adv;
  auto o = out.values();
  auto c = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = std::clamp(o[i], c[i] - epsilon, c[i] + epsilon);
    o[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Image momentum_update(const Image& g_accum, const Image& g, double mu) {
  require_same_shape("momentum_update", g_accum, g);
  double l1 = 0.0;
  for (double v : g.values()) l1 += std::abs(v);
  Image out = g_accum;
  for (double& v : out.values()) v *= mu;
  if (l1 > 0.0) add_scaled(out, g, 1.0 / l1);
  return out;
}

Image DiversityMap::apply(const Image& x) const {
  if (x.shape() != shape) {
    throw std::invalid_argument("diversity map built for " + shape_string(shape) +
                                ", got " + shape_string(x.shape()));
  }
  if (!applied) return x;
  Image out(shape);
  for (std::size_t c = 0; c < shape.channels; ++c) {
    auto src = x.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = source[i] < 0 ? 0.0 : src[static_cast<std::size_t>(source[i])];
    }
  }
  return out;
}

Image DiversityMap::adjoint(const Image& g) const {
  if (g.shape() != shape) {
    throw std::invalid_argument("diversity map built for " + shape_string(shape) +
                                ", got " + shape_string(g.shape()));
  }
  if (!applied) return g;
  Image out(shape);
  for (std::size_t c = 0; c < shape.channels; ++c) {
    auto src = g.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (source[i] >= 0) dst[static_cast<std::size_t>(source[i])] += src[i];
    }
  }
  return out;
}

DiversityMap sample_diversity_map(const ImageShape& shape, double probability,
                                  Rng& rng) {
  DiversityMap map;
  map.shape = shape;
  map.applied = probability > 0.0 && rng.bernoulli(probability);
  if (!map.applied) return map;

  const std::size_t h = shape.height, w = shape.width;
  const auto padded = [](std::size_t n) {
    return std::max(n + 1, static_cast<std::size_t>(std::lround(1.1 * n)));
  };
  const std::size_t h_pad = padded(h), w_pad = padded(w);
  const auto rnd_h = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(h), static_cast<std::int64_t>(h_pad) - 1));
  const auto rnd_w = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(w), static_cast<std::int64_t>(w_pad) - 1));
  const auto top = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(h_pad - rnd_h)));
  const auto left = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(w_pad - rnd_w)));

  map.source.assign(h * w, -1);
  for (std::size_t y = 0; y < h; ++y) {
    // output -> padded canvas -> resized image -> source pixel
    const std::size_t cy = nearest(y, h_pad, h);
    if (cy < top || cy >= top + rnd_h) continue;
    const std::size_t sy = nearest(cy - top, h, rnd_h);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t cx = nearest(x, w_pad, w);
      if (cx < left || cx >= left + rnd_w) continue;
      const std::size_t sx = nearest(cx - left, w, rnd_w);
      map.source[y * w + x] = static_cast<std::ptrdiff_t>(sy * w + sx);
    }
  }
  return map;
}

Image di_transform(const Image& x, double probability, Rng& rng) {
  return sample_diversity_map(x.shape(), probability, rng).apply(x);
}

Tensor ti_kernel(std::size_t k) {
  if (k == 0 || k % 2 == 0) {
    throw std::invalid_argument("ti_kernel: length must be odd, got " +
                                std::to_string(k));
  }
  // 1 - |t| / ((k + 1) / 2) for t in -(k-1)/2 .. (k-1)/2
  std::vector<double> line(k);
  const double half = static_cast<double>(k + 1) / 2.0;
  const double r = static_cast<double>(k - 1) / 2.0;
  for (std::size_t i = 0; i < k; ++i) {
    line[i] = 1.0 - std::abs(static_cast<double>(i) - r) / half;
  }
  Tensor kernel({k, k});
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      kernel[i * k + j] = line[i] * line[j];
      total += kernel[i * k + j];
    }
  for (double& v : kernel.values()) v /= total;
  return kernel;
}

Image ti_smooth(const Image& grad, std::size_t k) {
  const Tensor kernel = ti_kernel(k);
  if (k == 1) return grad;
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(grad.height());
  const auto w = static_cast<std::ptrdiff_t>(grad.width());
  Image out(grad.shape());
  for (std::size_t c = 0; c < grad.channels(); ++c) {
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const auto sy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y + dy, 0, h - 1));
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const auto sx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x + dx, 0, w - 1));
            acc += kernel[static_cast<std::size_t>((dy + r) * (2 * r + 1) + dx + r)] *
                   grad.at(sy, sx, c);
          }
        }
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc;
      }
    }
  }
  return out;
}

Image si_average_grad(const Objective& objective, const Image& x,
                      std::size_t label, std::size_t copies,
                      GradientPlacement placement) {
  if (copies == 0) {
    throw std::invalid_argument("si_average_grad: copies must be positive");
  }
  Image sum(x.shape());
  double scale = 1.0;
  for (std::size_t i = 0; i < copies; ++i, scale *= 0.5) {
    Image scaled = x;
    for (double& v : scaled.values()) v *= scale;
    const LossAndGrad lg = objective.loss_and_grad(scaled, label);
    add_scaled(sum, lg.grad,
               placement == GradientPlacement::kBackpropThroughTransform ? scale : 1.0);
  }
  for (double& v : sum.values()) v /= static_cast<double>(copies);
  return sum;
}

Image average_gradients(const Objective& objective,
                        const std::vector<Image>& transformed_inputs,
                        std::size_t label) {
  if (transformed_inputs.empty()) {
    throw std::invalid_argument("average_gradients: no inputs");
  }
  Image sum(transformed_inputs.front().shape());
  for (const Image& z : transformed_inputs) {
    add_scaled(sum, objective.loss_and_grad(z, label).grad, 1.0);
  }
  for (double& v : sum.values()) v /= static_cast<double>(transformed_inputs.size());
  return sum;
}

// ---------------------------------------------------------------------------
// Composed attack

Image Attack::estimate_gradient(const Objective& objective, const Image& x_t,
                                std::size_t label, const Rng& iteration_rng,
                                double* mean_loss) const {
  const AttackConfig& cfg = config_;
  const bool backprop =
      cfg.placement == GradientPlacement::kBackpropThroughTransform;

  DiversityMap di;
  Image input = x_t;
  if (cfg.enabled.di) {
    Rng di_rng = iteration_rng.derive(0);
    di = sample_diversity_map(x_t.shape(), cfg.di_probability, di_rng);
    input = di.apply(x_t);
  }

  const std::size_t draws = cfg.enabled.s2i ? cfg.spectrum.n_transforms : 1;
  const std::size_t copies = cfg.enabled.si ? cfg.si_copies : 1;
  Image sum(x_t.shape());
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    std::optional<SpectrumDraw> draw;
    Image z = input;
    if (cfg.enabled.s2i) {
      Rng draw_rng = iteration_rng.derive(1, i);
      draw = sample_spectrum_draw(input.shape(), cfg.spectrum, draw_rng);
      z = apply_spectrum_transform(input, *draw);
    }
    Image draw_grad(x_t.shape());
    double scale = 1.0;
    for (std::size_t j = 0; j < copies; ++j, scale *= 0.5) {
      Image zj = z;
      if (j > 0) {
        for (double& v : zj.values()) v *= scale;
      }
      const LossAndGrad lg = objective.loss_and_grad(zj, label);
      loss_sum += lg.loss;
      add_scaled(draw_grad, lg.grad, backprop ? scale : 1.0);
    }
    if (draw && backprop) draw_grad = spectrum_transform_adjoint(draw_grad, *draw);
    add_scaled(sum, draw_grad, 1.0);
  }
  const double count = static_cast<double>(draws * copies);
  for (double& v : sum.values()) v /= count;
  if (mean_loss) *mean_loss = loss_sum / count;
  if (cfg.enabled.di) sum = di.adjoint(sum);
  return sum;
}

AdversarialResult Attack::run(const Objective& objective, const Image& x,
                              std::size_t label, const Rng& rng) const {
  if (x.shape() != objective.input_shape()) {
    throw std::invalid_argument("attack: image " + shape_string(x.shape()) +
                                " does not match model input " +
                                shape_string(objective.input_shape()));
  }
  if (label >= objective.num_classes()) {
    throw std::invalid_argument("attack: label " + std::to_string(label) +
                                " outside [0, " +
                                std::to_string(objective.num_classes()) + ")");
  }
  config_.validate(x.shape());
  const double alpha = config_.alpha();

  AdversarialResult result;
  Image x_adv = x;
  Image accum(x.shape());
  for (std::size_t t = 0; t < config_.iterations; ++t) {
    double loss = 0.0;
    Image g = estimate_gradient(objective, x_adv, label, rng.derive(t), &loss);
    result.loss_trace.push_back(loss);
    if (config_.enabled.ti) g = ti_smooth(g, config_.ti_kernel);
    if (config_.enabled.mi) {
      accum = momentum_update(accum, g, config_.momentum);
      g = accum;
    }
    Image next = x_adv;
    auto nv = next.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < nv.size(); ++i) nv[i] += alpha * sign(gv[i]);
    x_adv = clip_to_ball(next, x, config_.epsilon);
  }
  result.perturbation = x_adv;
  auto pv = result.perturbation.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= xv[i];
  result.success = objective.predict(x_adv) != label;
  result.adversarial = std::move(x_adv);
  return result;
}

Attack compose(const AttackConfig& config) { return Attack(config); }

AdversarialResult attack_ifgsm(const Objective& objective, const Image& x,
                               std::size_t label, const AttackConfig& config,
                               const Rng& rng) {
  AttackConfig cfg = config;
  cfg.enabled = Augmentations{};
  return Attack(cfg).run(objective, x, label, rng);
}

AdversarialResult attack_s2i(const Objective& objective, const Image& x,
                             std::size_t label, const AttackConfig& config,
                             const Rng& rng) {
  AttackConfig cfg = config;
  cfg.enabled = Augmentations{};
  cfg.enabled.s2i = true;
  return Attack(cfg).run(objective, x, label, rng);
}

}  // namespace specsim
