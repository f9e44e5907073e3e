#include "specsim/harness.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace specsim {
namespace {

void check_compatible(const std::vector<NamedModel>& models,
                      const ImageShape& shape, std::size_t num_classes,
                      const char* role) {
  for (const NamedModel& m : models) {
    if (m.model == nullptr) {
      throw std::invalid_argument(std::string(role) + " '" + m.name +
                                  "' is null");
    }
    if (m.model->input_shape() != shape ||
        m.model->num_classes() != num_classes) {
      throw std::invalid_argument(
          std::string(role) + " '" + m.name + "' expects " +
          shape_string(m.model->input_shape()) + " with " +
          std::to_string(m.model->num_classes()) + " classes; data has " +
          shape_string(shape) + " with " + std::to_string(num_classes));
    }
  }
}

std::unique_ptr<Objective> make_objective(
    const std::vector<NamedModel>& substitutes) {
  if (substitutes.size() == 1) {
    return std::make_unique<ModelObjective>(*substitutes.front().model);
  }
  std::vector<const Model*> models;
  for (const NamedModel& m : substitutes) models.push_back(m.model);
  return std::make_unique<EnsembleObjective>(EnsembleObjective::uniform(models));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items write to
// disjoint slots, so results are independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

double TransferReport::mean_black_box() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const VictimResult& v : victims) {
    if (v.white_box) continue;
    sum += v.success_rate();
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

TransferReport evaluate_transfer(const std::vector<NamedModel>& substitutes,
                                 const std::vector<NamedModel>& victims,
                                 const Dataset& data, const AttackConfig& config,
                                 std::uint64_t seed, std::size_t threads) {
  if (substitutes.empty()) {
    throw std::invalid_argument("evaluate_transfer: no substitute model");
  }
  if (victims.empty()) {
    throw std::invalid_argument("evaluate_transfer: no victim models");
  }
  data.validate();
  if (data.empty()) {
    throw std::invalid_argument("evaluate_transfer: empty dataset");
  }
  const ImageShape shape = data.image_shape();
  check_compatible(substitutes, shape, data.num_classes, "substitute");
  check_compatible(victims, shape, data.num_classes, "victim");
  config.validate(shape);

  const std::unique_ptr<Objective> objective = make_objective(substitutes);
  const Attack attack(config);
  const Rng master(seed);
  const std::size_t n = data.size();
  const std::size_t nv = victims.size();

  // eligible[i * nv + v], fooled[i * nv + v]
  std::vector<char> eligible(n * nv, 0), fooled(n * nv, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    const Image& x = data.images[i];
    const std::size_t y = data.labels[i];
    bool any = false;
    for (std::size_t v = 0; v < nv; ++v) {
      eligible[i * nv + v] = predict_label(*victims[v].model, x) == y;
      any = any || eligible[i * nv + v];
    }
    if (!any) return;
    const AdversarialResult adv = attack.run(*objective, x, y, master.derive(i));
    for (std::size_t v = 0; v < nv; ++v) {
      if (eligible[i * nv + v]) {
        fooled[i * nv + v] = predict_label(*victims[v].model, adv.adversarial) != y;
      }
    }
  });

  TransferReport report;
  for (std::size_t s = 0; s < substitutes.size(); ++s) {
    report.substitute += (s ? "+" : "") + substitutes[s].name;
  }
  report.config = config;
  report.seed = seed;
  report.sample_count = n;
  for (std::size_t v = 0; v < nv; ++v) {
    VictimResult r;
    r.name = victims[v].name;
    for (const NamedModel& s : substitutes) {
      r.white_box = r.white_box || s.model == victims[v].model ||
                    *s.model == *victims[v].model;
    }
    for (std::size_t i = 0; i < n; ++i) {
      r.eligible += eligible[i * nv + v] != 0;
      r.successes += fooled[i * nv + v] != 0;
    }
    report.victims.push_back(std::move(r));
  }
  return report;
}

std::string_view parameter_name(AblationParameter p) {
  switch (p) {
    case AblationParameter::kSigma: return "sigma";
    case AblationParameter::kRho: return "rho";
    case AblationParameter::kNTransforms: return "n_transforms";
    case AblationParameter::kBlockSize: return "block_size";
  }
  return "?";
}

AblationParameter parse_parameter(std::string_view name) {
  if (name == "sigma") return AblationParameter::kSigma;
  if (name == "rho") return AblationParameter::kRho;
  if (name == "n" || name == "n_transforms") return AblationParameter::kNTransforms;
  if (name == "block" || name == "block_size") return AblationParameter::kBlockSize;
  throw std::invalid_argument("unknown ablation parameter '" + std::string(name) +
                              "' (expected sigma, rho, n or block)");
}

AttackConfig with_parameter(const AttackConfig& base, AblationParameter p,
                            double value) {
  AttackConfig cfg = base;
  auto count = [&]() {
    if (!(value >= 0.0) || value != std::floor(value)) {
      throw std::invalid_argument(std::string(parameter_name(p)) +
                                  " must be a non-negative integer, got " +
                                  std::to_string(value));
    }
    return static_cast<std::size_t>(value);
  };
  switch (p) {
    case AblationParameter::kSigma: cfg.spectrum.sigma = value; break;
    case AblationParameter::kRho: cfg.spectrum.rho = value; break;
    case AblationParameter::kNTransforms: cfg.spectrum.n_transforms = count(); break;
    case AblationParameter::kBlockSize: cfg.spectrum.block_size = count(); break;
  }
  return cfg;
}

std::vector<AblationPoint> ablate(AblationParameter p,
                                  const std::vector<double>& grid,
                                  const std::vector<NamedModel>& substitutes,
                                  const std::vector<NamedModel>& victims,
                                  const Dataset& data, const AttackConfig& base,
                                  std::uint64_t seed, std::size_t threads) {
  if (grid.empty()) {
    throw std::invalid_argument("ablate: empty grid");
  }
  std::vector<AblationPoint> points;
  for (double value : grid) {
    points.push_back({value, evaluate_transfer(substitutes, victims, data,
                                               with_parameter(base, p, value),
                                               seed, threads)});
  }
  return points;
}

std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", rate);
  return buf;
}

namespace {

std::string format_value(AblationParameter p, double value) {
  char buf[32];
  if (p == AblationParameter::kSigma) value *= 255.0;
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

void write_victim(const VictimResult& v, std::ostream& out) {
  out << v.name << ',' << (v.white_box ? 1 : 0) << ',' << v.eligible << ','
      << v.successes << ',' << format_rate(v.success_rate()) << '\n';
}

}  // namespace

void write_transfer_csv(const TransferReport& report, std::ostream& out) {
  out << "victim,white_box,eligible,successes,success_rate\n";
  for (const VictimResult& v : report.victims) write_victim(v, out);
}

void write_ablation_csv(AblationParameter p,
                        const std::vector<AblationPoint>& points,
                        std::ostream& out) {
  out << "parameter,value,victim,white_box,eligible,successes,success_rate\n";
  const std::string name(parameter_name(p));
  for (const AblationPoint& point : points) {
    const std::string prefix = name + ',' + format_value(p, point.value) + ',';
    for (const VictimResult& v : point.report.victims) {
      out << prefix;
      write_victim(v, out);
    }
    out << prefix << "mean_black_box,0,,,"
        << format_rate(point.report.mean_black_box()) << '\n';
  }
}

}  // namespace specsim
