// Command-line front end: train | attack | transfer | ablate | saliency.
//
// Pixel-scale quantities (--eps, --alpha, --sigma) are given in 0-255 units
// and divided by 255 internally.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "specsim/attacks.h"
#include "specsim/harness.h"
#include "specsim/idx.h"
#include "specsim/models.h"
#include "specsim/saliency.h"

namespace fs = std::filesystem;
using namespace specsim;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : split_list(s)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) {
      throw std::invalid_argument("--grid: '" + item + "' is not a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("--grid: no values");
  return out;
}

// Opens `path` for writing, or returns std::cout for "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path != "-") {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw std::runtime_error("cannot write '" + path + "'");
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
  void close() {
    if (!file_.is_open()) return;
    file_.close();
    if (!file_) throw std::runtime_error("write failed");
  }

 private:
  std::ofstream file_;
};

struct LoadedModels {
  std::vector<Model> storage;
  std::vector<NamedModel> named;
};

LoadedModels load_models(const std::vector<std::string>& paths) {
  LoadedModels out;
  out.storage.reserve(paths.size());
  for (const std::string& p : paths) out.storage.push_back(load_weights(p));
  for (std::size_t i = 0; i < paths.size(); ++i) {
    out.named.push_back({fs::path(paths[i]).stem().string(), &out.storage[i]});
  }
  return out;
}

struct DataFlags {
  std::string dir;
  std::string split = "test";
  std::size_t count = 0;  // 0 = all

  void add(CLI::App* cmd, const std::string& default_split) {
    split = default_split;
    cmd->add_option("--data", dir, "Directory with MNIST-named IDX files")
        ->required();
    cmd->add_option("--split", split, "train or test")
        ->check(CLI::IsMember({"train", "test"}))
        ->capture_default_str();
    cmd->add_option("--count", count, "Use only the first N examples (0 = all)")
        ->capture_default_str();
  }

  Dataset load() const {
    Dataset d = load_mnist_dir(dir, split == "train" ? Split::kTrain : Split::kTest);
    return count > 0 ? d.head(count) : d;
  }
};

struct AttackFlags {
  std::string attack = "ifgsm";
  bool mi = false, di = false, ti = false, si = false;
  bool backprop = false;
  double eps = 16.0;
  std::size_t iters = 10;
  std::optional<double> alpha;
  double mu = 1.0;
  double p = 0.5;
  std::size_t k = 7;
  std::size_t m1 = 5;
  std::size_t n = 20;
  double rho = 0.5;
  double sigma = 16.0;
  std::size_t block = kFullImage;

  void add(CLI::App* cmd) {
    cmd->add_option("--attack", attack, "Base attack")
        ->check(CLI::IsMember({"ifgsm", "mi", "s2i"}))
        ->capture_default_str();
    cmd->add_flag("--mi", mi, "Add momentum");
    cmd->add_flag("--di", di, "Add input diversity");
    cmd->add_flag("--ti", ti, "Add translation-invariant smoothing");
    cmd->add_flag("--si", si, "Add scale-invariant copies");
    cmd->add_flag("--backprop-transform", backprop,
                  "Differentiate through the spectrum and scale transforms");
    cmd->add_option("--eps", eps, "L-inf budget in 0-255 units")->capture_default_str();
    cmd->add_option("--iters", iters, "Iterations")->capture_default_str();
    cmd->add_option("--alpha", alpha, "Step size in 0-255 units (default eps/iters)");
    cmd->add_option("--mu", mu, "Momentum decay")->capture_default_str();
    cmd->add_option("--p", p, "Input-diversity probability")->capture_default_str();
    cmd->add_option("--k", k, "Translation kernel length (odd)")->capture_default_str();
    cmd->add_option("--m1", m1, "Scale copies")->capture_default_str();
    cmd->add_option("--n", n, "Spectrum transforms per iteration")->capture_default_str();
    cmd->add_option("--rho", rho, "Spectrum mask tuning factor")->capture_default_str();
    cmd->add_option("--sigma", sigma, "Spectrum noise std in 0-255 units")
        ->capture_default_str();
    cmd->add_option("--block", block, "DCT block size (0 = full image)")
        ->capture_default_str();
  }

  AttackConfig config() const {
    AttackConfig c;
    c.epsilon = eps / 255.0;
    c.iterations = iters;
    if (alpha) c.step = *alpha / 255.0;
    c.momentum = mu;
    c.di_probability = p;
    c.ti_kernel = k;
    c.si_copies = m1;
    c.spectrum.n_transforms = n;
    c.spectrum.rho = rho;
    c.spectrum.sigma = sigma / 255.0;
    c.spectrum.block_size = block;
    c.enabled.mi = mi || attack == "mi";
    c.enabled.s2i = attack == "s2i";
    c.enabled.di = di;
    c.enabled.ti = ti;
    c.enabled.si = si;
    c.placement = backprop ? GradientPlacement::kBackpropThroughTransform
                           : GradientPlacement::kTransformedPoint;
    return c;
  }
};

int run_train(Arch arch, const DataFlags& data, const std::string& out,
              const TrainConfig& cfg, const std::string& log_path) {
  const Dataset train_set = data.load();
  if (train_set.empty()) throw std::invalid_argument("no training data");
  TrainResult result = train(
      build(arch, train_set.image_shape(), train_set.num_classes, cfg.seed),
      train_set, cfg);
  save_weights(result.model, out);
  std::ostringstream log;
  log << "epoch,mean_loss,train_accuracy\n";
  for (const EpochLog& e : result.log) {
    char line[96];
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.4f\n", e.epoch, e.mean_loss,
                  e.train_accuracy);
    log << line;
  }
  if (log_path.empty()) {
    std::cerr << log.str();
  } else {
    Output o(log_path);
    o.stream() << log.str();
    o.close();
  }
  return 0;
}

int run_attack(const std::vector<std::string>& subs, const DataFlags& data,
               const AttackFlags& flags, std::uint64_t seed,
               const std::string& out) {
  const LoadedModels models = load_models(subs);
  const Dataset set = data.load();
  std::unique_ptr<Objective> objective;
  if (models.named.size() == 1) {
    objective = std::make_unique<ModelObjective>(models.storage.front());
  } else {
    std::vector<const Model*> ptrs;
    for (const Model& m : models.storage) ptrs.push_back(&m);
    objective = std::make_unique<EnsembleObjective>(EnsembleObjective::uniform(ptrs));
  }
  const Attack attack(flags.config());
  const Rng master(seed);
  Output o(out);
  o.stream() << "index,label,clean_prediction,adversarial_prediction,success,linf\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const AdversarialResult r =
        attack.run(*objective, set.images[i], set.labels[i], master.derive(i));
    char line[128];
    std::snprintf(line, sizeof(line), "%zu,%zu,%zu,%zu,%d,%.6f\n", i,
                  set.labels[i], objective->predict(set.images[i]),
                  objective->predict(r.adversarial), r.success ? 1 : 0,
                  linf_norm(r.perturbation.values()));
    o.stream() << line;
  }
  o.close();
  return 0;
}

int run_saliency(const std::string& model_path, const DataFlags& data,
                 std::size_t draws, double sigma, double rho, bool spatial,
                 std::uint64_t seed, const std::string& out,
                 const std::string& compare_path) {
  const Model model = load_weights(model_path);
  const Dataset set = data.load();
  if (set.empty()) throw std::invalid_argument("no images");
  Image map(model.input_shape());
  if (spatial) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      const Image g = spatial_saliency(model, set.images[i], set.labels[i]).values;
      for (std::size_t j = 0; j < map.size(); ++j) map[j] += std::abs(g[j]);
    }
    for (double& v : map.values()) v /= static_cast<double>(set.size());
  } else {
    std::optional<SpectrumTransformParams> params;
    if (draws > 0) {
      params.emplace();
      params->sigma = sigma / 255.0;
      params->rho = rho;
      params->n_transforms = draws;
    }
    map = average_saliency(model, set.images, set.labels, params, draws,
                           Rng(seed))
              .values;
  }
  export_pgm(map, out);
  if (!compare_path.empty()) {
    const Model other = load_weights(compare_path);
    const SaliencyMap base = average_saliency(other, set.images, set.labels,
                                              std::nullopt, 1, Rng(seed));
    char line[64];
    std::snprintf(line, sizeof(line), "cosine %.6f\n",
                  saliency_cosine(map, base.values));
    std::cout << line;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectrum simulation attack toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string out;
  DataFlags train_data;
  DataFlags data;
  AttackFlags attack_flags;

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and save its weights");
  std::string arch = "cnn-a";
  TrainConfig train_cfg;
  std::string log_path;
  train_cmd->add_option("--arch", arch, "mlp-2, cnn-a or cnn-b")
      ->check(CLI::IsMember({"mlp-2", "cnn-a", "cnn-b"}))
      ->capture_default_str();
  train_data.add(train_cmd, "train");
  train_cmd->add_option("--out", out, "Weight file")->required();
  train_cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
  train_cmd->add_option("--epochs", train_cfg.epochs)->capture_default_str();
  train_cmd->add_option("--lr", train_cfg.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", train_cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--log", log_path, "Per-epoch CSV log (default stderr)");

  // attack
  CLI::App* attack_cmd =
      app.add_subcommand("attack", "Craft adversarial examples, report per image");
  std::string sub;
  attack_cmd->add_option("--sub", sub, "Substitute weights (comma list = ensemble)")
      ->required();
  data.add(attack_cmd, "test");
  attack_flags.add(attack_cmd);
  attack_cmd->add_option("--seed", seed)->capture_default_str();
  attack_cmd->add_option("--out", out, "CSV output ('-' = stdout)")->required();

  // transfer
  CLI::App* transfer_cmd =
      app.add_subcommand("transfer", "Transfer success rates against victims");
  std::string victims;
  std::size_t threads = 1;
  transfer_cmd->add_option("--sub", sub, "Substitute weights (comma list = ensemble)")
      ->required();
  transfer_cmd->add_option("--victims", victims, "Comma list of victim weights")
      ->required();
  data.add(transfer_cmd, "test");
  attack_flags.add(transfer_cmd);
  transfer_cmd->add_option("--seed", seed)->capture_default_str();
  transfer_cmd->add_option("--threads", threads)->capture_default_str();
  transfer_cmd->add_option("--out", out, "CSV output ('-' = stdout)")->required();

  // ablate
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "Sweep one spectrum parameter");
  std::string param, grid;
  ablate_cmd->add_option("--param", param, "sigma, rho, n or block")->required();
  ablate_cmd->add_option("--grid", grid,
                         "Comma list of values (sigma in 0-255 units)")
      ->required();
  ablate_cmd->add_option("--sub", sub, "Substitute weights (comma list = ensemble)")
      ->required();
  ablate_cmd->add_option("--victims", victims, "Comma list of victim weights")
      ->required();
  data.add(ablate_cmd, "test");
  attack_flags.add(ablate_cmd);
  ablate_cmd->add_option("--seed", seed)->capture_default_str();
  ablate_cmd->add_option("--threads", threads)->capture_default_str();
  ablate_cmd->add_option("--out", out, "CSV output ('-' = stdout)")->required();

  // saliency
  CLI::App* saliency_cmd =
      app.add_subcommand("saliency", "Average saliency map as a PGM image");
  std::string model_path, compare_path;
  std::size_t draws = 0;
  double sal_sigma = 16.0, sal_rho = 0.5;
  bool spatial = false;
  saliency_cmd->add_option("--model", model_path, "Weight file")->required();
  data.add(saliency_cmd, "test");
  saliency_cmd->add_option("--n", draws,
                           "Spectrum transform draws per image (0 = none)")
      ->capture_default_str();
  saliency_cmd->add_option("--sigma", sal_sigma, "Noise std in 0-255 units")
      ->capture_default_str();
  saliency_cmd->add_option("--rho", sal_rho)->capture_default_str();
  saliency_cmd->add_flag("--spatial", spatial, "Input-space map instead of spectrum");
  saliency_cmd->add_option("--seed", seed)->capture_default_str();
  saliency_cmd->add_option("--compare", compare_path,
                           "Print cosine similarity to this model's base map");
  saliency_cmd->add_option("--out", out, "PGM output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*train_cmd) {
      train_cfg.seed = seed;
      return run_train(parse_arch(arch), train_data, out, train_cfg, log_path);
    }
    if (*attack_cmd) {
      return run_attack(split_list(sub), data, attack_flags, seed, out);
    }
    if (*transfer_cmd || *ablate_cmd) {
      const LoadedModels subs = load_models(split_list(sub));
      const LoadedModels vics = load_models(split_list(victims));
      const Dataset set = data.load();
      Output o(out);
      if (*transfer_cmd) {
        write_transfer_csv(evaluate_transfer(subs.named, vics.named, set,
                                             attack_flags.config(), seed, threads),
                           o.stream());
      } else {
        const AblationParameter p = parse_parameter(param);
        std::vector<double> values = parse_grid(grid);
        if (p == AblationParameter::kSigma) {
          for (double& v : values) v /= 255.0;
        }
        AttackConfig base = attack_flags.config();
        base.enabled.s2i = true;
        write_ablation_csv(p, ablate(p, values, subs.named, vics.named, set, base,
                                     seed, threads),
                           o.stream());
      }
      o.close();
      return 0;
    }
    if (*saliency_cmd) {
      return run_saliency(model_path, data, draws, sal_sigma, sal_rho, spatial,
                          seed, out, compare_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
