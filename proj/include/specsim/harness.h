#ifndef SPECSIM_HARNESS_H_
#define SPECSIM_HARNESS_H_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "specsim/attacks.h"
#include "specsim/dataset.h"
#include "specsim/models.h"

namespace specsim {

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
};

struct VictimResult {
  std::string name;
  bool white_box = false;     // victim is one of the substitutes
  std::size_t eligible = 0;   // inputs the victim classifies correctly when clean
  std::size_t successes = 0;  // eligible inputs whose adversarial is misclassified

  double success_rate() const {
    return eligible == 0 ? 0.0
                         : static_cast<double>(successes) /
                               static_cast<double>(eligible);
  }
};

struct TransferReport {
  std::string substitute;
  std::vector<VictimResult> victims;
  AttackConfig config;
  std::uint64_t seed = 0;
  std::size_t sample_count = 0;  // images evaluated (before eligibility)

  // Mean success rate over black-box victims; 0 if there are none.
  double mean_black_box() const;
};

// Crafts one adversarial example per image on the substitute(s) (an ensemble
// with equal weights when there are several) and evaluates every victim on
// it. Victims are never queried while crafting. Image i is attacked with
// Rng(seed).derive(i), so the report does not depend on `threads`.
// Throws std::invalid_argument when models disagree on input shape or class
// count with each other or with the dataset.
TransferReport evaluate_transfer(const std::vector<NamedModel>& substitutes,
                                 const std::vector<NamedModel>& victims,
                                 const Dataset& data, const AttackConfig& config,
                                 std::uint64_t seed, std::size_t threads = 1);

enum class AblationParameter { kSigma, kRho, kNTransforms, kBlockSize };

std::string_view parameter_name(AblationParameter p);
// Accepts "sigma", "rho", "n" / "n_transforms", "block" / "block_size".
AblationParameter parse_parameter(std::string_view name);

// Returns `base` with the parameter set to `value` (sigma in [0,1] units;
// block 0 selects the full image). Throws on a non-integral count or block.
AttackConfig with_parameter(const AttackConfig& base, AblationParameter p,
                            double value);

struct AblationPoint {
  double value = 0.0;
  TransferReport report;
};

// One evaluate_transfer per grid value, in grid order.
std::vector<AblationPoint> ablate(AblationParameter p,
                                  const std::vector<double>& grid,
                                  const std::vector<NamedModel>& substitutes,
                                  const std::vector<NamedModel>& victims,
                                  const Dataset& data, const AttackConfig& base,
                                  std::uint64_t seed, std::size_t threads = 1);

// CSV schemas (rates with 4 decimals, fixed point):
//   transfer: victim,white_box,eligible,successes,success_rate
//   ablate:   parameter,value,victim,white_box,eligible,successes,success_rate
//             plus one row per grid value with victim "mean_black_box".
// Ablation sigma values are written in 0-255 units to match the CLI.
void write_transfer_csv(const TransferReport& report, std::ostream& out);
void write_ablation_csv(AblationParameter p,
                        const std::vector<AblationPoint>& points,
                        std::ostream& out);

std::string format_rate(double rate);

}  // namespace specsim

#endif  // SPECSIM_HARNESS_H_
