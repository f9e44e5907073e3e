#ifndef SPECSIM_SALIENCY_H_
#define SPECSIM_SALIENCY_H_

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specsim/autodiff.h"
#include "specsim/models.h"
#include "specsim/rng.h"
#include "specsim/spectral.h"
#include "specsim/tensor.h"

namespace specsim {

enum class Reduction { kSingleImage, kAveraged };

// A sensitivity map with the shape of the source image. Spectrum maps hold
// dJ/dZ for Z = dct2(x); spatial maps hold dJ/dx.
struct SaliencyMap {
  Image values;
  std::string model;  // free-form tag, e.g. the architecture id
  Reduction reduction = Reduction::kSingleImage;
};

// Records logits for a {C, H, W} input node. Lets the saliency paths run on
// arbitrary differentiable classifiers, not just the model zoo.
using ForwardFn = std::function<Var(Tape&, Var)>;
ForwardFn forward_fn(const Model& model);

// Gradient of the loss w.r.t. the DCT coefficients of x, computed by placing
// Z = dct2(x) on the tape as a leaf and reconstructing x through an explicit
// inverse-DCT node.
Image spectrum_saliency_chain(const ForwardFn& forward, const Image& x,
                              std::size_t label, std::size_t num_classes);
// The same quantity as dct2 of the input-space gradient.
Image spectrum_saliency_dct(const Model& model, const Image& x,
                            std::size_t label);

// Chain-rule path; throws std::invalid_argument on a bad label or shape.
SaliencyMap spectrum_saliency(const Model& model, const Image& x,
                              std::size_t label);
// dJ/dx.
SaliencyMap spatial_saliency(const Model& model, const Image& x,
                             std::size_t label);

// Mean of |spectrum_saliency| over all images and, when `spectrum` is given,
// over `n_draws` transform draws per image (each map computed at the
// transformed input). Draw d of image i uses rng.derive(i, d).
SaliencyMap average_saliency(const Model& model, std::span<const Image> images,
                             std::span<const std::size_t> labels,
                             const std::optional<SpectrumTransformParams>& spectrum,
                             std::size_t n_draws, const Rng& rng);

// Cosine similarity of the flattened maps. Throws std::invalid_argument on a
// zero-norm map or a shape mismatch.
double saliency_cosine(const Image& a, const Image& b);
double saliency_cosine(const SaliencyMap& a, const SaliencyMap& b);

struct DiversityReport {
  std::size_t n_draws = 0;
  // Cosine distances (1 - cos) between transformed maps, over all pairs.
  std::vector<double> pairwise;
  // Cosine distance of each transformed map from the base map.
  std::vector<double> from_base;
  double mean_pairwise = 0.0;   // 0 when fewer than two draws
  double mean_from_base = 0.0;
  double min_pairwise = 0.0;
  double min_from_base = 0.0;
};

// Compares the base spectrum map S = dct2(grad at x) against n_draws
// transformed maps S' = dct2(grad at T(x)) * M, M being each draw's mask.
DiversityReport proposition1_check(const Model& model, const Image& x,
                                   std::size_t label,
                                   const SpectrumTransformParams& spectrum,
                                   std::size_t n_draws, const Rng& rng);

// Binary 8-bit PGM: channels averaged, min-max scaled to 0..255 (constant maps
// become 128). Header is exactly "P5\n<W> <H>\n255\n".
std::vector<std::uint8_t> encode_pgm(const Image& map);
void export_pgm(const Image& map, const std::filesystem::path& path);

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};
// Parses the P5 layout written by encode_pgm. Throws std::runtime_error on a
// malformed file.
PgmImage parse_pgm(std::span<const std::uint8_t> bytes);
PgmImage read_pgm(const std::filesystem::path& path);

}  // namespace specsim

#endif  // SPECSIM_SALIENCY_H_
