#include "specsim/saliency.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace specsim {
namespace {

void check_label(std::size_t label, std::size_t num_classes) {
  if (label >= num_classes) {
    throw std::invalid_argument("saliency: label " + std::to_string(label) +
                                " outside [0, " + std::to_string(num_classes) +
                                ")");
  }
}

void check_input(const Model& model, const Image& x, std::size_t label) {
  if (x.shape() != model.input_shape()) {
    throw std::invalid_argument("saliency: image " + shape_string(x.shape()) +
                                " does not match model input " +
                                shape_string(model.input_shape()));
  }
  check_label(label, model.num_classes());
}

double cosine_distance(const Image& a, const Image& b) {
  return 1.0 - saliency_cosine(a, b);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double d : v) s += d;
  return s / static_cast<double>(v.size());
}

}  // namespace

ForwardFn forward_fn(const Model& model) {
  return [&model](Tape& tape, Var input) { return model.forward(tape, input); };
}

Image spectrum_saliency_chain(const ForwardFn& forward, const Image& x,
                              std::size_t label, std::size_t num_classes) {
  check_label(label, num_classes);
  const Spectrum z = dct2(x);
  Tape tape;
  const Var coeffs = tape.leaf(z.coefficients.to_tensor(), true);
  // x = A_H^T Z A_W, i.e. L Z R^T with L = A_H^T and R = A_W^T.
  const Var rebuilt =
      tape.bilinear(coeffs, cached_dct_basis(x.height()).transposed(),
                    cached_dct_basis(x.width()).transposed());
  // The round trip is off by ~1e-15, which is enough to flip a max-pool tie or
  // a ReLU sitting exactly at 0 and so route the gradient differently. Adding
  // the constant residual x - rebuilt (exact, as both are within a factor of 2
  // or the residual is tiny) evaluates the network at x itself while the
  // Jacobian still runs through the inverse transform.
  Tensor residual = x.to_tensor();
  const Tensor& approx = tape.value(rebuilt);
  for (std::size_t i = 0; i < residual.size(); ++i) residual[i] -= approx[i];
  const Var pixels = tape.add(rebuilt, tape.leaf(std::move(residual), false));
  const Var loss = tape.softmax_cross_entropy(forward(tape, pixels), label);
  tape.backward(loss);
  return Image::from_tensor(tape.grad(coeffs));
}

Image spectrum_saliency_dct(const Model& model, const Image& x,
                            std::size_t label) {
  check_input(model, x, label);
  return dct2(loss_and_input_grad(model, x, label).grad).coefficients;
}

SaliencyMap spectrum_saliency(const Model& model, const Image& x,
                              std::size_t label) {
  check_input(model, x, label);
  return {spectrum_saliency_chain(forward_fn(model), x, label,
                                  model.num_classes()),
          std::string(arch_id(model.arch())), Reduction::kSingleImage};
}

SaliencyMap spatial_saliency(const Model& model, const Image& x,
                             std::size_t label) {
  check_input(model, x, label);
  return {loss_and_input_grad(model, x, label).grad,
          std::string(arch_id(model.arch())), Reduction::kSingleImage};
}

SaliencyMap average_saliency(const Model& model, std::span<const Image> images,
                             std::span<const std::size_t> labels,
                             const std::optional<SpectrumTransformParams>& spectrum,
                             std::size_t n_draws, const Rng& rng) {
  if (images.empty()) {
    throw std::invalid_argument("average_saliency: no images");
  }
  if (images.size() != labels.size()) {
    throw std::invalid_argument("average_saliency: " +
                                std::to_string(images.size()) + " images but " +
                                std::to_string(labels.size()) + " labels");
  }
  if (spectrum && n_draws == 0) {
    throw std::invalid_argument("average_saliency: n_draws must be positive");
  }
  SaliencyMap out{Image(model.input_shape()), std::string(arch_id(model.arch())),
                  Reduction::kAveraged};
  auto acc = out.values.values();
  std::size_t count = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_input(model, images[i], labels[i]);
    const std::size_t draws = spectrum ? n_draws : 1;
    for (std::size_t d = 0; d < draws; ++d) {
      Image input = images[i];
      if (spectrum) {
        Rng draw_rng = rng.derive(i, d);
        input = spectrum_transform(images[i], *spectrum, draw_rng);
      }
      const Image map = spectrum_saliency_dct(model, input, labels[i]);
      auto m = map.values();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += std::abs(m[j]);
      ++count;
    }
  }
  for (double& v : acc) v /= static_cast<double>(count);
  return out;
}

double saliency_cosine(const Image& a, const Image& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("saliency_cosine: shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na += av[i] * av[i];
    nb += bv[i] * bv[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument("saliency_cosine: zero-norm map");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double saliency_cosine(const SaliencyMap& a, const SaliencyMap& b) {
  return saliency_cosine(a.values, b.values);
}

DiversityReport proposition1_check(const Model& model, const Image& x,
                                   std::size_t label,
                                   const SpectrumTransformParams& spectrum,
                                   std::size_t n_draws, const Rng& rng) {
  check_input(model, x, label);
  if (n_draws == 0) {
    throw std::invalid_argument("proposition1_check: n_draws must be positive");
  }
  if (spectrum.block_size != kFullImage &&
      !(spectrum.block_size == x.height() && spectrum.block_size == x.width())) {
    throw std::invalid_argument(
        "proposition1_check: only full-image spectra are supported");
  }
  const Image base = spectrum_saliency_dct(model, x, label);
  std::vector<Image> maps;
  for (std::size_t d = 0; d < n_draws; ++d) {
    Rng draw_rng = rng.derive(d);
    const SpectrumDraw draw = sample_spectrum_draw(x.shape(), spectrum, draw_rng);
    Image map =
        spectrum_saliency_dct(model, apply_spectrum_transform(x, draw), label);
    auto m = map.values();
    auto mask = draw.mask.values();
    for (std::size_t j = 0; j < m.size(); ++j) m[j] *= mask[j];
    maps.push_back(std::move(map));
  }
  DiversityReport report;
  report.n_draws = n_draws;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    report.from_base.push_back(cosine_distance(base, maps[i]));
    for (std::size_t j = i + 1; j < maps.size(); ++j) {
      report.pairwise.push_back(cosine_distance(maps[i], maps[j]));
    }
  }
  report.mean_pairwise = mean(report.pairwise);
  report.mean_from_base = mean(report.from_base);
  if (!report.pairwise.empty()) {
    report.min_pairwise =
        *std::min_element(report.pairwise.begin(), report.pairwise.end());
  }
  report.min_from_base =
      *std::min_element(report.from_base.begin(), report.from_base.end());
  return report;
}

std::vector<std::uint8_t> encode_pgm(const Image& map) {
  if (map.size() == 0) {
    throw std::invalid_argument("export_pgm: empty map");
  }
  const std::size_t plane = map.height() * map.width();
  std::vector<double> gray(plane, 0.0);
  for (std::size_t c = 0; c < map.channels(); ++c) {
    auto p = map.plane(c);
    for (std::size_t i = 0; i < plane; ++i) gray[i] += p[i];
  }
  for (double& v : gray) v /= static_cast<double>(map.channels());
  const auto [lo, hi] = std::minmax_element(gray.begin(), gray.end());
  const double min = *lo, range = *hi - *lo;

  const std::string header = "P5\n" + std::to_string(map.width()) + " " +
                             std::to_string(map.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + plane);
  for (double v : gray) {
    const double scaled = range > 0.0 ? (v - min) / range * 255.0 : 128.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(scaled)));
  }
  return out;
}

void export_pgm(const Image& map, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_pgm(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("export_pgm: cannot write '" + path.string() + "'");
  }
}

PgmImage parse_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  // Reads one whitespace-terminated token; exactly one separator follows.
  auto token = [&]() {
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) {
      t += static_cast<char>(bytes[pos++]);
    }
    if (pos >= bytes.size() || t.empty()) {
      throw std::runtime_error("pgm: truncated header");
    }
    ++pos;
    return t;
  };
  if (token() != "P5") throw std::runtime_error("pgm: not a binary PGM (P5)");
  PgmImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) {
      throw std::runtime_error("pgm: only maxval 255 is supported");
    }
  } catch (const std::logic_error&) {
    throw std::runtime_error("pgm: malformed header");
  }
  if (bytes.size() - pos != img.width * img.height) {
    throw std::runtime_error("pgm: expected " +
                             std::to_string(img.width * img.height) +
                             " pixel bytes, found " +
                             std::to_string(bytes.size() - pos));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return parse_pgm(bytes);
}

}  // namespace specsim
