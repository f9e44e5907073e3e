#include "specsim/spectral.h"

#include <cmath>
#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace specsim {
namespace {

// out = L * X * R^T when forward, L^T * X * R otherwise, with L the rows-basis
// and R the cols-basis.
void separable(std::span<const double> in, std::size_t rows, std::size_t cols,
               std::span<double> out, bool forward) {
  if (rows == 0 || cols == 0) {
    throw std::invalid_argument("dct2: empty plane");
  }
  if (in.size() != rows * cols || out.size() != rows * cols) {
    throw std::invalid_argument("dct2: buffer size does not match " +
                                std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  const DctBasis& a_rows = cached_dct_basis(rows);
  const DctBasis& a_cols = cached_dct_basis(cols);

  // tmp = X * R^T (forward) or X * R (inverse)
  std::vector<double> tmp(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x_row = in.data() + i * cols;
    double* t_row = tmp.data() + i * cols;
    if (forward) {
      for (std::size_t l = 0; l < cols; ++l) {
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) acc += x_row[j] * a_cols(l, j);
        t_row[l] = acc;
      }
    } else {
      for (std::size_t j = 0; j < cols; ++j) {
        const double xv = x_row[j];
        const double* basis_row = a_cols.matrix().data() + j * cols;
        for (std::size_t l = 0; l < cols; ++l) t_row[l] += xv * basis_row[l];
      }
    }
  }
  // out = L * tmp (forward) or L^T * tmp (inverse)
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < rows; ++k) {
    double* o_row = out.data() + k * cols;
    for (std::size_t i = 0; i < rows; ++i) {
      const double w = forward ? a_rows(k, i) : a_rows(i, k);
      const double* t_row = tmp.data() + i * cols;
      for (std::size_t l = 0; l < cols; ++l) o_row[l] += w * t_row[l];
    }
  }
}

ImageShape padded_shape(const ImageShape& s, std::size_t block) {
  auto up = [block](std::size_t v) { return (v + block - 1) / block * block; };
  return {up(s.height), up(s.width), s.channels};
}

// Applies the per-channel, per-block transform to a coefficient-shaped buffer.
void blockwise(const Image& in, std::size_t block, Image& out, bool forward) {
  const std::size_t h = in.height();
  const std::size_t w = in.width();
  std::vector<double> tile(block * block);
  std::vector<double> tile_out(block * block);
  for (std::size_t c = 0; c < in.channels(); ++c) {
    for (std::size_t by = 0; by < h; by += block) {
      for (std::size_t bx = 0; bx < w; bx += block) {
        for (std::size_t y = 0; y < block; ++y) {
          for (std::size_t x = 0; x < block; ++x) {
            tile[y * block + x] = in.at(by + y, bx + x, c);
          }
        }
        if (forward) {
          dct2(tile, block, block, tile_out);
        } else {
          idct2(tile, block, block, tile_out);
        }
        for (std::size_t y = 0; y < block; ++y) {
          for (std::size_t x = 0; x < block; ++x) {
            out.at(by + y, bx + x, c) = tile_out[y * block + x];
          }
        }
      }
    }
  }
}

}  // namespace

DctBasis::DctBasis(std::size_t n) : n_(n) {
  if (n == 0) {
    throw std::invalid_argument("dct_basis: size must be positive");
  }
  matrix_ = Tensor({n, n});
  const double s0 = std::sqrt(1.0 / static_cast<double>(n));
  const double sk = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const double s = k == 0 ? s0 : sk;
    for (std::size_t i = 0; i < n; ++i) {
      matrix_[k * n + i] =
          s * std::cos(std::numbers::pi * static_cast<double>((2 * i + 1) * k) /
                       static_cast<double>(2 * n));
    }
  }
}

Tensor DctBasis::transposed() const {
  Tensor t({n_, n_});
  for (std::size_t k = 0; k < n_; ++k) {
    for (std::size_t i = 0; i < n_; ++i) t[i * n_ + k] = matrix_[k * n_ + i];
  }
  return t;
}

DctBasis dct_basis(std::size_t n) { return DctBasis(n); }

const DctBasis& cached_dct_basis(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<const DctBasis>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) {
    it = cache.emplace(n, std::make_unique<const DctBasis>(n)).first;
  }
  return *it->second;
}

void dct2(std::span<const double> in, std::size_t rows, std::size_t cols,
          std::span<double> out) {
  separable(in, rows, cols, out, /*forward=*/true);
}

void idct2(std::span<const double> in, std::size_t rows, std::size_t cols,
           std::span<double> out) {
  separable(in, rows, cols, out, /*forward=*/false);
}

Plane dct2(const Plane& plane) {
  Plane out(plane.rows, plane.cols);
  dct2(plane.values, plane.rows, plane.cols, out.values);
  return out;
}

Plane idct2(const Plane& spectrum) {
  Plane out(spectrum.rows, spectrum.cols);
  idct2(spectrum.values, spectrum.rows, spectrum.cols, out.values);
  return out;
}

Spectrum dct2(const Image& image) {
  Spectrum s{Image(image.shape()), image.shape(), kFullImage};
  for (std::size_t c = 0; c < image.channels(); ++c) {
    dct2(image.plane(c), image.height(), image.width(),
         s.coefficients.plane(c));
  }
  return s;
}

Image idct2(const Spectrum& spectrum) {
  if (spectrum.block_size != kFullImage) return block_idct2(spectrum);
  const Image& z = spectrum.coefficients;
  Image out(z.shape());
  for (std::size_t c = 0; c < z.channels(); ++c) {
    idct2(z.plane(c), z.height(), z.width(), out.plane(c));
  }
  return out;
}

Spectrum block_dct2(const Image& image, std::size_t block_size) {
  if (block_size < 2) {
    throw std::invalid_argument("block_dct2: block size must be >= 2, got " +
                                std::to_string(block_size));
  }
  const ImageShape padded = padded_shape(image.shape(), block_size);
  Image src(padded);
  for (std::size_t c = 0; c < image.channels(); ++c) {
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) {
        src.at(y, x, c) = image.at(y, x, c);
      }
    }
  }
  Spectrum s{Image(padded), image.shape(), block_size};
  blockwise(src, block_size, s.coefficients, /*forward=*/true);
  return s;
}

Image block_idct2(const Spectrum& spectrum) {
  if (spectrum.block_size == kFullImage) return idct2(spectrum);
  const Image& z = spectrum.coefficients;
  Image full(z.shape());
  blockwise(z, spectrum.block_size, full, /*forward=*/false);
  const ImageShape& src = spectrum.source_shape;
  Image out(src);
  for (std::size_t c = 0; c < src.channels; ++c) {
    for (std::size_t y = 0; y < src.height; ++y) {
      for (std::size_t x = 0; x < src.width; ++x) {
        out.at(y, x, c) = full.at(y, x, c);
      }
    }
  }
  return out;
}

void SpectrumTransformParams::validate(const ImageShape& shape) const {
  if (!(sigma >= 0.0)) {
    throw std::invalid_argument("spectrum transform: sigma must be >= 0");
  }
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw std::invalid_argument("spectrum transform: rho must lie in [0, 1)");
  }
  if (n_transforms == 0) {
    throw std::invalid_argument(
        "spectrum transform: number of transforms must be positive");
  }
  if (block_size != kFullImage) {
    if (block_size < 2) {
      throw std::invalid_argument("spectrum transform: block size must be >= 2");
    }
    if (block_size > std::min(shape.height, shape.width)) {
      throw std::invalid_argument("spectrum transform: block size " +
                                  std::to_string(block_size) +
                                  " exceeds image " + shape_string(shape));
    }
  }
}

SpectrumDraw sample_spectrum_draw(const ImageShape& shape,
                                  const SpectrumTransformParams& params,
                                  Rng& rng) {
  params.validate(shape);
  const bool full = params.block_size == kFullImage ||
                    (params.block_size == shape.height &&
                     params.block_size == shape.width);
  const std::size_t block = full ? kFullImage : params.block_size;
  SpectrumDraw draw{Image(shape),
                    Image(full ? shape : padded_shape(shape, block)), block,
                    params.sigma == 0.0 && params.rho == 0.0};
  if (params.sigma > 0.0) {
    for (double& v : draw.noise.values()) v = rng.normal(0.0, params.sigma);
  }
  if (params.rho > 0.0) {
    for (double& v : draw.mask.values()) {
      v = rng.uniform(1.0 - params.rho, 1.0 + params.rho);
    }
  } else {
    for (double& v : draw.mask.values()) v = 1.0;
  }
  return draw;
}

namespace {

Image masked_round_trip(const Image& x, const SpectrumDraw& draw) {
  if (draw.identity) return x;
  Spectrum s = draw.block_size == kFullImage ? dct2(x)
                                             : block_dct2(x, draw.block_size);
  if (s.coefficients.shape() != draw.mask.shape()) {
    throw std::invalid_argument("spectrum transform: mask shape " +
                                shape_string(draw.mask.shape()) +
                                " does not match spectrum " +
                                shape_string(s.coefficients.shape()));
  }
  auto coeff = s.coefficients.values();
  auto mask = draw.mask.values();
  for (std::size_t i = 0; i < coeff.size(); ++i) coeff[i] *= mask[i];
  return block_idct2(s);
}

}  // namespace

Image apply_spectrum_transform(const Image& x, const SpectrumDraw& draw) {
  if (x.shape() != draw.noise.shape()) {
    throw std::invalid_argument("spectrum transform: image " +
                                shape_string(x.shape()) + " vs draw " +
                                shape_string(draw.noise.shape()));
  }
  Image shifted = x;
  auto noise = draw.noise.values();
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += noise[i];
  return masked_round_trip(shifted, draw);
}

Image spectrum_transform_adjoint(const Image& g, const SpectrumDraw& draw) {
  return masked_round_trip(g, draw);
}

Image spectrum_transform(const Image& x, const SpectrumTransformParams& params,
                         Rng& rng) {
  return apply_spectrum_transform(x,
                                  sample_spectrum_draw(x.shape(), params, rng));
}

}  // namespace specsim
