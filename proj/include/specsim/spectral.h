#ifndef SPECSIM_SPECTRAL_H_
#define SPECSIM_SPECTRAL_H_

#include <cstddef>
#include <span>

#include "specsim/rng.h"
#include "specsim/tensor.h"

namespace specsim {

// Orthonormal type-II DCT basis: A[k][i] = s(k) cos(pi (2i+1) k / 2n),
// s(0) = sqrt(1/n), s(k>0) = sqrt(2/n). Rows are basis vectors.
class DctBasis {
 public:
  explicit DctBasis(std::size_t n);

  std::size_t size() const { return n_; }
  double operator()(std::size_t k, std::size_t i) const {
    return matrix_[k * n_ + i];
  }
  // n x n row-major tensor.
  const Tensor& matrix() const { return matrix_; }
  Tensor transposed() const;

 private:
  std::size_t n_;
  Tensor matrix_;
};

DctBasis dct_basis(std::size_t n);

// Shared immutable basis for size n, built once per process. Thread-safe.
const DctBasis& cached_dct_basis(std::size_t n);

// Single real plane (rows x cols, row-major).
struct Plane {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return values[r * cols + c];
  }
};

// D(x) = A_H x A_W^T.
Plane dct2(const Plane& plane);
// D_I(z) = A_H^T z A_W.
Plane idct2(const Plane& spectrum);

// In-place-free raw forms over a rows x cols row-major buffer.
void dct2(std::span<const double> in, std::size_t rows, std::size_t cols,
          std::span<double> out);
void idct2(std::span<const double> in, std::size_t rows, std::size_t cols,
           std::span<double> out);

inline constexpr std::size_t kFullImage = 0;

// Per-channel DCT coefficients. With block_size != kFullImage the coefficient
// array covers the zero-padded image (dimensions rounded up to a multiple of
// block_size) and each block holds its own independent spectrum.
struct Spectrum {
  Image coefficients;
  ImageShape source_shape;
  std::size_t block_size = kFullImage;
};

Spectrum dct2(const Image& image);
Image idct2(const Spectrum& spectrum);

// Throws std::invalid_argument when block_size < 2.
Spectrum block_dct2(const Image& image, std::size_t block_size);
// Inverse of block_dct2 (or of dct2 when block_size is kFullImage); crops the
// padding back to source_shape.
Image block_idct2(const Spectrum& spectrum);

struct SpectrumTransformParams {
  double sigma = 16.0 / 255.0;  // std of the spatial Gaussian noise
  double rho = 0.5;             // mask entries ~ U(1 - rho, 1 + rho)
  std::size_t n_transforms = 20;
  std::size_t block_size = kFullImage;

  // Throws std::invalid_argument on sigma < 0, rho outside [0,1),
  // n_transforms == 0, or a block size that does not fit the image.
  void validate(const ImageShape& shape) const;
};

// One realisation of the random variables of the transform. Frozen draws make
// the transform a fixed linear map (plus offset), which is what the gradient
// placement modes and the saliency diagnostics need.
struct SpectrumDraw {
  Image noise;              // source shape
  Image mask;               // coefficient shape (padded in block mode)
  std::size_t block_size = kFullImage;
  // Set when sigma == rho == 0: the transform is exactly the identity and
  // the DCT round trip is skipped.
  bool identity = false;
};

SpectrumDraw sample_spectrum_draw(const ImageShape& shape,
                                  const SpectrumTransformParams& params,
                                  Rng& rng);

// D_I(D(x + noise) * mask). Output is not clipped.
Image apply_spectrum_transform(const Image& x, const SpectrumDraw& draw);

// Transpose of the Jacobian of apply_spectrum_transform w.r.t. x, applied to
// g: D_I(D(g) * mask). The map is symmetric because the DCT is orthonormal.
Image spectrum_transform_adjoint(const Image& g, const SpectrumDraw& draw);

// Samples a draw and applies it.
Image spectrum_transform(const Image& x, const SpectrumTransformParams& params,
                         Rng& rng);

}  // namespace specsim

#endif  // SPECSIM_SPECTRAL_H_
