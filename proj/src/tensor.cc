#include "specsim/tensor.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace specsim {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string shape_string(const ImageShape& shape) {
  return std::to_string(shape.height) + "x" + std::to_string(shape.width) +
         "x" + std::to_string(shape.channels);
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("tensor shape " + shape_string(shape_) +
                                " does not match " +
                                std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Image::Image(ImageShape shape, double fill)
    : shape_(shape), data_(shape.size(), fill) {}

Image::Image(ImageShape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (shape_.size() != data_.size()) {
    throw std::invalid_argument("image shape " + shape_string(shape_) +
                                " does not match " +
                                std::to_string(data_.size()) + " elements");
  }
}

std::span<double> Image::plane(std::size_t c) {
  return std::span<double>(data_).subspan(c * shape_.plane_size(),
                                          shape_.plane_size());
}

std::span<const double> Image::plane(std::size_t c) const {
  return std::span<const double>(data_).subspan(c * shape_.plane_size(),
                                                shape_.plane_size());
}

Tensor Image::to_tensor() const {
  return Tensor({shape_.channels, shape_.height, shape_.width}, data_);
}

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3) {
    throw std::invalid_argument("image tensor must have rank 3, got " +
                                shape_string(t.shape()));
  }
  return Image({t.dim(1), t.dim(2), t.dim(0)}, t.storage());
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("max_abs_diff: size mismatch");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

double linf_norm(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace specsim
