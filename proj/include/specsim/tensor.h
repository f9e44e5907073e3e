#ifndef SPECSIM_TENSOR_H_
#define SPECSIM_TENSOR_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace specsim {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Same data, different shape. Element count must match.
  Tensor reshaped(Shape shape) const;
  void fill(double v);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const { return height * width * channels; }
  std::size_t plane_size() const { return height * width; }
  bool operator==(const ImageShape&) const = default;
};

std::string shape_string(const ImageShape& shape);

// H x W x C image. Storage is planar: channel c occupies the contiguous range
// [c*H*W, (c+1)*H*W), each plane row-major. Pixel values of clean images lie
// in [0,1]; transformed images and gradients use the same container unclipped.
class Image {
 public:
  Image() = default;
  explicit Image(ImageShape shape, double fill = 0.0);
  Image(ImageShape shape, std::vector<double> data);

  const ImageShape& shape() const { return shape_; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  std::span<double> plane(std::size_t c);
  std::span<const double> plane(std::size_t c) const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Tensor view used by models: shape {C, H, W}.
  Tensor to_tensor() const;
  static Image from_tensor(const Tensor& t);

  bool operator==(const Image& other) const = default;

 private:
  ImageShape shape_;
  std::vector<double> data_;
};

double max_abs_diff(std::span<const double> a, std::span<const double> b);
double linf_norm(std::span<const double> a);

}  // namespace specsim

#endif  // SPECSIM_TENSOR_H_
