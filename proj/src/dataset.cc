#include "specsim/dataset.h"

#include <stdexcept>

namespace specsim {

const char* split_name(Split split) {
  return split == Split::kTrain ? "train" : "test";
}

ImageShape Dataset::image_shape() const {
  if (images.empty()) {
    throw std::invalid_argument("dataset is empty");
  }
  return images.front().shape();
}

void Dataset::validate() const {
  if (images.size() != labels.size()) {
    throw std::invalid_argument(
        "dataset has " + std::to_string(images.size()) + " images but " +
        std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != images.front().shape()) {
      throw std::invalid_argument("dataset image " + std::to_string(i) +
                                  " has shape " +
                                  shape_string(images[i].shape()));
    }
    if (labels[i] >= num_classes) {
      throw std::invalid_argument("dataset label " + std::to_string(labels[i]) +
                                  " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::head(std::size_t count) const {
  Dataset out;
  out.split = split;
  out.num_classes = num_classes;
  const std::size_t n = std::min(count, images.size());
  out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n));
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

}  // namespace specsim
