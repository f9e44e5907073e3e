#ifndef SPECSIM_DATASET_H_
#define SPECSIM_DATASET_H_

#include <cstddef>
#include <string>
#include <vector>

#include "specsim/tensor.h"

namespace specsim {

enum class Split { kTrain, kTest };

const char* split_name(Split split);

// Labelled images sharing one shape. Invariant: images.size() ==
// labels.size() and every label < num_classes.
struct Dataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  Split split = Split::kTrain;
  std::size_t num_classes = 10;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  ImageShape image_shape() const;

  // Throws std::invalid_argument if the invariants do not hold.
  void validate() const;

  // First `count` examples (or all of them if fewer).
  Dataset head(std::size_t count) const;
};

}  // namespace specsim

#endif  // SPECSIM_DATASET_H_
