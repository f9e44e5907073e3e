#ifndef SPECSIM_IDX_H_
#define SPECSIM_IDX_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "specsim/dataset.h"

namespace specsim {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

class IdxError : public std::runtime_error {
 public:
  enum class Kind { kIo, kWrongMagic, kTruncated, kCountMismatch, kBadLabel };
  IdxError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

// Loads an image/label file pair into single-channel images with pixels
// scaled to [0,1] by /255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 Split split = Split::kTrain, std::size_t num_classes = 10);

// Loads <dir>/train-* (kTrain) or <dir>/t10k-* (kTest) in the usual MNIST
// file naming.
Dataset load_mnist_dir(const std::filesystem::path& dir, Split split);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

}  // namespace specsim

#endif  // SPECSIM_IDX_H_
