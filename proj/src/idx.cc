#include "specsim/idx.h"

#include <fstream>
#include <iterator>

namespace specsim {
namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t offset) {
  return (static_cast<std::uint32_t>(b[offset]) << 24) |
         (static_cast<std::uint32_t>(b[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(b[offset + 2]) << 8) |
         static_cast<std::uint32_t>(b[offset + 3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int i = 7; i >= 0; --i) s += digits[(v >> (4 * i)) & 0xf];
  return s;
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) {
    throw IdxError(IdxError::Kind::kTruncated, "IDX image header truncated");
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImagesMagic) {
    throw IdxError(IdxError::Kind::kWrongMagic,
                   "IDX images: expected magic " + hex(kIdxImagesMagic) +
                       ", got " + hex(magic));
  }
  IdxImages out;
  out.count = read_be32(bytes, 4);
  out.rows = read_be32(bytes, 8);
  out.cols = read_be32(bytes, 12);
  const std::uint64_t expected =
      static_cast<std::uint64_t>(out.count) * out.rows * out.cols;
  if (bytes.size() - 16 < expected) {
    throw IdxError(IdxError::Kind::kTruncated,
                   "IDX images: payload has " + std::to_string(bytes.size() - 16) +
                       " bytes, header promises " + std::to_string(expected));
  }
  out.pixels.assign(bytes.begin() + 16,
                    bytes.begin() + 16 + static_cast<std::ptrdiff_t>(expected));
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) {
    throw IdxError(IdxError::Kind::kTruncated, "IDX label header truncated");
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxLabelsMagic) {
    throw IdxError(IdxError::Kind::kWrongMagic,
                   "IDX labels: expected magic " + hex(kIdxLabelsMagic) +
                       ", got " + hex(magic));
  }
  const std::uint32_t count = read_be32(bytes, 4);
  if (bytes.size() - 8 < count) {
    throw IdxError(IdxError::Kind::kTruncated,
                   "IDX labels: payload has " + std::to_string(bytes.size() - 8) +
                       " bytes, header promises " + std::to_string(count));
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxImagesMagic);
  put_be32(out, images.count);
  put_be32(out, images.rows);
  put_be32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IdxError(IdxError::Kind::kIo, "cannot open '" + path.string() + "'");
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IdxError(IdxError::Kind::kIo, "cannot write '" + path.string() + "'");
  }
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, Split split,
                 std::size_t num_classes) {
  const IdxImages images = parse_idx_images(read_file(images_path));
  const std::vector<std::uint8_t> labels = parse_idx_labels(read_file(labels_path));
  if (labels.size() != images.count) {
    throw IdxError(IdxError::Kind::kCountMismatch,
                   "IDX: " + std::to_string(images.count) + " images but " +
                       std::to_string(labels.size()) + " labels");
  }
  Dataset data;
  data.split = split;
  data.num_classes = num_classes;
  const ImageShape shape{images.rows, images.cols, 1};
  const std::size_t plane = shape.plane_size();
  data.images.reserve(images.count);
  for (std::size_t i = 0; i < images.count; ++i) {
    if (labels[i] >= num_classes) {
      throw IdxError(IdxError::Kind::kBadLabel,
                     "IDX: label " + std::to_string(labels[i]) + " at index " +
                         std::to_string(i) + " outside [0, " +
                         std::to_string(num_classes) + ")");
    }
    Image img(shape);
    for (std::size_t j = 0; j < plane; ++j) {
      img[j] = static_cast<double>(images.pixels[i * plane + j]) / 255.0;
    }
    data.images.push_back(std::move(img));
    data.labels.push_back(labels[i]);
  }
  return data;
}

Dataset load_mnist_dir(const std::filesystem::path& dir, Split split) {
  const std::string prefix = split == Split::kTrain ? "train" : "t10k";
  return load_idx(dir / (prefix + "-images-idx3-ubyte"),
                  dir / (prefix + "-labels-idx1-ubyte"), split);
}

}  // namespace specsim
