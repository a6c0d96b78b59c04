#include "distnewton/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace distnewton {

int Dataset::class_count() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t value) {
  out.push_back(static_cast<std::uint8_t>(value >> 24));
  out.push_back(static_cast<std::uint8_t>(value >> 16));
  out.push_back(static_cast<std::uint8_t>(value >> 8));
  out.push_back(static_cast<std::uint8_t>(value));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IdxError(IdxErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IdxError(IdxErrorKind::io, "short write to " + path.string());
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                  std::optional<Index> limit) {
  if (image_bytes.size() < 4 || label_bytes.size() < 4)
    throw IdxError(IdxErrorKind::truncated, "idx: file shorter than its magic number");
  const std::uint32_t image_magic = read_be32(image_bytes, 0);
  if (image_magic != kIdxImageMagic)
    throw IdxError(IdxErrorKind::bad_magic, "idx: bad magic " + std::to_string(image_magic) + " in image file");
  const std::uint32_t label_magic = read_be32(label_bytes, 0);
  if (label_magic != kIdxLabelMagic)
    throw IdxError(IdxErrorKind::bad_magic, "idx: bad magic " + std::to_string(label_magic) + " in label file");
  if (image_bytes.size() < 16) throw IdxError(IdxErrorKind::truncated, "idx: image header truncated");
  if (label_bytes.size() < 8) throw IdxError(IdxErrorKind::truncated, "idx: label header truncated");

  const std::uint64_t image_count = read_be32(image_bytes, 4);
  const std::uint64_t rows = read_be32(image_bytes, 8);
  const std::uint64_t cols = read_be32(image_bytes, 12);
  const std::uint64_t label_count = read_be32(label_bytes, 4);
  if (image_count != label_count)
    throw IdxError(IdxErrorKind::count_mismatch, "idx: " + std::to_string(image_count) + " images but " +
                                                     std::to_string(label_count) + " labels");

  const std::uint64_t features = rows * cols;
  if (image_bytes.size() - 16 < image_count * features)
    throw IdxError(IdxErrorKind::truncated, "idx: image payload truncated");
  if (label_bytes.size() - 8 < label_count) throw IdxError(IdxErrorKind::truncated, "idx: label payload truncated");

  Index count = static_cast<Index>(image_count);
  if (limit) count = std::min(count, std::max<Index>(*limit, 0));

  Dataset dataset;
  dataset.inputs.resize(static_cast<Index>(features), count);
  dataset.labels.resize(static_cast<std::size_t>(count));
  const std::uint8_t* pixels = image_bytes.data() + 16;
  for (Index s = 0; s < count; ++s) {
    for (Index f = 0; f < static_cast<Index>(features); ++f)
      dataset.inputs(f, s) = static_cast<double>(pixels[static_cast<std::size_t>(s) * features + f]) / 255.0;
    dataset.labels[static_cast<std::size_t>(s)] = label_bytes[8 + static_cast<std::size_t>(s)];
  }
  return dataset;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::optional<Index> limit) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  return parse_idx(images, labels, limit);
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& dataset, std::uint32_t rows, std::uint32_t cols) {
  if (static_cast<Index>(rows) * cols != dataset.feature_count())
    throw DimensionError("encode_idx_images: rows * cols", dataset.feature_count(), static_cast<Index>(rows) * cols);
  std::vector<std::uint8_t> out;
  out.reserve(16 + static_cast<std::size_t>(dataset.inputs.size()));
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(dataset.sample_count()));
  write_be32(out, rows);
  write_be32(out, cols);
  for (Index s = 0; s < dataset.sample_count(); ++s)
    for (Index f = 0; f < dataset.feature_count(); ++f) {
      const double scaled = std::clamp(dataset.inputs(f, s), 0.0, 1.0) * 255.0;
      out.push_back(static_cast<std::uint8_t>(std::lround(scaled)));
    }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& dataset) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + dataset.labels.size());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(dataset.labels.size()));
  for (int label : dataset.labels) {
    if (label < 0 || label > 255) throw std::out_of_range("encode_idx_labels: label does not fit a byte");
    out.push_back(static_cast<std::uint8_t>(label));
  }
  return out;
}

void write_idx(const Dataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path, std::uint32_t rows, std::uint32_t cols) {
  write_file(images_path, encode_idx_images(dataset, rows, cols));
  write_file(labels_path, encode_idx_labels(dataset));
}

Dataset synthetic_blobs(Index n_features, int n_classes, Index n_samples, std::uint64_t seed) {
  if (n_features < 1 || n_classes < 1 || n_samples < 1)
    throw std::invalid_argument("synthetic_blobs: counts must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  constexpr double kCenterSpread = 4.0;
  MatrixXd centers(n_features, n_classes);
  for (Index c = 0; c < n_classes; ++c)
    for (Index f = 0; f < n_features; ++f) centers(f, c) = kCenterSpread * normal(rng);

  Dataset dataset;
  dataset.inputs.resize(n_features, n_samples);
  dataset.labels.resize(static_cast<std::size_t>(n_samples));
  for (Index s = 0; s < n_samples; ++s) {
    const int label = static_cast<int>(s % n_classes);
    dataset.labels[static_cast<std::size_t>(s)] = label;
    for (Index f = 0; f < n_features; ++f) dataset.inputs(f, s) = centers(f, label) + normal(rng);
  }

  for (Index f = 0; f < n_features; ++f) {
    auto row = dataset.inputs.row(f);
    const double lo = row.minCoeff();
    const double span = row.maxCoeff() - lo;
    if (span > 0.0)
      row = (row.array() - lo) / span;
    else
      row.setZero();
  }
  return dataset;
}

ShardPlan shard(Index sample_count, int m, std::uint64_t epoch_seed) {
  if (m < 1) throw std::invalid_argument("shard: worker count must be >= 1");
  std::vector<Index> permutation(static_cast<std::size_t>(sample_count));
  std::iota(permutation.begin(), permutation.end(), Index(0));
  std::mt19937_64 rng(epoch_seed);
  std::shuffle(permutation.begin(), permutation.end(), rng);

  ShardPlan plan;
  plan.m = m;
  plan.epoch_seed = epoch_seed;
  plan.assignment.resize(static_cast<std::size_t>(sample_count));
  plan.shards.resize(static_cast<std::size_t>(m));
  for (std::size_t p = 0; p < permutation.size(); ++p) {
    const int worker = static_cast<int>(p % static_cast<std::size_t>(m));
    plan.assignment[static_cast<std::size_t>(permutation[p])] = worker;
    plan.shards[static_cast<std::size_t>(worker)].push_back(permutation[p]);
  }
  return plan;
}

ShardPlan shard(const Dataset& dataset, int m, std::uint64_t epoch_seed) {
  return shard(dataset.sample_count(), m, epoch_seed);
}

std::vector<Index> split_batch(Index global_batch, int m) {
  if (m < 1) throw std::invalid_argument("split_batch: worker count must be >= 1");
  std::vector<Index> sizes(static_cast<std::size_t>(m), global_batch / m);
  for (Index k = 0; k < global_batch % m; ++k) ++sizes[static_cast<std::size_t>(k)];
  return sizes;
}

Batch make_batch(const Dataset& dataset, std::span<const Index> samples) {
  Batch batch;
  batch.inputs.resize(dataset.feature_count(), static_cast<Index>(samples.size()));
  batch.labels.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    batch.inputs.col(static_cast<Index>(i)) = dataset.inputs.col(samples[i]);
    batch.labels.push_back(dataset.labels[static_cast<std::size_t>(samples[i])]);
  }
  return batch;
}

Batch full_batch(const Dataset& dataset) { return Batch{dataset.inputs, dataset.labels}; }

}  // namespace distnewton
