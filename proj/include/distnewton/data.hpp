#pragma once

#include "distnewton/linalg.hpp"
#include "distnewton/objectives.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace distnewton {

// One sample per column, values in [0, 1].
struct Dataset {
  MatrixXd inputs;
  std::vector<int> labels;

  Index sample_count() const { return inputs.cols(); }
  Index feature_count() const { return inputs.rows(); }
  int class_count() const;
};

enum class IdxErrorKind { io, bad_magic, truncated, count_mismatch };

class IdxError : public std::runtime_error {
 public:
  IdxError(IdxErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  IdxErrorKind kind() const { return kind_; }

 private:
  IdxErrorKind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an IDX image file (ubyte, 3 dims) and its label file. Pixels are
// scaled by 1/255. With a limit, only the first `limit` samples are kept.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::optional<Index> limit = std::nullopt);

// Parses in-memory IDX payloads; the file loader is a thin wrapper over this.
Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                  std::optional<Index> limit = std::nullopt);

// Inverse of parse_idx. Images are written as rows x cols with rows * cols
// equal to the feature count; pixels are rounded to the nearest 1/255.
std::vector<std::uint8_t> encode_idx_images(const Dataset& dataset, std::uint32_t rows, std::uint32_t cols);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& dataset);
void write_idx(const Dataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path, std::uint32_t rows, std::uint32_t cols);

// Gaussian clusters around seeded centers, min-max scaled to [0, 1] per feature.
Dataset synthetic_blobs(Index n_features, int n_classes, Index n_samples, std::uint64_t seed);

struct ShardPlan {
  int m = 1;
  std::uint64_t epoch_seed = 0;
  std::vector<int> assignment;          // worker index per sample
  std::vector<std::vector<Index>> shards;  // per worker, in permutation order
};

// Seeded permutation, dealt round-robin to m workers.
ShardPlan shard(const Dataset& dataset, int m, std::uint64_t epoch_seed);
ShardPlan shard(Index sample_count, int m, std::uint64_t epoch_seed);

// Per-worker share of a global batch; the remainder goes to the lowest indices.
std::vector<Index> split_batch(Index global_batch, int m);

Batch make_batch(const Dataset& dataset, std::span<const Index> samples);
Batch full_batch(const Dataset& dataset);

}  // namespace distnewton
