#pragma once

#include "ebmgan/fisher.hpp"
#include "ebmgan/training.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ebmgan {

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  std::string name;
  Tensor features;                  // count x dim
  std::optional<std::vector<int>> labels;

  std::size_t count() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

/// kind: two-moons, rings, gaussian-mixture-<k>, checkerboard.
Dataset gen_dataset(std::string_view kind, std::size_t n, double noise, std::uint64_t seed);

void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

/// Comma-separated rows; a non-numeric first line is skipped as a header.
/// With `last_column_is_label` the final column is parsed as an integer label.
Dataset read_csv_dataset(const std::filesystem::path& path, bool last_column_is_label, std::string name = "csv");
void write_csv_dataset(const std::filesystem::path& path, const Dataset& data);

/// Deterministic shuffled split; the first `train_fraction` goes to train.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double train_fraction, std::uint64_t seed);

Dataset subset(const Dataset& data, std::span<const std::size_t> rows);

// ---------------------------------------------------------------------------
// Configuration files: "key = value" per line, '#' starts a comment.

TrainConfig parse_config(std::string_view text);
TrainConfig read_config(const std::filesystem::path& path);
std::string format_config(const TrainConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  TrainState state;
  std::string id;  // content hash, filled in by save/load
};

std::string checkpoint_id(const TrainState& state);
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Metrics log: JSON lines, a header object first.

std::string metrics_header_line();
std::string metrics_to_json_line(const MetricsRecord& record);
MetricsRecord metrics_from_json_line(std::string_view line);

class MetricsWriter {
public:
  /// Truncates `path` and writes the header.
  explicit MetricsWriter(const std::filesystem::path& path);
  /// Opens an existing log for appending (resume).
  static MetricsWriter append_to(const std::filesystem::path& path);

  void write(const MetricsRecord& record);

private:
  MetricsWriter() = default;
  std::filesystem::path path_;
  std::uint64_t last_iteration_ = 0;
};

struct MetricsLog {
  std::vector<MetricsRecord> records;
  bool truncated_tail = false;  // an incomplete final line was dropped
};

MetricsLog read_metrics_log(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// AFV export and Fisher statistics sidecar

struct AfvFile {
  std::string checkpoint_id;
  double epsilon = 0.0;
  std::vector<AdversarialFisherVector> vectors;
  std::vector<int> labels;  // -1 when unlabeled
};

void write_afv_file(const std::filesystem::path& path, const AfvFile& file);
AfvFile read_afv_file(const std::filesystem::path& path);
std::filesystem::path afv_ids_path(const std::filesystem::path& path);

void write_fisher_stats(const std::filesystem::path& path, const FisherStats& stats);
FisherStats read_fisher_stats(const std::filesystem::path& path, const ParamLayout& layout);

}  // namespace ebmgan
