#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpx/tensor.hpp"

namespace fpx::cli {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PGM (P5), 8- or 16-bit. Pixels come back as a 1 x H x W tensor
/// scaled to [0, 1].
Tensor read_pgm(const std::filesystem::path& path);
/// Writes an 8-bit P5 file; values are clamped to [0, 1] and rounded.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Every *.pgm directly under `dir`, sorted by file name.
std::vector<std::filesystem::path> list_pgm(const std::filesystem::path& dir);

struct SparseDataset {
  Tensor features;  // N x n_features, entries 0/1
  Tensor labels;    // N x n_labels, entries 0/1
  int feature_base = 0;
  int label_base = 0;
  std::size_t empty_label_rows = 0;
  std::vector<std::string> warnings;
};

struct SparseFormat {
  std::size_t n_features = 1836;
  std::size_t n_labels = 159;
  /// Abort unless the file holds exactly this many samples (negative: any).
  long long expect_samples = -1;
};

/// One sample per line: `l1,l2,... f1:v f2:v ...`. An optional first line
/// `N F L` gives counts. Indices are 0-based unless the largest index equals
/// the dimension and none is 0, which marks the file as 1-based; features
/// and labels are detected separately.
SparseDataset load_sparse_dataset(const std::filesystem::path& path, const SparseFormat& format = {});

struct MetricRow {
  std::string run_id;
  int epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

/// CSV with header `run_id,epoch,split,metric,value`, rows sorted by
/// (run_id, epoch, metric, split), values printed with 17 significant digits.
void emit_metrics(const std::filesystem::path& path, std::vector<MetricRow> rows);
std::string format_metrics(std::vector<MetricRow> rows);

}  // namespace fpx::cli
