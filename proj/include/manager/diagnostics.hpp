// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "manager/mllm.hpp"
#include "manager/tensor.hpp"
#include "manager/two_tower.hpp"

namespace manager {

/// Cosine of the flattened tensors. Throws NumericError on a zero vector.
double cosine_similarity(const Tensor& a, const Tensor& b);

struct IndexSpan {
  std::size_t begin = 0;
  std::size_t count = 0;
};

/// Sub-block [H x |queries| x |keys|] of attention weights with every row
/// renormalized to sum to 1. Rows must be distributions (within 1e-6) before
/// slicing; a row with no mass inside the block is a ContractError.
Tensor attention_block(const Tensor& weights, std::optional<IndexSpan> queries = {},
                       std::optional<IndexSpan> keys = {});

/// Mean over heads and queries of -sum p ln p (0 ln 0 = 0), natural log.
double attention_entropy(const Tensor& weights, std::optional<IndexSpan> queries = {},
                         std::optional<IndexSpan> keys = {});

/// Mean over ordered head pairs (i != j) and queries of KL(p_i || p_j), with
/// the second argument clamped at 1e-12. Needs at least two heads.
double inter_head_kl(const Tensor& weights, std::optional<IndexSpan> queries = {},
                     std::optional<IndexSpan> keys = {});

inline constexpr double kKlFloor = 1e-12;

struct AttentionDistance {
  std::vector<double> per_head;
  double mean = 0.0;
};

/// Attention-weighted 2D distance between query and key patches of a
/// grid_rows x grid_cols patch grid, in pixels. With `class_token` the first
/// position is dropped and rows are renormalized over the patches.
AttentionDistance mean_attention_distance(const Tensor& weights, std::size_t grid_rows, std::size_t grid_cols,
                                          double pixels_per_patch, bool class_token = false);

/// Per-layer series; rows[i] belongs to layers[i].
struct MetricTable {
  std::vector<std::string> columns;
  std::vector<std::size_t> layers;
  std::vector<std::vector<double>> rows;

  void add_row(std::size_t layer, std::vector<double> values);
};

struct DiagnosticsReport {
  std::map<std::string, MetricTable> metrics;
  std::map<std::string, Tensor> weights;  // rows = experts, columns = tokens
  std::map<std::string, std::string> metadata;

  /// Throws ContractError when a series is ragged or a value leaves its range.
  void validate() const;
};

/// Writes `<metric>.csv`, `weights_<name>.csv` and manifest.json into `dir`.
void export_report(const DiagnosticsReport& report, const std::filesystem::path& dir);

/// Shortest text that parses back to exactly `value`.
std::string format_double(double value);

MetricTable read_metric_csv(const std::filesystem::path& path);

struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double pixels_per_patch = 1.0;
};

/// Metrics of one captured two-tower forward.
DiagnosticsReport two_tower_report(const TwoTowerOutput& out, const PatchGrid& grid);

/// Metrics of one captured MLLM forward.
DiagnosticsReport mllm_report(const MllmOutput& out, const VisualTokens& visual, const PatchGrid& grid);

/// Averages matching metric tables of several reports cell by cell.
DiagnosticsReport average_reports(const std::vector<DiagnosticsReport>& reports);

}  // namespace manager
