// SPDX-License-Identifier: Apache-2.0
#include "manager/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "manager/error.hpp"
#include "manager/ops.hpp"

namespace manager {

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("cosine of " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  const auto x = a.data(), y = b.data();
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) throw NumericError("cosine similarity of a zero vector is undefined");
  const double c = dot / (std::sqrt(nx) * std::sqrt(ny));
  return std::clamp(c, -1.0, 1.0);
}

Tensor attention_block(const Tensor& weights, std::optional<IndexSpan> queries, std::optional<IndexSpan> keys) {
  if (weights.rank() != 3) throw DimensionError("attention weights must be [H x Lq x Lk], got " + shape_to_string(weights.shape()));
  const std::size_t h = weights.dim(0), lq = weights.dim(1), lk = weights.dim(2);
  const IndexSpan q = queries.value_or(IndexSpan{0, lq});
  const IndexSpan k = keys.value_or(IndexSpan{0, lk});
  if (q.count == 0 || k.count == 0 || q.begin + q.count > lq || k.begin + k.count > lk) {
    throw IndexError("attention sub-block outside " + shape_to_string(weights.shape()));
  }
  const auto w = weights.data();
  std::vector<double> out(h * q.count * k.count);
  for (std::size_t head = 0; head < h; ++head) {
    for (std::size_t i = 0; i < q.count; ++i) {
      const double* row = w.data() + (head * lq + q.begin + i) * lk;
      double total = 0.0;
      for (std::size_t j = 0; j < lk; ++j) {
        if (row[j] < 0.0) throw ContractError("negative attention weight");
        total += row[j];
      }
      if (std::abs(total - 1.0) > 1e-6) {
        throw ContractError("attention row sums to " + format_double(total) + ", not 1");
      }
      double mass = 0.0;
      for (std::size_t j = 0; j < k.count; ++j) mass += row[k.begin + j];
      if (mass <= 0.0) throw ContractError("attention row has no mass inside the selected keys");
      for (std::size_t j = 0; j < k.count; ++j) out[(head * q.count + i) * k.count + j] = row[k.begin + j] / mass;
    }
  }
  return Tensor::from_vector({h, q.count, k.count}, std::move(out));
}

double attention_entropy(const Tensor& weights, std::optional<IndexSpan> queries, std::optional<IndexSpan> keys) {
  const Tensor b = attention_block(weights, queries, keys);
  const std::size_t rows = b.dim(0) * b.dim(1), lk = b.dim(2);
  const auto w = b.data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double e = 0.0;
    for (std::size_t j = 0; j < lk; ++j) {
      const double p = w[r * lk + j];
      if (p > 0.0) e -= p * std::log(p);
    }
    total += std::max(e, 0.0);
  }
  return total / static_cast<double>(rows);
}

double inter_head_kl(const Tensor& weights, std::optional<IndexSpan> queries, std::optional<IndexSpan> keys) {
  const Tensor b = attention_block(weights, queries, keys);
  const std::size_t h = b.dim(0), lq = b.dim(1), lk = b.dim(2);
  if (h < 2) throw ContractError("inter-head divergence needs at least two heads");
  const auto w = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      if (i == j) continue;
      for (std::size_t q = 0; q < lq; ++q) {
        const double* p = w.data() + (i * lq + q) * lk;
        const double* r = w.data() + (j * lq + q) * lk;
        double kl = 0.0;
        for (std::size_t k = 0; k < lk; ++k) {
          if (p[k] > 0.0) kl += p[k] * (std::log(p[k]) - std::log(std::max(r[k], kKlFloor)));
        }
        total += std::max(kl, 0.0);
      }
    }
  }
  return total / static_cast<double>(h * (h - 1) * lq);
}

AttentionDistance mean_attention_distance(const Tensor& weights, std::size_t grid_rows, std::size_t grid_cols,
                                          double pixels_per_patch, bool class_token) {
  if (weights.rank() != 3 || weights.dim(1) != weights.dim(2)) {
    throw DimensionError("self-attention weights must be [H x L x L], got " + shape_to_string(weights.shape()));
  }
  const std::size_t offset = class_token ? 1 : 0;
  const std::size_t patches = grid_rows * grid_cols;
  if (weights.dim(1) != patches + offset) {
    throw ContractError("attention over " + std::to_string(weights.dim(1)) + " positions does not match a " +
                        std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " patch grid");
  }
  const Tensor b = attention_block(weights, IndexSpan{offset, patches}, IndexSpan{offset, patches});
  const auto w = b.data();
  AttentionDistance out;
  for (std::size_t head = 0; head < b.dim(0); ++head) {
    double total = 0.0;
    for (std::size_t q = 0; q < patches; ++q) {
      const double qy = static_cast<double>(q / grid_cols), qx = static_cast<double>(q % grid_cols);
      for (std::size_t k = 0; k < patches; ++k) {
        const double dy = qy - static_cast<double>(k / grid_cols), dx = qx - static_cast<double>(k % grid_cols);
        total += w[(head * patches + q) * patches + k] * std::sqrt(dy * dy + dx * dx) * pixels_per_patch;
      }
    }
    out.per_head.push_back(total / static_cast<double>(patches));
  }
  for (double v : out.per_head) out.mean += v;
  out.mean /= static_cast<double>(out.per_head.size());
  return out;
}

void MetricTable::add_row(std::size_t layer, std::vector<double> values) {
  if (values.size() != columns.size()) throw ContractError("metric row width differs from its header");
  layers.push_back(layer);
  rows.push_back(std::move(values));
}

void DiagnosticsReport::validate() const {
  for (const auto& [name, table] : metrics) {
    if (table.layers.size() != table.rows.size()) throw ContractError("metric '" + name + "' is ragged");
    const bool cosine = name.find("cosine") != std::string::npos;
    const bool nonneg = name.find("entropy") != std::string::npos || name.find("kl") != std::string::npos ||
                        name.find("distance") != std::string::npos;
    for (const auto& row : table.rows) {
      if (row.size() != table.columns.size()) throw ContractError("metric '" + name + "' is ragged");
      for (double v : row) {
        if (!std::isfinite(v)) throw ContractError("metric '" + name + "' holds a non-finite value");
        if (cosine && (v < -1.0 || v > 1.0)) throw ContractError("cosine outside [-1, 1] in '" + name + "'");
        if (nonneg && v < 0.0) throw ContractError("negative value in '" + name + "'");
      }
    }
  }
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

}  // namespace

void export_report(const DiagnosticsReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create report directory " + dir.string());

  nlohmann::json manifest;
  manifest["metadata"] = report.metadata;
  manifest["metrics"] = nlohmann::json::array();
  manifest["weights"] = nlohmann::json::array();

  for (const auto& [name, table] : report.metrics) {
    std::string text = "layer";
    for (const auto& c : table.columns) text += "," + c;
    text += "\n";
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      text += std::to_string(table.layers[i]);
      for (double v : table.rows[i]) text += "," + format_double(v);
      text += "\n";
    }
    write_text(dir / (name + ".csv"), text);
    manifest["metrics"].push_back(name + ".csv");
  }
  for (const auto& [name, w] : report.weights) {
    const std::size_t rows = w.dim(0), cols = w.rank() > 1 ? w.dim(1) : 1;
    const auto v = w.data();
    std::string text = "expert";
    for (std::size_t c = 0; c < cols; ++c) text += ",token" + std::to_string(c);
    text += "\n";
    for (std::size_t r = 0; r < rows; ++r) {
      text += std::to_string(r + 1);
      for (std::size_t c = 0; c < cols; ++c) text += "," + format_double(v[r * cols + c]);
      text += "\n";
    }
    write_text(dir / ("weights_" + name + ".csv"), text);
    manifest["weights"].push_back("weights_" + name + ".csv");
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

MetricTable read_metric_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  MetricTable t;
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path.string() + " has no header");
  auto header = split_csv(line);
  if (header.empty() || header.front() != "layer") throw FormatError(path.string() + " does not start with 'layer'");
  t.columns.assign(header.begin() + 1, header.end());
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) throw FormatError("ragged row in " + path.string());
    std::vector<double> values;
    for (std::size_t i = 1; i < cells.size(); ++i) values.push_back(parse_double(cells[i]));
    t.add_row(static_cast<std::size_t>(parse_double(cells[0])), std::move(values));
  }
  return t;
}

namespace {

std::string weight_key(std::size_t layer, const char* modality) {
  return "layer" + std::to_string(layer) + "_" + modality;
}

}  // namespace

DiagnosticsReport two_tower_report(const TwoTowerOutput& out, const PatchGrid& grid) {
  DiagnosticsReport r;
  MetricTable layer_cos{{"visual", "textual"}, {}, {}};
  for (std::size_t l = 1; l < out.states.size(); ++l) {
    layer_cos.add_row(l, {cosine_similarity(out.states[l - 1].visual, out.states[l].visual),
                          cosine_similarity(out.states[l - 1].textual, out.states[l].textual)});
  }
  r.metrics["layer_cosine"] = layer_cos;

  if (!out.managers.empty()) {
    MetricTable uni{{"visual", "textual"}, {}, {}};
    MetricTable cross{{"visual", "textual"}, {}, {}};
    const ManagerRecord* last[2] = {nullptr, nullptr};
    std::map<std::size_t, std::vector<double>> uni_rows, cross_rows;
    for (const auto& rec : out.managers) {
      const auto m = static_cast<std::size_t>(rec.modality);
      if (last[m] != nullptr) {
        uni_rows[rec.layer].push_back(cosine_similarity(last[m]->output.unimodal, rec.output.unimodal));
        if (last[m]->output.cross.defined() && rec.output.cross.defined()) {
          cross_rows[rec.layer].push_back(cosine_similarity(last[m]->output.cross, rec.output.cross));
        }
      }
      last[m] = &rec;
      r.weights[weight_key(rec.layer, m == 0 ? "v" : "t")] = rec.output.weights;
    }
    for (auto& [l, v] : uni_rows) uni.add_row(l, v);
    for (auto& [l, v] : cross_rows) {
      if (v.size() == 2) cross.add_row(l, v);
    }
    r.metrics["manager_cosine_unimodal"] = uni;
    r.metrics["manager_cosine_cross"] = cross;
  }

  if (!out.attention.empty()) {
    const std::vector<std::string> cols{"visual_self", "visual_cross", "textual_self", "textual_cross"};
    MetricTable entropy{cols, {}, {}}, kl{cols, {}, {}};
    MetricTable distance;
    for (std::size_t l = 0; l < out.attention.size(); ++l) {
      const auto& a = out.attention[l];
      const Tensor* blocks[] = {&a.visual_self, &a.visual_cross, &a.textual_self, &a.textual_cross};
      std::vector<double> e, k;
      for (const Tensor* b : blocks) {
        e.push_back(attention_entropy(*b));
        k.push_back(b->dim(0) >= 2 ? inter_head_kl(*b) : 0.0);
      }
      entropy.add_row(l + 1, e);
      kl.add_row(l + 1, k);
      auto dist = mean_attention_distance(a.visual_self, grid.rows, grid.cols, grid.pixels_per_patch, true);
      if (distance.columns.empty()) {
        for (std::size_t h = 0; h < dist.per_head.size(); ++h) distance.columns.push_back("head" + std::to_string(h + 1));
        distance.columns.push_back("mean");
      }
      auto row = dist.per_head;
      row.push_back(dist.mean);
      distance.add_row(l + 1, row);
    }
    r.metrics["attention_entropy"] = entropy;
    r.metrics["inter_head_kl"] = kl;
    r.metrics["attention_distance"] = distance;
  }
  r.metadata["kl_pairing"] = "ordered";
  r.metadata["log_base"] = "e";
  return r;
}

DiagnosticsReport mllm_report(const MllmOutput& out, const VisualTokens& visual, const PatchGrid& grid) {
  DiagnosticsReport r;
  const std::size_t tv = out.visual_length;
  const std::size_t total = out.hidden.front().dim(0);
  MetricTable cos{{"visual", "textual"}, {}, {}};
  for (std::size_t l = 1; l < out.hidden.size(); ++l) {
    cos.add_row(l, {cosine_similarity(slice_rows(out.hidden[l - 1], 0, tv).detach(),
                                      slice_rows(out.hidden[l], 0, tv).detach()),
                    cosine_similarity(slice_rows(out.hidden[l - 1], tv, total - tv).detach(),
                                      slice_rows(out.hidden[l], tv, total - tv).detach())});
  }
  r.metrics["layer_cosine"] = cos;
  for (const auto& rec : out.managers) r.weights[weight_key(rec.layer, "v")] = rec.output.weights;

  if (!out.attention.empty()) {
    const std::vector<std::string> cols{"all", "visual_self", "text_to_visual"};
    MetricTable entropy{cols, {}, {}}, kl{cols, {}, {}}, distance;
    const IndexSpan vis{0, tv}, txt{tv, total - tv};
    const Segment& base = visual.segments.front();
    for (std::size_t l = 0; l < out.attention.size(); ++l) {
      const Tensor& a = out.attention[l];
      entropy.add_row(l + 1, {attention_entropy(a), attention_entropy(a, vis, vis), attention_entropy(a, txt, vis)});
      if (a.dim(0) >= 2) {
        kl.add_row(l + 1, {inter_head_kl(a), inter_head_kl(a, vis, vis), inter_head_kl(a, txt, vis)});
      }
      const IndexSpan bs{base.begin, base.count};
      auto dist = mean_attention_distance(attention_block(a, bs, bs), grid.rows, grid.cols, grid.pixels_per_patch);
      if (distance.columns.empty()) {
        for (std::size_t h = 0; h < dist.per_head.size(); ++h) distance.columns.push_back("head" + std::to_string(h + 1));
        distance.columns.push_back("mean");
      }
      auto row = dist.per_head;
      row.push_back(dist.mean);
      distance.add_row(l + 1, row);
    }
    r.metrics["attention_entropy"] = entropy;
    if (!kl.rows.empty()) r.metrics["inter_head_kl"] = kl;
    r.metrics["attention_distance"] = distance;
  }
  r.metadata["kl_pairing"] = "ordered";
  r.metadata["log_base"] = "e";
  return r;
}

DiagnosticsReport average_reports(const std::vector<DiagnosticsReport>& reports) {
  if (reports.empty()) return {};
  DiagnosticsReport out = reports.front();
  for (auto& [name, table] : out.metrics) {
    for (std::size_t i = 1; i < reports.size(); ++i) {
      auto it = reports[i].metrics.find(name);
      if (it == reports[i].metrics.end() || it->second.rows.size() != table.rows.size()) {
        throw ContractError("reports disagree on metric '" + name + "'");
      }
      for (std::size_t r = 0; r < table.rows.size(); ++r)
        for (std::size_t c = 0; c < table.rows[r].size(); ++c) table.rows[r][c] += it->second.rows[r][c];
    }
    for (auto& row : table.rows)
      for (double& v : row) v /= static_cast<double>(reports.size());
  }
  return out;
}

}  // namespace manager
