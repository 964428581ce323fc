// SPDX-License-Identifier: Apache-2.0
#include "manager/multigrid.hpp"

#include <algorithm>
#include <cmath>

#include "manager/error.hpp"

namespace manager {

GridShape choose_grid(std::size_t height, std::size_t width, std::size_t tile_side, std::size_t max_grids) {
  if (tile_side == 0) throw DomainError("tile side must be positive");
  if (height == 0 || width == 0) throw DimensionError("image must be non-empty");
  max_grids = std::max<std::size_t>(max_grids, 1);

  struct Candidate {
    GridShape shape;
    double kept = 0.0;    // pixels retained from the original
    double waste = 0.0;   // padded area
    std::size_t skew = 0; // |rows - cols|
  };
  bool have_cover = false;
  Candidate best;
  bool have_best = false;
  for (std::size_t r = 1; r <= max_grids; ++r) {
    for (std::size_t c = 1; r * c <= max_grids; ++c) {
      const std::size_t ch = r * tile_side, cw = c * tile_side;
      Candidate cand;
      cand.shape.rows = r;
      cand.shape.cols = c;
      cand.skew = r > c ? r - c : c - r;
      const bool covers = ch >= height && cw >= width;
      if (covers) {
        cand.shape.scaled_height = height;
        cand.shape.scaled_width = width;
      } else {
        const double s = std::min(static_cast<double>(ch) / static_cast<double>(height),
                                  static_cast<double>(cw) / static_cast<double>(width));
        cand.shape.scaled_height = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::floor(static_cast<double>(height) * s)), 1, ch);
        cand.shape.scaled_width = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::floor(static_cast<double>(width) * s)), 1, cw);
      }
      cand.kept = static_cast<double>(cand.shape.scaled_height * cand.shape.scaled_width);
      cand.waste = static_cast<double>(ch * cw) - cand.kept;
      bool better;
      if (!have_best) {
        better = true;
      } else if (covers != have_cover) {
        better = covers;
      } else if (covers) {
        better = cand.waste < best.waste || (cand.waste == best.waste && cand.skew < best.skew);
      } else {
        better = cand.kept > best.kept || (cand.kept == best.kept && (cand.waste < best.waste ||
                                                                      (cand.waste == best.waste && cand.skew < best.skew)));
      }
      if (better) {
        best = cand;
        have_best = true;
        have_cover = covers;
      }
    }
  }
  return best.shape;
}

Tensor bilinear_resize(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw DimensionError("resize expects [H x W x C], got " + shape_to_string(image.shape()));
  if (out_h == 0 || out_w == 0) throw DomainError("resize target must be non-empty");
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  const auto px = image.data();
  std::vector<double> out(out_h * out_w * ch);
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  auto axis = [](double src, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, n - 1);
    frac = src - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis((static_cast<double>(y) + 0.5) * sy - 0.5, h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      axis((static_cast<double>(x) + 0.5) * sx - 0.5, w, x0, x1, fx);
      for (std::size_t k = 0; k < ch; ++k) {
        auto at = [&](std::size_t yy, std::size_t xx) { return px[(yy * w + xx) * ch + k]; };
        const double top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        const double bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        out[(y * out_w + x) * ch + k] = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return Tensor::from_vector({out_h, out_w, ch}, std::move(out));
}

GridLayout multi_grid_layout(const Tensor& image, std::size_t tile_side, std::size_t max_grids) {
  if (image.rank() != 3) throw DimensionError("layout expects [H x W x C], got " + shape_to_string(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  const GridShape g = choose_grid(h, w, tile_side, max_grids);
  GridLayout layout;
  layout.rows = g.rows;
  layout.cols = g.cols;
  layout.tile_side = tile_side;
  layout.base = (h == tile_side && w == tile_side) ? image.detach() : bilinear_resize(image, tile_side, tile_side);

  const Tensor scaled = (g.scaled_height == h && g.scaled_width == w)
                            ? image.detach()
                            : bilinear_resize(image, g.scaled_height, g.scaled_width);
  const std::size_t ph = g.rows * tile_side, pw = g.cols * tile_side;
  const std::size_t top = (ph - g.scaled_height) / 2, left = (pw - g.scaled_width) / 2;
  std::vector<double> canvas(ph * pw * ch, 0.0);
  const auto src = scaled.data();
  for (std::size_t y = 0; y < g.scaled_height; ++y)
    for (std::size_t x = 0; x < g.scaled_width; ++x)
      for (std::size_t k = 0; k < ch; ++k)
        canvas[((y + top) * pw + (x + left)) * ch + k] = src[(y * g.scaled_width + x) * ch + k];
  layout.padded = Tensor::from_vector({ph, pw, ch}, canvas);

  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      std::vector<double> tile(tile_side * tile_side * ch);
      for (std::size_t y = 0; y < tile_side; ++y)
        for (std::size_t x = 0; x < tile_side; ++x)
          for (std::size_t k = 0; k < ch; ++k)
            tile[(y * tile_side + x) * ch + k] = canvas[((r * tile_side + y) * pw + (c * tile_side + x)) * ch + k];
      layout.tiles.push_back(Tensor::from_vector({tile_side, tile_side, ch}, std::move(tile)));
    }
  }
  return layout;
}

Tensor reassemble_tiles(const GridLayout& layout) {
  if (layout.tiles.size() != layout.rows * layout.cols) throw ContractError("layout tile count mismatch");
  const std::size_t t = layout.tile_side, ch = layout.tiles.front().dim(2);
  const std::size_t ph = layout.rows * t, pw = layout.cols * t;
  std::vector<double> canvas(ph * pw * ch);
  for (std::size_t r = 0; r < layout.rows; ++r) {
    for (std::size_t c = 0; c < layout.cols; ++c) {
      const auto tile = layout.tiles[r * layout.cols + c].data();
      for (std::size_t y = 0; y < t; ++y)
        for (std::size_t x = 0; x < t; ++x)
          for (std::size_t k = 0; k < ch; ++k)
            canvas[((r * t + y) * pw + (c * t + x)) * ch + k] = tile[(y * t + x) * ch + k];
    }
  }
  return Tensor::from_vector({ph, pw, ch}, std::move(canvas));
}

std::size_t visual_token_count(std::size_t rows, std::size_t cols, std::size_t patches_per_tile, bool grid) {
  if (!grid) return patches_per_tile;
  return patches_per_tile * (1 + rows * cols) + rows;
}

}  // namespace manager
