// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "manager/encoders.hpp"
#include "manager/tensor.hpp"

namespace manager {

struct GridShape {
  std::size_t rows = 1;
  std::size_t cols = 1;
  /// Size the image is resized to before padding; equals the input size
  /// unless no candidate grid covers it.
  std::size_t scaled_height = 0;
  std::size_t scaled_width = 0;
};

/// Picks the grid for an H x W image. Among layouts with rows * cols <=
/// max_grids that cover the image, the one with the least padding wins, ties
/// going to the squarer layout. When none covers it, the image is shrunk
/// (aspect preserved) onto the layout keeping the most pixels.
GridShape choose_grid(std::size_t height, std::size_t width, std::size_t tile_side, std::size_t max_grids);

/// Bilinear resize of [H x W x C] with half-pixel centers and edge clamping.
Tensor bilinear_resize(const Tensor& image, std::size_t out_height, std::size_t out_width);

struct GridLayout {
  Tensor base;                // [tile x tile x C]
  std::vector<Tensor> tiles;  // raster order, each [tile x tile x C]
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t tile_side = 0;
  Tensor padded;              // [rows*tile x cols*tile x C]
  int row_end_marker = TokenIds::kRowEnd;
};

GridLayout multi_grid_layout(const Tensor& image, std::size_t tile_side, std::size_t max_grids);

/// Stitches the tiles back into the padded canvas.
Tensor reassemble_tiles(const GridLayout& layout);

/// Visual token count: base plus r*c tiles of `patches_per_tile`, plus one
/// row-end marker per grid row. Without the grid only the base is encoded.
std::size_t visual_token_count(std::size_t rows, std::size_t cols, std::size_t patches_per_tile, bool grid = true);

}  // namespace manager
