#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>

#include "gahb/tensor.hpp"

namespace gahb {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a netpbm file (P2/P3/P5/P6, 8 or 16 bit) as a (1, 1, h, w) image in
/// [0, 1]; color is reduced to the channel mean.
Tensor4d read_netpbm(const std::filesystem::path& path);

/// Writes an 8-bit binary PGM. Values are clamped to [lo, hi] and mapped to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor4d& image, double lo = 0.0,
               double hi = 1.0);

/// Tiles images (each (1, 1, h, w)) into a grid, each tile min/max normalized
/// independently, separated by a one-pixel border.
Tensor4d mosaic(std::span<const Tensor4d> tiles, std::size_t columns);

}  // namespace gahb
