#pragma once

#include <filesystem>

#include "sanet/layers.hpp"
#include "sanet/tensor.hpp"

namespace sanet {

// Binary Netpbm (P6 / P5, maxval 255). Float images hold values in [0, 1].

/// Reads a P6 pixmap into a (1, 3, H, W) tensor scaled to [0, 1].
Tensor4 read_ppm(const std::filesystem::path& path);
/// Writes a (1, 3, H, W) tensor; values are clamped to [0, 1] and rounded to 8 bits.
void write_ppm(const std::filesystem::path& path, const Tensor4& image);

/// Reads a P5 graymap as raw integer values (class ids), shape (1, H, W).
LabelMap read_pgm_labels(const std::filesystem::path& path);
/// Writes class ids as raw 8-bit gray values; ids must lie in [0, 255].
void write_pgm_labels(const std::filesystem::path& path, const LabelMap& labels);

/// Writes a (1, 1, H, W) tensor in [0, 1] as an 8-bit graymap.
void write_pgm(const std::filesystem::path& path, const Tensor4& gray);
/// Reads a P5 graymap into a (1, 1, H, W) tensor scaled to [0, 1].
Tensor4 read_pgm(const std::filesystem::path& path);

}  // namespace sanet
