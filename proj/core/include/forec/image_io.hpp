#pragma once

#include <filesystem>

#include "forec/tensor.hpp"

namespace forec {

/// Binary PPM (P6) and PGM (P5), maxval 255 only.
///
/// Float images map byte p to p/255.0 on read; on write values are clamped
/// to [0,1] and stored as round(v*255). Label maps are stored as raw bytes.

Tensor read_ppm(const std::filesystem::path& path);                   // [3,H,W]
void write_ppm(const Tensor& image, const std::filesystem::path& path);

LabelMap read_pgm(const std::filesystem::path& path);
void write_pgm(const LabelMap& labels, const std::filesystem::path& path);

Tensor read_pgm_gray(const std::filesystem::path& path);              // [1,H,W]
void write_pgm_gray(const Tensor& gray, const std::filesystem::path& path);

}  // namespace forec
