#pragma once

#include <filesystem>

#include "shadowdiff/tensor.hpp"

namespace shadowdiff {

/// Writes a [1,H,W] or [3,H,W] tensor as an 8-bit PNG; values are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Tensor<float>& img);

/// Reads an 8-bit gray or RGB PNG into [C,H,W] floats in [0,1]. Throws DataError on failure.
Tensor<float> read_png(const std::filesystem::path& path);

/// The 8-bit rounding write_png applies, without touching the disk.
Tensor<float> quantize8(const Tensor<float>& img);

}  // namespace shadowdiff
