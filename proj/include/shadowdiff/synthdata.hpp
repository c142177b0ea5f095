#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shadowdiff/tensor.hpp"

namespace shadowdiff {

/// One synthetic sample. shadow <= shadow_free elementwise; equal wherever mask == 0.
struct ImageTriplet {
  Tensor<float> shadow;       // [3,H,W]
  Tensor<float> shadow_free;  // [3,H,W]
  Tensor<float> mask;         // [1,H,W], soft
  std::uint64_t seed = 0;
  double softness = 0.0;
  std::array<double, 3> attenuation{1.0, 1.0, 1.0};
};

/// Smooth colour gradients, random rectangles/ellipses and thin glyph-like strokes; values in [0,1].
Tensor<float> gen_base_image(std::uint64_t seed, std::size_t height = 64, std::size_t width = 64);

/// Binary rasterisation of a random convex polygon or ellipse (before blurring).
Tensor<float> gen_shadow_shape(std::uint64_t seed, std::size_t height = 64, std::size_t width = 64);

/// Separable, truncated (3 sigma) and normalised Gaussian blur of a [1,H,W] map with zero padding.
Tensor<float> gaussian_blur(const Tensor<float>& map, double sigma);

/// Random soft shadow mask: shape rasterised, then blurred with sigma = softness. The binary
/// shape covers 5%-60% of the image and the blurred interior reaches exactly 1.
Tensor<float> gen_shadow_mask(std::uint64_t seed, double softness, std::size_t height = 64, std::size_t width = 64);

/// shadow = base * (1 - (1 - a_c) * mask), a per channel.
Tensor<float> apply_shadow(const Tensor<float>& base, const Tensor<float>& mask, const std::array<double, 3>& attenuation);

struct TripletOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  double softness_min = 1.0;
  double softness_max = 2.5;
};

ImageTriplet gen_triplet(std::uint64_t seed, const TripletOptions& opt = {});

/// Per-sample seed for (master seed, split, index); splits never share seeds.
std::uint64_t triplet_seed(std::uint64_t master, const std::string& split, std::size_t index);

struct DatasetSpec {
  std::size_t n_train = 500;
  std::size_t n_test = 50;
  std::uint64_t seed = 1234;
  TripletOptions options;
};

/// Writes `{split}_{index}_{shadow,free,mask}.png` plus `manifest.txt` into out_dir.
void gen_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

/// "{split}_{index}" with the index zero-padded to four digits.
std::string triplet_key(const std::string& split, std::size_t index);

/// File name of one role ("shadow", "free", "mask") of a sample.
std::string triplet_file(const std::string& split, std::size_t index, const std::string& role);

/// Loads every sample of a split listed in out_dir/manifest.txt, in index order.
std::vector<ImageTriplet> load_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace shadowdiff
