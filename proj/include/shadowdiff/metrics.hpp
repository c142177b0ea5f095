#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "shadowdiff/tensor.hpp"

namespace shadowdiff {

inline constexpr double kPsnrPerfect = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE); identical inputs give +inf.
double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak = 1.0);
double psnr_from_mse(double mse, double peak = 1.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// SSIM map over valid window positions, averaged over channels: [H-w+1, W-w+1].
std::vector<double> ssim_map(const Tensor<float>& a, const Tensor<float>& b, const SsimOptions& opt = {});

/// Mean of ssim_map.
double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimOptions& opt = {});

struct RegionValue {
  std::optional<double> s;   // binarised mask == 1
  std::optional<double> ns;  // binarised mask == 0
};

/// Squared-error sums and pixel counts (over all channels) for each region.
struct RegionMse {
  double sum_s = 0, sum_ns = 0;
  std::size_t n_s = 0, n_ns = 0;
  std::optional<double> mse_s() const { return n_s ? std::optional(sum_s / double(n_s)) : std::nullopt; }
  std::optional<double> mse_ns() const { return n_ns ? std::optional(sum_ns / double(n_ns)) : std::nullopt; }
};

RegionMse region_mse(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask,
                     double threshold = 0.5);
RegionValue region_psnr(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask,
                        double threshold = 0.5, double peak = 1.0);
/// SSIM map averaged over window centres whose binarised mask value falls in each region.
RegionValue region_ssim(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask,
                        double threshold = 0.5, const SsimOptions& opt = {});

struct ImageScores {
  std::string file;
  double psnr = 0, ssim = 0;
  std::optional<double> psnr_s, psnr_ns, ssim_s, ssim_ns;
};

ImageScores score_image(const std::string& name, const Tensor<float>& pred, const Tensor<float>& gt,
                        const Tensor<float>& mask);

/// Arithmetic means over images; region means skip images where the region is empty.
struct EvalReport {
  double psnr = 0, ssim = 0;
  std::optional<double> psnr_s, psnr_ns, ssim_s, ssim_ns;
  std::size_t n_images = 0;
};

EvalReport aggregate(const std::vector<ImageScores>& rows);

struct EvalResult {
  EvalReport report;
  std::vector<ImageScores> rows;
};

/// Ground truth is every `*_free.png` in gt_dir; the prediction for key K is K_pred.png, falling back to K_free.png;
/// the mask is K_mask.png. Rows are sorted by key.
EvalResult evaluate_dir(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                        const std::filesystem::path& mask_dir);

void write_scores_csv(const std::filesystem::path& path, const std::vector<ImageScores>& rows);
/// `extra` is merged into the top-level JSON object (e.g. config hash).
std::string report_json(const EvalReport& r, const std::string& extra_json_object = "{}");

}  // namespace shadowdiff
