#include "shadowdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include "json.hpp"

#include "shadowdiff/image_io.hpp"

namespace shadowdiff {

namespace {

void check_pair(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() != 3) throw ShapeError(std::string(what) + " expects [C,H,W]");
}

void check_mask(const Tensor<float>& a, const Tensor<float>& mask) {
  if (mask.rank() != 3 || mask.dim(0) != 1 || mask.dim(1) != a.dim(1) || mask.dim(2) != a.dim(2))
    throw ShapeError("mask " + shape_str(mask.shape()) + " does not match image " + shape_str(a.shape()));
}

std::vector<double> gaussian_window(int n, double sigma) {
  std::vector<double> w(n);
  const double c = (n - 1) / 2.0;
  double s = 0;
  for (int i = 0; i < n; ++i) s += w[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
  for (auto& v : w) v /= s;
  return w;
}

/// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& p, std::size_t H, std::size_t W, const std::vector<double>& w) {
  const std::size_t n = w.size(), Ho = H - n + 1, Wo = W - n + 1;
  std::vector<double> tmp(H * Wo), out(Ho * Wo);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double acc = 0;
      for (std::size_t k = 0; k < n; ++k) acc += w[k] * p[y * W + x + k];
      tmp[y * Wo + x] = acc;
    }
  for (std::size_t y = 0; y < Ho; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double acc = 0;
      for (std::size_t k = 0; k < n; ++k) acc += w[k] * tmp[(y + k) * Wo + x];
      out[y * Wo + x] = acc;
    }
  return out;
}

std::optional<double> mean_opt(const std::vector<ImageScores>& rows, std::optional<double> ImageScores::*f) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.*f) s += *(r.*f), ++n;
  return n ? std::optional(s / double(n)) : std::nullopt;
}

nlohmann::json num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

nlohmann::json num(const std::optional<double>& v) { return v ? num(*v) : nlohmann::json(nullptr); }

std::string csv_num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string csv_num(const std::optional<double>& v) { return v ? csv_num(*v) : ""; }

}  // namespace

double psnr_from_mse(double mse, double peak) {
  if (mse <= 0) return kPsnrPerfect;
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return psnr_from_mse(s / double(a.size()), peak);
}

std::vector<double> ssim_map(const Tensor<float>& a, const Tensor<float>& b, const SsimOptions& opt) {
  check_pair(a, b, "ssim");
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2), n = std::size_t(opt.window);
  if (H < n || W < n) throw ShapeError("ssim: image smaller than window");
  const auto w = gaussian_window(opt.window, opt.sigma);
  const double c1 = (opt.k1 * opt.range) * (opt.k1 * opt.range), c2 = (opt.k2 * opt.range) * (opt.k2 * opt.range);
  const std::size_t Ho = H - n + 1, Wo = W - n + 1;
  std::vector<double> out(Ho * Wo, 0.0);
  std::vector<double> pa(H * W), pb(H * W), paa(H * W), pbb(H * W), pab(H * W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) {
      pa[i] = a[c * H * W + i];
      pb[i] = b[c * H * W + i];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto ma = filter_valid(pa, H, W, w), mb = filter_valid(pb, H, W, w);
    const auto saa = filter_valid(paa, H, W, w), sbb = filter_valid(pbb, H, W, w), sab = filter_valid(pab, H, W, w);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
      out[i] += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
                ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2)) / double(C);
    }
  }
  return out;
}

double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimOptions& opt) {
  const auto m = ssim_map(a, b, opt);
  double s = 0;
  for (double v : m) s += v;
  return s / double(m.size());
}

RegionMse region_mse(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask, double threshold) {
  check_pair(a, b, "region_mse");
  check_mask(a, mask);
  const std::size_t C = a.dim(0), HW = a.dim(1) * a.dim(2);
  RegionMse r;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i) {
      const double d = double(a[c * HW + i]) - double(b[c * HW + i]);
      if (mask[i] >= threshold) {
        r.sum_s += d * d;
        ++r.n_s;
      } else {
        r.sum_ns += d * d;
        ++r.n_ns;
      }
    }
  return r;
}

RegionValue region_psnr(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask, double threshold,
                        double peak) {
  const RegionMse m = region_mse(a, b, mask, threshold);
  RegionValue v;
  if (auto s = m.mse_s()) v.s = psnr_from_mse(*s, peak);
  if (auto ns = m.mse_ns()) v.ns = psnr_from_mse(*ns, peak);
  return v;
}

RegionValue region_ssim(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask, double threshold,
                        const SsimOptions& opt) {
  check_mask(a, mask);
  const auto m = ssim_map(a, b, opt);
  const std::size_t W = a.dim(2), n = std::size_t(opt.window), Wo = W - n + 1, half = n / 2;
  double s = 0, ns = 0;
  std::size_t cs = 0, cns = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::size_t y = i / Wo + half, x = i % Wo + half;
    if (mask[y * W + x] >= threshold) {
      s += m[i];
      ++cs;
    } else {
      ns += m[i];
      ++cns;
    }
  }
  RegionValue v;
  if (cs) v.s = s / double(cs);
  if (cns) v.ns = ns / double(cns);
  return v;
}

ImageScores score_image(const std::string& name, const Tensor<float>& pred, const Tensor<float>& gt,
                        const Tensor<float>& mask) {
  ImageScores r;
  r.file = name;
  r.psnr = psnr(pred, gt);
  r.ssim = ssim(pred, gt);
  const auto rp = region_psnr(pred, gt, mask);
  const auto rs = region_ssim(pred, gt, mask);
  r.psnr_s = rp.s;
  r.psnr_ns = rp.ns;
  r.ssim_s = rs.s;
  r.ssim_ns = rs.ns;
  return r;
}

EvalReport aggregate(const std::vector<ImageScores>& rows) {
  EvalReport r;
  r.n_images = rows.size();
  if (rows.empty()) return r;
  for (const auto& x : rows) {
    r.psnr += x.psnr;
    r.ssim += x.ssim;
  }
  r.psnr /= double(rows.size());
  r.ssim /= double(rows.size());
  r.psnr_s = mean_opt(rows, &ImageScores::psnr_s);
  r.psnr_ns = mean_opt(rows, &ImageScores::psnr_ns);
  r.ssim_s = mean_opt(rows, &ImageScores::ssim_s);
  r.ssim_ns = mean_opt(rows, &ImageScores::ssim_ns);
  return r;
}

EvalResult evaluate_dir(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                        const std::filesystem::path& mask_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(gt_dir)) throw DataError("not a directory: " + gt_dir.string());
  const std::string suffix = "_free.png";
  std::vector<std::string> keys;
  for (const auto& e : fs::directory_iterator(gt_dir)) {
    const std::string f = e.path().filename().string();
    if (f.size() > suffix.size() && f.ends_with(suffix)) keys.push_back(f.substr(0, f.size() - suffix.size()));
  }
  std::sort(keys.begin(), keys.end());
  if (keys.empty()) throw DataError("no *_free.png ground-truth files in " + gt_dir.string());

  EvalResult out;
  for (const auto& k : keys) {
    fs::path pred = pred_dir / (k + "_pred.png");
    if (!fs::exists(pred)) pred = pred_dir / (k + "_free.png");
    const fs::path mask = mask_dir / (k + "_mask.png");
    if (!fs::exists(pred)) throw DataError("missing prediction for " + k + " in " + pred_dir.string());
    if (!fs::exists(mask)) throw DataError("missing mask " + mask.string());
    out.rows.push_back(score_image(k, read_png(pred), read_png(gt_dir / (k + suffix)), read_png(mask)));
  }
  out.report = aggregate(out.rows);
  return out;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ImageScores>& rows) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "file,psnr,psnr_s,psnr_ns,ssim,ssim_s,ssim_ns\n";
  for (const auto& r : rows)
    os << r.file << ',' << csv_num(r.psnr) << ',' << csv_num(r.psnr_s) << ',' << csv_num(r.psnr_ns) << ','
       << csv_num(r.ssim) << ',' << csv_num(r.ssim_s) << ',' << csv_num(r.ssim_ns) << '\n';
}

std::string report_json(const EvalReport& r, const std::string& extra_json_object) {
  nlohmann::json j = nlohmann::json::parse(extra_json_object);
  j["psnr"] = num(r.psnr);
  j["psnr_s"] = num(r.psnr_s);
  j["psnr_ns"] = num(r.psnr_ns);
  j["ssim"] = num(r.ssim);
  j["ssim_s"] = num(r.ssim_s);
  j["ssim_ns"] = num(r.ssim_ns);
  j["n_images"] = r.n_images;
  return j.dump(2);
}

}  // namespace shadowdiff
