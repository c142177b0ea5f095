#include "shadowdiff/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "shadowdiff/image_io.hpp"
#include "shadowdiff/rng.hpp"

namespace shadowdiff {

namespace {

using Image = std::vector<double>;  // [3,H,W] working buffer in double

double urand(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

void paint(Image& img, std::size_t H, std::size_t W, long y, long x, const std::array<double, 3>& col) {
  if (y < 0 || x < 0 || y >= long(H) || x >= long(W)) return;
  for (std::size_t c = 0; c < 3; ++c) img[(c * H + std::size_t(y)) * W + std::size_t(x)] = col[c];
}

std::array<double, 3> random_colour(Rng& rng, double lo, double hi) {
  return {urand(rng, lo, hi), urand(rng, lo, hi), urand(rng, lo, hi)};
}

/// A few line segments inside a glyph cell; 1 px wide.
void draw_glyph(Image& img, std::size_t H, std::size_t W, double cy, double cx, double size,
                const std::array<double, 3>& col, Rng& rng) {
  const int strokes = uniform_int(rng, 2, 4);
  for (int s = 0; s < strokes; ++s) {
    const double y0 = cy + urand(rng, 0, size), x0 = cx + urand(rng, 0, size * 0.7);
    const double y1 = cy + urand(rng, 0, size), x1 = cx + urand(rng, 0, size * 0.7);
    const double len = std::hypot(y1 - y0, x1 - x0);
    const int n = std::max(2, int(len * 4));
    for (int i = 0; i <= n; ++i) {
      const double a = double(i) / n;
      paint(img, H, W, std::lround(y0 + a * (y1 - y0)), std::lround(x0 + a * (x1 - x0)), col);
    }
  }
}

double cross(double ox, double oy, double ax, double ay, double bx, double by) {
  return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox);
}

}  // namespace

Tensor<float> gen_base_image(std::uint64_t seed, std::size_t H, std::size_t W) {
  Rng rng = make_rng(seed, 0xba5e1);
  Image img(3 * H * W);

  // background: per-channel linear gradient plus a low-frequency ripple
  for (std::size_t c = 0; c < 3; ++c) {
    const double base = urand(rng, 0.3, 0.8), gy = urand(rng, -0.25, 0.25), gx = urand(rng, -0.25, 0.25);
    const double amp = urand(rng, 0.0, 0.08), fy = urand(rng, 0.5, 2.0), fx = urand(rng, 0.5, 2.0);
    const double ph = urand(rng, 0.0, 2 * std::numbers::pi);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double u = double(y) / double(H) - 0.5, v = double(x) / double(W) - 0.5;
        img[(c * H + y) * W + x] =
            base + gy * u + gx * v + amp * std::sin(2 * std::numbers::pi * (fy * u + fx * v) + ph);
      }
  }

  // flat shapes
  const int shapes = uniform_int(rng, 3, 6);
  for (int s = 0; s < shapes; ++s) {
    const auto col = random_colour(rng, 0.15, 0.95);
    const double cy = urand(rng, 0, double(H)), cx = urand(rng, 0, double(W));
    const double ry = urand(rng, 3, double(H) / 4), rx = urand(rng, 3, double(W) / 4);
    const bool ellipse = uniform01(rng) < 0.5;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dy = (double(y) + 0.5 - cy) / ry, dx = (double(x) + 0.5 - cx) / rx;
        const bool inside = ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) paint(img, H, W, long(y), long(x), col);
      }
  }

  // rows of glyph-like strokes
  const int lines = uniform_int(rng, 1, 3);
  for (int l = 0; l < lines; ++l) {
    const bool dark = uniform01(rng) < 0.6;
    const auto col = dark ? random_colour(rng, 0.0, 0.15) : random_colour(rng, 0.85, 1.0);
    const double size = urand(rng, 5, 8);
    const double y = urand(rng, 0, double(H) - size);
    double x = urand(rng, 0, double(W) / 3);
    const int glyphs = uniform_int(rng, 3, 8);
    for (int g = 0; g < glyphs && x < double(W) - size * 0.7; ++g) {
      draw_glyph(img, H, W, y, x, size, col, rng);
      x += size * 0.9;
    }
  }

  Tensor<float> out(Shape{3, H, W});
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = float(std::clamp(img[i], 0.0, 1.0));
  return out;
}

Tensor<float> gen_shadow_shape(std::uint64_t seed, std::size_t H, std::size_t W) {
  Rng rng = make_rng(seed, 0x5ad0);
  Tensor<float> m(Shape{1, H, W});
  if (uniform01(rng) < 0.5) {
    const double cy = urand(rng, 0.2, 0.8) * double(H), cx = urand(rng, 0.2, 0.8) * double(W);
    const double ry = urand(rng, 0.1, 0.45) * double(H), rx = urand(rng, 0.1, 0.45) * double(W);
    const double th = urand(rng, 0, std::numbers::pi), ct = std::cos(th), st = std::sin(th);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dy = double(y) + 0.5 - cy, dx = double(x) + 0.5 - cx;
        const double u = (ct * dx + st * dy) / rx, v = (-st * dx + ct * dy) / ry;
        m.at(0, y, x) = u * u + v * v <= 1.0 ? 1.0f : 0.0f;
      }
    return m;
  }
  // convex hull (monotone chain) of random points
  const int n = uniform_int(rng, 5, 9);
  std::vector<std::pair<double, double>> pts(n);
  const double cy = urand(rng, 0.25, 0.75) * double(H), cx = urand(rng, 0.25, 0.75) * double(W);
  const double spread = urand(rng, 0.15, 0.5);
  for (auto& p : pts) p = {cx + urand(rng, -1, 1) * spread * double(W), cy + urand(rng, -1, 1) * spread * double(H)};
  std::sort(pts.begin(), pts.end());
  std::vector<std::pair<double, double>> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2].first, hull[k - 2].second, hull[k - 1].first, hull[k - 1].second, pts[i].first,
                           pts[i].second) <= 0)
      --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross(hull[k - 2].first, hull[k - 2].second, hull[k - 1].first, hull[k - 1].second, pts[i].first,
                            pts[i].second) <= 0)
      --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double px = double(x) + 0.5, py = double(y) + 0.5;
      bool inside = hull.size() >= 3;
      for (std::size_t i = 0; i < hull.size() && inside; ++i) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % hull.size()];
        if (cross(a.first, a.second, b.first, b.second, px, py) < 0) inside = false;
      }
      m.at(0, y, x) = inside ? 1.0f : 0.0f;
    }
  return m;
}

Tensor<float> gaussian_blur(const Tensor<float>& map, double sigma) {
  if (sigma < 0) throw std::invalid_argument("blur sigma must be >= 0");
  if (sigma == 0) return map;
  const std::size_t H = map.dim(1), W = map.dim(2);
  const long r = long(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (long i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
  for (auto& v : k) v /= sum;

  std::vector<double> tmp(H * W, 0.0), out(H * W, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0;
      for (long i = -r; i <= r; ++i) {
        const long xx = long(x) + i;
        if (xx >= 0 && xx < long(W)) acc += k[i + r] * map.at(0, y, std::size_t(xx));
      }
      tmp[y * W + x] = acc;
    }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0;
      for (long i = -r; i <= r; ++i) {
        const long yy = long(y) + i;
        if (yy >= 0 && yy < long(H)) acc += k[i + r] * tmp[std::size_t(yy) * W + x];
      }
      out[y * W + x] = acc;
    }
  Tensor<float> res(Shape{1, H, W});
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = std::clamp(out[i], 0.0, 1.0);
    if (v > 1.0 - 1e-6) v = 1.0;  // normalised kernel fully inside the shape
    res[i] = float(v);
  }
  return res;
}

Tensor<float> gen_shadow_mask(std::uint64_t seed, double softness, std::size_t H, std::size_t W) {
  if (softness < 0) throw std::invalid_argument("softness must be >= 0");
  for (std::uint64_t attempt = 0; attempt < 10000; ++attempt) {
    const Tensor<float> shape = gen_shadow_shape(derive_seed(seed, attempt), H, W);
    double area = 0;
    for (float v : shape.vec()) area += v;
    area /= double(H * W);
    if (area < 0.05 || area > 0.60) continue;
    Tensor<float> m = gaussian_blur(shape, softness);
    if (*std::max_element(m.vec().begin(), m.vec().end()) < 1.0f) continue;
    return m;
  }
  throw std::invalid_argument("no shadow mask fits a " + std::to_string(H) + "x" + std::to_string(W) +
                              " image at softness " + std::to_string(softness));
}

Tensor<float> apply_shadow(const Tensor<float>& base, const Tensor<float>& mask,
                           const std::array<double, 3>& attenuation) {
  if (base.rank() != 3 || mask.rank() != 3 || mask.dim(0) != 1 || base.dim(1) != mask.dim(1) ||
      base.dim(2) != mask.dim(2))
    throw ShapeError("apply_shadow: image " + shape_str(base.shape()) + " vs mask " + shape_str(mask.shape()));
  const std::size_t plane = base.dim(1) * base.dim(2);
  Tensor<float> out(base.shape());
  for (std::size_t c = 0; c < base.dim(0); ++c) {
    const float k = float(1.0 - attenuation[c % 3]);
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = base[c * plane + i] * (1.0f - k * mask[i]);
  }
  return out;
}

ImageTriplet gen_triplet(std::uint64_t seed, const TripletOptions& opt) {
  Rng rng = make_rng(seed, 0x7819);
  ImageTriplet tr;
  tr.seed = seed;
  tr.softness = urand(rng, opt.softness_min, opt.softness_max);
  const double a = urand(rng, 0.35, 0.65);
  for (auto& ac : tr.attenuation) ac = std::clamp(a + urand(rng, -0.05, 0.05), 0.3, 0.7);
  tr.shadow_free = quantize8(gen_base_image(derive_seed(seed, 1), opt.height, opt.width));
  tr.mask = quantize8(gen_shadow_mask(derive_seed(seed, 2), tr.softness, opt.height, opt.width));
  tr.shadow = quantize8(apply_shadow(tr.shadow_free, tr.mask, tr.attenuation));
  return tr;
}

std::uint64_t triplet_seed(std::uint64_t master, const std::string& split, std::size_t index) {
  const std::uint64_t tag = fnv1a(split.data(), split.size());
  return derive_seed(master, tag, index);
}

std::string triplet_key(const std::string& split, std::size_t index) {
  std::ostringstream os;
  os << split << '_' << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

std::string triplet_file(const std::string& split, std::size_t index, const std::string& role) {
  return triplet_key(split, index) + '_' + role + ".png";
}

void gen_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.n_train + spec.n_test < 1) throw std::invalid_argument("gen_dataset needs n >= 1");
  std::filesystem::create_directories(out_dir);
  std::ofstream man(out_dir / "manifest.txt");
  if (!man) throw DataError("cannot write manifest in " + out_dir.string());
  man << "# shadowdiff synthetic triplets\n";
  man << "# master_seed " << spec.seed << " n_train " << spec.n_train << " n_test " << spec.n_test << " size "
      << spec.options.height << "x" << spec.options.width << "\n";
  man << "# columns: split index seed softness att_r att_g att_b shadow_file free_file mask_file\n";
  man << std::setprecision(17);
  for (const auto& [split, n] : {std::pair<std::string, std::size_t>{"train", spec.n_train}, {"test", spec.n_test}}) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t seed = triplet_seed(spec.seed, split, i);
      const ImageTriplet tr = gen_triplet(seed, spec.options);
      const auto fs = triplet_file(split, i, "shadow"), ff = triplet_file(split, i, "free"),
                 fm = triplet_file(split, i, "mask");
      write_png(out_dir / fs, tr.shadow);
      write_png(out_dir / ff, tr.shadow_free);
      write_png(out_dir / fm, tr.mask);
      man << split << ' ' << i << ' ' << seed << ' ' << tr.softness << ' ' << tr.attenuation[0] << ' '
          << tr.attenuation[1] << ' ' << tr.attenuation[2] << ' ' << fs << ' ' << ff << ' ' << fm << '\n';
    }
  }
  if (!man) throw DataError("failed writing manifest in " + out_dir.string());
}

std::vector<ImageTriplet> load_split(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream man(dir / "manifest.txt");
  if (!man) throw DataError("missing manifest.txt in " + dir.string());
  std::vector<ImageTriplet> out;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string sp, fs, ff, fm;
    std::size_t index = 0;
    ImageTriplet tr;
    if (!(is >> sp >> index >> tr.seed >> tr.softness >> tr.attenuation[0] >> tr.attenuation[1] >> tr.attenuation[2] >>
          fs >> ff >> fm))
      throw DataError("malformed manifest line: " + line);
    if (sp != split) continue;
    if (index != out.size()) throw DataError("manifest indices out of order for split " + split);
    tr.shadow = read_png(dir / fs);
    tr.shadow_free = read_png(dir / ff);
    tr.mask = read_png(dir / fm);
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace shadowdiff
