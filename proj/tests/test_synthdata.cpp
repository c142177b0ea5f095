#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "shadowdiff/image_io.hpp"
#include "shadowdiff/synthdata.hpp"

using namespace shadowdiff;
namespace fs = std::filesystem;

namespace {

double sum_of(const Tensor<float>& t) {
  double s = 0;
  for (float v : t.vec()) s += v;
  return s;
}

/// Fraction of (non-DC) spectral energy of the channel mean above Nyquist/4 along either axis.
double high_frequency_fraction(const Tensor<float>& img) {
  const std::size_t H = img.dim(1), W = img.dim(2);
  std::vector<double> g(H * W, 0.0);
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t i = 0; i < H * W; ++i) g[i] += img[c * H * W + i] / double(img.dim(0));
  double mean = 0;
  for (double v : g) mean += v;
  mean /= double(H * W);
  double total = 0, high = 0;
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t v = 0; v < W; ++v) {
      std::complex<double> acc = 0;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double ph = -2 * std::numbers::pi * (double(u * y) / double(H) + double(v * x) / double(W));
          acc += (g[y * W + x] - mean) * std::polar(1.0, ph);
        }
      const double e = std::norm(acc);
      total += e;
      const std::size_t fu = std::min(u, H - u), fv = std::min(v, W - v);
      if (fu > H / 8 || fv > W / 8) high += e;  // Nyquist is H/2, a quarter of it is H/8
    }
  return total > 0 ? high / total : 0.0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("triplet invariants over a seed sweep") {
  for (std::uint64_t s = 0; s < 60; ++s) {
    const auto tr = gen_triplet(triplet_seed(99, "sweep", s));
    REQUIRE(tr.shadow.shape() == Shape{3, 64, 64});
    REQUIRE(tr.mask.shape() == Shape{1, 64, 64});
    bool ok = true;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 64 * 64; ++i) {
        const float sh = tr.shadow[c * 4096 + i], fr = tr.shadow_free[c * 4096 + i], m = tr.mask[i];
        ok = ok && std::isfinite(sh) && sh >= 0 && fr <= 1 && sh <= fr;
        if (m == 0.0f) ok = ok && sh == fr;
        ok = ok && m >= 0 && m <= 1;
      }
    CHECK(ok);
    for (double a : tr.attenuation) CHECK((a >= 0.3 && a <= 0.7));
    CHECK((tr.softness >= 1.0 && tr.softness <= 2.5));
  }
}

TEST_CASE("base image is deterministic and seeds give different images") {
  CHECK(max_abs_diff(gen_base_image(5), gen_base_image(5)) == 0.0);
  double worst = 1.0;
  for (std::uint64_t s = 0; s < 100; ++s) worst = std::min(worst, max_abs_diff(gen_base_image(2 * s), gen_base_image(2 * s + 1)));
  CHECK(worst > 0.05);
}

TEST_CASE("base images carry energy above a quarter of Nyquist") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto img = gen_base_image(s, 32, 32);
    CHECK(high_frequency_fraction(img) > 0.01);
  }
  // a smooth ramp has almost none, so the oracle discriminates
  Tensor<float> ramp(Shape{1, 32, 32});
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      ramp.at(0, y, x) = 0.5f + 0.4f * float(std::sin(2 * std::numbers::pi * double(x) / 32.0));
  CHECK(high_frequency_fraction(ramp) < 1e-6);
}

TEST_CASE("shadow masks") {
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto hard = gen_shadow_mask(s, 0.0);
    double area = 0;
    bool binary = true;
    for (float v : hard.vec()) {
      binary = binary && (v == 0.0f || v == 1.0f);
      area += v;
    }
    CHECK(binary);
    CHECK(area / 4096 >= 0.05);
    CHECK(area / 4096 <= 0.60);
    const auto soft = gen_shadow_mask(s, 2.0);
    CHECK(*std::max_element(soft.vec().begin(), soft.vec().end()) == 1.0f);
    CHECK(*std::min_element(soft.vec().begin(), soft.vec().end()) >= 0.0f);
    CHECK(max_abs_diff(soft, gen_shadow_mask(s, 2.0)) == 0.0);
  }
  CHECK_THROWS(gen_shadow_mask(1, -1.0));
  CHECK_THROWS(gen_shadow_mask(1, 2.5, 12, 12));
}

TEST_CASE("blur keeps the total mass of shapes away from the borders") {
  int checked = 0;
  for (std::uint64_t s = 0; s < 200 && checked < 20; ++s) {
    const auto shape = gen_shadow_shape(s);
    bool inner = true;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x)
        if (shape.at(0, y, x) > 0 && (y < 8 || x < 8 || y >= 56 || x >= 56)) inner = false;
    if (!inner) continue;
    ++checked;
    for (double sigma : {0.5, 1.0, 2.5}) {
      const double m0 = sum_of(shape), m1 = sum_of(gaussian_blur(shape, sigma));
      CHECK(std::abs(m1 - m0) <= 0.02 * m0);
    }
  }
  CHECK(checked >= 5);
}

TEST_CASE("apply_shadow examples") {
  const auto base = gen_base_image(3, 16, 16);
  const Tensor<float> zero(Shape{1, 16, 16}), one(Shape{1, 16, 16}, 1.0f);
  CHECK(max_abs_diff(apply_shadow(base, zero, {0.4, 0.5, 0.6}), base) == 0.0);
  CHECK(max_abs_diff(apply_shadow(base, one, {0.5, 0.5, 0.5}), base * 0.5f) == 0.0);
  CHECK(max_abs_diff(apply_shadow(base, one, {1.0, 1.0, 1.0}), base) == 0.0);
  const auto tinted = apply_shadow(base, one, {0.3, 0.5, 0.7});
  CHECK(tinted.at(0, 4, 4) == doctest::Approx(0.3 * base.at(0, 4, 4)).epsilon(1e-6));
  CHECK(tinted.at(2, 4, 4) == doctest::Approx(0.7 * base.at(2, 4, 4)).epsilon(1e-6));
  CHECK_THROWS_AS(apply_shadow(base, Tensor<float>(Shape{1, 8, 8}), {0.5, 0.5, 0.5}), ShapeError);
}

TEST_CASE("split seeds are disjoint and keys are zero padded") {
  std::set<std::uint64_t> train, test;
  for (std::size_t i = 0; i < 500; ++i) train.insert(triplet_seed(1234, "train", i));
  for (std::size_t i = 0; i < 50; ++i) test.insert(triplet_seed(1234, "test", i));
  CHECK(train.size() == 500);
  CHECK(test.size() == 50);
  for (auto s : test) CHECK(train.count(s) == 0);
  CHECK(triplet_key("test", 3) == "test_0003");
  CHECK(triplet_file("train", 12, "mask") == "train_0012_mask.png");
}

TEST_CASE("dataset generation is byte-for-byte reproducible and loads back") {
  const fs::path a = fs::temp_directory_path() / "shadowdiff_synth_a", b = fs::temp_directory_path() / "shadowdiff_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  DatasetSpec spec;
  spec.n_train = 4;
  spec.n_test = 2;
  spec.options.height = spec.options.width = 32;
  gen_dataset(spec, a);
  gen_dataset(spec, b);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
  }
  CHECK(files == 6 * 3 + 1);
  const auto test = load_split(a, "test");
  REQUIRE(test.size() == 2);
  const auto direct = gen_triplet(triplet_seed(spec.seed, "test", 1), spec.options);
  CHECK(max_abs_diff(test[1].shadow, direct.shadow) == 0.0);
  CHECK(max_abs_diff(test[1].mask, direct.mask) == 0.0);
  CHECK(test[1].attenuation[0] == doctest::Approx(direct.attenuation[0]).epsilon(1e-12));
  CHECK(slurp(a / "manifest.txt").find("test 1 ") != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("png round trip is exact for 8-bit values") {
  const auto img = quantize8(gen_base_image(8, 16, 24));
  const fs::path p = fs::temp_directory_path() / "shadowdiff_rt.png";
  write_png(p, img);
  CHECK(max_abs_diff(read_png(p), img) == 0.0);
  fs::remove(p);
  CHECK_THROWS_AS(read_png(fs::temp_directory_path() / "shadowdiff_missing.png"), DataError);
}
