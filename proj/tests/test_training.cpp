#include <algorithm>

#include "doctest.h"
#include "shadowdiff/training.hpp"
#include "test_support.hpp"
#include "training_oracles.hpp"

using namespace shadowdiff;
using namespace shadowdiff::testing;

namespace {

struct ScalarStores {
  nn::Param<double> main{Shape{3}}, copy{Shape{3}};
  nn::ParamStore<double> m, c;
  ScalarStores(std::array<double, 3> mv, std::array<double, 3> cv) {
    for (int i = 0; i < 3; ++i) {
      main.value[i] = mv[i];
      copy.value[i] = cv[i];
    }
    m.add("p", main);
    c.add("p", copy);
  }
};

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const std::size_t lo = std::size_t(pos);
  const double f = pos - double(lo);
  return lo + 1 < v.size() ? v[lo] * (1 - f) + v[lo + 1] * f : v[lo];
}

}  // namespace

TEST_CASE("EMA mix weight for both interpretations of eta") {
  SelfEnhanceConfig se;
  se.eta = 0.999;
  CHECK(se.ema_main_weight() == doctest::Approx(0.001).epsilon(1e-12));
  se.paper_literal = true;
  CHECK(se.ema_main_weight() == 0.999);
}

TEST_CASE("EMA update matches the closed form after n steps with a fixed main network") {
  for (double mix : {0.001, 0.1, 0.5, 0.999}) {
    ScalarStores s({1.0, -2.0, 0.25}, {0.0, 3.0, -1.0});
    const int n = 250;
    for (int k = 0; k < n; ++k) ema_update(s.m, s.c, mix);
    const double decay = std::pow(1.0 - mix, n);
    const double m0[] = {1.0, -2.0, 0.25}, c0[] = {0.0, 3.0, -1.0};
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s.copy.value[i] - (m0[i] + decay * (c0[i] - m0[i]))) <= 1e-12);
    CHECK(s.main.value[0] == 1.0);
  }
}

TEST_CASE("EMA single step examples") {
  ScalarStores s({1.0, 0.0, 0.0}, {0.0, 1.0, 0.0});
  ema_update(s.m, s.c, 0.25);
  CHECK(s.copy.value[0] == 0.25);
  CHECK(s.copy.value[1] == 0.75);
  ema_update(s.m, s.c, 0.0);
  CHECK(s.copy.value[0] == 0.25);
  ema_update(s.m, s.c, 1.0);
  CHECK(s.copy.value[0] == 1.0);
  CHECK(s.copy.value[1] == 0.0);
}

TEST_CASE("EMA copy stays inside the range of main values it has seen") {
  Rng rng = make_rng(41);
  ScalarStores s({0, 0, 0}, {0.5, 0.5, 0.5});
  double lo = 0.5, hi = 0.5;
  for (int k = 0; k < 500; ++k) {
    const double v = 4 * uniform01(rng) - 2;
    s.main.value.fill(v);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    ema_update(s.m, s.c, 0.05);
    CHECK(s.copy.value[0] >= lo - 1e-15);
    CHECK(s.copy.value[0] <= hi + 1e-15);
  }
}

TEST_CASE("EMA rejects mismatched stores") {
  nn::Param<double> a(Shape{2}), b(Shape{3});
  nn::ParamStore<double> sa, sb;
  sa.add("p", a);
  sb.add("p", b);
  CHECK_THROWS(ema_update(sa, sb, 0.5));
}

TEST_CASE("self-enhancement config validation") {
  SelfEnhanceConfig se;
  CHECK_NOTHROW(se.validate(100));
  se.P = 1.5;
  CHECK_THROWS(se.validate(100));
  se.P = 0.2;
  se.u_max = 100;
  CHECK_THROWS(se.validate(100));
  se.u_max = 0;
  CHECK_THROWS(se.validate(100));
}

TEST_CASE("forced jump of zero returns the forward sample at t") {
  const ScheduleTable s = ScheduleTable::make(100);
  const auto pair = random_pairs<double>(1, 4, 1)[0];
  bool called = false;
  PseudoEpsFn<double> never = [&](const Tensor<double>& z, int, const SamplePair<double>&) {
    called = true;
    return z;
  };
  const auto z = make_pseudo_input<double>(never, pair, 30, 77, s, 50, SamplerMode::residual, 0);
  Rng rng = make_rng(77, 0x95d);
  const auto expect =
      forward_noise(forward_interpolate(pair.z_0, pair.r, 30, s), gaussian<double>(pair.z_0.shape(), rng), 30, s);
  CHECK(!called);
  CHECK(max_abs_diff(z, expect) <= 1e-15);
}

TEST_CASE("pseudo-inputs from a perfect predictor follow the forward distribution at t") {
  const ScheduleTable s = ScheduleTable::make(100);
  auto pair = SamplePair<double>::from_latents(Tensor<double>::scalar(0.3), Tensor<double>::scalar(1.2));
  PseudoEpsFn<double> oracle = [&](const Tensor<double>& z, int t, const SamplePair<double>& p) {
    const auto zp = forward_interpolate(p.z_0, p.r, t, s);
    Tensor<double> eps = lincomb(1.0 / s.sqrt_one_minus_alpha_bar[t], z, -s.sqrt_alpha_bar[t] / s.sqrt_one_minus_alpha_bar[t], zp);
    return compose_epsilon(eps, p.r, t, s);
  };
  for (int t : {5, 40, 80}) {
    std::vector<double> pseudo, fwd;
    Rng rng = make_rng(5, t);
    for (int k = 0; k < 4000; ++k) {
      pseudo.push_back(make_pseudo_input<double>(oracle, pair, t, derive_seed(9, t, k), s, 50)[0]);
      fwd.push_back(forward_noise(forward_interpolate(pair.z_0, pair.r, t, s), gaussian<double>({1}, rng), t, s)[0]);
    }
    for (double q : {0.25, 0.5, 0.75}) CHECK(std::abs(quantile(pseudo, q) - quantile(fwd, q)) < 0.05);
    const double iqr = quantile(fwd, 0.75) - quantile(fwd, 0.25);
    CHECK(iqr == doctest::Approx(2 * 0.6744897501960817 * s.sqrt_one_minus_alpha_bar[t]).epsilon(0.06));
  }
}

TEST_CASE("P = 0 training is bitwise identical to training without self-enhancement") {
  const ScheduleTable s = ScheduleTable::make(100);
  const auto data = random_pairs<float>(6, 8, 2);
  UNet<float> base(tiny_unet());
  ControlTrainConfig cfg;
  cfg.self_enhance.P = 0.0;
  cfg.total_steps = 30;
  cfg.lr0 = 1e-3;
  ControlledDenoiser<float> a(base), b(base);
  ControlTrainer<float> tr(a, s, cfg);
  trainer_steps<float>(tr, data, 2, 30);
  plain_control_training<float>(b, s, cfg, data, 2, 30);
  CHECK(a.trainable_params().checksum() == b.trainable_params().checksum());
  CHECK(a.trainable_params().checksum() != ControlledDenoiser<float>(base).trainable_params().checksum());
}

TEST_CASE("P = 1 uses pseudo-inputs and changes the trajectory") {
  const ScheduleTable s = ScheduleTable::make(100);
  const auto data = random_pairs<float>(4, 8, 3);
  UNet<float> base(tiny_unet());
  ControlTrainConfig cfg;
  cfg.total_steps = 10;
  cfg.lr0 = 1e-3;
  cfg.self_enhance.P = 1.0;
  ControlledDenoiser<float> a(base), b(base);
  ControlTrainer<float> tr(a, s, cfg);
  std::vector<SamplePair<float>> batch(data.begin(), data.begin() + 2);
  int pseudo = 0;
  for (long k = 0; k < 10; ++k) pseudo += tr.train_step(batch, k).pseudo;
  CHECK(pseudo >= 9);
  cfg.self_enhance.P = 0.0;
  ControlTrainer<float> tr0(b, s, cfg);
  for (long k = 0; k < 10; ++k) CHECK(!tr0.train_step(batch, k).pseudo);
  CHECK(a.trainable_params().checksum() != b.trainable_params().checksum());
}

TEST_CASE("control training is deterministic and leaves the base frozen") {
  const ScheduleTable s = ScheduleTable::make(100);
  const auto data = random_pairs<float>(4, 8, 4);
  UNet<float> base(tiny_unet());
  ControlTrainConfig cfg;
  cfg.total_steps = 8;
  cfg.lr0 = 1e-3;
  ControlledDenoiser<float> a(base), b(base);
  const auto frozen = a.base_params().checksum();
  ControlTrainer<float> ta(a, s, cfg), tb(b, s, cfg);
  trainer_steps<float>(ta, data, 2, 8);
  trainer_steps<float>(tb, data, 2, 8);
  CHECK(a.trainable_params().checksum() == b.trainable_params().checksum());
  CHECK(ta.ema().net.trainable_params().checksum() == tb.ema().net.trainable_params().checksum());
  CHECK(a.base_params().checksum() == frozen);
}

TEST_CASE("EMA copy tracks the main network through training") {
  const ScheduleTable s = ScheduleTable::make(100);
  const auto data = random_pairs<double>(2, 8, 5);
  UNet<double> base(tiny_unet());
  ControlTrainConfig cfg;
  cfg.total_steps = 3;
  cfg.lr0 = 1e-3;
  cfg.self_enhance.P = 0.0;
  cfg.self_enhance.eta = 0.75;  // mix 0.25 towards main per step
  ControlledDenoiser<double> main(base);
  ControlTrainer<double> tr(main, s, cfg);
  auto expect = ControlledDenoiser<double>(base).trainable_params();
  ControlledDenoiser<double> shadow(base);
  auto exp_store = shadow.trainable_params();
  std::vector<SamplePair<double>> batch(data.begin(), data.end());
  for (long k = 0; k < 3; ++k) {
    tr.train_step(batch, k);
    ema_update(main.trainable_params(), exp_store, 0.25);
  }
  CHECK(tr.ema().net.trainable_params().checksum() == exp_store.checksum());
}

TEST_CASE("training loss gradient scale: z0 loss equals weighted noise loss") {
  const ScheduleTable s = ScheduleTable::make(100);
  const auto pair = random_pairs<double>(1, 8, 6)[0];
  UNet<double> base(tiny_unet());
  ControlledDenoiser<double> net(base);
  Rng rng = make_rng(6);
  const int t = 45;
  const auto eps = gaussian<double>(pair.z_0.shape(), rng);
  const auto z_t = forward_noise(forward_interpolate(pair.z_0, pair.r, t, s), eps, t, s);
  net.trainable_params().zero_grad();
  const double loss = ControlTrainer<double>::accumulate_z0_loss(net, s, pair, z_t, t, 1);
  const auto eps_net = net.forward(z_t, t, pair.z_s);
  const auto target = compose_epsilon(eps, pair.r, t, s);
  const double w = (1 - s.alpha_bar[t]) / s.alpha_bar[t];
  CHECK(loss == doctest::Approx(w * mean_squared_error(eps_net, target)).epsilon(1e-10));
}
