#include "doctest.h"
#include "shadowdiff/diffusion.hpp"
#include "test_support.hpp"

using namespace shadowdiff;
using testing::scalar;
using testing::table_from;

namespace {

// t=2: alpha_bar 0.25, beta_bar 0.5; t=1: alpha_bar 0.64, beta_bar 0.25
const ScheduleTable kToy = table_from({1.0, 0.64, 0.25, 0.1, 0.05});

template <typename T>
struct OracleCase {
  Tensor<T> z0, r, zs, eps;
  int t;
};

template <typename T>
OracleCase<T> draw(Rng& rng, const ScheduleTable& s, const Shape& shape) {
  OracleCase<T> c;
  c.z0 = testing::randn<T>(shape, rng);
  c.r = testing::randn<T>(shape, rng);
  c.zs = c.z0 + c.r;
  c.eps = testing::randn<T>(shape, rng);
  c.t = uniform_int(rng, 1, s.T);
  return c;
}

}  // namespace

TEST_CASE("forward_interpolate") {
  CHECK(forward_interpolate(scalar<double>(1.0), scalar<double>(2.0), 2, kToy)[0] == 2.0);
  Rng rng = make_rng(1);
  const auto z0 = testing::randn<double>({3, 4, 4}, rng);
  const Tensor<double> zero(z0.shape());
  CHECK(max_abs_diff(forward_interpolate(z0, zero, 3, kToy), z0) == 0.0);
  const auto r = testing::randn<double>({3, 4, 4}, rng);
  CHECK(max_abs_diff(forward_interpolate(z0, r, kToy.T, kToy), z0 + r) == 0.0);
  CHECK_THROWS_AS(forward_interpolate(z0, Tensor<double>({3, 4, 5}), 1, kToy), ShapeError);
  CHECK_THROWS_AS(forward_interpolate(z0, r, 5, kToy), std::invalid_argument);
}

TEST_CASE("forward_noise") {
  CHECK(forward_noise(scalar<double>(2.0), scalar<double>(0.0), 2, kToy)[0] == 1.0);
  CHECK(forward_noise(scalar<double>(0.0), scalar<double>(1.0), 2, kToy)[0] == doctest::Approx(0.8660254037844386));
  Rng rng = make_rng(2);
  const auto z = testing::randn<double>({2, 3, 3}, rng), e = testing::randn<double>({2, 3, 3}, rng);
  CHECK(max_abs_diff(forward_noise(z, e, 0, kToy), z) == 0.0);
}

TEST_CASE("compose_epsilon") {
  CHECK(compose_epsilon(scalar<double>(0.1), scalar<double>(2.0), 2, kToy)[0] ==
        doctest::Approx(0.1 + 0.5 * 0.5 * 2 / std::sqrt(0.75)).epsilon(1e-15));
  CHECK(compose_epsilon(scalar<double>(0.1), scalar<double>(2.0), 2, kToy)[0] == doctest::Approx(0.677350).epsilon(1e-6));
  CHECK(compose_epsilon(scalar<double>(0.3), scalar<double>(0.0), 3, kToy)[0] == 0.3);
  CHECK_THROWS_AS(compose_epsilon(scalar<double>(0.1), scalar<double>(2.0), 0, kToy), std::invalid_argument);
  const auto degenerate = table_from({1.0, 1.0});
  CHECK_THROWS_AS(compose_epsilon(scalar<double>(0.1), scalar<double>(2.0), 1, degenerate), DegenerateSchedule);
}

TEST_CASE("predict_z0") {
  CHECK(predict_z0(scalar<double>(1.0), scalar<double>(0.5 * 0.5 * 2 / std::sqrt(0.75)), 2, kToy)[0] ==
        doctest::Approx(1.0).epsilon(1e-15));
  auto zero_alpha = table_from({1.0, 0.5, 0.0});
  CHECK_THROWS_AS(predict_z0(scalar<double>(1.0), scalar<double>(0.0), 2, zero_alpha), DegenerateSchedule);
  Rng rng = make_rng(3);
  const auto z = testing::randn<double>({4, 2, 5}, rng);
  CHECK(predict_z0(z, z, 1, kToy).shape() == z.shape());
}

TEST_CASE("nrd_decompose: scalar scenario") {
  // z_s=3, z_0=1, r=2, eps=0 at alpha_bar=0.25, beta_bar=0.5
  const auto zt = forward_noise(forward_interpolate(scalar<double>(1), scalar<double>(2), 2, kToy), scalar<double>(0), 2, kToy);
  CHECK(zt[0] == doctest::Approx(1.0).epsilon(1e-15));
  const auto eps_net = compose_epsilon(scalar<double>(0), scalar<double>(2), 2, kToy);
  CHECK(eps_net[0] == doctest::Approx(0.577350).epsilon(1e-6));
  const auto n = nrd_decompose(scalar<double>(3), zt, eps_net, 2, kToy);
  CHECK(n.z0_hat[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(n.r_hat[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(std::abs(n.eps_noise[0]) < 1e-15);
  CHECK(n.eps_net[0] == eps_net[0]);

  // zero residual: eps_noise equals eps_net
  const auto m = nrd_decompose(scalar<double>(1), forward_noise(scalar<double>(1), scalar<double>(0.4), 3, kToy),
                               scalar<double>(0.4), 3, kToy);
  CHECK(std::abs(m.r_hat[0]) < 1e-15);
  CHECK(m.eps_noise[0] == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("nrd_decompose: r_hat = z_s - z0_hat exactly") {
  Rng rng = make_rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto c = draw<float>(rng, kToy, {2, 3, 3});
    const auto n = nrd_decompose(c.zs, testing::randn<float>({2, 3, 3}, rng), testing::randn<float>({2, 3, 3}, rng), c.t, kToy);
    CHECK(max_abs_diff(n.r_hat, c.zs - n.z0_hat) == 0.0);
  }
}

TEST_CASE_TEMPLATE("NRD inverts composition", T, double, float) {
  const double tol = std::is_same_v<T, double> ? 1e-12 : 1e-5;
  for (int horizon : {100, 20}) {
    const auto s = ScheduleTable::make(horizon);
    Rng rng = make_rng(5, horizon);
    double worst = 0;
    for (int i = 0; i < 300; ++i) {
      const auto c = draw<T>(rng, s, {4, 2, 2});
      const auto zt = forward_noise(forward_interpolate(c.z0, c.r, c.t, s), c.eps, c.t, s);
      const auto n = nrd_decompose(c.zs, zt, compose_epsilon(c.eps, c.r, c.t, s), c.t, s);
      worst = std::max({worst, max_abs_diff(n.z0_hat, c.z0), max_abs_diff(n.r_hat, c.r), max_abs_diff(n.eps_noise, c.eps)});
    }
    CHECK(worst <= tol);
  }
}

TEST_CASE("sampler_step: scalar scenario lands on the forward process") {
  const auto zt = forward_noise(forward_interpolate(scalar<double>(1), scalar<double>(2), 2, kToy), scalar<double>(0), 2, kToy);
  const auto n = nrd_decompose(scalar<double>(3), zt, compose_epsilon(scalar<double>(0), scalar<double>(2), 2, kToy), 2, kToy);
  const auto prev = sampler_step(scalar<double>(3), n, 2, 1, kToy);
  CHECK(prev[0] == doctest::Approx(1.2).epsilon(1e-15));
  const auto fwd = forward_noise(forward_interpolate(scalar<double>(1), scalar<double>(2), 1, kToy), scalar<double>(0), 1, kToy);
  CHECK(prev[0] == doctest::Approx(fwd[0]).epsilon(1e-15));
  CHECK_THROWS_AS(sampler_step(scalar<double>(3), n, 2, 2, kToy), std::invalid_argument);
  CHECK_THROWS_AS(sampler_step(scalar<double>(3), n, 1, 2, kToy), std::invalid_argument);
}

TEST_CASE("sampler_step: t_prev = 0 returns z_s - r_hat exactly") {
  Rng rng = make_rng(6);
  const auto s = ScheduleTable::make(100);
  for (int i = 0; i < 20; ++i) {
    const auto c = draw<double>(rng, s, {3, 4, 4});
    const auto n = nrd_decompose(c.zs, testing::randn<double>({3, 4, 4}, rng), testing::randn<double>({3, 4, 4}, rng), c.t, s);
    CHECK(max_abs_diff(sampler_step(c.zs, n, c.t, 0, s), c.zs - n.r_hat) == 0.0);
  }
}

TEST_CASE("sampler_step: one oracle step matches the forward process at t_prev") {
  Rng rng = make_rng(7);
  const auto s = ScheduleTable::make(100);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    auto c = draw<double>(rng, s, {2, 3, 3});
    const int tp = uniform_int(rng, 0, c.t - 1);
    const auto zt = forward_noise(forward_interpolate(c.z0, c.r, c.t, s), c.eps, c.t, s);
    const auto n = nrd_decompose(c.zs, zt, compose_epsilon(c.eps, c.r, c.t, s), c.t, s);
    const auto expect = forward_noise(forward_interpolate(c.z0, c.r, tp, s), n.eps_noise, tp, s);
    worst = std::max(worst, max_abs_diff(sampler_step(c.zs, n, c.t, tp, s), expect));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("ddim_step") {
  const auto s = ScheduleTable::make(50);
  Rng rng = make_rng(8);
  const auto z0 = testing::randn<double>({2, 2, 2}, rng), eps = testing::randn<double>({2, 2, 2}, rng);
  const auto zt = forward_noise(z0, eps, 30, s);
  CHECK(max_abs_diff(ddim_step(zt, eps, 30, 0, s), z0) <= 1e-13);
  const Tensor<double> zero({2, 2, 2});
  CHECK(max_abs_diff(ddim_step(zero, zero, 30, 10, s), zero) == 0.0);
  // deterministic DDIM keeps eps: next state is the forward point at t_prev with the same noise
  CHECK(max_abs_diff(ddim_step(zt, eps, 30, 12, s), forward_noise(z0, eps, 12, s)) <= 1e-13);
  CHECK_THROWS_AS(ddim_step(zt, eps, 30, 30, s), std::invalid_argument);
}

TEST_CASE("sampler_step reduces to ddim_step when the residual estimate vanishes") {
  const auto s = ScheduleTable::make(100);
  Rng rng = make_rng(9);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const int t = uniform_int(rng, 1, 100), tp = uniform_int(rng, 0, t - 1);
    const auto zt = testing::randn<double>({3, 2, 2}, rng), eps = testing::randn<double>({3, 2, 2}, rng);
    // r_hat = 0 means z_s equals the implied z0 estimate
    const auto zs = predict_z0(zt, eps, t, s);
    const auto n = nrd_decompose(zs, zt, eps, t, s);
    CHECK(max_abs_diff(n.r_hat, Tensor<double>(zs.shape())) == 0.0);
    worst = std::max(worst, max_abs_diff(sampler_step(zs, n, t, tp, s), ddim_step(zt, eps, t, tp, s)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("sample: perfect oracle recovers z_0 for every stride") {
  const auto s = ScheduleTable::make(100);
  Rng rng = make_rng(10);
  for (int S : {1, 2, 5, 10, 100}) {
    const auto steps = make_strided_subsequence(100, S);
    double worst = 0;
    for (int i = 0; i < 10; ++i) {
      const auto z0 = testing::randn<double>({4, 4, 4}, rng), r = testing::randn<double>({4, 4, 4}, rng);
      const auto zs = z0 + r;
      auto oracle = [&](const Tensor<double>& z, int t, const Tensor<double>&) {
        // implied noise of z given the true pair, then the composite
        const auto zp = forward_interpolate(z0, r, t, s);
        const auto e = lincomb(1.0 / s.sqrt_one_minus_alpha_bar[t], z, -s.sqrt_alpha_bar[t] / s.sqrt_one_minus_alpha_bar[t], zp);
        return compose_epsilon(e, r, t, s);
      };
      worst = std::max(worst, max_abs_diff(sample<double>(oracle, zs, s, steps, 77), z0));
    }
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("sample: zero residual returns z_s") {
  const auto s = ScheduleTable::make(100);
  Rng rng = make_rng(11);
  const auto z0 = testing::randn<double>({2, 4, 4}, rng);
  auto oracle = [&](const Tensor<double>& z, int t, const Tensor<double>&) {
    return lincomb(1.0 / s.sqrt_one_minus_alpha_bar[t], z, -s.sqrt_alpha_bar[t] / s.sqrt_one_minus_alpha_bar[t], z0);
  };
  CHECK(max_abs_diff(sample<double>(oracle, z0, s, make_strided_subsequence(100, 10), 3), z0) <= 1e-10);
}

TEST_CASE("sample: bitwise deterministic per seed") {
  const auto s = ScheduleTable::make(100);
  Rng rng = make_rng(12);
  const auto zs = testing::randn<float>({4, 4, 4}, rng);
  auto net = [](const Tensor<float>& z, int t, const Tensor<float>& c) {
    Tensor<float> o(z.shape());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(0.3f * z[i] - 0.2f * c[i] + 0.01f * float(t));
    return o;
  };
  const auto steps = make_strided_subsequence(100, 10);
  const auto a = sample<float>(net, zs, s, steps, 99), b = sample<float>(net, zs, s, steps, 99);
  CHECK(checksum(a) == checksum(b));
  CHECK(max_abs_diff(a, sample<float>(net, zs, s, steps, 100)) > 0.0);
}

TEST_CASE("non-Markov contract: z_s is read at every step in residual mode only") {
  const auto s = ScheduleTable::make(100);
  Rng rng = make_rng(13);
  const auto zs = testing::randn<double>({2, 3, 3}, rng), z_start = testing::randn<double>({2, 3, 3}, rng);
  auto net = [](const Tensor<double>& z, int t) {
    Tensor<double> o(z.shape());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::sin(z[i] + 0.01 * t);
    return o;
  };
  auto zs2 = zs;
  zs2[0] += 0.5;
  // two steps 60 -> 40 -> 20; z_s swapped before the second step
  auto run = [&](const Tensor<double>& second_zs, SamplerMode mode) {
    Tensor<double> z = z_start;
    const int ts[3] = {60, 40, 20};
    for (int k = 0; k < 2; ++k) {
      const auto& cur = k == 0 ? zs : second_zs;
      const auto e = net(z, ts[k]);
      z = mode == SamplerMode::residual ? sampler_step(cur, nrd_decompose(cur, z, e, ts[k], s), ts[k], ts[k + 1], s)
                                        : ddim_step(z, e, ts[k], ts[k + 1], s);
    }
    return z;
  };
  CHECK(max_abs_diff(run(zs, SamplerMode::residual), run(zs2, SamplerMode::residual)) > 1e-3);
  CHECK(max_abs_diff(run(zs, SamplerMode::ddim), run(zs2, SamplerMode::ddim)) == 0.0);
}

TEST_CASE("training_target_loss") {
  Rng rng = make_rng(14);
  const auto a = testing::randn<double>({3, 4, 4}, rng);
  CHECK(training_target_loss(a, a) == 0.0);
  CHECK(training_target_loss(scalar<double>(2), scalar<double>(1)) == 1.0);
  Tensor<double> b = a;
  for (auto& v : b.vec()) v += 0.25;
  CHECK(training_target_loss(a, b) == doctest::Approx(0.0625).epsilon(1e-14));
  CHECK_THROWS_AS(training_target_loss(a, Tensor<double>({3, 4, 5})), ShapeError);
}
