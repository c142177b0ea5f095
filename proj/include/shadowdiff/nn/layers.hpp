#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <string>

#include "shadowdiff/nn/param.hpp"
#include "shadowdiff/tensor.hpp"

namespace shadowdiff::nn {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;
template <typename T>
using CMapV = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using MapV = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

struct ConvGeom {
  std::size_t c, h, w, k, stride, pad, ho, wo;
};

inline ConvGeom conv_geom(const Shape& in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in.size() != 3) throw ShapeError("conv expects [C,H,W], got " + shape_str(in));
  const std::size_t h = in[1], w = in[2];
  if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("conv input smaller than kernel");
  return {in[0], h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        // valid output columns: 0 <= ox * stride + kx - pad < w
        const long lo_num = long(g.pad) - long(kx);
        const std::size_t ox_lo = lo_num <= 0 ? 0 : std::size_t((lo_num + long(g.stride) - 1) / long(g.stride));
        const long hi_num = long(g.w) + long(g.pad) - long(kx);
        const std::size_t ox_hi =
            hi_num <= 0 ? 0 : std::min(g.wo, std::size_t((hi_num + long(g.stride) - 1) / long(g.stride)));
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = long(oy * g.stride + ky) - long(g.pad);
          T* out = row + oy * g.wo;
          if (iy < 0 || iy >= long(g.h) || ox_lo >= ox_hi) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + std::size_t(iy)) * g.w;
          const long shift = long(kx) - long(g.pad);
          std::fill(out, out + ox_lo, T(0));
          if (g.stride == 1) {
            std::copy(src + (long(ox_lo) + shift), src + (long(ox_hi) + shift), out + ox_lo);
          } else {
            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) out[ox] = src[long(ox * g.stride) + shift];
          }
          std::fill(out + ox_hi, out + g.wo, T(0));
        }
      }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  const std::size_t hw = g.ho * g.wo;
  std::fill(dx, dx + g.c * g.h * g.w, T(0));
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        const long lo_num = long(g.pad) - long(kx);
        const std::size_t ox_lo = lo_num <= 0 ? 0 : std::size_t((lo_num + long(g.stride) - 1) / long(g.stride));
        const long hi_num = long(g.w) + long(g.pad) - long(kx);
        const std::size_t ox_hi =
            hi_num <= 0 ? 0 : std::min(g.wo, std::size_t((hi_num + long(g.stride) - 1) / long(g.stride)));
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = long(oy * g.stride + ky) - long(g.pad);
          if (iy < 0 || iy >= long(g.h)) continue;
          T* dst = dx + (c * g.h + std::size_t(iy)) * g.w;
          const long shift = long(kx) - long(g.pad);
          const T* in = row + oy * g.wo;
          for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) dst[long(ox * g.stride) + shift] += in[ox];
        }
      }
}

/// 2-d convolution, weight laid out [Cout, Cin, k, k].
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad, Rng& rng,
         double gain = 1.0)
      : weight(Shape{cout, cin * k * k}), bias(Shape{cout}), cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad) {
    init_uniform(weight.value, cin * k * k, rng, gain);
    init_uniform(bias.value, cin * k * k, rng);
  }

  /// All-zero weights and bias: the layer starts as a no-op branch.
  static Conv2d zeros(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad) {
    Conv2d c;
    c.weight = Param<T>(Shape{cout, cin * k * k});
    c.bias = Param<T>(Shape{cout});
    c.cin_ = cin;
    c.cout_ = cout;
    c.k_ = k;
    c.stride_ = stride;
    c.pad_ = pad;
    return c;
  }

  /// Same layer with `extra` input channels appended whose weights are zero.
  Conv2d with_extra_inputs(std::size_t extra) const {
    Conv2d c = zeros(cin_ + extra, cout_, k_, stride_, pad_);
    const std::size_t kk = k_ * k_;
    for (std::size_t o = 0; o < cout_; ++o)
      std::copy(weight.value.data() + o * cin_ * kk, weight.value.data() + (o + 1) * cin_ * kk,
                c.weight.value.data() + o * (cin_ + extra) * kk);
    c.bias.value = bias.value;
    c.weight.trainable = weight.trainable;
    c.bias.trainable = bias.trainable;
    return c;
  }

  std::size_t in_channels() const { return cin_; }
  std::size_t out_channels() const { return cout_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 3 || x.dim(0) != cin_)
      throw ShapeError("conv expects " + std::to_string(cin_) + " input channels, got " + shape_str(x.shape()));
    g_ = conv_geom(x.shape(), k_, stride_, pad_);
    const std::size_t hw = g_.ho * g_.wo;
    const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
    if (direct) {
      cols_ = x;
    } else {
      cols_ = Tensor<T>(Shape{cin_ * k_ * k_, hw});
      im2col(x.data(), g_, cols_.data());
    }
    Tensor<T> y(Shape{cout_, g_.ho, g_.wo});
    MapM<T> Y(y.data(), cout_, hw);
    Y.noalias() = CMapM<T>(weight.value.data(), cout_, cin_ * k_ * k_) * CMapM<T>(cols_.data(), cin_ * k_ * k_, hw);
    Y.colwise() += CMapV<T>(bias.value.data(), cout_);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true) {
    if (dy.shape() != Shape{cout_, g_.ho, g_.wo}) throw ShapeError("Conv2d backward got " + shape_str(dy.shape()));
    const std::size_t hw = g_.ho * g_.wo, kdim = cin_ * k_ * k_;
    CMapM<T> dY(dy.data(), cout_, hw);
    CMapM<T> C(cols_.data(), kdim, hw);
    if (weight.trainable) MapM<T>(weight.grad.data(), cout_, kdim).noalias() += dY * C.transpose();
    if (bias.trainable) MapV<T>(bias.grad.data(), cout_) += dY.rowwise().sum();
    if (!need_dx) return {};
    Tensor<T> dx(Shape{cin_, g_.h, g_.w});
    if (k_ == 1 && stride_ == 1 && pad_ == 0) {
      MapM<T>(dx.data(), kdim, hw).noalias() = CMapM<T>(weight.value.data(), cout_, kdim).transpose() * dY;
    } else {
      Tensor<T> dcols(Shape{kdim, hw});
      MapM<T>(dcols.data(), kdim, hw).noalias() = CMapM<T>(weight.value.data(), cout_, kdim).transpose() * dY;
      col2im(dcols.data(), g_, dx.data());
    }
    return dx;
  }

  void collect(ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".weight", weight);
    store.add(prefix + ".bias", bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  std::size_t cin_ = 0, cout_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  ConvGeom g_{};
  Tensor<T> cols_;
};

/// Group normalization over [C, H, W] with per-channel affine.
template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(std::size_t channels, std::size_t groups, double eps = 1e-5)
      : gamma(Shape{channels}, T(1)), beta(Shape{channels}), channels_(channels), groups_(groups), eps_(eps) {
    if (groups == 0 || channels % groups != 0) throw std::invalid_argument("GroupNorm: channels % groups != 0");
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 3 || x.dim(0) != channels_) throw ShapeError("GroupNorm channel mismatch " + shape_str(x.shape()));
    const std::size_t plane = x.dim(1) * x.dim(2), cpg = channels_ / groups_, n = cpg * plane;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(groups_, T(0));
    Tensor<T> y(x.shape());
    for (std::size_t g = 0; g < groups_; ++g) {
      const T* src = x.data() + g * n;
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < n; ++i) mean += src[i];
      mean /= double(n);
      for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= double(n);
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
      inv_std_[g] = inv;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        const T ga = gamma.value[ch], be = beta.value[ch];
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = g * n + c * plane + i;
          const T xh = static_cast<T>((x[idx] - mean) * inv);
          xhat_[idx] = xh;
          y[idx] = xh * ga + be;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    dy.check_same(xhat_, "GroupNorm backward");
    const std::size_t plane = dy.dim(1) * dy.dim(2), cpg = channels_ / groups_, n = cpg * plane;
    Tensor<T> dx(dy.shape());
    for (std::size_t g = 0; g < groups_; ++g) {
      double sum_d = 0, sum_dx = 0;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        double dga = 0, dbe = 0;
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = g * n + c * plane + i;
          dga += double(dy[idx]) * xhat_[idx];
          dbe += dy[idx];
          const double d = double(dy[idx]) * gamma.value[ch];
          sum_d += d;
          sum_dx += d * xhat_[idx];
        }
        if (gamma.trainable) gamma.grad[ch] += static_cast<T>(dga);
        if (beta.trainable) beta.grad[ch] += static_cast<T>(dbe);
      }
      const double inv = inv_std_[g];
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = g * n + c * plane + i;
          const double d = double(dy[idx]) * gamma.value[ch];
          dx[idx] = static_cast<T>(inv / double(n) * (double(n) * d - sum_d - xhat_[idx] * sum_dx));
        }
      }
    }
    return dx;
  }

  void collect(ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".gamma", gamma);
    store.add(prefix + ".beta", beta);
  }

  Param<T> gamma;
  Param<T> beta;

 private:
  std::size_t channels_ = 0, groups_ = 1;
  double eps_ = 1e-5;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

/// x * sigmoid(x).
template <typename T>
class SiLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / (T(1) + std::exp(-x[i]));
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    dy.check_same(x_, "SiLU backward");
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-x_[i]));
      dx[i] = dy[i] * s * (T(1) + x_[i] * (T(1) - s));
    }
    return dx;
  }

 private:
  Tensor<T> x_;
};

/// Dense layer on rank-1 tensors; weight [out, in].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) : weight(Shape{out, in}), bias(Shape{out}), in_(in), out_(out) {
    init_uniform(weight.value, in, rng);
    init_uniform(bias.value, in, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.size() != in_) throw ShapeError("Linear expects " + std::to_string(in_) + " inputs");
    x_ = x;
    Tensor<T> y(Shape{out_});
    MapV<T>(y.data(), out_).noalias() =
        CMapM<T>(weight.value.data(), out_, in_) * CMapV<T>(x.data(), in_) + CMapV<T>(bias.value.data(), out_);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true) {
    if (dy.size() != out_) throw ShapeError("Linear backward expects " + std::to_string(out_) + " values");
    CMapV<T> d(dy.data(), out_);
    if (weight.trainable) MapM<T>(weight.grad.data(), out_, in_).noalias() += d * CMapV<T>(x_.data(), in_).transpose();
    if (bias.trainable) MapV<T>(bias.grad.data(), out_) += d;
    if (!need_dx) return {};
    Tensor<T> dx(Shape{in_});
    MapV<T>(dx.data(), in_).noalias() = CMapM<T>(weight.value.data(), out_, in_).transpose() * d;
    return dx;
  }

  void collect(ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".weight", weight);
    store.add(prefix + ".bias", bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> x_;
};

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y(Shape{c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) y.at(ch, yy, xx) = x.at(ch, yy / 2, xx / 2);
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  const std::size_t c = dy.dim(0), h = dy.dim(1) / 2, w = dy.dim(2) / 2;
  Tensor<T> dx(Shape{c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dx.at(ch, yy / 2, xx / 2) += dy.at(ch, yy, xx);
  return dx;
}

/// Sinusoidal features [sin(t f_i), cos(t f_i)] with geometric frequencies.
template <typename T>
Tensor<T> sinusoidal_embedding(double t, std::size_t dim) {
  Tensor<T> e(Shape{dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * double(i) / double(half));
    e[i] = static_cast<T>(std::sin(t * f));
    e[half + i] = static_cast<T>(std::cos(t * f));
  }
  return e;
}

}  // namespace shadowdiff::nn
