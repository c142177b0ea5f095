#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>
#include <string>

#include "shadowdiff/nn/layers.hpp"

namespace shadowdiff::nn {

/// Offsets/modulation tensor layout for a k x k deformable kernel with K = k*k taps:
/// channels [2j, 2j+1] hold (dy, dx) of tap j, channels [2K + j] hold its modulation scalar.
inline std::size_t deform_offset_channels(std::size_t k) { return 3 * k * k; }

namespace detail {

/// Bilinear corner indices and weights for every (tap, position); out-of-map corners carry
/// index 0 and a zero validity flag so lookups stay branch-free.
template <typename T>
struct TapTable {
  std::vector<std::array<std::uint32_t, 4>> idx;
  std::vector<std::array<T, 4>> valid;
  std::vector<T> ly, lx;

  TapTable(const Tensor<T>& offmod, std::size_t k, std::size_t H, std::size_t W) {
    const std::size_t K = k * k, HW = H * W;
    const long half = long(k / 2);
    idx.resize(K * HW);
    valid.resize(K * HW);
    ly.resize(K * HW);
    lx.resize(K * HW);
    for (std::size_t j = 0; j < K; ++j) {
      const long ky = long(j / k) - half, kx = long(j % k) - half;
      const T* dy = offmod.data() + (2 * j) * HW;
      const T* dx = offmod.data() + (2 * j + 1) * HW;
      for (std::size_t p = 0; p < HW; ++p) {
        const double py = double(long(p / W) + ky) + double(dy[p]);
        const double px = double(long(p % W) + kx) + double(dx[p]);
        const double fy = std::floor(py), fx = std::floor(px);
        const long y0 = long(fy), x0 = long(fx);
        const std::size_t e = j * HW + p;
        ly[e] = T(py - fy);
        lx[e] = T(px - fx);
        for (int q = 0; q < 4; ++q) {
          const long y = y0 + q / 2, x = x0 + q % 2;
          const bool in = y >= 0 && y < long(H) && x >= 0 && x < long(W);
          idx[e][q] = in ? std::uint32_t(y * long(W) + x) : 0;
          valid[e][q] = in ? T(1) : T(0);
        }
      }
    }
  }
};

}  // namespace detail

/// Modulated deformable convolution (stride 1, same padding, no bias):
///   out[o, p] = sum_{c,j} w[o, c, j] * feat[c](p + p_j + dp_j(p)) * ds_j(p)
/// with bilinear sampling and zeros outside the map. `samples` receives the unmodulated
/// bilinear samples [C*K, H*W] for the backward pass.
template <typename T>
Tensor<T> deform_conv_forward(const Tensor<T>& feat, const Tensor<T>& offmod, const Tensor<T>& weight, std::size_t k,
                              Tensor<T>* samples = nullptr) {
  const std::size_t C = feat.dim(0), H = feat.dim(1), W = feat.dim(2), K = k * k, HW = H * W;
  if (offmod.rank() != 3 || offmod.dim(0) != 3 * K || offmod.dim(1) != H || offmod.dim(2) != W)
    throw ShapeError("deformable conv offsets must be [3K,H,W], got " + shape_str(offmod.shape()));
  if (weight.rank() != 2 || weight.dim(1) != C * K) throw ShapeError("deformable conv weight must be [Cout, C*K]");
  const std::size_t cout = weight.dim(0);
  const detail::TapTable<T> taps(offmod, k, H, W);

  Tensor<T> raw(Shape{C * K, HW});
  Tensor<T> cols(Shape{C * K, HW});
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = feat.data() + c * HW;
    for (std::size_t j = 0; j < K; ++j) {
      const T* ds = offmod.data() + (2 * K + j) * HW;
      T* r = raw.data() + (c * K + j) * HW;
      T* o = cols.data() + (c * K + j) * HW;
      for (std::size_t p = 0; p < HW; ++p) {
        const std::size_t e = j * HW + p;
        const auto& id = taps.idx[e];
        const auto& va = taps.valid[e];
        const T a = taps.ly[e], b = taps.lx[e];
        const T v = (T(1) - a) * ((T(1) - b) * va[0] * plane[id[0]] + b * va[1] * plane[id[1]]) +
                    a * ((T(1) - b) * va[2] * plane[id[2]] + b * va[3] * plane[id[3]]);
        r[p] = v;
        o[p] = v * ds[p];
      }
    }
  }
  Tensor<T> out(Shape{cout, H, W});
  MapM<T>(out.data(), cout, HW).noalias() = CMapM<T>(weight.data(), cout, C * K) * CMapM<T>(cols.data(), C * K, HW);
  if (samples) *samples = std::move(raw);
  return out;
}

/// Gradients of deform_conv_forward. `dweight` may be null when the kernel is frozen.
template <typename T>
void deform_conv_backward(const Tensor<T>& dout, const Tensor<T>& feat, const Tensor<T>& offmod,
                          const Tensor<T>& weight, std::size_t k, const Tensor<T>& samples, Tensor<T>& dfeat,
                          Tensor<T>& doffmod, Tensor<T>* dweight) {
  const std::size_t C = feat.dim(0), H = feat.dim(1), W = feat.dim(2), K = k * k, HW = H * W;
  const std::size_t cout = weight.dim(0);
  CMapM<T> dO(dout.data(), cout, HW);
  const detail::TapTable<T> taps(offmod, k, H, W);

  if (dweight) {
    Tensor<T> cols(Shape{C * K, HW});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < K; ++j) {
        const T* ds = offmod.data() + (2 * K + j) * HW;
        for (std::size_t p = 0; p < HW; ++p) cols[(c * K + j) * HW + p] = samples[(c * K + j) * HW + p] * ds[p];
      }
    MapM<T>(dweight->data(), cout, C * K).noalias() += dO * CMapM<T>(cols.data(), C * K, HW).transpose();
  }

  Tensor<T> dcols(Shape{C * K, HW});
  MapM<T>(dcols.data(), C * K, HW).noalias() = CMapM<T>(weight.data(), cout, C * K).transpose() * dO;

  dfeat = Tensor<T>(feat.shape());
  doffmod = Tensor<T>(offmod.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = feat.data() + c * HW;
    T* dplane = dfeat.data() + c * HW;
    for (std::size_t j = 0; j < K; ++j) {
      const T* ds = offmod.data() + (2 * K + j) * HW;
      const T* g = dcols.data() + (c * K + j) * HW;
      const T* smp = samples.data() + (c * K + j) * HW;
      T* gdy = doffmod.data() + (2 * j) * HW;
      T* gdx = doffmod.data() + (2 * j + 1) * HW;
      T* gds = doffmod.data() + (2 * K + j) * HW;
      for (std::size_t p = 0; p < HW; ++p) {
        if (g[p] == T(0)) continue;
        const std::size_t e = j * HW + p;
        const auto& id = taps.idx[e];
        const auto& va = taps.valid[e];
        const T a = taps.ly[e], b = taps.lx[e];
        gds[p] += g[p] * smp[p];
        const T gv = g[p] * ds[p];
        if (gv == T(0)) continue;
        const T v00 = va[0] * plane[id[0]], v01 = va[1] * plane[id[1]];
        const T v10 = va[2] * plane[id[2]], v11 = va[3] * plane[id[3]];
        dplane[id[0]] += gv * va[0] * (T(1) - a) * (T(1) - b);
        dplane[id[1]] += gv * va[1] * (T(1) - a) * b;
        dplane[id[2]] += gv * va[2] * a * (T(1) - b);
        dplane[id[3]] += gv * va[3] * a * b;
        gdy[p] += gv * ((T(1) - b) * (v10 - v00) + b * (v11 - v01));
        gdx[p] += gv * ((T(1) - a) * (v01 - v00) + a * (v11 - v10));
      }
    }
  }
}

/// Deformable skip connection whose offsets and modulation come from a zero-initialized
/// convolution over [shadow features, controller features]. Outputs exactly zero until trained.
template <typename T>
class ZeroDeconv {
 public:
  ZeroDeconv() = default;
  ZeroDeconv(std::size_t shadow_ch, std::size_t ctrl_ch, std::size_t out_ch, Rng& rng, std::size_t k = 3)
      : offset_conv(Conv2d<T>::zeros(shadow_ch + ctrl_ch, deform_offset_channels(k), 3, 1, 1)),
        weight(Shape{out_ch, shadow_ch * k * k}),
        shadow_ch_(shadow_ch),
        k_(k) {
    init_uniform(weight.value, shadow_ch * k * k, rng);
  }

  Tensor<T> forward(const Tensor<T>& shadow_feat, const Tensor<T>& ctrl_feat) {
    feat_ = shadow_feat;
    offmod_ = offset_conv.forward(concat_channels({&shadow_feat, &ctrl_feat}));
    return deform_conv_forward(feat_, offmod_, weight.value, k_, &samples_);
  }

  /// Returns (d shadow_feat, d ctrl_feat).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dout) {
    Tensor<T> dfeat, doffmod;
    deform_conv_backward(dout, feat_, offmod_, weight.value, k_, samples_, dfeat, doffmod,
                         weight.trainable ? &weight.grad : nullptr);
    Tensor<T> dcat = offset_conv.backward(doffmod);
    Tensor<T> ds = slice_channels(dcat, 0, shadow_ch_);
    ds += dfeat;
    return {std::move(ds), slice_channels(dcat, shadow_ch_, dcat.dim(0) - shadow_ch_)};
  }

  void collect(ParamStore<T>& store, const std::string& prefix) {
    offset_conv.collect(store, prefix + ".offset");
    store.add(prefix + ".weight", weight);
  }

  Conv2d<T> offset_conv;
  Param<T> weight;

 private:
  std::size_t shadow_ch_ = 0, k_ = 3;
  Tensor<T> feat_, offmod_, samples_;
};

}  // namespace shadowdiff::nn
