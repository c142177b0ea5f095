#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "shadowdiff/nn/layers.hpp"

namespace shadowdiff {

struct UNetConfig {
  std::size_t latent_ch = 4;
  std::size_t ch = 32;       // channels at full latent resolution; 2*ch below
  std::size_t temb_dim = 128;
  std::size_t groups = 8;
  std::uint64_t seed = 1;
};

namespace nn {

/// sin/cos features of t -> MLP -> SiLU. The result feeds every residual block.
template <typename T>
class TimeEmbed {
 public:
  TimeEmbed() = default;
  TimeEmbed(std::size_t sin_dim, std::size_t dim, Rng& rng)
      : lin1(sin_dim, dim, rng), lin2(dim, dim, rng), sin_dim_(sin_dim) {}

  Tensor<T> forward(int t) {
    Tensor<T> h = lin1.forward(sinusoidal_embedding<T>(double(t), sin_dim_));
    h = lin2.forward(act1_.forward(h));
    return act2_.forward(h);
  }

  void backward(const Tensor<T>& d) {
    Tensor<T> g = lin2.backward(act2_.backward(d));
    lin1.backward(act1_.backward(g), false);
  }

  void collect(ParamStore<T>& s, const std::string& p) {
    lin1.collect(s, p + ".lin1");
    lin2.collect(s, p + ".lin2");
  }

  Linear<T> lin1, lin2;

 private:
  std::size_t sin_dim_ = 0;
  SiLU<T> act1_, act2_;
};

/// GN -> SiLU -> conv (+ time bias) -> GN -> SiLU -> conv, plus a skip path.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(std::size_t cin, std::size_t cout, std::size_t temb_dim, std::size_t groups, Rng& rng)
      : gn1(cin, groups), conv1(cin, cout, 3, 1, 1, rng), temb_proj(temb_dim, cout, rng), gn2(cout, groups),
        conv2(cout, cout, 3, 1, 1, rng), has_skip_(cin != cout) {
    if (has_skip_) skip = Conv2d<T>(cin, cout, 1, 1, 0, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& temb) {
    Tensor<T> h = conv1.forward(act1_.forward(gn1.forward(x)));
    const Tensor<T> tb = temb_proj.forward(temb);
    const std::size_t plane = h.dim(1) * h.dim(2);
    for (std::size_t c = 0; c < h.dim(0); ++c)
      for (std::size_t i = 0; i < plane; ++i) h[c * plane + i] += tb[c];
    h = conv2.forward(act2_.forward(gn2.forward(h)));
    if (has_skip_)
      h += skip.forward(x);
    else
      h += x;
    return h;
  }

  /// Accumulates into dtemb; returns d x (or an empty tensor when need_dx is false).
  Tensor<T> backward(const Tensor<T>& dy, Tensor<T>& dtemb, bool need_dx = true) {
    Tensor<T> dh = gn2.backward(act2_.backward(conv2.backward(dy)));
    const std::size_t plane = dh.dim(1) * dh.dim(2);
    Tensor<T> dtb(Shape{dh.dim(0)});
    for (std::size_t c = 0; c < dh.dim(0); ++c) {
      T s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += dh[c * plane + i];
      dtb[c] = s;
    }
    dtemb += temb_proj.backward(dtb);
    const bool need_inner = need_dx || gn1.gamma.trainable || conv1.weight.trainable;
    Tensor<T> dx;
    if (need_inner) dx = gn1.backward(act1_.backward(conv1.backward(dh)));
    if (!need_dx) return {};
    if (has_skip_)
      dx += skip.backward(dy);
    else
      dx += dy;
    return dx;
  }

  void collect(ParamStore<T>& s, const std::string& p) {
    gn1.collect(s, p + ".gn1");
    conv1.collect(s, p + ".conv1");
    temb_proj.collect(s, p + ".temb");
    gn2.collect(s, p + ".gn2");
    conv2.collect(s, p + ".conv2");
    if (has_skip_) skip.collect(s, p + ".skip");
  }

  GroupNorm<T> gn1;
  Conv2d<T> conv1;
  Linear<T> temb_proj;
  GroupNorm<T> gn2;
  Conv2d<T> conv2;
  Conv2d<T> skip;

 private:
  bool has_skip_ = false;
  SiLU<T> act1_, act2_;
};

/// Multi-scale features handed from the down path to the up path.
template <typename T>
struct UNetFeatures {
  Tensor<T> h1;   // [C, H, W]
  Tensor<T> h2;   // [2C, H/2, W/2]
  Tensor<T> mid;  // [2C, H/4, W/4]
};

/// Down path: in_conv, block at full res, two stride-2 stages, middle block.
template <typename T>
class UNetEncoder {
 public:
  UNetEncoder() = default;
  UNetEncoder(std::size_t in_ch, const UNetConfig& c, Rng& rng)
      : in_conv(in_ch, c.ch, 3, 1, 1, rng), b1(c.ch, c.ch, c.temb_dim, c.groups, rng),
        down1(c.ch, 2 * c.ch, 3, 2, 1, rng), b2(2 * c.ch, 2 * c.ch, c.temb_dim, c.groups, rng),
        down2(2 * c.ch, 2 * c.ch, 3, 2, 1, rng), mid(2 * c.ch, 2 * c.ch, c.temb_dim, c.groups, rng) {}

  UNetFeatures<T> forward(const Tensor<T>& x, const Tensor<T>& temb) {
    if (x.rank() != 3 || x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0)
      throw ShapeError("denoiser input must be [C,H,W] with H,W multiples of 4, got " + shape_str(x.shape()));
    UNetFeatures<T> f;
    f.h1 = b1.forward(in_conv.forward(x), temb);
    f.h2 = b2.forward(down1.forward(f.h1), temb);
    f.mid = mid.forward(down2.forward(f.h2), temb);
    return f;
  }

  Tensor<T> backward(const UNetFeatures<T>& d, Tensor<T>& dtemb, bool need_dx) {
    Tensor<T> g = mid.backward(d.mid, dtemb);
    g = down2.backward(g);
    g += d.h2;
    g = down1.backward(b2.backward(g, dtemb));
    g += d.h1;
    g = b1.backward(g, dtemb);
    return in_conv.backward(g, need_dx);
  }

  void collect(ParamStore<T>& s, const std::string& p) {
    in_conv.collect(s, p + ".in_conv");
    b1.collect(s, p + ".b1");
    down1.collect(s, p + ".down1");
    b2.collect(s, p + ".b2");
    down2.collect(s, p + ".down2");
    mid.collect(s, p + ".mid");
  }

  Conv2d<T> in_conv;
  ResBlock<T> b1;
  Conv2d<T> down1;
  ResBlock<T> b2;
  Conv2d<T> down2;
  ResBlock<T> mid;
};

/// Up path with skip concatenation; emits the epsilon prediction.
template <typename T>
class UNetDecoder {
 public:
  UNetDecoder() = default;
  UNetDecoder(const UNetConfig& c, Rng& rng)
      : up2_conv(4 * c.ch, 2 * c.ch, 3, 1, 1, rng), ub2(2 * c.ch, 2 * c.ch, c.temb_dim, c.groups, rng),
        up1_conv(3 * c.ch, c.ch, 3, 1, 1, rng), ub1(c.ch, c.ch, c.temb_dim, c.groups, rng), out_gn(c.ch, c.groups),
        out_conv(c.ch, c.latent_ch, 3, 1, 1, rng), c2_(2 * c.ch) {}

  Tensor<T> forward(const UNetFeatures<T>& f, const Tensor<T>& temb) {
    Tensor<T> u = upsample2x(f.mid);
    Tensor<T> v = ub2.forward(up2_conv.forward(concat_channels({&u, &f.h2})), temb);
    Tensor<T> u1 = upsample2x(v);
    Tensor<T> w = ub1.forward(up1_conv.forward(concat_channels({&u1, &f.h1})), temb);
    return out_conv.forward(out_act_.forward(out_gn.forward(w)));
  }

  UNetFeatures<T> backward(const Tensor<T>& dout, Tensor<T>& dtemb) {
    UNetFeatures<T> d;
    Tensor<T> g = out_gn.backward(out_act_.backward(out_conv.backward(dout)));
    g = up1_conv.backward(ub1.backward(g, dtemb));
    d.h1 = slice_channels(g, c2_, g.dim(0) - c2_);
    g = upsample2x_backward(slice_channels(g, 0, c2_));
    g = up2_conv.backward(ub2.backward(g, dtemb));
    d.h2 = slice_channels(g, c2_, c2_);
    d.mid = upsample2x_backward(slice_channels(g, 0, c2_));
    return d;
  }

  void collect(ParamStore<T>& s, const std::string& p) {
    up2_conv.collect(s, p + ".up2_conv");
    ub2.collect(s, p + ".ub2");
    up1_conv.collect(s, p + ".up1_conv");
    ub1.collect(s, p + ".ub1");
    out_gn.collect(s, p + ".out_gn");
    out_conv.collect(s, p + ".out_conv");
  }

  Conv2d<T> up2_conv;
  ResBlock<T> ub2;
  Conv2d<T> up1_conv;
  ResBlock<T> ub1;
  GroupNorm<T> out_gn;
  Conv2d<T> out_conv;

 private:
  std::size_t c2_ = 0;
  SiLU<T> out_act_;
};

}  // namespace nn

/// Plain noise-predicting U-net: the stand-in for a pretrained diffusion backbone.
template <typename T>
class UNet {
 public:
  UNet() = default;
  explicit UNet(const UNetConfig& c) : cfg_(c) {
    Rng rng = make_rng(c.seed, 0xba5e);
    temb = nn::TimeEmbed<T>(c.ch, c.temb_dim, rng);
    encoder = nn::UNetEncoder<T>(c.latent_ch, c, rng);
    decoder = nn::UNetDecoder<T>(c, rng);
  }

  const UNetConfig& config() const { return cfg_; }

  Tensor<T> forward(const Tensor<T>& z_t, int t) {
    temb_ = temb.forward(t);
    Tensor<T> out = decoder.forward(encoder.forward(z_t, temb_), temb_);
    require_finite(out, "base denoiser output");
    recorded_ = true;
    return out;
  }

  void backward(const Tensor<T>& dout) {
    if (!recorded_) throw std::logic_error("UNet::backward without a recorded forward");
    Tensor<T> dtemb(temb_.shape());
    encoder.backward(decoder.backward(dout, dtemb), dtemb, false);
    temb.backward(dtemb);
    recorded_ = false;
  }

  nn::ParamStore<T> params() {
    nn::ParamStore<T> s;
    temb.collect(s, "temb");
    encoder.collect(s, "enc");
    decoder.collect(s, "dec");
    return s;
  }

  nn::TimeEmbed<T> temb;
  nn::UNetEncoder<T> encoder;
  nn::UNetDecoder<T> decoder;

 private:
  UNetConfig cfg_;
  Tensor<T> temb_;
  bool recorded_ = false;
};

/// Frozen base U-net steered by a trainable copy of its down path.
///
/// The copy additionally sees the shadow latent z_s (and optionally a mask channel) through
/// zero-initialized input columns; its features enter the base's skip connections through
/// zero-initialized 1x1 projections, so at construction the output equals the base output bit for bit.
template <typename T>
class ControlledDenoiser {
 public:
  ControlledDenoiser() = default;
  explicit ControlledDenoiser(const UNet<T>& base_net, bool use_mask = false) : base(base_net), use_mask_(use_mask) {
    base.params().set_trainable(false);
    const auto& c = base.config();
    control_temb = base.temb;
    control = base.encoder;
    control.in_conv = base.encoder.in_conv.with_extra_inputs(c.latent_ch + (use_mask ? 1 : 0));
    fuse_h1 = nn::Conv2d<T>::zeros(c.ch, c.ch, 1, 1, 0);
    fuse_h2 = nn::Conv2d<T>::zeros(2 * c.ch, 2 * c.ch, 1, 1, 0);
    fuse_mid = nn::Conv2d<T>::zeros(2 * c.ch, 2 * c.ch, 1, 1, 0);
    trainable_params().set_trainable(true);
  }

  bool uses_mask() const { return use_mask_; }

  /// Predicts the composite epsilon for (z_t, t) conditioned on the shadow latent.
  Tensor<T> forward(const Tensor<T>& z_t, int t, const Tensor<T>& z_s, const Tensor<T>* mask = nullptr) {
    z_t.check_same(z_s, "ControlledDenoiser: z_t vs z_s");
    Tensor<T> temb_b = base.temb.forward(t);
    nn::UNetFeatures<T> fb = base.encoder.forward(z_t, temb_b);

    ctemb_ = control_temb.forward(t);
    Tensor<T> cond;
    if (use_mask_) {
      Tensor<T> ones(Shape{1, z_t.dim(1), z_t.dim(2)}, T(1));
      cond = concat_channels({&z_t, &z_s, mask ? mask : &ones});
    } else {
      cond = concat_channels({&z_t, &z_s});
    }
    nn::UNetFeatures<T> fc = control.forward(cond, ctemb_);
    fb.h1 += fuse_h1.forward(fc.h1);
    fb.h2 += fuse_h2.forward(fc.h2);
    fb.mid += fuse_mid.forward(fc.mid);
    Tensor<T> out = base.decoder.forward(fb, temb_b);
    require_finite(out, "controlled denoiser output at t=" + std::to_string(t));
    recorded_ = true;
    return out;
  }

  /// Gradients flow into the control branch and fusion projections only.
  void backward(const Tensor<T>& dout) {
    if (!recorded_) throw std::logic_error("ControlledDenoiser::backward without a recorded forward");
    Tensor<T> dtemb_base(Shape{base.config().temb_dim});
    nn::UNetFeatures<T> df = base.decoder.backward(dout, dtemb_base);
    nn::UNetFeatures<T> dc;
    dc.h1 = fuse_h1.backward(df.h1);
    dc.h2 = fuse_h2.backward(df.h2);
    dc.mid = fuse_mid.backward(df.mid);
    Tensor<T> dtemb(ctemb_.shape());
    control.backward(dc, dtemb, false);
    control_temb.backward(dtemb);
    recorded_ = false;
  }

  nn::ParamStore<T> base_params() {
    nn::ParamStore<T> s;
    base.temb.collect(s, "base.temb");
    base.encoder.collect(s, "base.enc");
    base.decoder.collect(s, "base.dec");
    return s;
  }

  nn::ParamStore<T> trainable_params() {
    nn::ParamStore<T> s;
    control_temb.collect(s, "control.temb");
    control.collect(s, "control.enc");
    fuse_h1.collect(s, "fusion.h1");
    fuse_h2.collect(s, "fusion.h2");
    fuse_mid.collect(s, "fusion.mid");
    return s;
  }

  UNet<T> base;
  nn::TimeEmbed<T> control_temb;
  nn::UNetEncoder<T> control;
  nn::Conv2d<T> fuse_h1, fuse_h2, fuse_mid;

 private:
  bool use_mask_ = false;
  Tensor<T> ctemb_;
  bool recorded_ = false;
};

}  // namespace shadowdiff
