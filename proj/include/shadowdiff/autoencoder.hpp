#pragma once

#include <array>
#include <string>

#include "shadowdiff/nn/deform.hpp"
#include "shadowdiff/nn/layers.hpp"

namespace shadowdiff {

struct AutoencoderConfig {
  std::size_t image_ch = 3;
  std::size_t c1 = 16;  // full resolution
  std::size_t c2 = 32;  // half and quarter resolution
  std::size_t latent_ch = 4;
  std::size_t project_ch = 16;
  std::uint64_t seed = 7;
};

namespace nn {

/// Uniform-init gain that keeps activation variance roughly constant through conv + SiLU
/// (E[silu(x)^2] is about 0.36 for unit-normal x, hence weight variance ~2.8 / fan_in).
inline constexpr double kSiluGain = 2.9;

template <typename T>
struct ConvAct {
  ConvAct() = default;
  ConvAct(std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng)
      : conv(cin, cout, 3, stride, 1, rng, kSiluGain) {}

  Tensor<T> forward(const Tensor<T>& x) { return act.forward(conv.forward(x)); }
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true) { return conv.backward(act.backward(dy), need_dx); }
  void collect(ParamStore<T>& s, const std::string& p) { conv.collect(s, p); }

  Conv2d<T> conv;
  SiLU<T> act;
};

/// Encoder features at full, half and quarter resolution.
template <typename T>
using ScaleFeatures = std::array<Tensor<T>, 3>;

template <typename T>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const AutoencoderConfig& c, Rng& rng)
      : s1a(c.image_ch, c.c1, 1, rng), s1b(c.c1, c.c1, 1, rng), s2a(c.c1, c.c2, 2, rng), s2b(c.c2, c.c2, 1, rng),
        s3a(c.c2, c.c2, 2, rng), s3b(c.c2, c.c2, 1, rng), to_latent(c.c2, c.latent_ch, 3, 1, 1, rng) {}

  /// Returns the raw latent; features receive F_1..F_3.
  Tensor<T> forward(const Tensor<T>& img, ScaleFeatures<T>& feats) {
    Tensor<T> x = img;
    for (auto& v : x.vec()) v = T(2) * v - T(1);
    feats[0] = s1b.forward(s1a.forward(x));
    feats[1] = s2b.forward(s2a.forward(feats[0]));
    feats[2] = s3b.forward(s3a.forward(feats[1]));
    return to_latent.forward(feats[2]);
  }

  void backward(const Tensor<T>& dlatent) {
    Tensor<T> g = to_latent.backward(dlatent);
    g = s2a.backward(s2b.backward(s3a.backward(s3b.backward(g))));
    s1a.backward(s1b.backward(g), false);
  }

  void collect(ParamStore<T>& s, const std::string& p) {
    s1a.collect(s, p + ".s1a");
    s1b.collect(s, p + ".s1b");
    s2a.collect(s, p + ".s2a");
    s2b.collect(s, p + ".s2b");
    s3a.collect(s, p + ".s3a");
    s3b.collect(s, p + ".s3b");
    to_latent.collect(s, p + ".to_latent");
  }

  ConvAct<T> s1a, s1b, s2a, s2b, s3a, s3b;
  Conv2d<T> to_latent;
};

/// Mirror of ImageEncoder, split into stages so skip connections can be spliced in.
template <typename T>
class ImageDecoder {
 public:
  ImageDecoder() = default;
  ImageDecoder(const AutoencoderConfig& c, Rng& rng)
      : s3a(c.latent_ch, c.c2, 1, rng), s3b(c.c2, c.c2, 1, rng), s2a(c.c2, c.c2, 1, rng), s2b(c.c2, c.c2, 1, rng),
        s1a(c.c2, c.c1, 1, rng), s1b(c.c1, c.c1, 1, rng), to_image(c.c1, c.image_ch, 3, 1, 1, rng) {}

  Tensor<T> stage3(const Tensor<T>& latent) { return s3b.forward(s3a.forward(latent)); }
  Tensor<T> stage2(const Tensor<T>& d3) { return s2b.forward(s2a.forward(upsample2x(d3))); }
  Tensor<T> stage1(const Tensor<T>& d2) { return s1b.forward(s1a.forward(upsample2x(d2))); }
  Tensor<T> head(const Tensor<T>& d1) { return to_image.forward(d1); }

  Tensor<T> forward(const Tensor<T>& latent) { return head(stage1(stage2(stage3(latent)))); }

  Tensor<T> head_backward(const Tensor<T>& g) { return to_image.backward(g); }
  Tensor<T> stage1_backward(const Tensor<T>& g) { return upsample2x_backward(s1a.backward(s1b.backward(g))); }
  Tensor<T> stage2_backward(const Tensor<T>& g) { return upsample2x_backward(s2a.backward(s2b.backward(g))); }
  Tensor<T> stage3_backward(const Tensor<T>& g, bool need_dx) { return s3a.backward(s3b.backward(g), need_dx); }

  Tensor<T> backward(const Tensor<T>& dimg, bool need_dx) {
    return stage3_backward(stage2_backward(stage1_backward(head_backward(dimg))), need_dx);
  }

  void collect(ParamStore<T>& s, const std::string& p) {
    s3a.collect(s, p + ".s3a");
    s3b.collect(s, p + ".s3b");
    s2a.collect(s, p + ".s2a");
    s2b.collect(s, p + ".s2b");
    s1a.collect(s, p + ".s1a");
    s1b.collect(s, p + ".s1b");
    to_image.collect(s, p + ".to_image");
  }

  ConvAct<T> s3a, s3b, s2a, s2b, s1a, s1b;
  Conv2d<T> to_image;
};

}  // namespace nn

/// Result of encoding an image: the scaled latent and the multi-scale encoder features.
template <typename T>
struct Encoded {
  Tensor<T> latent;
  nn::ScaleFeatures<T> features;
};

/// Toy latent autoencoder plus the detail-preserving controller.
///
/// The encoder and base decoder are trained first and then frozen. The controller starts as a
/// copy of the base decoder, sees [latent_sf, latent_shadow] and receives the shadow image's
/// encoder features through one ZeroDeconv per scale. A project head over
/// [decoder image, controller image, shadow image] ends in a zero conv whose output is an
/// image-domain residual added to the shadow image.
template <typename T>
class ToyAutoencoder {
 public:
  ToyAutoencoder() = default;
  explicit ToyAutoencoder(const AutoencoderConfig& c) : cfg_(c) {
    latent_scale = nn::Param<T>(Shape{1}, T(1));
    latent_scale.trainable = false;
    Rng rng = make_rng(c.seed, 0xae);
    encoder = nn::ImageEncoder<T>(c, rng);
    decoder = nn::ImageDecoder<T>(c, rng);
    Rng crng = make_rng(c.seed, 0xc0de);
    zero_deconv[0] = nn::ZeroDeconv<T>(c.c1, c.c1, c.c1, crng);
    zero_deconv[1] = nn::ZeroDeconv<T>(c.c2, c.c2, c.c2, crng);
    zero_deconv[2] = nn::ZeroDeconv<T>(c.c2, c.c2, c.c2, crng);
    project_a = nn::ConvAct<T>(3 * c.image_ch, c.project_ch, 1, crng);
    project_b = nn::ConvAct<T>(c.project_ch, c.project_ch, 1, crng);
    project_out = nn::Conv2d<T>::zeros(c.project_ch, c.image_ch, 3, 1, 1);
    reset_controller();
  }

  const AutoencoderConfig& config() const { return cfg_; }

  /// Re-copies the controller from the (current) base decoder. Called once the base is trained.
  void reset_controller() {
    controller = decoder;
    controller.s3a.conv = decoder.s3a.conv.with_extra_inputs(cfg_.latent_ch);
  }

  Encoded<T> encode(const Tensor<T>& image) {
    check_image(image);
    Encoded<T> e;
    e.latent = encoder.forward(image, e.features);
    e.latent *= latent_scale.value[0];
    return e;
  }

  Tensor<T> decode_base(const Tensor<T>& latent) {
    Tensor<T> out = decoder.forward(latent * T(1 / latent_scale.value[0]));
    require_finite(out, "decode_base");
    return out;
  }

  /// shadow_image + project(decoder(z), controller(z, z_shadow, skips), shadow_image).
  Tensor<T> decode_detail(const Tensor<T>& latent_sf, const Tensor<T>& shadow_image) {
    check_image(shadow_image);
    Encoded<T> se = encode(shadow_image);
    return decode_detail(latent_sf, shadow_image, se);
  }

  Tensor<T> decode_detail(const Tensor<T>& latent_sf, const Tensor<T>& shadow_image, const Encoded<T>& shadow_enc) {
    const T inv = T(1) / latent_scale.value[0];
    Tensor<T> z = latent_sf * inv;
    Tensor<T> zs = shadow_enc.latent * inv;
    dec_img_ = decoder.forward(z);

    Tensor<T> h = controller.stage3(concat_channels({&z, &zs}));
    h += zero_deconv[2].forward(shadow_enc.features[2], h);
    h = controller.stage2(h);
    h += zero_deconv[1].forward(shadow_enc.features[1], h);
    h = controller.stage1(h);
    h += zero_deconv[0].forward(shadow_enc.features[0], h);
    Tensor<T> ctrl_img = controller.head(h);

    Tensor<T> residual =
        project_out.forward(project_b.forward(project_a.forward(concat_channels({&dec_img_, &ctrl_img, &shadow_image}))));
    Tensor<T> out = shadow_image + residual;
    require_finite(out, "decode_detail");
    recorded_ = true;
    return out;
  }

  /// Backward of the last decode_detail: controller, skips and project head only.
  void decode_detail_backward(const Tensor<T>& dout) {
    if (!recorded_) throw std::logic_error("decode_detail_backward without a recorded forward");
    const std::size_t ic = cfg_.image_ch;
    Tensor<T> g = project_a.backward(project_b.backward(project_out.backward(dout)));
    Tensor<T> dctrl = slice_channels(g, ic, ic);
    Tensor<T> dh = controller.head_backward(dctrl);
    dh += zero_deconv[0].backward(dh).second;
    dh = controller.stage1_backward(dh);
    dh += zero_deconv[1].backward(dh).second;
    dh = controller.stage2_backward(dh);
    dh += zero_deconv[2].backward(dh).second;
    controller.stage3_backward(dh, false);
    recorded_ = false;
  }

  nn::ParamStore<T> base_params() {
    nn::ParamStore<T> s;
    encoder.collect(s, "ae.enc");
    decoder.collect(s, "ae.dec");
    s.add("ae.latent_scale", latent_scale);
    return s;
  }

  nn::ParamStore<T> detail_params() {
    nn::ParamStore<T> s;
    controller.collect(s, "ae.ctrl");
    for (std::size_t i = 0; i < 3; ++i) zero_deconv[i].collect(s, "ae.zdeconv" + std::to_string(i));
    project_a.collect(s, "ae.project_a");
    project_b.collect(s, "ae.project_b");
    project_out.collect(s, "ae.project_out");
    return s;
  }

  nn::ImageEncoder<T> encoder;
  nn::ImageDecoder<T> decoder;
  nn::ImageDecoder<T> controller;
  std::array<nn::ZeroDeconv<T>, 3> zero_deconv;
  nn::ConvAct<T> project_a, project_b;
  nn::Conv2d<T> project_out;
  nn::Param<T> latent_scale;

 private:
  void check_image(const Tensor<T>& img) const {
    if (img.rank() != 3 || img.dim(0) != cfg_.image_ch || img.dim(1) % 4 != 0 || img.dim(2) % 4 != 0)
      throw ShapeError("image must be [" + std::to_string(cfg_.image_ch) + ",H,W] with H,W multiples of 4, got " +
                       shape_str(img.shape()));
  }

  AutoencoderConfig cfg_;
  Tensor<T> dec_img_;
  bool recorded_ = false;
};

}  // namespace shadowdiff
