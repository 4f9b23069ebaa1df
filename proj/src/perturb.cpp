#include "sovs/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sovs {
namespace {

float clamp01(float x) { return std::min(1.0f, std::max(0.0f, x)); }

// Output pixel -> source coordinate (align-corners=false convention). With
// scale 1 this lands exactly on integer coordinates, so identity params
// reproduce the input bit-for-bit.
inline float src_coord(int out_idx, int out_size, int crop_origin, int crop_size) {
  const float scale = static_cast<float>(crop_size) / out_size;
  return crop_origin + (out_idx + 0.5f) * scale - 0.5f;
}

inline int nearest_index(float coord, int lo, int hi) {
  int i = static_cast<int>(std::lround(coord));
  return std::min(hi, std::max(lo, i));
}

}  // namespace

void WeakParams::validate(int src_h, int src_w) const {
  if (crop_h <= 0 || crop_w <= 0 || output_size <= 0)
    throw std::invalid_argument("weak params: non-positive crop or output size");
  if (crop_top < 0 || crop_left < 0 || crop_top + crop_h > src_h || crop_left + crop_w > src_w)
    throw std::invalid_argument("weak params: crop box outside image bounds");
}

WeakParams identity_weak(int h, int w) {
  if (h != w) throw std::invalid_argument("identity_weak: non-square image needs explicit params");
  WeakParams p;
  p.crop_h = h;
  p.crop_w = w;
  p.output_size = h;
  return p;
}

WeakParams sample_weak(Rng& rng, int src_h, int src_w, int min_crop, int max_crop,
                       int output_size) {
  const int bound = std::min(src_h, src_w);
  min_crop = std::min(min_crop, bound);
  max_crop = std::min(max_crop, bound);
  if (min_crop <= 0 || max_crop < min_crop)
    throw std::invalid_argument("sample_weak: invalid crop range");
  WeakParams p;
  const int side = rng.uniform_int(min_crop, max_crop);
  p.crop_h = side;
  p.crop_w = side;
  p.crop_top = rng.uniform_int(0, src_h - side);
  p.crop_left = rng.uniform_int(0, src_w - side);
  p.flip = rng.bernoulli(0.5);
  p.output_size = output_size;
  return p;
}

Image weak_apply_image(const Image& image, const WeakParams& params) {
  params.validate(image.h, image.w);
  const int out = params.output_size;
  Image result(out, out, image.c);
  const int y_hi = params.crop_top + params.crop_h - 1;
  const int x_hi = params.crop_left + params.crop_w - 1;
  for (int oy = 0; oy < out; ++oy) {
    const float sy = src_coord(oy, out, params.crop_top, params.crop_h);
    const int y0 = std::min(y_hi, std::max(params.crop_top, static_cast<int>(std::floor(sy))));
    const int y1 = std::min(y_hi, y0 + 1);
    const float fy = std::min(1.0f, std::max(0.0f, sy - y0));
    for (int ox = 0; ox < out; ++ox) {
      const int ix = params.flip ? out - 1 - ox : ox;
      const float sx = src_coord(ix, out, params.crop_left, params.crop_w);
      const int x0 = std::min(x_hi, std::max(params.crop_left, static_cast<int>(std::floor(sx))));
      const int x1 = std::min(x_hi, x0 + 1);
      const float fx = std::min(1.0f, std::max(0.0f, sx - x0));
      for (int k = 0; k < image.c; ++k) {
        const float top = image.at(y0, x0, k) * (1 - fx) + image.at(y0, x1, k) * fx;
        const float bot = image.at(y1, x0, k) * (1 - fx) + image.at(y1, x1, k) * fx;
        result.at(oy, ox, k) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return result;
}

namespace {

template <typename T>
Plane<T> weak_apply_nearest(const Plane<T>& plane, const WeakParams& params) {
  params.validate(plane.h, plane.w);
  const int out = params.output_size;
  Plane<T> result(out, out);
  const int y_hi = params.crop_top + params.crop_h - 1;
  const int x_hi = params.crop_left + params.crop_w - 1;
  for (int oy = 0; oy < out; ++oy) {
    const int sy = nearest_index(src_coord(oy, out, params.crop_top, params.crop_h),
                                 params.crop_top, y_hi);
    for (int ox = 0; ox < out; ++ox) {
      const int ix = params.flip ? out - 1 - ox : ox;
      const int sx = nearest_index(src_coord(ix, out, params.crop_left, params.crop_w),
                                   params.crop_left, x_hi);
      result.at(oy, ox) = plane.at(sy, sx);
    }
  }
  return result;
}

}  // namespace

LabelMap weak_apply_label(const LabelMap& label, const WeakParams& params) {
  return weak_apply_nearest(label, params);
}

ConfMap weak_apply_conf(const ConfMap& conf, const WeakParams& params) {
  return weak_apply_nearest(conf, params);
}

std::pair<Image, std::optional<LabelMap>> weak_apply(const Image& image,
                                                     const std::optional<LabelMap>& label,
                                                     const WeakParams& params) {
  if (label && (label->h != image.h || label->w != image.w))
    throw std::invalid_argument("weak_apply: image/label shape mismatch");
  std::optional<LabelMap> out_label;
  if (label) out_label = weak_apply_label(*label, params);
  return {weak_apply_image(image, params), std::move(out_label)};
}

StrongParams sample_strong(Rng& rng, int h, int w, double cutmix_prob, int partner) {
  StrongParams p;
  for (int k = 0; k < 3; ++k) {
    p.channel_scale[k] = static_cast<float>(rng.uniform(0.5, 1.5));
    p.channel_shift[k] = static_cast<float>(rng.uniform(-0.2, 0.2));
  }
  p.grayscale = rng.bernoulli(0.2);
  p.blur_sigma = rng.bernoulli(0.5) ? static_cast<float>(rng.uniform(0.1, 1.5)) : 0.0f;
  if (rng.bernoulli(cutmix_prob)) {
    const int side = std::min(h, w);
    const int bh = rng.uniform_int(side / 4, side / 2);
    const int bw = rng.uniform_int(side / 4, side / 2);
    const int top = rng.uniform_int(0, h - bh);
    const int left = rng.uniform_int(0, w - bw);
    p.cutmix_box = std::array<int, 4>{top, left, bh, bw};
    p.cutmix_partner = partner;
  }
  return p;
}

Image photometric_apply(const Image& image, const StrongParams& params) {
  Image out = image;
  const bool jitter = params.channel_scale != std::array<float, 3>{1.0f, 1.0f, 1.0f} ||
                      params.channel_shift != std::array<float, 3>{0.0f, 0.0f, 0.0f};
  if (jitter)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        for (int k = 0; k < 3; ++k)
          out.at(y, x, k) =
              clamp01(out.at(y, x, k) * params.channel_scale[k] + params.channel_shift[k]);

  if (params.grayscale)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        const float g = (out.at(y, x, 0) + out.at(y, x, 1) + out.at(y, x, 2)) / 3.0f;
        out.at(y, x, 0) = g;
        out.at(y, x, 1) = g;
        out.at(y, x, 2) = g;
      }

  if (params.blur_sigma > 0.0f) {
    const float sigma = params.blur_sigma;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
    std::vector<float> kernel(2 * radius + 1);
    float sum = 0;
    for (int i = -radius; i <= radius; ++i) {
      kernel[i + radius] = std::exp(-0.5f * i * i / (sigma * sigma));
      sum += kernel[i + radius];
    }
    for (float& k : kernel) k /= sum;

    Image tmp(out.h, out.w, out.c);
    for (int y = 0; y < out.h; ++y)  // horizontal pass, clamp at edges
      for (int x = 0; x < out.w; ++x)
        for (int k = 0; k < out.c; ++k) {
          float acc = 0;
          for (int i = -radius; i <= radius; ++i)
            acc += kernel[i + radius] * out.at(y, std::min(out.w - 1, std::max(0, x + i)), k);
          tmp.at(y, x, k) = acc;
        }
    for (int y = 0; y < out.h; ++y)  // vertical pass
      for (int x = 0; x < out.w; ++x)
        for (int k = 0; k < out.c; ++k) {
          float acc = 0;
          for (int i = -radius; i <= radius; ++i)
            acc += kernel[i + radius] * tmp.at(std::min(out.h - 1, std::max(0, y + i)), x, k);
          out.at(y, x, k) = acc;
        }
  }
  return out;
}

std::pair<Image, ByteMask> strong_apply(const Image& image, const StrongParams& params,
                                        const Image* partner_image) {
  if (params.cutmix_box.has_value() != (partner_image != nullptr))
    throw std::invalid_argument("strong_apply: cutmix box and partner image must come together");

  Image out = photometric_apply(image, params);
  ByteMask mask(image.h, image.w, 0);
  if (params.cutmix_box) {
    const auto [top, left, bh, bw] = *params.cutmix_box;
    if (top < 0 || left < 0 || bh <= 0 || bw <= 0 || top + bh > image.h || left + bw > image.w)
      throw std::invalid_argument("strong_apply: cutmix box outside image bounds");
    if (!partner_image->same_shape(image))
      throw std::invalid_argument("strong_apply: partner image shape mismatch");
    for (int y = top; y < top + bh; ++y)
      for (int x = left; x < left + bw; ++x) {
        mask.at(y, x) = 1;
        for (int k = 0; k < image.c; ++k) out.at(y, x, k) = partner_image->at(y, x, k);
      }
  }
  return {std::move(out), std::move(mask)};
}

Target mix_targets(const Target& a, const Target& b, const ByteMask& cutmix_mask) {
  if (!a.label.same_shape(b.label) || a.label.h != cutmix_mask.h || a.label.w != cutmix_mask.w ||
      a.confidence.h != a.label.h || a.confidence.w != a.label.w ||
      b.confidence.h != b.label.h || b.confidence.w != b.label.w)
    throw std::invalid_argument("mix_targets: shape mismatch");
  Target out = a;
  for (int y = 0; y < out.label.h; ++y)
    for (int x = 0; x < out.label.w; ++x)
      if (cutmix_mask.at(y, x)) {
        out.label.at(y, x) = b.label.at(y, x);
        out.confidence.at(y, x) = b.confidence.at(y, x);
      }
  return out;
}

}  // namespace sovs
