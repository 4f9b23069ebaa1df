#pragma once

#include <array>
#include <optional>
#include <utility>

#include "sovs/core.hpp"
#include "sovs/rng.hpp"

namespace sovs {

// ============================================================================
// Weak perturbation: crop -> optional horizontal flip -> resize to a square
// output. The same geometry is applied to images (bilinear) and to label /
// confidence maps (nearest) so per-pixel supervision stays aligned.
// ============================================================================

struct WeakParams {
  bool flip = false;
  int crop_top = 0;
  int crop_left = 0;
  int crop_h = 0;
  int crop_w = 0;
  int output_size = 0;

  void validate(int src_h, int src_w) const;
};

// Identity geometry for a given source size (full crop, no flip, same size).
WeakParams identity_weak(int h, int w);

// Random square crop with side in [min_crop, max_crop], flip with p=0.5.
WeakParams sample_weak(Rng& rng, int src_h, int src_w, int min_crop, int max_crop,
                       int output_size);

Image weak_apply_image(const Image& image, const WeakParams& params);
LabelMap weak_apply_label(const LabelMap& label, const WeakParams& params);
ConfMap weak_apply_conf(const ConfMap& conf, const WeakParams& params);

std::pair<Image, std::optional<LabelMap>> weak_apply(const Image& image,
                                                     const std::optional<LabelMap>& label,
                                                     const WeakParams& params);

// ============================================================================
// Strong perturbation: photometric ops in fixed order (channel jitter ->
// grayscale -> blur), then optional CutMix box replacement from a partner
// image. No geometric movement apart from the box replacement.
// ============================================================================

struct StrongParams {
  std::array<float, 3> channel_scale{1.0f, 1.0f, 1.0f};
  std::array<float, 3> channel_shift{0.0f, 0.0f, 0.0f};
  bool grayscale = false;
  float blur_sigma = 0.0f;
  std::optional<std::array<int, 4>> cutmix_box;  // top, left, h, w
  std::optional<int> cutmix_partner;             // batch index of the partner
};

// Sampling ranges: scale in [0.5,1.5], shift in [-0.2,0.2], grayscale p=0.2,
// blur p=0.5 with sigma in [0.1,1.5], cutmix box side in [size/4, size/2].
StrongParams sample_strong(Rng& rng, int h, int w, double cutmix_prob, int partner);

// Photometric part only (jitter -> grayscale -> blur), clamped to [0,1].
Image photometric_apply(const Image& image, const StrongParams& params);

// Full strong pipeline. The partner image must be present iff params carry a
// CutMix box; the returned mask marks partner-owned pixels.
std::pair<Image, ByteMask> strong_apply(const Image& image, const StrongParams& params,
                                        const Image* partner_image = nullptr);

// ============================================================================
// Target mixing: the label/confidence counterpart of CutMix.
// ============================================================================

struct Target {
  LabelMap label;
  ConfMap confidence;
};

Target mix_targets(const Target& a, const Target& b, const ByteMask& cutmix_mask);

}  // namespace sovs
