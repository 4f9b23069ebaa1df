#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sovs/core.hpp"
#include "sovs/perturb.hpp"
#include "sovs/rng.hpp"

using namespace sovs;

namespace {

Image ramp_image(int h, int w) {
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<float>(x) / w;
      img.at(y, x, 1) = static_cast<float>(y) / h;
      img.at(y, x, 2) = static_cast<float>((x + y) % 7) / 7.0f;
    }
  return img;
}

LabelMap checker_label(int h, int w) {
  LabelMap label(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) label.at(y, x) = static_cast<std::uint16_t>((y / 4 + x / 4) % 5);
  return label;
}

}  // namespace

// ============================================================================
// weak branch
// ============================================================================

TEST_CASE("identity weak params return the input bit-exactly") {
  const Image img = ramp_image(16, 16);
  const LabelMap label = checker_label(16, 16);
  const WeakParams id = identity_weak(16, 16);

  CHECK(weak_apply_image(img, id).v == img.v);
  CHECK(weak_apply_label(label, id).v == label.v);

  ConfMap conf(16, 16, 0.7f);
  CHECK(weak_apply_conf(conf, id).v == conf.v);

  CHECK_THROWS_AS(identity_weak(16, 20), std::invalid_argument);  // non-square source
}

TEST_CASE("horizontal flip is an involution") {
  const Image img = ramp_image(12, 12);
  WeakParams p = identity_weak(12, 12);
  p.flip = true;

  const Image once = weak_apply_image(img, p);
  CHECK(once.v != img.v);
  CHECK(weak_apply_image(once, p).v == img.v);

  const LabelMap label = checker_label(12, 12);
  CHECK(weak_apply_label(weak_apply_label(label, p), p).v == label.v);
}

TEST_CASE("crop at the origin preserves pixel coordinates") {
  const LabelMap label = checker_label(64, 64);
  WeakParams p;
  p.crop_top = 0;
  p.crop_left = 0;
  p.crop_h = 32;
  p.crop_w = 32;
  p.output_size = 32;

  const LabelMap out = weak_apply_label(label, p);
  REQUIRE(out.h == 32);
  CHECK(out.at(5, 5) == label.at(5, 5));
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) CHECK(out.at(y, x) == label.at(y, x));
}

TEST_CASE("offset crops shift content by the crop origin") {
  const LabelMap label = checker_label(64, 64);
  WeakParams p;
  p.crop_top = 8;
  p.crop_left = 20;
  p.crop_h = 16;
  p.crop_w = 16;
  p.output_size = 16;

  const LabelMap out = weak_apply_label(label, p);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK(out.at(y, x) == label.at(y + 8, x + 20));
}

TEST_CASE("bilinear 2x upsample hits the closed-form sample points") {
  // one row [0,1], upsampled to width 4 with half-pixel centers:
  // sources -0.25, 0.25, 0.75, 1.25 -> values 0, 0.25, 0.75, 1
  Image img(2, 2, 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(x);

  WeakParams p;
  p.crop_h = 2;
  p.crop_w = 2;
  p.output_size = 4;

  const Image out = weak_apply_image(img, p);
  REQUIRE(out.h == 4);
  REQUIRE(out.w == 4);
  const float expected[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(out.at(y, x, 0) == doctest::Approx(expected[x]).epsilon(1e-6));
}

TEST_CASE("weak params validation rejects out-of-bounds crops") {
  WeakParams p;
  p.crop_top = 60;
  p.crop_left = 0;
  p.crop_h = 16;
  p.crop_w = 16;
  p.output_size = 16;
  CHECK_THROWS_AS(p.validate(64, 64), std::invalid_argument);

  p.crop_top = 0;
  p.crop_h = 0;
  CHECK_THROWS_AS(p.validate(64, 64), std::invalid_argument);

  p.crop_h = 16;
  p.output_size = 0;
  CHECK_THROWS_AS(p.validate(64, 64), std::invalid_argument);
}

TEST_CASE("sampled weak params stay within their contract") {
  Rng rng(3);
  bool saw_flip = false, saw_noflip = false;
  for (int i = 0; i < 200; ++i) {
    const WeakParams p = sample_weak(rng, 64, 64, 24, 48, 32);
    p.validate(64, 64);
    CHECK(p.crop_h == p.crop_w);  // square crops
    CHECK(p.crop_h >= 24);
    CHECK(p.crop_h <= 48);
    CHECK(p.output_size == 32);
    saw_flip = saw_flip || p.flip;
    saw_noflip = saw_noflip || !p.flip;
  }
  CHECK(saw_flip);
  CHECK(saw_noflip);
}

TEST_CASE("weak_apply keeps image and label geometry in lockstep") {
  const Image img = ramp_image(64, 64);
  const LabelMap label = checker_label(64, 64);
  Rng rng(11);
  const WeakParams p = sample_weak(rng, 64, 64, 20, 40, 24);

  const auto [img_out, label_out] = weak_apply(img, label, p);
  REQUIRE(label_out.has_value());
  CHECK(img_out.v == weak_apply_image(img, p).v);
  CHECK(label_out->v == weak_apply_label(label, p).v);

  const auto [img_only, no_label] = weak_apply(img, std::nullopt, p);
  CHECK(img_only.v == img_out.v);
  CHECK_FALSE(no_label.has_value());
}

// ============================================================================
// strong branch
// ============================================================================

TEST_CASE("neutral strong params leave the image untouched") {
  const Image img = ramp_image(20, 20);
  const StrongParams neutral;
  CHECK(photometric_apply(img, neutral).v == img.v);

  const auto [out, mask] = strong_apply(img, neutral);
  CHECK(out.v == img.v);
  for (std::uint8_t m : mask.v) CHECK(m == 0);
}

TEST_CASE("grayscale collapses the three channels to their mean") {
  const Image img = ramp_image(10, 10);
  StrongParams p;
  p.grayscale = true;
  const Image out = photometric_apply(img, p);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      CHECK(out.at(y, x, 0) == out.at(y, x, 1));
      CHECK(out.at(y, x, 1) == out.at(y, x, 2));
      const float mean = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0f;
      CHECK(out.at(y, x, 0) == doctest::Approx(mean).epsilon(1e-6));
    }
}

TEST_CASE("channel jitter scales then shifts, clamped to the unit range") {
  Image img(1, 2, 3);
  img.at(0, 0, 0) = 0.4f;
  img.at(0, 0, 1) = 0.9f;
  img.at(0, 0, 2) = 0.1f;
  img.at(0, 1, 0) = 1.0f;
  img.at(0, 1, 1) = 0.0f;
  img.at(0, 1, 2) = 0.5f;

  StrongParams p;
  p.channel_scale = {1.5f, 1.0f, 0.5f};
  p.channel_shift = {0.0f, 0.2f, -0.2f};
  const Image out = photometric_apply(img, p);
  CHECK(out.at(0, 0, 0) == doctest::Approx(0.6));
  CHECK(out.at(0, 0, 1) == doctest::Approx(1.0));  // 0.9 + 0.2 clamps
  CHECK(out.at(0, 0, 2) == doctest::Approx(0.0));  // 0.05 - 0.2 clamps
  CHECK(out.at(0, 1, 0) == doctest::Approx(1.0));
  CHECK(out.at(0, 1, 1) == doctest::Approx(0.2));
  CHECK(out.at(0, 1, 2) == doctest::Approx(0.05));
}

TEST_CASE("blur preserves constant images and averages neighborhoods") {
  Image flat(9, 9, 3, 0.4f);
  StrongParams p;
  p.blur_sigma = 1.2f;
  const Image out = photometric_apply(flat, p);
  for (float v : out.v) CHECK(v == doctest::Approx(0.4).epsilon(1e-6));

  // an impulse spreads mass but keeps it nonnegative and bounded
  Image impulse(9, 9, 3, 0.0f);
  impulse.at(4, 4, 0) = 1.0f;
  const Image blurred = photometric_apply(impulse, p);
  CHECK(blurred.at(4, 4, 0) < 1.0f);
  CHECK(blurred.at(4, 3, 0) > 0.0f);
  CHECK(blurred.at(3, 4, 0) == doctest::Approx(blurred.at(5, 4, 0)));  // symmetry
}

TEST_CASE("cutmix with a full-image box returns the partner") {
  const Image img = ramp_image(16, 16);
  Image partner(16, 16, 3, 0.25f);

  StrongParams p;
  p.cutmix_box = {{0, 0, 16, 16}};
  p.cutmix_partner = 1;
  const auto [out, mask] = strong_apply(img, p, &partner);
  CHECK(out.v == partner.v);
  for (std::uint8_t m : mask.v) CHECK(m == 1);
}

TEST_CASE("cutmix replaces exactly the box region") {
  const Image img = ramp_image(16, 16);
  Image partner(16, 16, 3, 0.9f);

  StrongParams p;
  p.cutmix_box = {{4, 6, 5, 7}};
  p.cutmix_partner = 0;
  const auto [out, mask] = strong_apply(img, p, &partner);

  int inside = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const bool in_box = y >= 4 && y < 9 && x >= 6 && x < 13;
      CHECK(mask.at(y, x) == (in_box ? 1 : 0));
      if (in_box) {
        ++inside;
        CHECK(out.at(y, x, 0) == 0.9f);
      } else {
        CHECK(out.at(y, x, 0) == img.at(y, x, 0));
      }
    }
  CHECK(inside == 35);
}

TEST_CASE("cutmix box and partner image must come together") {
  const Image img = ramp_image(8, 8);
  StrongParams with_box;
  with_box.cutmix_box = {{0, 0, 4, 4}};
  CHECK_THROWS_AS(strong_apply(img, with_box, nullptr), std::invalid_argument);

  const StrongParams no_box;
  CHECK_THROWS_AS(strong_apply(img, no_box, &img), std::invalid_argument);

  StrongParams bad_box;
  bad_box.cutmix_box = {{6, 6, 4, 4}};  // spills past the edge
  CHECK_THROWS_AS(strong_apply(img, bad_box, &img), std::invalid_argument);
}

TEST_CASE("photometrics apply to the surviving pixels, not the pasted box") {
  // double the red channel and paste a partner box: outside the box pixels are
  // jittered, inside they are the partner's raw pixels
  Image img(8, 8, 3, 0.3f);
  Image partner(8, 8, 3, 0.5f);
  StrongParams p;
  p.channel_scale = {2.0f, 1.0f, 1.0f};
  p.cutmix_box = {{0, 0, 4, 4}};
  p.cutmix_partner = 3;

  const auto [out, mask] = strong_apply(img, p, &partner);
  CHECK(out.at(6, 6, 0) == doctest::Approx(0.6));
  CHECK(out.at(2, 2, 0) == 0.5f);
}

TEST_CASE("sampled strong params respect the documented ranges") {
  Rng rng(5);
  int boxes = 0;
  for (int i = 0; i < 300; ++i) {
    const StrongParams p = sample_strong(rng, 32, 32, 0.5, 7);
    for (int c = 0; c < 3; ++c) {
      CHECK(p.channel_scale[c] >= 0.5f);
      CHECK(p.channel_scale[c] <= 1.5f);
      CHECK(p.channel_shift[c] >= -0.2f);
      CHECK(p.channel_shift[c] <= 0.2f);
    }
    CHECK(p.blur_sigma >= 0.0f);
    CHECK(p.blur_sigma <= 1.5f);
    if (p.cutmix_box) {
      ++boxes;
      const auto& b = *p.cutmix_box;
      CHECK(b[2] >= 32 / 4);
      CHECK(b[2] <= 32 / 2);
      CHECK(b[0] >= 0);
      CHECK(b[0] + b[2] <= 32);
      CHECK(b[1] + b[3] <= 32);
      CHECK(p.cutmix_partner == 7);
    }
  }
  // cutmix_prob=0.5 over 300 draws: a run of all-or-none is astronomically unlikely
  CHECK(boxes > 50);
  CHECK(boxes < 250);

  const StrongParams never = sample_strong(rng, 32, 32, 0.0, 1);
  CHECK_FALSE(never.cutmix_box.has_value());
}

// ============================================================================
// target mixing
// ============================================================================

TEST_CASE("mix_targets selects per pixel between the two sources") {
  const int h = 6, w = 6;
  Target a{LabelMap(h, w, 1), ConfMap(h, w, 0.9f)};
  Target b{LabelMap(h, w, 2), ConfMap(h, w, 0.4f)};

  ByteMask empty(h, w, 0);
  const Target keep = mix_targets(a, b, empty);
  CHECK(keep.label.v == a.label.v);
  CHECK(keep.confidence.v == a.confidence.v);

  ByteMask full(h, w, 1);
  const Target swap = mix_targets(a, b, full);
  CHECK(swap.label.v == b.label.v);
  CHECK(swap.confidence.v == b.confidence.v);

  ByteMask half(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x) half.at(y, x) = 1;
  const Target mixed = mix_targets(a, b, half);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      CHECK(mixed.label.at(y, x) == (x < w / 2 ? 2 : 1));
      CHECK(mixed.confidence.at(y, x) == (x < w / 2 ? 0.4f : 0.9f));
    }

  // mixing with itself is a no-op whatever the mask
  const Target self = mix_targets(a, a, half);
  CHECK(self.label.v == a.label.v);

  ByteMask wrong(h, w + 1, 0);
  CHECK_THROWS_AS(mix_targets(a, b, wrong), std::invalid_argument);
}
