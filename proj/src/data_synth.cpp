#include "sovs/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "sovs/rng.hpp"

namespace sovs {
namespace {

constexpr int kNumShapeKinds = 7;  // circle, square, triangle, bar, cross, ring, diamond

Rgb hsv_to_rgb(float h, float s, float v) {
  const float c = v * s;
  const float hp = h * 6.0f;
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const float m = v - c;
  return Rgb{r + m, g + m, b + m};
}

float clamp01(float x) { return std::min(1.0f, std::max(0.0f, x)); }

// Pixel-membership predicate for shape kind k inside a box.
bool inside_shape(int kind, int y, int x, int top, int left, int bh, int bw) {
  const float cy = top + 0.5f * (bh - 1);
  const float cx = left + 0.5f * (bw - 1);
  const float ry = 0.5f * bh;
  const float rx = 0.5f * bw;
  const float dy = (y - cy) / ry;
  const float dx = (x - cx) / rx;
  switch (kind) {
    case 0:  // circle / ellipse
      return dy * dy + dx * dx <= 1.0f;
    case 1:  // square: whole box
      return true;
    case 2:  // triangle, apex at top center
      return std::fabs(x - cx) <= 0.5f * bw * (y - top + 1) / static_cast<float>(bh);
    case 3:  // horizontal bar: middle third of the box
      return y - top >= bh / 3 && y - top < bh - bh / 3;
    case 4: {  // cross: union of centered horizontal and vertical bands
      const bool hband = y - top >= bh / 3 && y - top < bh - bh / 3;
      const bool vband = x - left >= bw / 3 && x - left < bw - bw / 3;
      return hband || vband;
    }
    case 5: {  // ring
      const float r2 = dy * dy + dx * dx;
      return r2 <= 1.0f && r2 >= 0.3f;
    }
    default:  // diamond
      return std::fabs(dy) + std::fabs(dx) <= 1.0f;
  }
}

struct PlannedObject {
  int vocab_id;  // index into full vocabulary
  bool is_ood;
};

}  // namespace

void SceneSpec::validate() const {
  if (n_in() < 2) throw ConfigError("scene spec: need at least background plus one class");
  if (height < 8 || width < 8) throw ConfigError("scene spec: image size too small");
  if (shapes_min < 0 || shapes_max < shapes_min)
    throw ConfigError("scene spec: invalid shapes_per_scene range");
  std::set<std::string> seen(in_class_names.begin(), in_class_names.end());
  if (seen.size() != in_class_names.size())
    throw ConfigError("scene spec: duplicate in-distribution class name");
  for (const auto& name : ood_class_names) {
    if (!seen.insert(name).second)
      throw ConfigError("scene spec: class name '" + name + "' appears in both class lists");
  }
}

std::vector<Rgb> class_palette(const std::vector<std::string>& in_names,
                               const std::vector<std::string>& ood_names) {
  const int n_nonbg = static_cast<int>(in_names.size() + ood_names.size()) - 1;
  std::vector<Rgb> palette;
  palette.push_back(Rgb{0.18f, 0.18f, 0.20f});  // background: dark neutral
  for (int k = 0; k < n_nonbg; ++k) {
    // evenly spaced hues keep nearest-color class decoding unambiguous
    palette.push_back(hsv_to_rgb(static_cast<float>(k) / n_nonbg, 0.80f, 0.95f));
  }
  return palette;
}

Scene generate_scene(const SceneSpec& spec, int index, bool ood) {
  spec.validate();
  if (index < 0) throw std::invalid_argument("generate_scene: index must be >= 0");
  if (ood && spec.ood_class_names.empty())
    throw ConfigError("scene spec: ood scene requested but no ood classes configured");

  const int h = spec.height, w = spec.width;
  const int n_in = spec.n_in();
  const auto palette = class_palette(spec.in_class_names, spec.ood_class_names);
  Rng rng = Rng::derive(spec.seed, {0x5ce4eull, static_cast<std::uint64_t>(index),
                                    ood ? 1ull : 0ull});

  Scene scene;
  scene.image = Image(h, w, 3);
  scene.label = LabelMap(h, w, kBackgroundId);
  scene.semantic = LabelMap(h, w, kBackgroundId);

  // background fill with a small per-scene tint
  float bg_jit[3];
  for (float& j : bg_jit) j = static_cast<float>(rng.uniform(-0.02, 0.02));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      scene.image.at(y, x, 0) = clamp01(palette[0].r + bg_jit[0]);
      scene.image.at(y, x, 1) = clamp01(palette[0].g + bg_jit[1]);
      scene.image.at(y, x, 2) = clamp01(palette[0].b + bg_jit[2]);
    }

  int count = rng.uniform_int(spec.shapes_min, spec.shapes_max);
  if (ood && count == 0) count = 1;

  // Plan object classes; extra-class objects are drawn last (foreground) so an
  // object flagged is_ood always keeps its own pixels on top.
  std::vector<PlannedObject> plan;
  int n_ood_objs = 0;
  for (int i = 0; i < count; ++i) {
    bool obj_ood = ood && rng.bernoulli(0.5);
    plan.push_back(PlannedObject{0, obj_ood});
    n_ood_objs += obj_ood ? 1 : 0;
  }
  if (ood && n_ood_objs == 0 && count > 0) plan[count - 1].is_ood = true;
  std::stable_sort(plan.begin(), plan.end(),
                   [](const PlannedObject& a, const PlannedObject& b) { return a.is_ood < b.is_ood; });
  for (auto& p : plan) {
    if (p.is_ood)
      p.vocab_id = n_in + rng.uniform_int(0, static_cast<int>(spec.ood_class_names.size()) - 1);
    else
      p.vocab_id = rng.uniform_int(1, n_in - 1);
  }

  // appearance drift for out-of-distribution scenes
  float pal_shift[3] = {0, 0, 0};
  if (ood && spec.appearance_shift == AppearanceShift::kPalette)
    for (float& s : pal_shift) s = static_cast<float>(rng.uniform(-0.06, 0.06));

  const int min_side = std::max(6, h / 6);
  const int max_side = std::max(min_side + 1, h / 3);
  for (const auto& p : plan) {
    const int bh = rng.uniform_int(min_side, max_side);
    const int bw = rng.uniform_int(min_side, max_side);
    const int top = rng.uniform_int(0, h - bh);
    const int left = rng.uniform_int(0, w - bw);
    const int kind = (p.vocab_id - 1) % kNumShapeKinds;

    const Rgb base = palette[p.vocab_id];
    float col[3];
    col[0] = clamp01(base.r + pal_shift[0] + static_cast<float>(rng.uniform(-0.02, 0.02)));
    col[1] = clamp01(base.g + pal_shift[1] + static_cast<float>(rng.uniform(-0.02, 0.02)));
    col[2] = clamp01(base.b + pal_shift[2] + static_cast<float>(rng.uniform(-0.02, 0.02)));

    for (int y = top; y < top + bh; ++y)
      for (int x = left; x < left + bw; ++x) {
        if (!inside_shape(kind, y, x, top, left, bh, bw)) continue;
        scene.image.at(y, x, 0) = col[0];
        scene.image.at(y, x, 1) = col[1];
        scene.image.at(y, x, 2) = col[2];
        scene.semantic.at(y, x) = static_cast<std::uint16_t>(p.vocab_id);
        scene.label.at(y, x) =
            p.vocab_id < n_in ? static_cast<std::uint16_t>(p.vocab_id) : kBackgroundId;
      }

    const std::string& name = p.vocab_id < n_in
                                  ? spec.in_class_names[p.vocab_id]
                                  : spec.ood_class_names[p.vocab_id - n_in];
    scene.objects.push_back(SceneObject{name, top, left, bh, bw, p.is_ood});
  }

  if (ood && spec.appearance_shift == AppearanceShift::kTexture) {
    const float fy = static_cast<float>(rng.uniform(0.05, 0.25));
    const float fx = static_cast<float>(rng.uniform(0.05, 0.25));
    const float phase = static_cast<float>(rng.uniform(0.0, 6.283185307179586));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float t = 0.04f * std::sin(6.2831853f * (fy * y + fx * x) + phase);
        for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = clamp01(scene.image.at(y, x, c) + t);
      }
  }

  // mild sensor-style noise; amplitude stays far below the palette separation
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        scene.image.at(y, x, c) =
            clamp01(scene.image.at(y, x, c) + static_cast<float>(rng.uniform(-0.01, 0.01)));

  return scene;
}

int fine_tier_size(int n_scenes, double quality_fraction) {
  return static_cast<int>(std::llround(quality_fraction * n_scenes));
}

DatasetSplit make_splits(int n_scenes, int n_labeled, Protocol protocol, double quality_fraction,
                         std::uint64_t seed) {
  if (quality_fraction < 0.0 || quality_fraction > 1.0)
    throw ConfigError("make_splits: quality_fraction must be in [0,1]");
  if (n_labeled <= 0 || n_labeled >= n_scenes)
    throw ConfigError("infeasible split: need 0 < n_labeled < n_scenes (got " +
                      std::to_string(n_labeled) + " of " + std::to_string(n_scenes) + ")");

  const int n_fine = fine_tier_size(n_scenes, quality_fraction);
  Rng rng = Rng::derive(seed, {0x511f5ull, static_cast<std::uint64_t>(protocol)});

  std::vector<int> picked;
  switch (protocol) {
    case Protocol::kOriginal: {
      if (n_labeled > n_fine)
        throw ConfigError("infeasible split: original protocol needs n_labeled <= fine tier (" +
                          std::to_string(n_fine) + ")");
      std::vector<int> fine(n_fine);
      std::iota(fine.begin(), fine.end(), 0);
      rng.shuffle(fine);
      picked.assign(fine.begin(), fine.begin() + n_labeled);
      break;
    }
    case Protocol::kBlended: {
      std::vector<int> all(n_scenes);
      std::iota(all.begin(), all.end(), 0);
      rng.shuffle(all);
      picked.assign(all.begin(), all.begin() + n_labeled);
      break;
    }
    case Protocol::kPriority: {
      std::vector<int> fine(n_fine);
      std::iota(fine.begin(), fine.end(), 0);
      rng.shuffle(fine);
      if (n_labeled <= n_fine) {
        picked.assign(fine.begin(), fine.begin() + n_labeled);
      } else {
        picked = fine;
        std::vector<int> coarse(n_scenes - n_fine);
        std::iota(coarse.begin(), coarse.end(), n_fine);
        rng.shuffle(coarse);
        picked.insert(picked.end(), coarse.begin(), coarse.begin() + (n_labeled - n_fine));
      }
      break;
    }
  }

  std::sort(picked.begin(), picked.end());
  DatasetSplit split;
  split.protocol = protocol;
  std::vector<bool> is_labeled(n_scenes, false);
  for (int id : picked) {
    is_labeled[id] = true;
    split.labeled.push_back(LabeledId{id, id < n_fine ? LabelQuality::kFine : LabelQuality::kCoarse});
  }
  for (int id = 0; id < n_scenes; ++id)
    if (!is_labeled[id]) split.unlabeled_in.push_back(id);
  return split;
}

CorpusManifest load_manifest(const std::filesystem::path& path,
                             std::optional<std::int64_t> max_pixels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());

  CorpusManifest mf;
  mf.max_pixels = max_pixels;
  mf.base_dir = path.parent_path();

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": manifest parse error: expected 4 tab-separated fields, got " +
                               std::to_string(fields.size()));
    ManifestItem item;
    item.id = fields[0];
    item.path = fields[1];
    try {
      std::size_t used = 0;
      item.width = std::stoi(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("");
      item.height = std::stoi(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": manifest parse error: width/height must be integers");
    }
    if (item.id.empty() || item.path.empty() || item.width <= 0 || item.height <= 0)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": manifest parse error: empty field or non-positive size");

    if (max_pixels &&
        static_cast<std::int64_t>(item.width) * item.height > *max_pixels) {
      ++mf.dropped;
      continue;
    }
    mf.items.push_back(std::move(item));
  }
  return mf;
}

std::filesystem::path CorpusManifest::resolve(const ManifestItem& item) const {
  std::filesystem::path p(item.path);
  return p.is_absolute() ? p : base_dir / p;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestItem>& items) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& it : items)
    out << it.id << '\t' << it.path << '\t' << it.width << '\t' << it.height << '\n';
}

namespace {

enum class MorphOp { kErode4, kDilate4, kErode8, kDilate8, kShift };

bool any_neighbor_differs(const LabelMap& label, int y, int x, std::uint16_t cls, bool diag) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      if (dy == 0 && dx == 0) continue;
      if (!diag && dy != 0 && dx != 0) continue;
      const int ny = y + dy, nx = x + dx;
      if (ny < 0 || ny >= label.h || nx < 0 || nx >= label.w) return true;  // image border counts
      if (label.at(ny, nx) != cls) return true;
    }
  return false;
}

void apply_morph(LabelMap& label, std::uint16_t cls, MorphOp op, int shift_dir) {
  const LabelMap before = label;
  const bool diag = (op == MorphOp::kErode8 || op == MorphOp::kDilate8);
  switch (op) {
    case MorphOp::kErode4:
    case MorphOp::kErode8:
      for (int y = 0; y < before.h; ++y)
        for (int x = 0; x < before.w; ++x)
          if (before.at(y, x) == cls && any_neighbor_differs(before, y, x, cls, diag))
            label.at(y, x) = kBackgroundId;
      break;
    case MorphOp::kDilate4:
    case MorphOp::kDilate8:
      for (int y = 0; y < before.h; ++y)
        for (int x = 0; x < before.w; ++x) {
          if (before.at(y, x) == cls || before.at(y, x) == kIgnoreId) continue;
          bool near = false;
          for (int dy = -1; dy <= 1 && !near; ++dy)
            for (int dx = -1; dx <= 1 && !near; ++dx) {
              if (dy == 0 && dx == 0) continue;
              if (!diag && dy != 0 && dx != 0) continue;
              const int ny = y + dy, nx = x + dx;
              if (ny >= 0 && ny < before.h && nx >= 0 && nx < before.w &&
                  before.at(ny, nx) == cls)
                near = true;
            }
          if (near) label.at(y, x) = cls;
        }
      break;
    case MorphOp::kShift: {
      static constexpr int kDy[4] = {-1, 1, 0, 0};
      static constexpr int kDx[4] = {0, 0, -1, 1};
      for (int y = 0; y < before.h; ++y)
        for (int x = 0; x < before.w; ++x)
          if (before.at(y, x) == cls) label.at(y, x) = kBackgroundId;
      for (int y = 0; y < before.h; ++y)
        for (int x = 0; x < before.w; ++x) {
          if (before.at(y, x) != cls) continue;
          const int ny = y + kDy[shift_dir], nx = x + kDx[shift_dir];
          if (ny >= 0 && ny < before.h && nx >= 0 && nx < before.w &&
              before.at(ny, nx) != kIgnoreId)
            label.at(ny, nx) = cls;
        }
      break;
    }
  }
}

}  // namespace

LabelMap coarsen_label(const LabelMap& label, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {0xc0a5eull});
  LabelMap out = label;

  std::set<std::uint16_t> classes;
  for (std::uint16_t id : label.v)
    if (id != kBackgroundId && id != kIgnoreId) classes.insert(id);

  for (std::uint16_t cls : classes) {
    const auto op = static_cast<MorphOp>(rng.uniform_int(0, 4));
    const int shift_dir = rng.uniform_int(0, 3);
    apply_morph(out, cls, op, shift_dir);
  }

  // drop small connected components to background
  constexpr int kDropoutArea = 16;
  ByteMask visited(out.h, out.w, 0);
  std::vector<int> stack, component;
  for (int y0 = 0; y0 < out.h; ++y0)
    for (int x0 = 0; x0 < out.w; ++x0) {
      const std::uint16_t cls = out.at(y0, x0);
      if (visited.at(y0, x0) || cls == kBackgroundId || cls == kIgnoreId) continue;
      stack.assign(1, y0 * out.w + x0);
      component.clear();
      visited.at(y0, x0) = 1;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        component.push_back(p);
        const int y = p / out.w, x = p % out.w;
        static constexpr int kDy[4] = {-1, 1, 0, 0};
        static constexpr int kDx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int ny = y + kDy[d], nx = x + kDx[d];
          if (ny < 0 || ny >= out.h || nx < 0 || nx >= out.w) continue;
          if (visited.at(ny, nx) || out.at(ny, nx) != cls) continue;
          visited.at(ny, nx) = 1;
          stack.push_back(ny * out.w + nx);
        }
      }
      if (static_cast<int>(component.size()) < kDropoutArea && rng.bernoulli(0.5))
        for (int p : component) out.v[p] = kBackgroundId;
    }
  return out;
}

const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kOriginal: return "original";
    case Protocol::kBlended: return "blended";
    case Protocol::kPriority: return "priority";
  }
  return "?";
}

Protocol protocol_from_name(const std::string& name) {
  if (name == "original") return Protocol::kOriginal;
  if (name == "blended") return Protocol::kBlended;
  if (name == "priority") return Protocol::kPriority;
  throw ConfigError("unknown protocol '" + name + "' (original|blended|priority)");
}

}  // namespace sovs
