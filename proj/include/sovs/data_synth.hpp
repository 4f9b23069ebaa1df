#pragma once

// Seeded synthetic "shapes world" benchmark: scene generation with an
// in-distribution vocabulary plus extra object classes that never appear in
// the target label space, split construction under three labeling protocols,
// and tab-separated corpus manifests with a resolution filter.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sovs/core.hpp"

namespace sovs {

enum class AppearanceShift { kNone, kPalette, kTexture };

struct SceneSpec {
  int height = 64;
  int width = 64;
  // index 0 must be the background class
  std::vector<std::string> in_class_names;
  // extra classes drawn in scenes but always labeled background in ground truth
  std::vector<std::string> ood_class_names;
  int shapes_min = 2;
  int shapes_max = 5;
  AppearanceShift appearance_shift = AppearanceShift::kPalette;
  std::uint64_t seed = 0;

  int n_in() const { return static_cast<int>(in_class_names.size()); }
  int vocab_size() const { return n_in() + static_cast<int>(ood_class_names.size()); }
  void validate() const;  // throws ConfigError
};

struct SceneObject {
  std::string class_name;
  int top = 0, left = 0, box_h = 0, box_w = 0;
  bool is_ood = false;
};

struct Scene {
  Image image;      // H x W x 3 in [0,1]
  LabelMap label;   // target label space: ids < n_in, extra objects -> background
  LabelMap semantic;  // full-vocabulary ids (>= n_in for extra classes); diagnostics/oracles
  std::vector<SceneObject> objects;
};

struct Rgb {
  float r, g, b;
};

// Reference color per vocabulary entry (in-distribution classes followed by
// the extra classes). Scene rendering and the toy embedder must agree on it.
std::vector<Rgb> class_palette(const std::vector<std::string>& in_names,
                               const std::vector<std::string>& ood_names);

Scene generate_scene(const SceneSpec& spec, int index, bool ood);

enum class Protocol { kOriginal, kBlended, kPriority };
enum class LabelQuality { kFine, kCoarse };

struct LabeledId {
  int id;
  LabelQuality quality;
};

struct DatasetSplit {
  std::vector<LabeledId> labeled;
  std::vector<int> unlabeled_in;
  std::vector<std::string> unlabeled_out;  // corpus item ids, attached separately
  Protocol protocol = Protocol::kOriginal;
};

// Scene ids are [0, n_scenes); the fine-annotation tier is the fixed prefix
// [0, round(quality_fraction * n_scenes)), mirroring a dataset whose
// high-quality subset is a fixed list rather than a random draw.
DatasetSplit make_splits(int n_scenes, int n_labeled, Protocol protocol, double quality_fraction,
                         std::uint64_t seed);

int fine_tier_size(int n_scenes, double quality_fraction);

struct ManifestItem {
  std::string id;
  std::string path;  // as written in the file, resolved against base_dir
  int width = 0;
  int height = 0;
};

struct CorpusManifest {
  std::vector<ManifestItem> items;
  std::optional<std::int64_t> max_pixels;
  int dropped = 0;  // items removed by the resolution filter
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestItem& item) const;
};

// One item per line: id<TAB>path<TAB>width<TAB>height. Items whose
// width*height exceeds max_pixels are dropped (order preserved).
CorpusManifest load_manifest(const std::filesystem::path& path,
                             std::optional<std::int64_t> max_pixels);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestItem>& items);

// Emulates coarser annotation quality: per-class boundary dilation/erosion
// plus dropout of small regions to background. Deterministic in (label, seed).
LabelMap coarsen_label(const LabelMap& label, std::uint64_t seed);

const char* protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);  // throws ConfigError

}  // namespace sovs
