#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sovs/core.hpp"
#include "sovs/data_synth.hpp"

namespace sovs {

// ============================================================================
// Prompt set: ordered class vocabulary + templates + per-class concept
// phrases. The first n_in entries of class_names are the target classes in
// label-id order; the rest are extra (open-vocabulary) classes that exist only
// so the teacher can route pixels away from the target classes.
// Templates use "{}" as the single class-name slot.
// ============================================================================

struct PromptSet {
  std::vector<std::string> class_names;            // size N, first n_in are targets
  int n_in = 0;
  std::vector<std::string> templates;              // size P, each with one "{}" slot
  std::vector<std::vector<std::string>> concepts;  // per class, K_n >= 1 phrases

  int n() const { return static_cast<int>(class_names.size()); }
  int p() const { return static_cast<int>(templates.size()); }

  // Template template_idx with concept concept_idx of class class_idx filled in.
  std::string render(int class_idx, int concept_idx, int template_idx) const;
};

// class_names = target_classes ++ extra_classes; concept lists default to the
// bare class name when absent from `concepts`. Throws ConfigError on duplicate
// names, empty targets, malformed templates, or concepts for unknown classes.
PromptSet build_prompt_set(const std::vector<std::string>& target_classes,
                           const std::vector<std::string>& extra_classes,
                           const std::vector<std::string>& templates,
                           const std::map<std::string, std::vector<std::string>>& concepts = {});

// ============================================================================
// Embedder interface: a joint image/text encoder. Implementations must be
// deterministic for fixed inputs and return unit-norm text embeddings.
// ============================================================================

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual int dimension() const = 0;
  virtual std::vector<float> embed_text(const std::string& phrase) const = 0;
  virtual EmbeddingField embed_image(const Image& image) const = 0;
};

// Toy oracle embedder for testing with controllable accuracy. Each vocabulary
// entry (background + in-distribution + extra classes) owns a fixed random
// unit vector. Images are decoded per pixel to their nearest palette color's
// class vector plus Gaussian noise (then renormalized); text phrases map to
// the class vector of the longest registered keyword they contain, or to a
// deterministic hashed vector for unknown phrases.
class OracleEmbedder final : public Embedder {
 public:
  OracleEmbedder(const std::vector<std::string>& in_class_names,
                 const std::vector<std::string>& ood_class_names, int dimension,
                 double noise_sigma, std::uint64_t seed);

  int dimension() const override { return dim_; }
  std::vector<float> embed_text(const std::string& phrase) const override;
  EmbeddingField embed_image(const Image& image) const override;

  // Extra keyword that resolves to an existing class (synonym support).
  void register_alias(const std::string& keyword, const std::string& class_name);

  // Per-pixel nearest-palette vocabulary ids; exposed for tests.
  LabelMap decode_classes(const Image& image) const;

 private:
  int dim_;
  double noise_sigma_;
  std::uint64_t seed_;
  std::vector<Rgb> palette_;                        // per vocabulary entry
  std::vector<std::vector<float>> class_vectors_;   // per vocabulary entry, unit norm
  std::map<std::string, int> keyword_to_class_;
};

// File-exchange embedder: embeddings are read from pre-computed files so a
// real pretrained encoder can be plugged in from outside. Images resolve to
// `i_<hash>.sovsemb` (hash of dims + raw float content), text phrases to
// `t_<hash>.sovsemb` with H=W=1. Missing files raise errors naming the
// expected path.
class FileEmbedder final : public Embedder {
 public:
  FileEmbedder(std::filesystem::path dir, int dimension);

  int dimension() const override { return dim_; }
  std::vector<float> embed_text(const std::string& phrase) const override;
  EmbeddingField embed_image(const Image& image) const override;

  static std::string image_key(const Image& image);
  static std::string text_key(const std::string& phrase);

 private:
  std::filesystem::path dir_;
  int dim_;
};

// ============================================================================
// Teacher pipeline: encode -> cost volume -> decode -> pseudo-label.
// ============================================================================

// Per-(class, template) unit-norm text embeddings, shape N x P x D. For each
// class the K_n concept phrases are rendered through the template, embedded,
// averaged, and the mean re-normalized. K_n == 1 short-circuits to the direct
// embedding so the degenerate ensemble is bit-identical to no ensemble.
Tensor3 encode_text(const PromptSet& prompt_set, const Embedder& embedder);

// Cosine similarities between every image location and every (class,
// template) text embedding.
struct CostVolume {
  int h = 0, w = 0, n = 0, p = 0;
  std::vector<float> v;
  int zero_norm_pixels = 0;  // diagnostics: image vectors treated as cosine 0

  float& at(int y, int x, int cls, int tpl) {
    return v[((static_cast<std::size_t>(y) * w + x) * n + cls) * p + tpl];
  }
  const float& at(int y, int x, int cls, int tpl) const {
    return v[((static_cast<std::size_t>(y) * w + x) * n + cls) * p + tpl];
  }
};

CostVolume cost_volume(const EmbeddingField& image_emb, const Tensor3& text_emb);

// Parameter-free decoder: per-pixel class score = max over templates, softmax
// with `temperature`, bilinear upsample to (out_h, out_w), per-pixel
// renormalization. Output channels = N classes.
ProbMap decode(const CostVolume& cv, int out_h, int out_w, double temperature);

enum class TeacherSource { kOvs, kSelf };

struct PseudoLabel {
  LabelMap label;       // ids < n_in
  ConfMap confidence;   // max probability over all N classes, pre-refinement
  TeacherSource source = TeacherSource::kOvs;
};

// argmax over all N classes; ids >= n_in refined to background; confidence =
// max probability before refinement. Probability rows must sum to 1 (1e-5).
PseudoLabel make_pseudo_label(const ProbMap& prob, int n_in);

// The refinement rule alone: ids >= n_in map to background, others unchanged.
LabelMap refine_labels(const LabelMap& initial, int n_in);

// Full teacher on one image.
PseudoLabel teach_image(const Image& image, const Tensor3& text_emb, const Embedder& embedder,
                        int n_in, double temperature);

// ============================================================================
// Offline generation: one pseudo-label file per corpus item plus a summary.
// ============================================================================

struct OfflineItem {
  std::string id;
  std::filesystem::path image_path;  // image file written by the dataset generator
};

struct OfflineSummary {
  int written = 0;
  int skipped = 0;
  std::vector<std::uint64_t> class_pixels;  // per refined label id, size n_in
  double mean_confidence = 0.0;
};

// Writes `<id>.sovspl` per item and `summary.tsv` into out_dir. Unreadable
// items are counted as skipped; throws if every item fails.
OfflineSummary generate_offline(const std::vector<OfflineItem>& items,
                                const PromptSet& prompt_set, const Embedder& embedder,
                                const std::filesystem::path& out_dir, double temperature);

// Softmax over the channel dimension (numerically stable).
ProbMap softmax_probs(const Tensor3& logits);

// Pseudo-label from a model's own class distribution (n_in = all channels, so
// refinement never fires); source = self.
PseudoLabel self_pseudo_label(const ProbMap& model_prob);

}  // namespace sovs
