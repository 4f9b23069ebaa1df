#include "sovs/ovs_teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "sovs/formats.hpp"
#include "sovs/rng.hpp"

namespace sovs {
namespace {

constexpr const char* kSlot = "{}";

std::vector<float> normalized(std::vector<float> v, const std::string& what) {
  double norm2 = 0;
  for (float x : v) norm2 += static_cast<double>(x) * x;
  const double norm = std::sqrt(norm2);
  if (norm < 1e-12) throw std::runtime_error("degenerate zero-norm embedding for " + what);
  for (float& x : v) x = static_cast<float>(x / norm);
  return v;
}

std::vector<float> gaussian_unit_vector(Rng& rng, int dim, const std::string& what) {
  std::vector<float> v(dim);
  for (float& x : v) x = static_cast<float>(rng.normal());
  return normalized(std::move(v), what);
}

}  // namespace

std::string PromptSet::render(int class_idx, int concept_idx, int template_idx) const {
  const std::string& tpl = templates.at(template_idx);
  const std::string& phrase = concepts.at(class_idx).at(concept_idx);
  const auto pos = tpl.find(kSlot);
  return tpl.substr(0, pos) + phrase + tpl.substr(pos + 2);
}

PromptSet build_prompt_set(const std::vector<std::string>& target_classes,
                           const std::vector<std::string>& extra_classes,
                           const std::vector<std::string>& templates,
                           const std::map<std::string, std::vector<std::string>>& concepts) {
  if (target_classes.empty()) throw ConfigError("prompt set: no target classes");
  if (templates.empty()) throw ConfigError("prompt set: need at least one template");
  for (const auto& tpl : templates) {
    const auto first = tpl.find(kSlot);
    if (first == std::string::npos || tpl.find(kSlot, first + 1) != std::string::npos)
      throw ConfigError("prompt set: template '" + tpl + "' must contain exactly one {} slot");
  }

  PromptSet ps;
  ps.n_in = static_cast<int>(target_classes.size());
  ps.class_names = target_classes;
  ps.class_names.insert(ps.class_names.end(), extra_classes.begin(), extra_classes.end());
  ps.templates = templates;

  std::set<std::string> seen;
  for (const auto& name : ps.class_names)
    if (!seen.insert(name).second)
      throw ConfigError("prompt set: duplicate class name '" + name + "'");

  for (const auto& [name, list] : concepts) {
    if (!seen.count(name)) throw ConfigError("prompt set: concepts given for unknown class '" + name + "'");
    if (list.empty()) throw ConfigError("prompt set: empty concept list for class '" + name + "'");
  }
  for (const auto& name : ps.class_names) {
    auto it = concepts.find(name);
    ps.concepts.push_back(it != concepts.end() ? it->second : std::vector<std::string>{name});
  }
  return ps;
}

// ----------------------------------------------------------------------------
// OracleEmbedder
// ----------------------------------------------------------------------------

OracleEmbedder::OracleEmbedder(const std::vector<std::string>& in_class_names,
                               const std::vector<std::string>& ood_class_names, int dimension,
                               double noise_sigma, std::uint64_t seed)
    : dim_(dimension), noise_sigma_(noise_sigma), seed_(seed) {
  if (dimension < 2) throw ConfigError("oracle embedder: dimension must be >= 2");
  if (noise_sigma < 0) throw ConfigError("oracle embedder: noise must be >= 0");
  palette_ = class_palette(in_class_names, ood_class_names);

  std::vector<std::string> vocab = in_class_names;
  vocab.insert(vocab.end(), ood_class_names.begin(), ood_class_names.end());
  for (int i = 0; i < static_cast<int>(vocab.size()); ++i) {
    Rng rng = Rng::derive(seed_, {0x7ec7ull, static_cast<std::uint64_t>(i)});
    class_vectors_.push_back(gaussian_unit_vector(rng, dim_, "class " + vocab[i]));
    keyword_to_class_[vocab[i]] = i;
  }
}

void OracleEmbedder::register_alias(const std::string& keyword, const std::string& class_name) {
  auto it = keyword_to_class_.find(class_name);
  if (it == keyword_to_class_.end())
    throw ConfigError("oracle embedder: alias target '" + class_name + "' is not a known class");
  keyword_to_class_[keyword] = it->second;
}

std::vector<float> OracleEmbedder::embed_text(const std::string& phrase) const {
  // longest registered keyword contained in the phrase wins
  int best_class = -1;
  std::size_t best_len = 0;
  for (const auto& [kw, cls] : keyword_to_class_)
    if (kw.size() > best_len && phrase.find(kw) != std::string::npos) {
      best_len = kw.size();
      best_class = cls;
    }
  if (best_class >= 0) return class_vectors_[best_class];

  Rng rng = Rng::derive(fnv1a64(phrase), {0x7e77ull, seed_});
  return gaussian_unit_vector(rng, dim_, "phrase " + phrase);
}

LabelMap OracleEmbedder::decode_classes(const Image& image) const {
  if (image.c != 3) throw std::invalid_argument("oracle embedder: expected 3-channel image");
  LabelMap ids(image.h, image.w);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      const float* px = image.pixel(y, x);
      int best = 0;
      float best_d = std::numeric_limits<float>::max();
      for (int k = 0; k < static_cast<int>(palette_.size()); ++k) {
        const float dr = px[0] - palette_[k].r;
        const float dg = px[1] - palette_[k].g;
        const float db = px[2] - palette_[k].b;
        const float d = dr * dr + dg * dg + db * db;
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      ids.at(y, x) = static_cast<std::uint16_t>(best);
    }
  return ids;
}

EmbeddingField OracleEmbedder::embed_image(const Image& image) const {
  const LabelMap ids = decode_classes(image);
  EmbeddingField field(image.h, image.w, dim_);
  // noise stream keyed to image content so identical images embed identically
  const std::uint64_t content = fnv1a64(image.v.data(), image.v.size() * sizeof(float));
  Rng rng = Rng::derive(content ^ seed_, {0x1a6eull});
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      const auto& base = class_vectors_[ids.at(y, x)];
      std::vector<float> v(base.begin(), base.end());
      if (noise_sigma_ > 0)
        for (float& x_i : v) x_i += static_cast<float>(noise_sigma_ * rng.normal());
      v = normalized(std::move(v), "image pixel");
      std::copy(v.begin(), v.end(), field.pixel(y, x));
    }
  return field;
}

// ----------------------------------------------------------------------------
// FileEmbedder
// ----------------------------------------------------------------------------

FileEmbedder::FileEmbedder(std::filesystem::path dir, int dimension)
    : dir_(std::move(dir)), dim_(dimension) {
  if (dimension < 1) throw ConfigError("file embedder: dimension must be >= 1");
}

std::string FileEmbedder::image_key(const Image& image) {
  const int dims[3] = {image.h, image.w, image.c};
  std::uint64_t h = fnv1a64(dims, sizeof(dims));
  h = fnv1a64(image.v.data(), image.v.size() * sizeof(float), h);
  return "i_" + hex64(h) + ".sovsemb";
}

std::string FileEmbedder::text_key(const std::string& phrase) {
  return "t_" + hex64(fnv1a64(phrase)) + ".sovsemb";
}

std::vector<float> FileEmbedder::embed_text(const std::string& phrase) const {
  const auto path = dir_ / text_key(phrase);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("file embedder: missing text embedding " + path.string() +
                             " for phrase '" + phrase + "'");
  const EmbeddingField f = read_sovsemb(path);
  if (f.h != 1 || f.w != 1 || f.c != dim_)
    throw std::runtime_error("file embedder: " + path.string() + " has shape " +
                             std::to_string(f.h) + "x" + std::to_string(f.w) + "x" +
                             std::to_string(f.c) + ", expected 1x1x" + std::to_string(dim_));
  return f.v;
}

EmbeddingField FileEmbedder::embed_image(const Image& image) const {
  const auto path = dir_ / image_key(image);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("file embedder: missing image embedding " + path.string() + " for " +
                             std::to_string(image.h) + "x" + std::to_string(image.w) + " image");
  const EmbeddingField f = read_sovsemb(path);
  if (f.c != dim_)
    throw std::runtime_error("file embedder: " + path.string() + " has dimension " +
                             std::to_string(f.c) + ", expected " + std::to_string(dim_));
  return f;
}

// ----------------------------------------------------------------------------
// Teacher pipeline
// ----------------------------------------------------------------------------

Tensor3 encode_text(const PromptSet& prompt_set, const Embedder& embedder) {
  const int n = prompt_set.n(), p = prompt_set.p(), d = embedder.dimension();
  Tensor3 out(n, p, d);
  for (int cls = 0; cls < n; ++cls) {
    const int k_n = static_cast<int>(prompt_set.concepts[cls].size());
    for (int tpl = 0; tpl < p; ++tpl) {
      std::vector<float> e;
      try {
        if (k_n == 1) {
          // degenerate ensemble: keep the direct embedding bit-for-bit
          e = embedder.embed_text(prompt_set.render(cls, 0, tpl));
        } else {
          std::vector<double> acc(d, 0.0);
          for (int ci = 0; ci < k_n; ++ci) {
            const auto v = embedder.embed_text(prompt_set.render(cls, ci, tpl));
            if (static_cast<int>(v.size()) != d)
              throw std::runtime_error("embedding dimension mismatch");
            for (int i = 0; i < d; ++i) acc[i] += v[i];
          }
          e.resize(d);
          for (int i = 0; i < d; ++i) e[i] = static_cast<float>(acc[i] / k_n);
          e = normalized(std::move(e), "concept ensemble");
        }
      } catch (const std::exception& ex) {
        throw std::runtime_error("encode_text failed for class '" + prompt_set.class_names[cls] +
                                 "', template '" + prompt_set.templates[tpl] + "': " + ex.what());
      }
      if (static_cast<int>(e.size()) != d)
        throw std::runtime_error("encode_text: embedding dimension mismatch for class '" +
                                 prompt_set.class_names[cls] + "'");
      std::copy(e.begin(), e.end(), out.pixel(cls, tpl));
    }
  }
  return out;
}

CostVolume cost_volume(const EmbeddingField& image_emb, const Tensor3& text_emb) {
  if (image_emb.c != text_emb.c)
    throw std::invalid_argument("cost_volume: embedding dimension mismatch");
  const int d = image_emb.c, n = text_emb.h, p = text_emb.w;

  // text norms once (unit by contract, but cosine is computed, not assumed)
  std::vector<double> text_norm(static_cast<std::size_t>(n) * p);
  for (int cls = 0; cls < n; ++cls)
    for (int tpl = 0; tpl < p; ++tpl) {
      double s = 0;
      const float* t = text_emb.pixel(cls, tpl);
      for (int i = 0; i < d; ++i) s += static_cast<double>(t[i]) * t[i];
      text_norm[static_cast<std::size_t>(cls) * p + tpl] = std::sqrt(s);
    }

  CostVolume cv;
  cv.h = image_emb.h;
  cv.w = image_emb.w;
  cv.n = n;
  cv.p = p;
  cv.v.assign(static_cast<std::size_t>(cv.h) * cv.w * n * p, 0.0f);
  for (int y = 0; y < cv.h; ++y)
    for (int x = 0; x < cv.w; ++x) {
      const float* img = image_emb.pixel(y, x);
      double img_norm2 = 0;
      for (int i = 0; i < d; ++i) img_norm2 += static_cast<double>(img[i]) * img[i];
      const double img_norm = std::sqrt(img_norm2);
      if (img_norm < 1e-12) {
        ++cv.zero_norm_pixels;  // entries stay 0
        continue;
      }
      for (int cls = 0; cls < n; ++cls)
        for (int tpl = 0; tpl < p; ++tpl) {
          const float* t = text_emb.pixel(cls, tpl);
          double dot = 0;
          for (int i = 0; i < d; ++i) dot += static_cast<double>(img[i]) * t[i];
          double c = dot / (img_norm * text_norm[static_cast<std::size_t>(cls) * p + tpl]);
          c = std::min(1.0, std::max(-1.0, c));
          cv.at(y, x, cls, tpl) = static_cast<float>(c);
        }
    }
  return cv;
}

namespace {

Tensor3 bilinear_resize(const Tensor3& in, int out_h, int out_w) {
  if (in.h == out_h && in.w == out_w) return in;
  Tensor3 out(out_h, out_w, in.c);
  const float sy_scale = static_cast<float>(in.h) / out_h;
  const float sx_scale = static_cast<float>(in.w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const float sy = (oy + 0.5f) * sy_scale - 0.5f;
    const int y0 = std::min(in.h - 1, std::max(0, static_cast<int>(std::floor(sy))));
    const int y1 = std::min(in.h - 1, y0 + 1);
    const float fy = std::min(1.0f, std::max(0.0f, sy - y0));
    for (int ox = 0; ox < out_w; ++ox) {
      const float sx = (ox + 0.5f) * sx_scale - 0.5f;
      const int x0 = std::min(in.w - 1, std::max(0, static_cast<int>(std::floor(sx))));
      const int x1 = std::min(in.w - 1, x0 + 1);
      const float fx = std::min(1.0f, std::max(0.0f, sx - x0));
      for (int k = 0; k < in.c; ++k) {
        const float top = in.at(y0, x0, k) * (1 - fx) + in.at(y0, x1, k) * fx;
        const float bot = in.at(y1, x0, k) * (1 - fx) + in.at(y1, x1, k) * fx;
        out.at(oy, ox, k) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

}  // namespace

ProbMap decode(const CostVolume& cv, int out_h, int out_w, double temperature) {
  if (temperature <= 0) throw std::invalid_argument("decode: temperature must be > 0");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("decode: bad output size");

  ProbMap prob(cv.h, cv.w, cv.n);
  std::vector<double> scores(cv.n);
  for (int y = 0; y < cv.h; ++y)
    for (int x = 0; x < cv.w; ++x) {
      for (int cls = 0; cls < cv.n; ++cls) {
        float best = cv.at(y, x, cls, 0);
        for (int tpl = 1; tpl < cv.p; ++tpl) best = std::max(best, cv.at(y, x, cls, tpl));
        scores[cls] = best / temperature;
      }
      const double m = *std::max_element(scores.begin(), scores.end());
      double sum = 0;
      for (int cls = 0; cls < cv.n; ++cls) {
        scores[cls] = std::exp(scores[cls] - m);
        sum += scores[cls];
      }
      for (int cls = 0; cls < cv.n; ++cls)
        prob.at(y, x, cls) = static_cast<float>(scores[cls] / sum);
    }

  ProbMap up = bilinear_resize(prob, out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      float* px = up.pixel(y, x);
      float sum = 0;
      for (int cls = 0; cls < up.c; ++cls) sum += px[cls];
      for (int cls = 0; cls < up.c; ++cls) px[cls] /= sum;
    }
  return up;
}

LabelMap refine_labels(const LabelMap& initial, int n_in) {
  LabelMap out = initial;
  for (auto& id : out.v)
    if (id >= n_in) id = kBackgroundId;
  return out;
}

PseudoLabel make_pseudo_label(const ProbMap& prob, int n_in) {
  if (n_in <= 0 || n_in > prob.c)
    throw std::invalid_argument("make_pseudo_label: n_in out of range");
  PseudoLabel pl;
  pl.label = LabelMap(prob.h, prob.w);
  pl.confidence = ConfMap(prob.h, prob.w);
  pl.source = TeacherSource::kOvs;
  for (int y = 0; y < prob.h; ++y)
    for (int x = 0; x < prob.w; ++x) {
      const float* px = prob.pixel(y, x);
      double sum = 0;
      int best = 0;
      for (int cls = 0; cls < prob.c; ++cls) {
        sum += px[cls];
        if (px[cls] > px[best]) best = cls;
      }
      if (std::fabs(sum - 1.0) > 1e-5)
        throw std::invalid_argument("make_pseudo_label: probabilities do not sum to 1");
      pl.confidence.at(y, x) = px[best];
      pl.label.at(y, x) = best < n_in ? static_cast<std::uint16_t>(best) : kBackgroundId;
    }
  return pl;
}

PseudoLabel teach_image(const Image& image, const Tensor3& text_emb, const Embedder& embedder,
                        int n_in, double temperature) {
  const EmbeddingField field = embedder.embed_image(image);
  const CostVolume cv = cost_volume(field, text_emb);
  const ProbMap prob = decode(cv, image.h, image.w, temperature);
  return make_pseudo_label(prob, n_in);
}

OfflineSummary generate_offline(const std::vector<OfflineItem>& items,
                                const PromptSet& prompt_set, const Embedder& embedder,
                                const std::filesystem::path& out_dir, double temperature) {
  std::filesystem::create_directories(out_dir);
  const Tensor3 text_emb = encode_text(prompt_set, embedder);

  OfflineSummary summary;
  summary.class_pixels.assign(prompt_set.n_in, 0);
  double conf_sum = 0;
  std::uint64_t conf_count = 0;
  std::vector<std::string> skipped_ids;

  for (const auto& item : items) {
    Image image;
    try {
      image = read_sovsimg(item.image_path);
    } catch (const std::exception&) {
      ++summary.skipped;
      skipped_ids.push_back(item.id);
      continue;
    }
    const PseudoLabel pl = teach_image(image, text_emb, embedder, prompt_set.n_in, temperature);
    write_sovspl(out_dir / (item.id + ".sovspl"), pl.label, pl.confidence, prompt_set.n_in);
    for (std::uint16_t id : pl.label.v) ++summary.class_pixels[id];
    for (float c : pl.confidence.v) conf_sum += c;
    conf_count += pl.confidence.size();
    ++summary.written;
  }
  if (!items.empty() && summary.written == 0)
    throw std::runtime_error("offline pseudo-labeling: every item failed to load");
  summary.mean_confidence = conf_count ? conf_sum / conf_count : 0.0;

  std::ofstream sf(out_dir / "summary.tsv", std::ios::trunc);
  if (!sf) throw std::runtime_error("cannot write " + (out_dir / "summary.tsv").string());
  sf << "written\t" << summary.written << "\n";
  sf << "skipped\t" << summary.skipped << "\n";
  sf << "mean_confidence\t" << fmt_g(summary.mean_confidence) << "\n";
  for (int cls = 0; cls < prompt_set.n_in; ++cls)
    sf << "class_pixels\t" << prompt_set.class_names[cls] << "\t" << summary.class_pixels[cls]
       << "\n";
  for (const auto& id : skipped_ids) sf << "skipped_item\t" << id << "\n";
  return summary;
}

ProbMap softmax_probs(const Tensor3& logits) {
  ProbMap prob(logits.h, logits.w, logits.c);
  std::vector<double> e(logits.c);
  for (int y = 0; y < logits.h; ++y)
    for (int x = 0; x < logits.w; ++x) {
      const float* lp = logits.pixel(y, x);
      double m = lp[0];
      for (int k = 1; k < logits.c; ++k) m = std::max(m, static_cast<double>(lp[k]));
      double sum = 0;
      for (int k = 0; k < logits.c; ++k) {
        e[k] = std::exp(lp[k] - m);
        sum += e[k];
      }
      for (int k = 0; k < logits.c; ++k)
        prob.at(y, x, k) = static_cast<float>(e[k] / sum);
    }
  return prob;
}

PseudoLabel self_pseudo_label(const ProbMap& model_prob) {
  PseudoLabel pl = make_pseudo_label(model_prob, model_prob.c);
  pl.source = TeacherSource::kSelf;
  return pl;
}

}  // namespace sovs
