#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "sovs/core.hpp"
#include "sovs/ovs_teacher.hpp"
#include "sovs/student.hpp"

namespace sovs {

// ============================================================================
// Losses. All cross-entropies are means over contributing pixels so the loss
// scale is invariant to image size and mask density. Templated on the scalar
// type: float for training, double for finite-difference verification.
// ============================================================================

template <typename T>
struct MaskedCe {
  T loss{};
  double masked_fraction = 0.0;  // share of pixels excluded from the mean
  Tensor3T<T> dlogits;           // d(loss)/d(logits), zero at masked pixels
};

// Cross-entropy against explicit per-pixel targets. A pixel contributes iff
// its target is not the ignore id and its confidence is >= tau. Loss is
// sum(CE)/max(1, contributing). Target ids >= channel count are a contract
// violation.
template <typename T>
MaskedCe<T> masked_ce(const Tensor3T<T>& logits, const LabelMap& target,
                      const ConfMap& confidence, double tau, bool with_grad) {
  if (logits.h != target.h || logits.w != target.w)
    throw std::invalid_argument("masked_ce: logits/target shape mismatch");
  if (confidence.h != target.h || confidence.w != target.w)
    throw std::invalid_argument("masked_ce: confidence shape mismatch");

  MaskedCe<T> r;
  if (with_grad) r.dlogits = Tensor3T<T>(logits.h, logits.w, logits.c);

  double loss_sum = 0.0;
  long long count = 0;
  std::vector<double> p(logits.c);
  for (int y = 0; y < logits.h; ++y)
    for (int x = 0; x < logits.w; ++x) {
      const std::uint16_t id = target.at(y, x);
      if (id == kIgnoreId) continue;
      if (id >= logits.c)
        throw std::invalid_argument("masked_ce: target id " + std::to_string(id) +
                                    " out of range for " + std::to_string(logits.c) + " classes");
      if (confidence.at(y, x) < tau) continue;

      const T* lp = logits.pixel(y, x);
      double m = lp[0];
      for (int k = 1; k < logits.c; ++k) m = std::max(m, static_cast<double>(lp[k]));
      double sum = 0.0;
      for (int k = 0; k < logits.c; ++k) {
        p[k] = std::exp(lp[k] - m);
        sum += p[k];
      }
      loss_sum += std::log(sum) + m - lp[id];
      ++count;
      if (with_grad) {
        T* gp = r.dlogits.pixel(y, x);
        for (int k = 0; k < logits.c; ++k) gp[k] = static_cast<T>(p[k] / sum);
        gp[id] -= T{1};
      }
    }

  const long long denom = std::max(1ll, count);
  r.loss = static_cast<T>(loss_sum / denom);
  r.masked_fraction = 1.0 - static_cast<double>(count) / target.size();
  if (with_grad && count > 0)
    for (T& g : r.dlogits.v) g /= static_cast<T>(denom);
  if (with_grad && count == 0)
    std::fill(r.dlogits.v.begin(), r.dlogits.v.end(), T{});
  return r;
}

// Mean pixel cross-entropy over non-ignored pixels of a ground-truth label.
template <typename T>
T supervised_loss(const Tensor3T<T>& logits, const LabelMap& label) {
  const ConfMap ones(label.h, label.w, 1.0f);
  return masked_ce(logits, label, ones, 0.0, false).loss;
}

// Weak-view distribution supervises the strong view: targets are the weak
// argmax, the indicator is max-probability >= tau. Returns (loss, fraction of
// pixels masked out).
template <typename T>
std::pair<T, double> masked_consistency_loss(const ProbMap& prob_weak,
                                             const Tensor3T<T>& logits_strong, double tau) {
  if (prob_weak.h != logits_strong.h || prob_weak.w != logits_strong.w)
    throw std::invalid_argument("masked_consistency_loss: shape mismatch");
  LabelMap target(prob_weak.h, prob_weak.w);
  ConfMap conf(prob_weak.h, prob_weak.w);
  for (int y = 0; y < prob_weak.h; ++y)
    for (int x = 0; x < prob_weak.w; ++x) {
      const float* pp = prob_weak.pixel(y, x);
      int best = 0;
      for (int k = 1; k < prob_weak.c; ++k)
        if (pp[k] > pp[best]) best = k;
      target.at(y, x) = static_cast<std::uint16_t>(best);
      conf.at(y, x) = pp[best];
    }
  const auto r = masked_ce(logits_strong, target, conf, tau, false);
  return {r.loss, r.masked_fraction};
}

// Weighted objective: supervised + in-distribution + lambda * OOD.
double total_loss(double l_s, double l_u_in, double l_u_out, double lambda_out);

// ============================================================================
// Training loop.
// ============================================================================

struct TrainConfig {
  double tau_in = 0.95;
  double tau_out = 0.0;
  double lambda_out = 1.0;
  int batch_labeled = 8;
  int batch_unlabeled_in = 8;
  int batch_unlabeled_out = 8;
  int epochs = 10;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double poly_power = 0.9;
  int crop_size = 40;
  double cutmix_prob = 0.8;
  std::uint64_t seed = 0;
  TeacherSource teacher = TeacherSource::kOvs;

  void validate() const;
};

struct OodItem {
  Image image;
  std::optional<PseudoLabel> pseudo;  // required when teacher source is ovs
};

struct TrainData {
  std::vector<std::pair<Image, LabelMap>> labeled;
  std::vector<Image> unlabeled_in;
  std::vector<OodItem> unlabeled_out;
};

struct MetricRow {
  int epoch = 0;
  double l_s = 0, l_u_in = 0, l_u_out = 0;
  double masked_frac_in = 0, masked_frac_out = 0;
  double lr = 0;  // learning rate at the last step of the epoch
};
using MetricHistory = std::vector<MetricRow>;

void write_metrics_csv(const std::filesystem::path& path, const MetricHistory& history);

struct TrainResult {
  MetricHistory history;
  int steps = 0;
};

// One SGD+momentum run with polynomial learning-rate decay. Each of the three
// flows consumes its own derived random stream, so removing one flow (or
// zeroing its weight) never perturbs the others. `on_step` (if set) observes
// the model after every optimizer step.
TrainResult train(TinyFcn<float>& model, const TrainData& data, const TrainConfig& cfg,
                  const std::function<void(int step, const TinyFcn<float>& model)>& on_step = {});

// ============================================================================
// Checkpointing (parameters + config hash; metrics live in the CSV).
// ============================================================================

void save_checkpoint(const std::filesystem::path& path, const TinyFcn<float>& model,
                     std::uint64_t config_hash);

// Loads parameters into a model of matching architecture. If expected_hash is
// nonzero it must equal the stored hash.
void load_checkpoint(const std::filesystem::path& path, TinyFcn<float>& model,
                     std::uint64_t expected_hash = 0);

// ============================================================================
// Finite-difference verification of the full objective's gradient. Targets
// are frozen (gradients never flow through pseudo-labels), matching the
// training-time stop-gradient semantics.
// ============================================================================

struct FrozenFlowItem {
  Tensor3T<double> image;  // input to the student (already strong-augmented)
  LabelMap target;
  ConfMap confidence;
};

struct GradCheckBatch {
  std::vector<FrozenFlowItem> labeled;        // tau ignored (always 0)
  std::vector<FrozenFlowItem> unlabeled_in;   // masked by tau_in
  std::vector<FrozenFlowItem> unlabeled_out;  // masked by tau_out, weighted by lambda
};

// Compares analytic gradients against central differences on n_probes
// randomly chosen parameters; returns the max relative error, or +inf if the
// loss is non-finite. The error denominator is floored at 1e-5: gradients
// smaller than the finite-difference noise floor are compared absolutely at
// that scale rather than relatively.
double gradient_check(TinyFcn<double>& model, const GradCheckBatch& batch, double tau_in,
                      double tau_out, double lambda_out, int n_probes, double epsilon,
                      std::uint64_t seed);

}  // namespace sovs
