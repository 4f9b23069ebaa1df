#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sovs/core.hpp"
#include "sovs/trainer.hpp"

namespace sovs {

// ============================================================================
// Confusion matrix and intersection-over-union metrics.
// ============================================================================

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n_classes);

  int n() const { return n_; }
  std::uint64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * n_ + pred];
  }
  std::uint64_t& at(int gt, int pred) {
    return counts_[static_cast<std::size_t>(gt) * n_ + pred];
  }
  std::uint64_t total() const;

  // Per-pixel counts[gt][pred]; ground-truth ignore pixels are skipped; any
  // other id >= n is a contract violation.
  void accumulate(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionMatrix& other);

 private:
  int n_;
  std::vector<std::uint64_t> counts_;
};

struct IouReport {
  std::vector<double> per_class;  // meaningful where present[c]
  std::vector<bool> present;      // class has nonzero union
  double miou = 0.0;              // mean over present classes
};

// IoU_c = diag / (row + col - diag); zero-union classes are excluded from the
// mean. Throws if no class is present (metric undefined).
IouReport miou(const ConfusionMatrix& cm);

// Per-pixel argmax over channels (used to turn logits/probabilities into a
// prediction map).
LabelMap argmax_map(const Tensor3& scores);

// ============================================================================
// Ablation sweeps: one full train+eval per (setting, seed) cell. The cell
// body is injected so the sweep machinery is testable without training.
// ============================================================================

struct SweepCell {
  std::string setting;
  std::uint64_t seed = 0;
  double miou = 0.0;
  std::vector<double> per_class;
  std::vector<bool> present;
  MetricHistory history;
};

struct SweepResult {
  std::string axis;
  std::vector<std::string> settings;  // unique, sorted (numeric-aware)
  std::vector<SweepCell> cells;       // setting-major, seed-minor order
  std::vector<std::string> class_names;
};

// Thrown when a cell fails; carries the cells completed so far.
class SweepAborted : public std::runtime_error {
 public:
  SweepAborted(const std::string& msg, SweepResult partial)
      : std::runtime_error(msg), partial_(std::move(partial)) {}
  const SweepResult& partial() const { return partial_; }

 private:
  SweepResult partial_;
};

using CellRunner = std::function<SweepCell(const std::string& setting, std::uint64_t seed)>;

SweepResult run_sweep(const std::string& axis, const std::vector<std::string>& grid,
                      const std::vector<std::uint64_t>& seeds, const CellRunner& runner,
                      const std::vector<std::string>& class_names);

struct SweepAggregate {
  std::string setting;
  double median_miou = 0.0;
  double mean_miou = 0.0;
};

double median(std::vector<double> values);
std::vector<SweepAggregate> aggregate(const SweepResult& result);

// Writes sweep_<axis>.csv (per-cell rows plus median/mean rows) and two SVG
// line plots (mIoU vs setting, loss curves). Deterministic bytes for
// identical results. Throws on empty results before creating any file.
void render_report(const SweepResult& result, const std::filesystem::path& out_dir);

}  // namespace sovs
