#include "sovs/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace sovs {

ConfusionMatrix::ConfusionMatrix(int n_classes) : n_(n_classes) {
  if (n_classes < 1) throw std::invalid_argument("confusion matrix: need >= 1 class");
  counts_.assign(static_cast<std::size_t>(n_) * n_, 0);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("confusion matrix: shape mismatch");
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    const std::uint16_t g = gt.v[i];
    if (g == kIgnoreId) continue;
    const std::uint16_t p = pred.v[i];
    if (g >= n_ || p >= n_)
      throw std::invalid_argument("confusion matrix: label id " +
                                  std::to_string(std::max(g, p)) + " out of range for " +
                                  std::to_string(n_) + " classes");
    ++at(g, p);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw std::invalid_argument("confusion matrix: merge size mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IouReport miou(const ConfusionMatrix& cm) {
  const int n = cm.n();
  IouReport r;
  r.per_class.assign(n, 0.0);
  r.present.assign(n, false);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t inter = cm.at(c, c);
    const std::uint64_t uni = row + col - inter;
    if (uni == 0) continue;
    r.present[c] = true;
    r.per_class[c] = static_cast<double>(inter) / static_cast<double>(uni);
    sum += r.per_class[c];
    ++present;
  }
  if (present == 0) throw std::invalid_argument("miou: empty confusion matrix, metric undefined");
  r.miou = sum / present;
  return r;
}

LabelMap argmax_map(const Tensor3& scores) {
  LabelMap out(scores.h, scores.w);
  for (int y = 0; y < scores.h; ++y)
    for (int x = 0; x < scores.w; ++x) {
      const float* p = scores.pixel(y, x);
      int best = 0;
      for (int k = 1; k < scores.c; ++k)
        if (p[k] > p[best]) best = k;
      out.at(y, x) = static_cast<std::uint16_t>(best);
    }
  return out;
}

namespace {

// Numeric-aware ordering so grids like {0.0, 0.25, 0.95} sort by value while
// categorical grids sort lexicographically.
std::vector<std::string> sorted_settings(const std::vector<std::string>& grid) {
  std::vector<std::string> s(grid.begin(), grid.end());
  bool all_numeric = true;
  std::vector<double> nums(s.size());
  for (std::size_t i = 0; i < s.size() && all_numeric; ++i) {
    try {
      std::size_t used = 0;
      nums[i] = std::stod(s[i], &used);
      all_numeric = used == s[i].size();
    } catch (const std::exception&) {
      all_numeric = false;
    }
  }
  if (all_numeric) {
    std::vector<std::size_t> order(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return nums[a] < nums[b]; });
    std::vector<std::string> out;
    for (auto i : order) out.push_back(s[i]);
    s = std::move(out);
  } else {
    std::sort(s.begin(), s.end());
  }
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

}  // namespace

SweepResult run_sweep(const std::string& axis, const std::vector<std::string>& grid,
                      const std::vector<std::uint64_t>& seeds, const CellRunner& runner,
                      const std::vector<std::string>& class_names) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  if (seeds.empty()) throw ConfigError("sweep: need at least one seed");
  if (!runner) throw std::invalid_argument("sweep: no cell runner");

  SweepResult result;
  result.axis = axis;
  result.settings = sorted_settings(grid);
  result.class_names = class_names;
  for (const auto& setting : result.settings)
    for (std::uint64_t seed : seeds) {
      try {
        SweepCell cell = runner(setting, seed);
        cell.setting = setting;
        cell.seed = seed;
        result.cells.push_back(std::move(cell));
      } catch (const std::exception& ex) {
        throw SweepAborted("sweep cell (setting=" + setting + ", seed=" + std::to_string(seed) +
                               ") failed: " + ex.what(),
                           std::move(result));
      }
    }
  return result;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

std::vector<SweepAggregate> aggregate(const SweepResult& result) {
  std::vector<SweepAggregate> out;
  for (const auto& setting : result.settings) {
    std::vector<double> mious;
    for (const auto& cell : result.cells)
      if (cell.setting == setting) mious.push_back(cell.miou);
    if (mious.empty()) continue;
    SweepAggregate agg;
    agg.setting = setting;
    agg.median_miou = median(mious);
    agg.mean_miou = 0;
    for (double v : mious) agg.mean_miou += v;
    agg.mean_miou /= static_cast<double>(mious.size());
    out.push_back(agg);
  }
  return out;
}

// ----------------------------------------------------------------------------
// Report rendering: CSV + hand-rolled SVG line plots.
// ----------------------------------------------------------------------------

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

struct Series {
  std::string name;
  std::string color;
  std::vector<std::pair<double, double>> points;
  bool markers_only = false;
};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

void svg_line_plot(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::string>& x_labels, const std::vector<Series>& series,
                   double y_min, double y_max, const std::string& y_label) {
  constexpr double kW = 640, kH = 400;
  constexpr double kLeft = 70, kRight = 160, kTop = 46, kBottom = 50;
  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;
  const double x_span = x_labels.size() > 1 ? static_cast<double>(x_labels.size() - 1) : 1.0;
  if (y_max <= y_min) y_max = y_min + 1.0;

  auto px = [&](double x) { return kLeft + plot_w * (x / x_span); };
  auto py = [&](double y) { return kTop + plot_h * (1.0 - (y - y_min) / (y_max - y_min)); };

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write plot " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kW << ' ' << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";

  // axes
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop + plot_h << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\"/>\n";
  out << "<text x=\"18\" y=\"" << kTop + plot_h / 2
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << kTop + plot_h / 2 << ")\">"
      << xml_escape(y_label) << "</text>\n";

  for (int i = 0; i <= 4; ++i) {  // y ticks
    const double v = y_min + (y_max - y_min) * i / 4.0;
    const double y = py(v);
    out << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kLeft + plot_w
        << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
        << fmt_g(v) << "</text>\n";
  }
  for (std::size_t i = 0; i < x_labels.size(); ++i) {  // x ticks
    const double x = px(static_cast<double>(i));
    out << "<line x1=\"" << x << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << x << "\" y2=\""
        << kTop + plot_h + 4 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << x << "\" y=\"" << kTop + plot_h + 18 << "\" text-anchor=\"middle\">"
        << xml_escape(x_labels[i]) << "</text>\n";
  }

  double legend_y = kTop + 8;
  for (const auto& s : series) {
    if (!s.markers_only && s.points.size() > 1) {
      out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
      for (const auto& [x, y] : s.points) out << fmt_g(px(x)) << ',' << fmt_g(py(y)) << ' ';
      out << "\"/>\n";
    }
    for (const auto& [x, y] : s.points)
      out << "<circle cx=\"" << fmt_g(px(x)) << "\" cy=\"" << fmt_g(py(y))
          << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    out << "<rect x=\"" << kLeft + plot_w + 12 << "\" y=\"" << legend_y - 9
        << "\" width=\"12\" height=\"12\" fill=\"" << s.color << "\"/>\n";
    out << "<text x=\"" << kLeft + plot_w + 30 << "\" y=\"" << legend_y + 2 << "\">"
        << xml_escape(s.name) << "</text>\n";
    legend_y += 18;
  }
  out << "</svg>\n";
}

}  // namespace

void render_report(const SweepResult& result, const std::filesystem::path& out_dir) {
  if (result.cells.empty())
    throw std::invalid_argument("render_report: no results to render");
  std::filesystem::create_directories(out_dir);

  // ---- CSV ------------------------------------------------------------------
  const auto csv_path = out_dir / ("sweep_" + result.axis + ".csv");
  {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + csv_path.string());
    out << "axis,setting,seed,miou";
    for (const auto& name : result.class_names) out << ',' << name;
    out << '\n';
    for (const auto& cell : result.cells) {
      out << result.axis << ',' << cell.setting << ',' << cell.seed << ',' << fmt_g(cell.miou);
      for (std::size_t c = 0; c < result.class_names.size(); ++c) {
        out << ',';
        if (c < cell.per_class.size() && cell.present[c]) out << fmt_g(cell.per_class[c]);
        else out << "absent";
      }
      out << '\n';
    }
    for (const auto& agg : aggregate(result)) {
      out << result.axis << ',' << agg.setting << ",median," << fmt_g(agg.median_miou);
      for (std::size_t c = 0; c < result.class_names.size(); ++c) out << ',';
      out << '\n';
      out << result.axis << ',' << agg.setting << ",mean," << fmt_g(agg.mean_miou);
      for (std::size_t c = 0; c < result.class_names.size(); ++c) out << ',';
      out << '\n';
    }
  }

  // ---- mIoU plot: median line + per-seed markers -----------------------------
  {
    std::set<std::uint64_t> seed_set;
    for (const auto& cell : result.cells) seed_set.insert(cell.seed);

    std::vector<Series> series;
    Series med{"median", kPalette[3], {}, false};
    const auto aggs = aggregate(result);
    for (std::size_t i = 0; i < result.settings.size(); ++i)
      for (const auto& agg : aggs)
        if (agg.setting == result.settings[i])
          med.points.emplace_back(static_cast<double>(i), agg.median_miou);
    int color = 0;
    for (std::uint64_t seed : seed_set) {
      Series s{"seed " + std::to_string(seed), kPalette[color++ % 3], {}, true};
      for (std::size_t i = 0; i < result.settings.size(); ++i)
        for (const auto& cell : result.cells)
          if (cell.seed == seed && cell.setting == result.settings[i])
            s.points.emplace_back(static_cast<double>(i), cell.miou);
      series.push_back(std::move(s));
    }
    series.push_back(std::move(med));
    svg_line_plot(out_dir / ("plot_miou_" + result.axis + ".svg"),
                  "validation mIoU vs " + result.axis, result.settings, series, 0.0, 1.0, "mIoU");
  }

  // ---- loss plot: total raw loss per epoch, first seed of each setting -------
  {
    std::vector<Series> series;
    std::size_t max_epochs = 1;
    int color = 0;
    for (const auto& setting : result.settings) {
      const SweepCell* first = nullptr;
      for (const auto& cell : result.cells)
        if (cell.setting == setting) {
          if (!first || cell.seed < first->seed) first = &cell;
        }
      if (!first || first->history.empty()) continue;
      Series s{result.axis + "=" + setting, kPalette[color++ % 8], {}, false};
      for (const auto& row : first->history)
        s.points.emplace_back(static_cast<double>(row.epoch),
                              row.l_s + row.l_u_in + row.l_u_out);
      max_epochs = std::max(max_epochs, first->history.size());
      series.push_back(std::move(s));
    }
    double y_max = 0.0;
    for (const auto& s : series)
      for (const auto& [x, y] : s.points) y_max = std::max(y_max, y);
    std::vector<std::string> x_labels;
    for (std::size_t e = 0; e < max_epochs; ++e) x_labels.push_back(std::to_string(e));
    svg_line_plot(out_dir / ("plot_loss_" + result.axis + ".svg"),
                  "training loss vs epoch", x_labels, series, 0.0, y_max * 1.05, "loss");
  }
}

}  // namespace sovs
