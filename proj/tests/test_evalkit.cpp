#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "sovs/core.hpp"
#include "sovs/evalkit.hpp"
#include "sovs/formats.hpp"
#include "sovs/rng.hpp"
#include "test_util.hpp"

using namespace sovs;
using testutil::TempDir;

namespace {

LabelMap random_map(Rng& rng, int h, int w, int n_classes) {
  LabelMap m(h, w);
  for (auto& id : m.v) id = static_cast<std::uint16_t>(rng.uniform_int(0, n_classes - 1));
  return m;
}

// Brute-force IoU from raw maps: per class, count intersection and union
// pixel sets directly, skipping ignore ground truth.
double brute_force_miou(const std::vector<std::pair<LabelMap, LabelMap>>& pairs, int n_classes) {
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    std::uint64_t inter = 0, uni = 0;
    for (const auto& [pred, gt] : pairs)
      for (std::size_t i = 0; i < gt.v.size(); ++i) {
        if (gt.v[i] == kIgnoreId) continue;
        const bool in_pred = pred.v[i] == c;
        const bool in_gt = gt.v[i] == c;
        if (in_pred && in_gt) ++inter;
        if (in_pred || in_gt) ++uni;
      }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / uni;
    ++present;
  }
  return sum / present;
}

}  // namespace

// ============================================================================
// confusion matrix
// ============================================================================

TEST_CASE("accumulate counts (ground truth, prediction) pairs") {
  ConfusionMatrix cm(2);
  LabelMap gt(2, 1), pred(2, 1);
  gt.v = {0, 1};
  pred.v = {1, 1};
  cm.accumulate(pred, gt);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.at(0, 0) == 0);
  CHECK(cm.total() == 2);
}

TEST_CASE("perfect single-class prediction fills one diagonal cell") {
  ConfusionMatrix cm(3);
  LabelMap both(4, 4, 2);
  cm.accumulate(both, both);
  CHECK(cm.at(2, 2) == 16);
  CHECK(cm.total() == 16);
}

TEST_CASE("ignore ground truth is skipped, bad ids throw") {
  ConfusionMatrix cm(3);
  LabelMap gt(1, 3), pred(1, 3);
  gt.v = {kIgnoreId, 1, kIgnoreId};
  pred.v = {0, 1, 2};
  cm.accumulate(pred, gt);
  CHECK(cm.total() == 1);
  CHECK(cm.at(1, 1) == 1);

  LabelMap bad_pred(1, 3);
  bad_pred.v = {0, 3, 0};  // pred id == n
  CHECK_THROWS_AS(cm.accumulate(bad_pred, gt), std::invalid_argument);

  LabelMap bad_gt(1, 3);
  bad_gt.v = {5, 0, 0};
  CHECK_THROWS_AS(cm.accumulate(pred, bad_gt), std::invalid_argument);

  LabelMap small(1, 2);
  CHECK_THROWS_AS(cm.accumulate(small, gt), std::invalid_argument);

  CHECK_THROWS_AS(ConfusionMatrix(0), std::invalid_argument);
}

TEST_CASE("accumulation is order-independent and merge adds counts") {
  Rng rng(8);
  std::vector<std::pair<LabelMap, LabelMap>> pairs;
  for (int i = 0; i < 6; ++i)
    pairs.emplace_back(random_map(rng, 5, 5, 4), random_map(rng, 5, 5, 4));

  ConfusionMatrix forward(4), backward(4), merged(4);
  for (const auto& [pred, gt] : pairs) forward.accumulate(pred, gt);
  for (auto it = pairs.rbegin(); it != pairs.rend(); ++it)
    backward.accumulate(it->first, it->second);

  ConfusionMatrix half_a(4), half_b(4);
  for (int i = 0; i < 3; ++i) half_a.accumulate(pairs[i].first, pairs[i].second);
  for (int i = 3; i < 6; ++i) half_b.accumulate(pairs[i].first, pairs[i].second);
  merged.merge(half_a);
  merged.merge(half_b);

  for (int g = 0; g < 4; ++g)
    for (int p = 0; p < 4; ++p) {
      CHECK(forward.at(g, p) == backward.at(g, p));
      CHECK(forward.at(g, p) == merged.at(g, p));
    }
}

// ============================================================================
// miou
// ============================================================================

TEST_CASE("hand-checked confusion matrix gives 7/12") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 2;
  cm.at(0, 1) = 1;
  cm.at(1, 0) = 0;
  cm.at(1, 1) = 1;

  const IouReport r = miou(cm);
  CHECK(r.per_class[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.per_class[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("perfect prediction scores 1.0, disjoint prediction 0.0") {
  ConfusionMatrix perfect(3);
  perfect.at(0, 0) = 5;
  perfect.at(1, 1) = 7;
  perfect.at(2, 2) = 2;
  const IouReport p = miou(perfect);
  CHECK(p.miou == 1.0);
  for (int c = 0; c < 3; ++c) {
    CHECK(p.present[c]);
    CHECK(p.per_class[c] == 1.0);
  }

  ConfusionMatrix disjoint(2);
  disjoint.at(0, 1) = 4;
  disjoint.at(1, 0) = 4;
  const IouReport d = miou(disjoint);
  CHECK(d.miou == 0.0);
}

TEST_CASE("zero-union classes are excluded from the mean") {
  ConfusionMatrix cm(4);  // classes 2 and 3 never appear
  cm.at(0, 0) = 3;
  cm.at(0, 1) = 1;
  cm.at(1, 1) = 4;

  const IouReport r = miou(cm);
  CHECK_FALSE(r.present[2]);
  CHECK_FALSE(r.present[3]);
  CHECK(r.present[0]);
  // class 0: 3/(4+3-3)=3/4; class 1: 4/(4+5-4)=4/5
  CHECK(r.miou == doctest::Approx((3.0 / 4.0 + 4.0 / 5.0) / 2).epsilon(1e-12));

  ConfusionMatrix empty(3);
  CHECK_THROWS_AS(miou(empty), std::invalid_argument);
}

TEST_CASE("miou equals a brute-force set computation on random maps") {
  Rng rng(12);
  for (int round = 0; round < 20; ++round) {
    std::vector<std::pair<LabelMap, LabelMap>> pairs;
    ConfusionMatrix cm(5);
    for (int i = 0; i < 5; ++i) {
      LabelMap pred = random_map(rng, 8, 8, 5);
      LabelMap gt = random_map(rng, 8, 8, 5);
      if (i == 0) gt.v[3] = kIgnoreId;  // exercise the skip path too
      cm.accumulate(pred, gt);
      pairs.emplace_back(std::move(pred), std::move(gt));
    }
    const IouReport r = miou(cm);
    CHECK(r.miou == doctest::Approx(brute_force_miou(pairs, 5)).epsilon(1e-12));
  }
}

TEST_CASE("an all-ignore image never changes the metric") {
  Rng rng(14);
  ConfusionMatrix cm(3);
  cm.accumulate(random_map(rng, 6, 6, 3), random_map(rng, 6, 6, 3));
  const double before = miou(cm).miou;

  LabelMap ignore_gt(6, 6, kIgnoreId);
  cm.accumulate(random_map(rng, 6, 6, 3), ignore_gt);
  CHECK(miou(cm).miou == before);
}

TEST_CASE("argmax_map picks the highest channel per pixel") {
  Tensor3 scores(1, 2, 3);
  scores.at(0, 0, 0) = 0.1f;
  scores.at(0, 0, 1) = 0.7f;
  scores.at(0, 0, 2) = 0.2f;
  scores.at(0, 1, 0) = 5.0f;
  scores.at(0, 1, 1) = -1.0f;
  scores.at(0, 1, 2) = 4.9f;

  const LabelMap m = argmax_map(scores);
  CHECK(m.at(0, 0) == 1);
  CHECK(m.at(0, 1) == 0);
}

// ============================================================================
// sweeps
// ============================================================================

namespace {

SweepCell stub_cell(const std::string& setting, std::uint64_t seed) {
  SweepCell cell;
  cell.setting = setting;
  cell.seed = seed;
  // deterministic fake score: setting value plus a small seed wiggle
  cell.miou = std::stod(setting) * 0.1 + static_cast<double>(seed) * 0.01;
  cell.per_class = {cell.miou, cell.miou / 2};
  cell.present = {true, true};
  cell.history.push_back({0, 1.0, 0.5, 0.25, 0.1, 0.2, 0.05});
  cell.history.push_back({1, 0.8, 0.4, 0.2, 0.1, 0.2, 0.04});
  return cell;
}

}  // namespace

TEST_CASE("run_sweep orders cells setting-major with numeric-aware sorting") {
  const SweepResult r = run_sweep("tau_out", {"0.5", "0.25", "1", "0.25"}, {1, 2},
                                  stub_cell, {"background", "thing"});
  // duplicates collapse, numeric order wins over lexicographic
  CHECK(r.settings == std::vector<std::string>{"0.25", "0.5", "1"});
  REQUIRE(r.cells.size() == 6);
  CHECK(r.cells[0].setting == "0.25");
  CHECK(r.cells[0].seed == 1);
  CHECK(r.cells[1].setting == "0.25");
  CHECK(r.cells[1].seed == 2);
  CHECK(r.cells[4].setting == "1");
  CHECK(r.axis == "tau_out");

  CHECK_THROWS_AS(run_sweep("a", {}, {1}, stub_cell, {}), ConfigError);
  CHECK_THROWS_AS(run_sweep("a", {"1"}, {}, stub_cell, {}), ConfigError);
}

TEST_CASE("a failing cell aborts the sweep but keeps completed cells") {
  int calls = 0;
  auto flaky = [&](const std::string& setting, std::uint64_t seed) -> SweepCell {
    ++calls;
    if (calls == 3) throw std::runtime_error("cell exploded");
    return stub_cell(setting, seed);
  };

  try {
    run_sweep("lambda_out", {"1", "2"}, {1, 2}, flaky, {});
    FAIL("expected SweepAborted");
  } catch (const SweepAborted& e) {
    CHECK(std::string(e.what()).find("cell exploded") != std::string::npos);
    CHECK(e.partial().cells.size() == 2);
    CHECK(e.partial().axis == "lambda_out");
  }
}

TEST_CASE("median and aggregates") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(median({7.0}) == 7.0);
  CHECK_THROWS_AS(median({}), std::invalid_argument);

  const SweepResult r = run_sweep("tau_out", {"1", "2"}, {1, 2, 3}, stub_cell, {});
  const auto aggs = aggregate(r);
  REQUIRE(aggs.size() == 2);
  CHECK(aggs[0].setting == "1");
  // cells at setting 1: 0.1 + {0.01, 0.02, 0.03}
  CHECK(aggs[0].median_miou == doctest::Approx(0.12));
  CHECK(aggs[0].mean_miou == doctest::Approx(0.12));
  CHECK(aggs[1].median_miou == doctest::Approx(0.22));
}

// ============================================================================
// reports
// ============================================================================

TEST_CASE("render_report writes a CSV and two plots, deterministically") {
  TempDir tmp;
  const SweepResult r = run_sweep("tau_out", {"0", "0.25", "0.5", "0.75", "0.95"}, {1, 2, 3},
                                  stub_cell, {"background", "thing"});

  const auto dir_a = tmp.path / "a";
  std::filesystem::create_directories(dir_a);
  render_report(r, dir_a);

  REQUIRE(std::filesystem::exists(dir_a / "sweep_tau_out.csv"));
  REQUIRE(std::filesystem::exists(dir_a / "plot_miou_tau_out.svg"));
  REQUIRE(std::filesystem::exists(dir_a / "plot_loss_tau_out.svg"));

  const std::string csv = read_file_bytes(dir_a / "sweep_tau_out.csv");
  CHECK(csv.rfind("axis,setting,seed,miou,background,thing\n", 0) == 0);
  // 5 settings x 3 seeds cell rows + 5 x 2 aggregate rows + header
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 15 + 10);
  CHECK(csv.find("median") != std::string::npos);
  CHECK(csv.find("mean") != std::string::npos);
  CHECK(csv.find("tau_out,0.25,1,") != std::string::npos);

  // byte-identical rerender
  const auto dir_b = tmp.path / "b";
  std::filesystem::create_directories(dir_b);
  render_report(r, dir_b);
  CHECK(read_file_bytes(dir_a / "sweep_tau_out.csv") ==
        read_file_bytes(dir_b / "sweep_tau_out.csv"));
  CHECK(read_file_bytes(dir_a / "plot_miou_tau_out.svg") ==
        read_file_bytes(dir_b / "plot_miou_tau_out.svg"));
  CHECK(read_file_bytes(dir_a / "plot_loss_tau_out.svg") ==
        read_file_bytes(dir_b / "plot_loss_tau_out.svg"));

  // SVG plots are well-formed enough to open: root tag plus polyline data
  const std::string svg = read_file_bytes(dir_a / "plot_miou_tau_out.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("empty results refuse to create any files") {
  TempDir tmp;
  SweepResult empty;
  empty.axis = "tau_out";
  const auto dir = tmp.path / "out";
  std::filesystem::create_directories(dir);
  CHECK_THROWS_AS(render_report(empty, dir), std::invalid_argument);
  CHECK(std::filesystem::is_empty(dir));
}

TEST_CASE("absent classes render as 'absent' in the CSV") {
  auto sparse_cell = [](const std::string& setting, std::uint64_t seed) {
    SweepCell cell = stub_cell(setting, seed);
    cell.present = {true, false};
    return cell;
  };
  TempDir tmp;
  const SweepResult r = run_sweep("lambda_out", {"1"}, {1}, sparse_cell, {"bg", "fg"});
  render_report(r, tmp.path);
  const std::string csv = read_file_bytes(tmp.path / "sweep_lambda_out.csv");
  CHECK(csv.find("absent") != std::string::npos);
}
