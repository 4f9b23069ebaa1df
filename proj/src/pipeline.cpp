#include "sovs/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "sovs/formats.hpp"

namespace sovs {
namespace {

void refuse_or_clear(const std::filesystem::path& dir, bool force) {
  if (std::filesystem::exists(dir)) {
    if (!force)
      throw std::runtime_error("output directory " + dir.string() +
                               " already exists; pass --force to overwrite");
    std::filesystem::remove_all(dir);
  }
  std::filesystem::create_directories(dir);
}

std::string in_id(int k) { return "in_" + std::to_string(k); }
std::string ood_id(int k) { return "ood_" + std::to_string(k); }
std::string val_id(int k) { return "val_" + std::to_string(k); }

constexpr int kValIndexOffset = 1000000;  // keeps validation scenes out of the training stream

std::uint64_t coarsen_seed(std::uint64_t seed, int id) {
  return seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(id + 1));
}

struct SplitRow {
  int id;
  std::string role;  // labeled_fine | labeled_coarse | unlabeled_in
};

std::vector<SplitRow> read_splits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file " + path.string());
  std::vector<SplitRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected '<id>\\t<role>'");
    rows.push_back(SplitRow{std::stoi(line.substr(0, tab)), line.substr(tab + 1)});
  }
  return rows;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

}  // namespace

RunPaths RunPaths::from(const ExperimentConfig& cfg) {
  RunPaths p;
  p.root = cfg.out_root();
  p.dataset = p.root / "dataset";
  p.scenes = p.dataset / "scenes";
  p.labels = p.dataset / "labels";
  p.labels_coarse = p.dataset / "labels_coarse";
  p.pseudo = p.root / "pseudo";
  p.train_dir = p.root / "train";
  p.eval_dir = p.root / "eval";
  return p;
}

void cmd_generate(const ExperimentConfig& cfg, bool force) {
  const RunPaths paths = RunPaths::from(cfg);
  const SceneSpec spec = cfg.scene_spec();
  const int n_scenes = cfg.get_int("data.n_scenes");
  const int n_ood = cfg.get_int("data.n_ood");
  const int n_val = cfg.get_int("data.n_val");
  if (n_scenes < 2 || n_val < 1 || n_ood < 0)
    throw ConfigError("data: need n_scenes >= 2, n_val >= 1, n_ood >= 0");
  if (n_ood > 0 && spec.ood_class_names.empty())
    throw ConfigError("data.n_ood > 0 requires scene.ood_classes");

  const DatasetSplit split =
      make_splits(n_scenes, cfg.get_int("split.n_labeled"),
                  protocol_from_name(cfg.get("split.protocol")),
                  cfg.get_double("split.quality_fraction"), cfg.get_u64("seed"));

  refuse_or_clear(paths.dataset, force);
  std::filesystem::create_directories(paths.scenes);
  std::filesystem::create_directories(paths.labels);
  std::filesystem::create_directories(paths.labels_coarse);

  const ConfMap full_conf(spec.height, spec.width, 1.0f);
  std::vector<ManifestItem> m_in, m_ood, m_val;

  std::vector<LabelMap> gt(n_scenes);
  for (int k = 0; k < n_scenes; ++k) {
    const Scene scene = generate_scene(spec, k, false);
    write_sovsimg(paths.scenes / (in_id(k) + ".sovsimg"), scene.image);
    write_sovspl(paths.labels / (in_id(k) + ".sovspl"), scene.label, full_conf, spec.n_in());
    gt[k] = scene.label;
    m_in.push_back({in_id(k), "scenes/" + in_id(k) + ".sovsimg", spec.width, spec.height});
  }
  for (const LabeledId& lid : split.labeled)
    if (lid.quality == LabelQuality::kCoarse) {
      const LabelMap coarse = coarsen_label(gt[lid.id], coarsen_seed(spec.seed, lid.id));
      write_sovspl(paths.labels_coarse / (in_id(lid.id) + ".sovspl"), coarse, full_conf,
                   spec.n_in());
    }
  for (int k = 0; k < n_ood; ++k) {
    const Scene scene = generate_scene(spec, k, true);
    write_sovsimg(paths.scenes / (ood_id(k) + ".sovsimg"), scene.image);
    m_ood.push_back({ood_id(k), "scenes/" + ood_id(k) + ".sovsimg", spec.width, spec.height});
  }
  for (int k = 0; k < n_val; ++k) {
    const Scene scene = generate_scene(spec, kValIndexOffset + k, false);
    write_sovsimg(paths.scenes / (val_id(k) + ".sovsimg"), scene.image);
    write_sovspl(paths.labels / (val_id(k) + ".sovspl"), scene.label, full_conf, spec.n_in());
    m_val.push_back({val_id(k), "scenes/" + val_id(k) + ".sovsimg", spec.width, spec.height});
  }
  write_manifest(paths.dataset / "manifest_in.tsv", m_in);
  write_manifest(paths.dataset / "manifest_ood.tsv", m_ood);
  write_manifest(paths.dataset / "manifest_val.tsv", m_val);

  {
    std::ofstream sf(paths.dataset / "splits.tsv", std::ios::trunc);
    if (!sf) throw std::runtime_error("cannot write splits.tsv");
    std::vector<std::string> role(n_scenes, "unlabeled_in");
    for (const LabeledId& lid : split.labeled)
      role[lid.id] = lid.quality == LabelQuality::kFine ? "labeled_fine" : "labeled_coarse";
    for (int k = 0; k < n_scenes; ++k) sf << k << '\t' << role[k] << '\n';
  }
  cfg.save(paths.dataset / "config.cfg");
}

OfflineSummary cmd_pseudolabel(const ExperimentConfig& cfg, bool force) {
  const RunPaths paths = RunPaths::from(cfg);
  const auto manifest_path = paths.dataset / "manifest_ood.tsv";
  if (!std::filesystem::exists(manifest_path))
    throw std::runtime_error("dataset not found at " + paths.dataset.string() +
                             " (run the generate command first)");
  const CorpusManifest manifest = load_manifest(manifest_path, std::nullopt);

  std::vector<OfflineItem> items;
  for (const auto& item : manifest.items)
    items.push_back(OfflineItem{item.id, manifest.resolve(item)});

  refuse_or_clear(paths.pseudo, force);
  const PromptSet ps = cfg.prompt_set();
  const auto embedder = cfg.make_embedder();
  const OfflineSummary summary =
      generate_offline(items, ps, *embedder, paths.pseudo, cfg.get_double("teacher.temperature"));
  cfg.save(paths.pseudo / "config.cfg");
  return summary;
}

TrainData load_train_data(const ExperimentConfig& cfg) {
  const RunPaths paths = RunPaths::from(cfg);
  if (!std::filesystem::exists(paths.dataset / "splits.tsv"))
    throw std::runtime_error("dataset not found at " + paths.dataset.string() +
                             " (run the generate command first)");
  const SceneSpec spec = cfg.scene_spec();
  const TrainConfig tcfg = cfg.train_config();

  TrainData data;
  for (const SplitRow& row : read_splits(paths.dataset / "splits.tsv")) {
    const auto image_path = paths.scenes / (in_id(row.id) + ".sovsimg");
    if (row.role == "unlabeled_in") {
      data.unlabeled_in.push_back(read_sovsimg(image_path));
      continue;
    }
    const auto label_dir = row.role == "labeled_coarse" ? paths.labels_coarse : paths.labels;
    const PlFile pl = read_sovspl(label_dir / (in_id(row.id) + ".sovspl"));
    if (pl.n_in != spec.n_in())
      throw ConfigError("label file for scene " + std::to_string(row.id) + " has " +
                        std::to_string(pl.n_in) + " classes, config expects " +
                        std::to_string(spec.n_in()));
    data.labeled.emplace_back(read_sovsimg(image_path), pl.label);
  }

  if (tcfg.batch_unlabeled_out > 0) {
    const CorpusManifest manifest =
        load_manifest(paths.dataset / "manifest_ood.tsv", std::nullopt);
    for (const auto& item : manifest.items) {
      OodItem ood;
      ood.image = read_sovsimg(manifest.resolve(item));
      if (tcfg.teacher == TeacherSource::kOvs) {
        const auto pl_path = paths.pseudo / (item.id + ".sovspl");
        if (!std::filesystem::exists(pl_path))
          throw ConfigError("missing pseudo-label file " + pl_path.string() +
                            " (run the pseudolabel command first)");
        const PlFile pl = read_sovspl(pl_path);
        if (pl.n_in != spec.n_in())
          throw ConfigError("pseudo-label " + pl_path.string() + " has " +
                            std::to_string(pl.n_in) + " classes, config expects " +
                            std::to_string(spec.n_in()));
        ood.pseudo = PseudoLabel{pl.label, pl.confidence, TeacherSource::kOvs};
      }
      data.unlabeled_out.push_back(std::move(ood));
    }
  }
  return data;
}

TrainSummary cmd_train(const ExperimentConfig& cfg, bool force) {
  const RunPaths paths = RunPaths::from(cfg);
  const SceneSpec spec = cfg.scene_spec();
  const TrainConfig tcfg = cfg.train_config();
  const int channels = cfg.get_int("train.channels");
  if (channels < 1) throw ConfigError("train.channels must be >= 1");

  const TrainData data = load_train_data(cfg);
  refuse_or_clear(paths.train_dir, force);

  TinyFcn<float> model(3, channels, spec.n_in(), tcfg.seed);
  const TrainResult result = train(model, data, tcfg);

  TrainSummary summary;
  summary.history = result.history;
  summary.checkpoint = paths.train_dir / "checkpoint.sovsckpt";
  save_checkpoint(summary.checkpoint, model, cfg.hash());
  write_metrics_csv(paths.train_dir / "metrics.csv", result.history);
  cfg.save(paths.train_dir / "config.cfg");
  return summary;
}

EvalSummary cmd_eval(const ExperimentConfig& cfg, bool force) {
  const RunPaths paths = RunPaths::from(cfg);
  const SceneSpec spec = cfg.scene_spec();
  const auto ckpt_path = paths.train_dir / "checkpoint.sovsckpt";
  if (!std::filesystem::exists(ckpt_path))
    throw std::runtime_error("checkpoint not found at " + ckpt_path.string() +
                             " (run the train command first)");

  TinyFcn<float> model(3, cfg.get_int("train.channels"), spec.n_in(), 0);
  load_checkpoint(ckpt_path, model);

  const CorpusManifest manifest = load_manifest(paths.dataset / "manifest_val.tsv", std::nullopt);
  if (manifest.items.empty()) throw std::runtime_error("validation manifest is empty");

  ConfusionMatrix cm(spec.n_in());
  for (const auto& item : manifest.items) {
    const Image image = read_sovsimg(manifest.resolve(item));
    const PlFile gt = read_sovspl(paths.labels / (item.id + ".sovspl"));
    cm.accumulate(argmax_map(model.forward(image)), gt.label);
  }

  EvalSummary summary;
  summary.report = miou(cm);
  summary.class_names = spec.in_class_names;

  refuse_or_clear(paths.eval_dir, force);
  std::ofstream out(paths.eval_dir / "eval.csv", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write eval.csv");
  out << "class,iou\n";
  for (int c = 0; c < spec.n_in(); ++c) {
    out << summary.class_names[c] << ',';
    if (summary.report.present[c]) out << fmt_g(summary.report.per_class[c]);
    else out << "absent";
    out << '\n';
  }
  out << "miou," << fmt_g(summary.report.miou) << '\n';
  cfg.save(paths.eval_dir / "config.cfg");
  return summary;
}

SweepCell run_cell(const ExperimentConfig& cfg) {
  cmd_generate(cfg, true);
  const TrainConfig tcfg = cfg.train_config();
  const bool needs_pseudo = tcfg.teacher == TeacherSource::kOvs && tcfg.batch_unlabeled_out > 0 &&
                            cfg.get_int("data.n_ood") > 0;
  if (needs_pseudo) cmd_pseudolabel(cfg, true);
  const TrainSummary ts = cmd_train(cfg, true);
  const EvalSummary es = cmd_eval(cfg, true);

  SweepCell cell;
  cell.miou = es.report.miou;
  cell.per_class = es.report.per_class;
  cell.present = es.report.present;
  cell.history = ts.history;
  return cell;
}

SweepResult cmd_sweep(const ExperimentConfig& cfg, bool force) {
  const RunPaths paths = RunPaths::from(cfg);
  const std::string axis = cfg.get("sweep.axis");
  const std::vector<std::string> grid = cfg.get_list("sweep.grid");
  const int n_seeds = cfg.get_int("sweep.seeds");
  if (n_seeds < 1) throw ConfigError("sweep.seeds must be >= 1");

  const auto sweep_dir = paths.root / ("sweep_" + axis);
  refuse_or_clear(sweep_dir, force);

  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(cfg.get_u64("seed") + i);

  const CellRunner runner = [&](const std::string& setting, std::uint64_t seed) {
    ExperimentConfig cell_cfg = cfg;
    apply_sweep_setting(cell_cfg, axis, setting);
    cell_cfg.set("seed", std::to_string(seed));
    cell_cfg.set("out.dir",
                 (sweep_dir / ("cell_" + sanitize(setting) + "_s" + std::to_string(seed)))
                     .string());
    return run_cell(cell_cfg);
  };

  SweepResult result;
  try {
    result = run_sweep(axis, grid, seeds, runner, cfg.get_list("scene.in_classes"));
  } catch (const SweepAborted& aborted) {
    if (!aborted.partial().cells.empty()) render_report(aborted.partial(), sweep_dir);
    throw;
  }
  render_report(result, sweep_dir);
  cfg.save(sweep_dir / "config.cfg");
  return result;
}

}  // namespace sovs
