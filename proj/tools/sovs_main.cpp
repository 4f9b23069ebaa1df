#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sovs/pipeline.hpp"

namespace {

void print_aggregates(const sovs::SweepResult& result) {
  std::cout << "sweep axis: " << result.axis << "\n";
  std::cout << "setting\tmedian_miou\tmean_miou\n";
  for (const auto& agg : sovs::aggregate(result))
    std::cout << agg.setting << '\t' << sovs::fmt_g(agg.median_miou) << '\t'
              << sovs::fmt_g(agg.mean_miou) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised segmentation trainer with an open-vocabulary teacher"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool force = false;
  app.add_option("-c,--config", config_path, "configuration file (key = value lines)");
  app.add_option("-o,--out", out_dir, "output root directory (overrides out.dir)");
  auto* seed_opt = app.add_option("-s,--seed", seed, "random seed (overrides the seed key)");
  app.add_flag("-f,--force", force, "overwrite existing outputs");

  auto* generate = app.add_subcommand("generate", "synthesize the scene dataset and splits");
  auto* pseudolabel =
      app.add_subcommand("pseudolabel", "pre-generate teacher pseudo-labels for the OOD corpus");
  auto* train = app.add_subcommand("train", "run the three-flow training loop");
  auto* eval = app.add_subcommand("eval", "evaluate the trained checkpoint on validation scenes");
  auto* sweep = app.add_subcommand("sweep", "train+eval across one ablation axis");

  CLI11_PARSE(app, argc, argv);

  try {
    sovs::ExperimentConfig cfg = config_path.empty() ? sovs::ExperimentConfig::defaults()
                                                     : sovs::ExperimentConfig::load(config_path);
    if (*seed_opt) cfg.set("seed", std::to_string(seed));
    if (!out_dir.empty()) cfg.set("out.dir", out_dir);

    if (generate->parsed()) {
      sovs::cmd_generate(cfg, force);
      std::cout << "dataset written to " << sovs::RunPaths::from(cfg).dataset.string() << "\n";
    } else if (pseudolabel->parsed()) {
      const auto summary = sovs::cmd_pseudolabel(cfg, force);
      std::cout << "pseudo-labels written: " << summary.written
                << ", skipped: " << summary.skipped
                << ", mean confidence: " << sovs::fmt_g(summary.mean_confidence) << "\n";
    } else if (train->parsed()) {
      const auto summary = sovs::cmd_train(cfg, force);
      if (!summary.history.empty()) {
        const auto& last = summary.history.back();
        std::cout << "final losses: l_s=" << sovs::fmt_g(last.l_s)
                  << " l_u_in=" << sovs::fmt_g(last.l_u_in)
                  << " l_u_out=" << sovs::fmt_g(last.l_u_out) << "\n";
      }
      std::cout << "checkpoint written to " << summary.checkpoint.string() << "\n";
    } else if (eval->parsed()) {
      const auto summary = sovs::cmd_eval(cfg, force);
      for (std::size_t c = 0; c < summary.class_names.size(); ++c) {
        std::cout << summary.class_names[c] << ": ";
        if (summary.report.present[c]) std::cout << sovs::fmt_g(summary.report.per_class[c]);
        else std::cout << "absent";
        std::cout << "\n";
      }
      std::cout << "miou: " << sovs::fmt_g(summary.report.miou) << "\n";
    } else if (sweep->parsed()) {
      print_aggregates(sovs::cmd_sweep(cfg, force));
    }
    return 0;
  } catch (const sovs::ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
