#include "sovs/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sovs {
namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> kDefaults = {
      {"seed", "0"},
      {"out.dir", ""},
      {"scene.height", "64"},
      {"scene.width", "64"},
      {"scene.in_classes", "background,circle,square,triangle,stripe"},
      {"scene.ood_classes", "cross,ring,diamond"},
      {"scene.shapes_min", "2"},
      {"scene.shapes_max", "5"},
      {"scene.appearance_shift", "palette"},
      {"data.n_scenes", "160"},
      {"data.n_ood", "80"},
      {"data.n_val", "40"},
      {"split.n_labeled", "12"},
      {"split.protocol", "blended"},
      {"split.quality_fraction", "0.25"},
      {"teacher.embedder", "oracle"},
      {"teacher.embed_dir", ""},
      {"teacher.dim", "16"},
      {"teacher.noise", "0.25"},
      {"teacher.temperature", "0.1"},
      {"teacher.seed", "7"},
      {"prompt.templates", "a photo of a {}|a rendering of a {}"},
      {"prompt.subset", "full"},
      {"prompt.concepts", ""},
      {"train.tau_in", "0.95"},
      {"train.tau_out", "0"},
      {"train.lambda_out", "1"},
      {"train.batch_labeled", "8"},
      {"train.batch_unlabeled_in", "8"},
      {"train.batch_unlabeled_out", "8"},
      {"train.epochs", "10"},
      {"train.lr", "0.05"},
      {"train.momentum", "0.9"},
      {"train.poly_power", "0.9"},
      {"train.crop_size", "40"},
      {"train.cutmix_prob", "0.8"},
      {"train.channels", "16"},
      {"train.teacher", "ovs"},
      {"sweep.axis", "tau_out"},
      {"sweep.grid", "0,0.25,0.5,0.75,0.95"},
      {"sweep.seeds", "3"},
  };
  return kDefaults;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.values_ = default_values();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  ExperimentConfig cfg = defaults();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    try {
      cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& ex) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!default_values().count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int ExperimentConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  }
}

double ExperimentConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
  }
}

std::vector<std::string> ExperimentConfig::get_list(const std::string& key, char sep) const {
  const std::string& v = get(key);
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::string field;
  std::istringstream ss(v);
  while (std::getline(ss, field, sep)) out.push_back(trim(field));
  return out;
}

std::string ExperimentConfig::serialized() const {
  std::string out;
  // out.dir is filesystem placement, not experiment identity: excluding it
  // keeps run artifacts (and the config hash stored inside checkpoints)
  // byte-identical no matter where the outputs land, and the snapshot saved
  // inside a run directory never pins its own path.
  for (const auto& [k, v] : values_)  // std::map keeps keys sorted
    if (k != "out.dir") out += k + " = " + v + "\n";
  return out;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(serialized()); }

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config snapshot " + path.string());
  out << serialized();
}

SceneSpec ExperimentConfig::scene_spec() const {
  SceneSpec spec;
  spec.height = get_int("scene.height");
  spec.width = get_int("scene.width");
  spec.in_class_names = get_list("scene.in_classes");
  spec.ood_class_names = get_list("scene.ood_classes");
  spec.shapes_min = get_int("scene.shapes_min");
  spec.shapes_max = get_int("scene.shapes_max");
  const std::string& shift = get("scene.appearance_shift");
  if (shift == "none") spec.appearance_shift = AppearanceShift::kNone;
  else if (shift == "palette") spec.appearance_shift = AppearanceShift::kPalette;
  else if (shift == "texture") spec.appearance_shift = AppearanceShift::kTexture;
  else throw ConfigError("scene.appearance_shift: unknown value '" + shift + "'");
  spec.seed = get_u64("seed");
  spec.validate();
  return spec;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.tau_in = get_double("train.tau_in");
  t.tau_out = get_double("train.tau_out");
  t.lambda_out = get_double("train.lambda_out");
  t.batch_labeled = get_int("train.batch_labeled");
  t.batch_unlabeled_in = get_int("train.batch_unlabeled_in");
  t.batch_unlabeled_out = get_int("train.batch_unlabeled_out");
  t.epochs = get_int("train.epochs");
  t.learning_rate = get_double("train.lr");
  t.momentum = get_double("train.momentum");
  t.poly_power = get_double("train.poly_power");
  t.crop_size = get_int("train.crop_size");
  t.cutmix_prob = get_double("train.cutmix_prob");
  t.seed = get_u64("seed");
  const std::string& teacher = get("train.teacher");
  if (teacher == "ovs") t.teacher = TeacherSource::kOvs;
  else if (teacher == "self") t.teacher = TeacherSource::kSelf;
  else throw ConfigError("train.teacher: unknown value '" + teacher + "' (ovs|self)");
  t.validate();
  return t;
}

std::map<std::string, std::vector<std::string>> ExperimentConfig::concept_table() const {
  std::map<std::string, std::vector<std::string>> table;
  for (const std::string& entry : get_list("prompt.concepts", '|')) {
    const auto colon = entry.find(':');
    if (colon == std::string::npos)
      throw ConfigError("prompt.concepts: entry '" + entry + "' needs 'class:phrase;phrase'");
    const std::string name = trim(entry.substr(0, colon));
    std::vector<std::string> phrases;
    std::string phrase;
    std::istringstream ss(entry.substr(colon + 1));
    while (std::getline(ss, phrase, ';'))
      if (!trim(phrase).empty()) phrases.push_back(trim(phrase));
    if (name.empty() || phrases.empty())
      throw ConfigError("prompt.concepts: entry '" + entry + "' has empty class or phrases");
    table[name] = phrases;
  }
  return table;
}

PromptSet ExperimentConfig::prompt_set() const {
  const auto targets = get_list("scene.in_classes");
  std::vector<std::string> extras = get_list("scene.ood_classes");
  const std::string& subset = get("prompt.subset");
  if (subset == "targets_only") {
    extras.clear();
  } else if (subset == "half") {
    extras.resize((extras.size() + 1) / 2);
  } else if (subset != "full") {
    throw ConfigError("prompt.subset: unknown value '" + subset +
                      "' (targets_only|half|full)");
  }
  auto concepts = concept_table();
  // drop concept entries for classes excluded by the subset
  for (auto it = concepts.begin(); it != concepts.end();) {
    const bool known = std::find(targets.begin(), targets.end(), it->first) != targets.end() ||
                       std::find(extras.begin(), extras.end(), it->first) != extras.end();
    it = known ? std::next(it) : concepts.erase(it);
  }
  return build_prompt_set(targets, extras, get_list("prompt.templates", '|'), concepts);
}

std::unique_ptr<Embedder> ExperimentConfig::make_embedder() const {
  const std::string& kind = get("teacher.embedder");
  const int dim = get_int("teacher.dim");
  if (kind == "oracle") {
    auto emb = std::make_unique<OracleEmbedder>(get_list("scene.in_classes"),
                                                get_list("scene.ood_classes"), dim,
                                                get_double("teacher.noise"),
                                                get_u64("teacher.seed"));
    // concept phrases resolve to their class's vector
    for (const auto& [name, phrases] : concept_table())
      for (const auto& phrase : phrases) emb->register_alias(phrase, name);
    return emb;
  }
  if (kind == "file") {
    const std::string& dir = get("teacher.embed_dir");
    if (dir.empty()) throw ConfigError("teacher.embed_dir required for the file embedder");
    return std::make_unique<FileEmbedder>(dir, dim);
  }
  throw ConfigError("teacher.embedder: unknown value '" + kind + "' (oracle|file)");
}

std::filesystem::path ExperimentConfig::out_root() const {
  const std::string& dir = get("out.dir");
  if (!dir.empty()) return dir;
  if (const char* env = std::getenv("SOVS_OUT_ROOT"); env && *env) return env;
  return "sovs_out";
}

void apply_sweep_setting(ExperimentConfig& cfg, const std::string& axis,
                         const std::string& setting) {
  if (axis == "tau_out") {
    cfg.set("train.tau_out", setting);
  } else if (axis == "lambda_out") {
    cfg.set("train.lambda_out", setting);
  } else if (axis == "prompt_subset") {
    cfg.set("prompt.subset", setting);
  } else if (axis == "teacher_source") {
    cfg.set("train.teacher", setting);
  } else if (axis == "n_unlabeled_out") {
    cfg.set("data.n_ood", setting);
    if (cfg.get_int("data.n_ood") == 0) cfg.set("train.batch_unlabeled_out", "0");
  } else {
    throw ConfigError("unknown sweep axis '" + axis +
                      "' (tau_out|lambda_out|prompt_subset|teacher_source|n_unlabeled_out)");
  }
}

}  // namespace sovs
