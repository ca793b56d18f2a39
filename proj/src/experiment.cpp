#include "cloe/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "cloe/manifest.hpp"
#include "cloe/rng.hpp"
#include "json.hpp"

namespace cloe::experiment {

using json = nlohmann::ordered_json;

namespace {

// Sub-stream tags for mix_seed(run seed, tag).
enum Stream : std::uint64_t {
  kTrainData = 1,
  kTestData = 2,
  kQualityData = 3,
  kValSplit = 4,
  kScorer = 5,
  kScorerSplit = 6,
  kModelInit = 7,
  kTraining = 8,
};

// Reads one JSON object and rejects any key nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path(key) + ": wrong type");
    }
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + path(it.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

nn::LrSchedule parse_schedule(const json& j, const std::string& where, nn::LrSchedule s) {
  if (j.is_string()) {
    const auto kind = j.get<std::string>();
    if (kind == "cosine") s.kind = nn::ScheduleKind::Cosine;
    else if (kind == "step") s.kind = nn::ScheduleKind::Step;
    else throw ConfigError(where + ": unknown schedule '" + kind + "'");
    return s;
  }
  Fields f(j, where);
  std::string kind = s.kind == nn::ScheduleKind::Cosine ? "cosine" : "step";
  f.get("kind", kind);
  if (kind == "cosine") s.kind = nn::ScheduleKind::Cosine;
  else if (kind == "step") s.kind = nn::ScheduleKind::Step;
  else throw ConfigError(f.path("kind") + ": unknown schedule '" + kind + "'");
  f.get("lr_min", s.lr_min);
  f.get("t_max", s.t_max);
  f.get("period", s.period);
  f.get("gamma", s.gamma);
  f.finish();
  return s;
}

json schedule_json(const nn::LrSchedule& s) {
  json j;
  j["kind"] = s.kind == nn::ScheduleKind::Cosine ? "cosine" : "step";
  j["lr_min"] = s.lr_min;
  j["t_max"] = s.t_max;
  j["period"] = s.period;
  j["gamma"] = s.gamma;
  return j;
}

augment::AugmentConfig parse_augmentation(const json& j, augment::AugmentConfig a) {
  if (j.is_string()) {
    a.kind = augment::parse_kind(j.get<std::string>());
    return a;
  }
  Fields f(j, "augmentation");
  std::string kind(augment::to_string(a.kind));
  f.get("kind", kind);
  a.kind = augment::parse_kind(kind);
  f.get("mixup_alpha", a.mixup_alpha);
  f.get("cutmix_alpha", a.cutmix_alpha);
  if (f.has("resizemix_scale")) {
    std::vector<double> range;
    f.get("resizemix_scale", range);
    if (range.size() != 2) throw ConfigError("augmentation.resizemix_scale: expected [lo, hi]");
    a.resizemix_scale_lo = range[0];
    a.resizemix_scale_hi = range[1];
  }
  f.get("resize_source_region", a.resize_source_region);
  f.get("hflip", a.hflip);
  f.get("random_resized_crop", a.random_resized_crop);
  f.finish();
  return a;
}

json augmentation_json(const augment::AugmentConfig& a) {
  json j;
  j["kind"] = augment::to_string(a.kind);
  j["mixup_alpha"] = a.mixup_alpha;
  j["cutmix_alpha"] = a.cutmix_alpha;
  j["resizemix_scale"] = {a.resizemix_scale_lo, a.resizemix_scale_hi};
  j["resize_source_region"] = a.resize_source_region;
  j["hflip"] = a.hflip;
  j["random_resized_crop"] = a.random_resized_crop;
  return j;
}

SyntheticData parse_synthetic(const json& j) {
  SyntheticData d;
  Fields f(j, "data.synthetic");
  f.get("num_classes", d.train.num_classes);
  f.get("class_counts", d.train.class_counts);
  f.get("test_class_counts", d.test_class_counts);
  f.get("height", d.train.height);
  f.get("width", d.train.width);
  f.get("channels", d.train.channels);
  f.get("quality_mix", d.train.quality_mix);
  f.get("noise_flip_prob", d.train.noise_flip_prob);
  f.get("test_noise_flip_prob", d.test_noise_flip_prob);
  f.get("quality_set_size", d.quality_set_size);
  f.get("quality_set_noisy_fraction", d.quality_set_noisy_fraction);
  f.finish();
  return d;
}

json synthetic_json(const SyntheticData& d) {
  json j;
  j["num_classes"] = d.train.num_classes;
  j["class_counts"] = d.train.class_counts;
  j["test_class_counts"] = d.test_class_counts;
  j["height"] = d.train.height;
  j["width"] = d.train.width;
  j["channels"] = d.train.channels;
  j["quality_mix"] = d.train.quality_mix;
  j["noise_flip_prob"] = d.train.noise_flip_prob;
  j["test_noise_flip_prob"] = d.test_noise_flip_prob;
  j["quality_set_size"] = d.quality_set_size;
  j["quality_set_noisy_fraction"] = d.quality_set_noisy_fraction;
  return j;
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.is_absolute() || base.empty()) return p;
  return base / p;
}

quality::ScorerHyper parse_scorer(const json& j, quality::ScorerHyper h) {
  Fields f(j, "quality_scorer");
  f.get("epochs", h.epochs);
  f.get("batch_size", h.batch_size);
  f.get("base_lr", h.base_lr);
  f.get("momentum", h.momentum);
  f.get("weight_decay", h.weight_decay);
  if (f.has("schedule")) h.schedule = parse_schedule(f.raw("schedule"), "quality_scorer.schedule", h.schedule);
  f.finish();
  return h;
}

json scorer_json(const quality::ScorerHyper& h) {
  json j;
  j["epochs"] = h.epochs;
  j["batch_size"] = h.batch_size;
  j["base_lr"] = h.base_lr;
  j["momentum"] = h.momentum;
  j["weight_decay"] = h.weight_decay;
  j["schedule"] = schedule_json(h.schedule);
  return j;
}

json metrics_json(const metrics::MetricsReport& r) { return json::parse(r.to_json()); }

std::vector<std::size_t> positions_of(const Dataset& ds, const std::vector<std::string>& ids) {
  std::unordered_map<std::string_view, std::size_t> pos;
  pos.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) pos.emplace(ds.samples[i].id, i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = pos.find(id);
    if (it == pos.end()) throw DataError("unknown training id '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

std::vector<int> labels_of(const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples) out.push_back(s.label);
  return out;
}

std::vector<int> even_counts(int total, int k) {
  std::vector<int> out(static_cast<std::size_t>(k), total / k);
  for (int i = 0; i < total % k; ++i) ++out[static_cast<std::size_t>(i)];
  return out;
}

struct LoadedData {
  Dataset train;
  Dataset val;
  Dataset test;
  // Binary clean/noisy sets for the scorer.
  Dataset quality_train;
  Dataset quality_val;
  std::string quality_key;
};

std::pair<Dataset, Dataset> split_quality(const Dataset& binary, std::uint64_t seed) {
  return split_train_val(binary, 0.1, mix_seed(seed, kScorerSplit));
}

LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData d;
  if (cfg.synthetic) {
    GeneratedData g = generate(*cfg.synthetic, cfg.seed);
    std::tie(d.train, d.val) = split_train_val(g.train, cfg.val_fraction, mix_seed(cfg.seed, kValSplit));
    d.test = std::move(g.test);
    std::tie(d.quality_train, d.quality_val) =
        split_quality(quality::make_quality_training_set(g.quality), cfg.seed);
    d.quality_key = synthetic_json(*cfg.synthetic).dump();
    return d;
  }

  const ManifestData& m = *cfg.manifest;
  const std::vector<Dataset> splits = manifest::read_all(m.manifest, m.num_classes);
  std::optional<Dataset> train, val, test;
  for (const auto& s : splits) {
    if (s.split == Split::Train) train = s;
    if (s.split == Split::Val) val = s;
    if (s.split == Split::Test) test = s;
  }
  if (!train) throw DataError(m.manifest.string() + ": no train rows");
  if (!test) throw DataError(m.manifest.string() + ": no test rows");
  if (val) {
    d.train = std::move(*train);
    d.val = std::move(*val);
  } else {
    std::tie(d.train, d.val) = split_train_val(*train, cfg.val_fraction, mix_seed(cfg.seed, kValSplit));
  }
  d.test = std::move(*test);

  Dataset qsource;
  if (m.quality_manifest) {
    qsource = manifest::read(*m.quality_manifest, {std::optional<int>(2), std::nullopt});
  } else {
    // Scorer learns from the ground truth on the training split itself.
    qsource = d.train;
  }
  std::tie(d.quality_train, d.quality_val) = split_quality(quality::make_quality_training_set(qsource), cfg.seed);
  d.quality_key = m.manifest.string() + "|" + (m.quality_manifest ? m.quality_manifest->string() : "");
  return d;
}

void log(const RunOptions& opts, const std::string& msg) {
  if (!opts.quiet) std::cerr << msg << '\n';
}

}  // namespace

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == manifest.has_value()) {
    throw ConfigError("data: give exactly one of 'synthetic' or 'manifest'");
  }
  if (synthetic) {
    synthetic->train.validate();
    if (synthetic->test_class_counts.size() != static_cast<std::size_t>(synthetic->train.num_classes)) {
      throw ConfigError("data.synthetic.test_class_counts must have num_classes entries");
    }
    for (int c : synthetic->test_class_counts) {
      if (c < 0) throw ConfigError("data.synthetic.test_class_counts must be non-negative");
    }
    if (!(synthetic->test_noise_flip_prob >= 0.0 && synthetic->test_noise_flip_prob <= 1.0)) {
      throw ConfigError("data.synthetic.test_noise_flip_prob must lie in [0, 1]");
    }
    if (synthetic->quality_set_size < 2 * synthetic->train.num_classes) {
      throw ConfigError("data.synthetic.quality_set_size too small");
    }
    if (!(synthetic->quality_set_noisy_fraction > 0.0 && synthetic->quality_set_noisy_fraction < 1.0)) {
      throw ConfigError("data.synthetic.quality_set_noisy_fraction must lie in (0, 1)");
    }
  }
  if (manifest && manifest->manifest.empty()) throw ConfigError("data.manifest: empty path");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs_per_phase < 1) throw ConfigError("max_epochs_per_phase must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  schedule.validate();
  scorer.schedule.validate();
  if (scorer.epochs < 1 || scorer.batch_size < 1 || !(scorer.base_lr > 0.0)) {
    throw ConfigError("quality_scorer: epochs, batch_size and base_lr must be positive");
  }
  const auto& a = augmentation;
  if (!(a.mixup_alpha > 0.0) || !(a.cutmix_alpha > 0.0)) throw ConfigError("augmentation alphas must be > 0");
  if (!(a.resizemix_scale_lo > 0.0 && a.resizemix_scale_lo <= a.resizemix_scale_hi && a.resizemix_scale_hi < 1.0)) {
    throw ConfigError("augmentation.resizemix_scale must satisfy 0 < lo <= hi < 1");
  }
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.synthetic = SyntheticData{};
  return cfg;
}

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Fields f(j, "config");

  if (!f.has("data")) throw ConfigError("config.data is required");
  {
    Fields d(f.raw("data"), "data");
    if (d.has("synthetic")) cfg.synthetic = parse_synthetic(d.raw("synthetic"));
    if (d.has("manifest")) {
      ManifestData m;
      std::string p;
      d.get("manifest", p);
      m.manifest = resolve(p, base_dir);
      if (d.has("num_classes")) {
        int k = 0;
        d.get("num_classes", k);
        m.num_classes = k;
      }
      if (d.has("quality_manifest")) {
        std::string q;
        d.get("quality_manifest", q);
        m.quality_manifest = resolve(q, base_dir);
      }
      cfg.manifest = std::move(m);
    }
    d.finish();
  }

  if (f.has("protocol")) {
    std::string p;
    f.get("protocol", p);
    cfg.protocol = curriculum::parse_protocol(p);
  }
  if (f.has("augmentation")) cfg.augmentation = parse_augmentation(f.raw("augmentation"), cfg.augmentation);
  f.get("tau", cfg.tau);
  f.get("patience", cfg.patience);
  f.get("max_epochs_per_phase", cfg.max_epochs_per_phase);
  f.get("batch_size", cfg.batch_size);
  f.get("base_lr", cfg.base_lr);
  f.get("momentum", cfg.momentum);
  f.get("weight_decay", cfg.weight_decay);
  if (f.has("schedule")) cfg.schedule = parse_schedule(f.raw("schedule"), "schedule", cfg.schedule);
  f.get("lr_restart_per_phase", cfg.lr_restart_per_phase);
  f.get("select_best_checkpoint", cfg.select_best_checkpoint);
  f.get("val_fraction", cfg.val_fraction);
  if (f.has("quality_scorer")) cfg.scorer = parse_scorer(f.raw("quality_scorer"), cfg.scorer);
  f.get("seed", cfg.seed);
  if (f.has("output_dir")) {
    std::string out;
    f.get("output_dir", out);
    cfg.output_dir = out;
  }
  if (f.has("grid")) {
    Fields g(f.raw("grid"), "grid");
    std::vector<std::string> names;
    if (g.has("protocols")) {
      g.get("protocols", names);
      for (const auto& n : names) cfg.grid_protocols.push_back(curriculum::parse_protocol(n));
    }
    names.clear();
    if (g.has("augmentations")) {
      g.get("augmentations", names);
      for (const auto& n : names) cfg.grid_augmentations.push_back(augment::parse_kind(n));
    }
    g.get("seeds", cfg.grid_seeds);
    g.finish();
  }
  f.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  json data;
  if (cfg.synthetic) data["synthetic"] = synthetic_json(*cfg.synthetic);
  if (cfg.manifest) {
    data["manifest"] = cfg.manifest->manifest.string();
    if (cfg.manifest->num_classes) data["num_classes"] = *cfg.manifest->num_classes;
    if (cfg.manifest->quality_manifest) data["quality_manifest"] = cfg.manifest->quality_manifest->string();
  }
  j["data"] = data;
  j["protocol"] = curriculum::to_string(cfg.protocol);
  j["augmentation"] = augmentation_json(cfg.augmentation);
  j["tau"] = cfg.tau;
  j["patience"] = cfg.patience;
  j["max_epochs_per_phase"] = cfg.max_epochs_per_phase;
  j["batch_size"] = cfg.batch_size;
  j["base_lr"] = cfg.base_lr;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["schedule"] = schedule_json(cfg.schedule);
  j["lr_restart_per_phase"] = cfg.lr_restart_per_phase;
  j["select_best_checkpoint"] = cfg.select_best_checkpoint;
  j["val_fraction"] = cfg.val_fraction;
  j["quality_scorer"] = scorer_json(cfg.scorer);
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  if (!cfg.grid_protocols.empty() || !cfg.grid_augmentations.empty() || !cfg.grid_seeds.empty()) {
    json g;
    json p = json::array(), a = json::array();
    for (auto x : cfg.grid_protocols) p.push_back(curriculum::to_string(x));
    for (auto x : cfg.grid_augmentations) a.push_back(augment::to_string(x));
    g["protocols"] = p;
    g["augmentations"] = a;
    g["seeds"] = cfg.grid_seeds;
    j["grid"] = g;
  }
  return j.dump(2);
}

GeneratedData generate(const SyntheticData& data, std::uint64_t seed) {
  GeneratedData g;
  synth::SynthConfig tr = data.train;
  tr.seed = mix_seed(seed, kTrainData);
  tr.id_prefix = "tr";
  tr.split = Split::Train;
  g.train = synth::generate_dataset(tr);

  synth::SynthConfig te = data.train;
  te.class_counts = data.test_class_counts;
  te.noise_flip_prob = data.test_noise_flip_prob;
  te.seed = mix_seed(seed, kTestData);
  te.id_prefix = "te";
  te.split = Split::Test;
  g.test = synth::generate_dataset(te);

  synth::SynthConfig q = data.train;
  q.class_counts = even_counts(data.quality_set_size, q.num_classes);
  q.quality_mix.assign(static_cast<std::size_t>(q.num_classes), data.quality_set_noisy_fraction);
  q.noise_flip_prob = 0.0;
  q.seed = mix_seed(seed, kQualityData);
  q.id_prefix = "q";
  q.split = Split::Train;
  g.quality = synth::generate_dataset(q);
  return g;
}

const quality::ScorerResult* ScorerCache::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

const quality::ScorerResult& ScorerCache::insert(const std::string& key, quality::ScorerResult r) {
  return entries_.insert_or_assign(key, std::move(r)).first->second;
}

std::string RunReport::to_json() const {
  json j;
  j["config"] = json::parse(config_json);
  j["quality_scorer"] = {{"val_accuracy", scorer.val_accuracy},
                         {"val_auc", scorer.val_auc},
                         {"train_clean", scorer.train_clean},
                         {"train_noisy", scorer.train_noisy}};
  json cq = json::array();
  for (std::size_t k = 0; k < class_quality.size(); ++k) {
    cq.push_back({{"class", k}, {"clean", class_quality[k].clean}, {"noisy", class_quality[k].noisy}});
  }
  j["class_quality"] = cq;
  j["sizes"] = {{"train", train_size}, {"val", val_size}, {"test", test_size},
                {"clean", clean_size}, {"noisy", noisy_size}};
  json phases = json::array();
  for (const auto& e : phase_log) {
    phases.push_back({{"phase", curriculum::to_string(e.phase)},
                      {"epoch", e.epoch},
                      {"val_acc", e.val_acc},
                      {"transitioned", e.transitioned}});
  }
  j["phase_log"] = phases;
  json ep = json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"phase", curriculum::to_string(e.phase)},
                  {"train_size", e.train_size},
                  {"lr", e.lr},
                  {"train_loss", e.train_loss},
                  {"val_acc", e.val_acc},
                  {"val_qwk", e.val_qwk}});
  }
  j["epochs"] = ep;
  j["best_epoch"] = best_epoch;
  j["test"] = test ? metrics_json(*test) : json(nullptr);
  j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

std::string embeddings_csv(const nn::TinyCNN& model, const Dataset& ds) {
  const nn::Evaluation ev = nn::evaluate(model, ds);
  std::ostringstream os;
  os << "id,true_label";
  for (int f = 1; f <= ev.feature_dim; ++f) os << ",f_" << f;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.samples[i].id << ',' << ds.samples[i].label;
    for (float v : ev.features[i]) os << ',' << format_real(v);
    os << '\n';
  }
  return os.str();
}

void export_embeddings(const nn::TinyCNN& model, const Dataset& ds, const std::filesystem::path& path) {
  write_text(path, embeddings_csv(model, ds));
}

std::string predictions_csv(const nn::Evaluation& ev, const Dataset& ds) {
  std::ostringstream os;
  os << "id,true_label";
  for (int k = 0; k < ev.num_classes; ++k) os << ",p_" << k;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.samples[i].id << ',' << ds.samples[i].label;
    for (double p : ev.probs[i]) os << ',' << format_real(p);
    os << '\n';
  }
  return os.str();
}

Predictions read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read predictions " + path.string());
  Predictions out;
  std::string line;
  std::size_t row = 0;
  std::vector<std::size_t> prob_cols;
  std::size_t id_col = 0;
  bool have_id = false;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (row == 1) {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c] == "id") {
          id_col = c;
          have_id = true;
        } else if (cells[c].rfind("p_", 0) == 0) {
          prob_cols.push_back(c);
        }
      }
      if (!have_id || prob_cols.size() < 2) throw ParseError("predictions header needs id and p_0..p_{K-1}", row);
      continue;
    }
    if (cells.size() <= std::max(id_col, prob_cols.back())) throw ParseError("predictions: short row", row);
    out.ids.push_back(cells[id_col]);
    std::vector<double> p;
    for (std::size_t c : prob_cols) {
      try {
        std::size_t used = 0;
        p.push_back(std::stod(cells[c], &used));
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("predictions: bad probability '" + cells[c] + "'", row);
      }
    }
    out.probs.push_back(std::move(p));
  }
  if (row == 0) throw ParseError("predictions: empty file", 0);
  return out;
}

RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep;
  rep.config_json = config_to_json(cfg);

  LoadedData data = load_data(cfg);
  rep.train_size = data.train.size();
  rep.val_size = data.val.size();
  rep.test_size = data.test.size();
  if (data.val.empty()) throw DataError("validation split is empty");

  // Quality scorer.
  quality::ScorerHyper hyper = cfg.scorer;
  hyper.seed = mix_seed(cfg.seed, kScorer);
  const std::string cache_key = data.quality_key + "|" + scorer_json(cfg.scorer).dump() + "|" + std::to_string(cfg.seed);
  const quality::ScorerResult* scorer = opts.scorer_cache ? opts.scorer_cache->find(cache_key) : nullptr;
  std::optional<quality::ScorerResult> local;
  if (!scorer) {
    log(opts, "training quality scorer on " + std::to_string(data.quality_train.size()) + " samples");
    quality::ScorerResult r = quality::train_quality_scorer(data.quality_train, data.quality_val, hyper);
    if (opts.scorer_cache) {
      scorer = &opts.scorer_cache->insert(cache_key, std::move(r));
    } else {
      local = std::move(r);
      scorer = &*local;
    }
  }
  const auto qc = quality::count_quality_labels(data.quality_train);
  rep.scorer = {scorer->val_accuracy, scorer->val_auc, qc.clean, qc.noisy};
  log(opts, "scorer val acc " + format_real(scorer->val_accuracy) + ", auc " + format_real(scorer->val_auc));

  const auto scores = quality::score_all(scorer->model, data.train);
  rep.class_quality = quality::quality_distribution_by_class(data.train, scores, cfg.tau);
  const curriculum::Partition part = curriculum::partition(data.train, scores, cfg.tau);
  rep.clean_size = part.clean_ids.size();
  rep.noisy_size = part.noisy_ids.size();
  const auto schedule = curriculum::protocol_schedule(cfg.protocol, part);
  if (schedule.empty()) throw DataError("protocol schedule is empty");

  // Classifier.
  nn::ModelShape shape;
  const ImageTensor& first = data.train.samples.front().image;
  shape.channels = first.channels;
  shape.height = first.height;
  shape.width = first.width;
  shape.num_classes = data.train.num_classes;
  nn::TinyCNN model = nn::init_model<float>(shape, mix_seed(cfg.seed, kModelInit));
  nn::OptimState optim = nn::OptimState::for_model(model, cfg.momentum, cfg.weight_decay);
  nn::TrainOptions topts;
  topts.batch_size = cfg.batch_size;
  topts.base_lr = cfg.base_lr;
  topts.schedule = cfg.schedule;
  topts.augment = cfg.augmentation;
  topts.seed = mix_seed(cfg.seed, kTraining);

  std::vector<curriculum::Phase> seq;
  std::vector<std::vector<std::size_t>> phase_positions;
  std::set<std::string> trained;
  for (const auto& sp : schedule) {
    seq.push_back(sp.phase);
    phase_positions.push_back(positions_of(data.train, sp.ids));
    for (const auto& id : sp.ids) {
      if (trained.insert(id).second) rep.trained_ids.push_back(id);
    }
  }
  curriculum::PhaseState state = curriculum::PhaseState::start(seq, cfg.patience, cfg.max_epochs_per_phase);
  const std::vector<int> val_truth = labels_of(data.val);
  nn::TinyCNN best = model;
  double best_acc = -1.0;
  while (!state.done()) {
    const std::size_t idx = state.index;
    const int lr_epoch = cfg.lr_restart_per_phase ? state.epochs_in_phase : state.epoch;
    // Shuffle order follows the global epoch; only the LR clock may restart.
    nn::TrainOptions eo = topts;
    eo.base_lr = nn::lr_at(cfg.schedule, lr_epoch, cfg.base_lr);
    eo.schedule = nn::LrSchedule{nn::ScheduleKind::Step, 0.0, 1, 1, 1.0};  // constant
    const nn::EpochResult er = nn::train_epoch(model, optim, phase_positions[idx], data.train, eo, state.epoch);
    const nn::Evaluation ev = nn::evaluate(model, data.val);
    const auto vm = metrics::report(ev.probs, val_truth, shape.num_classes);

    EpochRecord rec{state.phase, state.epoch, static_cast<int>(phase_positions[idx].size()), er.lr, er.mean_loss,
                    vm.top1_acc, vm.qwk};
    rep.epochs.push_back(rec);
    if (vm.top1_acc > best_acc) {
      best_acc = vm.top1_acc;
      best = model;
      rep.best_epoch = state.epoch;
    }
    log(opts, std::string(curriculum::to_string(state.phase)) + " epoch " + std::to_string(state.epoch) + " lr " +
                  format_real(er.lr) + " loss " + format_real(er.mean_loss) + " val_acc " + format_real(vm.top1_acc) +
                  " val_qwk " + format_real(vm.qwk));
    state = curriculum::advance(std::move(state), vm.top1_acc);
  }
  rep.phase_log = state.log;
  if (cfg.select_best_checkpoint) model = best;

  const nn::Evaluation test_ev = nn::evaluate(model, data.test);
  rep.test = metrics::report(test_ev.probs, labels_of(data.test), shape.num_classes);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log(opts, "test acc " + format_real(rep.test->top1_acc) + " qwk " + format_real(rep.test->qwk));

  if (opts.write_artifacts) {
    const auto& out = cfg.output_dir;
    std::filesystem::create_directories(out);
    write_text(out / "report.json", rep.to_json());
    write_text(out / "metrics.csv", metrics::MetricsReport::csv_header() + "\n" + rep.test->csv_row() + "\n");
    write_text(out / "phases.csv", curriculum::phase_log_csv(rep.phase_log));
    write_text(out / "quality_scores.csv", quality::scores_csv(scores, cfg.tau));
    write_text(out / "embeddings.csv", embeddings_csv(model, data.test));
    write_text(out / "confusion.csv", rep.test->confusion.to_csv());
    write_text(out / "predictions.csv", predictions_csv(test_ev, data.test));
    nn::save_checkpoint(model, out / "model.cloe");
    nn::save_checkpoint(scorer->model, out / "quality_model.cloe");
  }
  return rep;
}

std::vector<std::string> metric_columns() {
  return {"top1_acc", "top2_acc", "f1_macro", "f1_micro", "precision_macro", "recall_macro", "specificity_macro",
          "qwk"};
}

std::vector<double> metric_values(const metrics::MetricsReport& r) {
  return {r.top1_acc, r.top2_acc, r.f1_macro, r.f1_micro, r.precision_macro, r.recall_macro, r.specificity_macro,
          r.qwk};
}

std::vector<GridAggregate> aggregate(const std::vector<GridRow>& rows) {
  std::vector<GridAggregate> out;
  const std::size_t m = metric_columns().size();
  for (const auto& row : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const GridAggregate& a) {
      return a.protocol == row.protocol && a.augmentation == row.augmentation;
    });
    if (it == out.end()) {
      out.push_back({row.protocol, row.augmentation, 0, std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)});
      it = std::prev(out.end());
    }
  }
  for (auto& agg : out) {
    std::vector<std::vector<double>> vals;
    for (const auto& row : rows) {
      if (row.protocol == agg.protocol && row.augmentation == agg.augmentation && row.test) {
        vals.push_back(metric_values(*row.test));
      }
    }
    agg.n = vals.size();
    if (vals.empty()) continue;
    const double n = static_cast<double>(vals.size());
    for (std::size_t c = 0; c < m; ++c) {
      double sum = 0.0;
      for (const auto& v : vals) sum += v[c];
      agg.mean[c] = sum / n;
      double ss = 0.0;
      for (const auto& v : vals) ss += (v[c] - agg.mean[c]) * (v[c] - agg.mean[c]);
      agg.stddev[c] = vals.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
  }
  return out;
}

std::string GridResult::to_csv() const {
  const auto cols = metric_columns();
  std::ostringstream os;
  os << "row_type,protocol,augmentation,seed,status,n";
  for (const auto& c : cols) os << ',' << c;
  for (const auto& c : cols) os << ',' << c << "_std";
  os << '\n';
  for (const auto& r : rows) {
    os << "run," << curriculum::to_string(r.protocol) << ',' << augment::to_string(r.augmentation) << ',' << r.seed
       << ',';
    // Status text may contain commas from error messages.
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    os << status << ',' << (r.test ? 1 : 0);
    if (r.test) {
      for (double v : metric_values(*r.test)) os << ',' << format_real(v);
    } else {
      for (std::size_t c = 0; c < cols.size(); ++c) os << ',';
    }
    for (std::size_t c = 0; c < cols.size(); ++c) os << ',';
    os << '\n';
  }
  for (const auto& a : aggregates) {
    os << "aggregate," << curriculum::to_string(a.protocol) << ',' << augment::to_string(a.augmentation) << ",,ok,"
       << a.n;
    for (double v : a.mean) os << ',' << (a.n ? format_real(v) : "");
    for (double v : a.stddev) os << ',' << (a.n ? format_real(v) : "");
    os << '\n';
  }
  return os.str();
}

GridResult run_grid(const ExperimentConfig& base, std::vector<curriculum::Protocol> protocols,
                    std::vector<augment::Kind> augmentations, std::vector<std::uint64_t> seeds,
                    const RunOptions& opts) {
  if (protocols.empty() || augmentations.empty() || seeds.empty()) {
    throw ConfigError("grid: protocols, augmentations and seeds must be non-empty");
  }
  auto by_name = [](auto a, auto b) { return to_string(a) < to_string(b); };
  std::sort(protocols.begin(), protocols.end(), by_name);
  std::sort(augmentations.begin(), augmentations.end(), by_name);
  std::sort(seeds.begin(), seeds.end());

  GridResult res;
  ScorerCache local_cache;
  RunOptions ro = opts;
  if (!ro.scorer_cache) ro.scorer_cache = &local_cache;
  for (auto p : protocols) {
    for (auto a : augmentations) {
      for (auto s : seeds) {
        ExperimentConfig cfg = base;
        cfg.protocol = p;
        cfg.augmentation.kind = a;
        cfg.seed = s;
        cfg.output_dir = base.output_dir / (std::string(curriculum::to_string(p)) + "_" +
                                            std::string(augment::to_string(a)) + "_seed" + std::to_string(s));
        GridRow row{p, a, s, "ok", std::nullopt, cfg.output_dir};
        try {
          row.test = run_experiment(cfg, ro).test;
        } catch (const std::exception& e) {
          row.status = std::string("failed: ") + e.what();
        }
        log(opts, std::string(curriculum::to_string(p)) + " " + std::string(augment::to_string(a)) + " seed " +
                      std::to_string(s) + ": " + row.status);
        res.rows.push_back(std::move(row));
      }
    }
  }
  res.aggregates = aggregate(res.rows);
  if (opts.write_artifacts) write_text(base.output_dir / "grid.csv", res.to_csv());
  return res;
}

}  // namespace cloe::experiment
