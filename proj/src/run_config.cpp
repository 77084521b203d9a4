#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "man/cli.hpp"
#include "man/errors.hpp"
#include "man/stats.hpp"

namespace man::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

spdlog::level::level_enum parse_level(const std::string& text) {
  if (text == "error") return spdlog::level::err;
  if (text == "warn") return spdlog::level::warn;
  if (text == "info") return spdlog::level::info;
  if (text == "debug") return spdlog::level::debug;
  throw ConfigError("unknown log level '" + text + "' (expected error, warn, info or debug)");
}

std::shared_ptr<spdlog::logger> make_logger() {
  auto sink = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
  spdlog::level::level_enum level = spdlog::level::warn;
  std::string rejected;
  if (const char* env = std::getenv("MAN_LOG_LEVEL"); env && *env) {
    try {
      level = parse_level(env);
    } catch (const ConfigError&) {
      rejected = env;
    }
  }
  sink->set_level(level);
  auto logger = std::make_shared<spdlog::logger>("man", sink);
  logger->set_level(spdlog::level::debug);
  logger->set_pattern("[%l] %v");
  if (!rejected.empty()) logger->warn("ignoring MAN_LOG_LEVEL='{}'; using warn", rejected);
  return logger;
}

template <class T>
T get_as(const json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + value.dump());
  }
}

std::size_t get_size(const json& value, const std::string& key) {
  if (!value.is_number_unsigned()) {
    throw ConfigError("config key '" + key + "' must be a nonnegative integer, got " +
                      value.dump());
  }
  return value.get<std::size_t>();
}

std::uint64_t get_u64(const json& value, const std::string& key) {
  if (!value.is_number_unsigned()) {
    throw ConfigError("config key '" + key + "' must be a nonnegative integer, got " +
                      value.dump());
  }
  return value.get<std::uint64_t>();
}

std::vector<std::size_t> get_sizes(const json& value, const std::string& key) {
  if (!value.is_array()) throw ConfigError("config key '" + key + "' must be an array");
  std::vector<std::size_t> out;
  for (const auto& v : value) out.push_back(get_size(v, key));
  return out;
}

data::SynthConfig synth_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config key 'synthetic' must be an object");
  data::SynthConfig s;
  for (const auto& [key, v] : j.items()) {
    const std::string k = "synthetic." + key;
    if (key == "n_labeled") s.n_labeled = get_size(v, k);
    else if (key == "n_unlabeled_only") s.n_unlabeled_only = get_size(v, k);
    else if (key == "n_train") s.n_train = get_size(v, k);
    else if (key == "n_dev") s.n_dev = get_size(v, k);
    else if (key == "n_test") s.n_test = get_size(v, k);
    else if (key == "n_unlabeled") s.n_unlabeled = get_size(v, k);
    else if (key == "dim") s.dim = get_size(v, k);
    else if (key == "shared_signal") s.shared_signal = get_as<double>(v, k);
    else if (key == "domain_signal") s.domain_signal = get_as<double>(v, k);
    else if (key == "offset_scale") s.offset_scale = get_as<double>(v, k);
    else if (key == "noise") s.noise = get_as<double>(v, k);
    else if (key == "seed") s.seed = get_u64(v, k);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  return s;
}

json synth_to_json(const data::SynthConfig& s) {
  return json{{"n_labeled", s.n_labeled},     {"n_unlabeled_only", s.n_unlabeled_only},
              {"n_train", s.n_train},         {"n_dev", s.n_dev},
              {"n_test", s.n_test},           {"n_unlabeled", s.n_unlabeled},
              {"dim", s.dim},                 {"shared_signal", s.shared_signal},
              {"domain_signal", s.domain_signal}, {"offset_scale", s.offset_scale},
              {"noise", s.noise},             {"seed", s.seed}};
}

}  // namespace

data::SynthConfig synth_config_from_json(const std::string& text) {
  try {
    return synth_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic config is not valid JSON: ") + e.what());
  }
}

spdlog::logger& log() {
  static const std::shared_ptr<spdlog::logger> logger = make_logger();
  return *logger;
}

void set_console_level(const std::string& level) {
  const auto parsed = parse_level(level);
  for (auto& sink : log().sinks()) {
    if (std::dynamic_pointer_cast<spdlog::sinks::stderr_color_sink_mt>(sink)) sink->set_level(parsed);
  }
}

// ---- RunConfig -------------------------------------------------------------

void RunConfig::validate() const {
  if (manifest.empty() == !synthetic.has_value()) {
    throw ConfigError("config needs exactly one data source: 'manifest' or 'synthetic'");
  }
  if (model.loss != train.loss) throw ConfigError("model and training loss variants differ");
  if (out_dir.empty()) throw ConfigError("'out_dir' must not be empty");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (seeds[i] == seeds[j]) {
        throw ConfigError("seed " + std::to_string(seeds[i]) + " is listed twice");
      }
    }
  }
  if (probe_config.iterations == 0 || probe_config.batch_size == 0 || !(probe_config.lr > 0.0)) {
    throw ConfigError("probe iterations, batch size and learning rate must be positive");
  }
  train.validate();
}

std::vector<std::uint64_t> RunConfig::seed_list() const {
  return seeds.empty() ? std::vector<std::uint64_t>{train.seed} : seeds;
}

RunConfig run_config_from_json(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  auto& m = c.model;
  auto& t = c.train;
  for (const auto& [key, v] : j.items()) {
    if (key == "manifest") {
      const fs::path p = get_as<std::string>(v, key);
      c.manifest = (p.is_absolute() || base_dir.empty() ? p : base_dir / p).lexically_normal().string();
    } else if (key == "synthetic") {
      c.synthetic = synth_from_json(v);
    } else if (key == "fold") {
      c.fold = get_size(v, key);
    } else if (key == "split_seed") {
      c.split_seed = get_u64(v, key);
    } else if (key == "extractor") {
      m.extractor.kind = parse_extractor_kind(get_as<std::string>(v, key));
    } else if (key == "hidden_dims") {
      m.extractor.hidden_dims = get_sizes(v, key);
    } else if (key == "embed_dim") {
      m.extractor.embed_dim = get_size(v, key);
    } else if (key == "kernel_widths") {
      m.extractor.kernel_widths = get_sizes(v, key);
    } else if (key == "kernels_per_width") {
      m.extractor.kernels_per_width = get_size(v, key);
    } else if (key == "shared_dim") {
      m.shared_dim = get_size(v, key);
    } else if (key == "domain_dim") {
      m.domain_dim = get_size(v, key);
    } else if (key == "dropout") {
      m.dropout = get_as<double>(v, key);
    } else if (key == "mode") {
      m.mode = parse_model_mode(get_as<std::string>(v, key));
    } else if (key == "train_embeddings") {
      m.train_embeddings = get_as<bool>(v, key);
    } else if (key == "loss") {
      m.loss = t.loss = parse_loss_variant(get_as<std::string>(v, key));
    } else if (key == "lambda") {
      t.lambda = get_as<double>(v, key);
    } else if (key == "k") {
      t.k = get_size(v, key);
    } else if (key == "lr_main") {
      t.lr_main = get_as<double>(v, key);
    } else if (key == "lr_d") {
      t.lr_d = get_as<double>(v, key);
    } else if (key == "batch_size") {
      t.batch_size = get_size(v, key);
    } else if (key == "max_iterations") {
      t.max_iterations = get_size(v, key);
    } else if (key == "eval_every") {
      t.eval_every = get_size(v, key);
    } else if (key == "patience") {
      t.patience = get_size(v, key);
    } else if (key == "seed") {
      t.seed = get_u64(v, key);
    } else if (key == "unlabeled_source") {
      t.unlabeled_source = parse_unlabeled_source(get_as<std::string>(v, key));
    } else if (key == "seeds") {
      if (!v.is_array()) throw ConfigError("config key 'seeds' must be an array");
      for (const auto& s : v) c.seeds.push_back(get_u64(s, key));
    } else if (key == "probe") {
      c.probe = get_as<bool>(v, key);
    } else if (key == "probe_iterations") {
      c.probe_config.iterations = get_size(v, key);
    } else if (key == "probe_batch_size") {
      c.probe_config.batch_size = get_size(v, key);
    } else if (key == "probe_lr") {
      c.probe_config.lr = get_as<double>(v, key);
    } else if (key == "out_dir") {
      c.out_dir = get_as<std::string>(v, key);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  json j;
  if (c.synthetic) {
    j["synthetic"] = synth_to_json(*c.synthetic);
  } else {
    j["manifest"] = fs::absolute(c.manifest).lexically_normal().string();
  }
  j["fold"] = c.fold;
  j["split_seed"] = c.split_seed;
  j["extractor"] = to_string(m.extractor.kind);
  j["hidden_dims"] = m.extractor.hidden_dims;
  j["embed_dim"] = m.extractor.embed_dim;
  j["kernel_widths"] = m.extractor.kernel_widths;
  j["kernels_per_width"] = m.extractor.kernels_per_width;
  j["shared_dim"] = m.shared_dim;
  j["domain_dim"] = m.domain_dim;
  j["dropout"] = m.dropout;
  j["mode"] = to_string(m.mode);
  j["train_embeddings"] = m.train_embeddings;
  j["loss"] = to_string(t.loss);
  j["lambda"] = t.lambda;
  j["k"] = t.k;
  j["lr_main"] = t.lr_main;
  j["lr_d"] = t.lr_d;
  j["batch_size"] = t.batch_size;
  j["max_iterations"] = t.max_iterations;
  j["eval_every"] = t.eval_every;
  j["patience"] = t.patience;
  j["seed"] = t.seed;
  j["unlabeled_source"] = to_string(t.unlabeled_source);
  j["seeds"] = c.seeds;
  j["probe"] = c.probe;
  j["probe_iterations"] = c.probe_config.iterations;
  j["probe_batch_size"] = c.probe_config.batch_size;
  j["probe_lr"] = c.probe_config.lr;
  j["out_dir"] = c.out_dir;
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return run_config_from_json(buf.str(), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.lambda) cfg.train.lambda = *o.lambda;
  if (o.k) cfg.train.k = *o.k;
  if (o.loss) cfg.model.loss = cfg.train.loss = *o.loss;
  if (o.mode) cfg.model.mode = *o.mode;
  if (o.extractor) cfg.model.extractor.kind = *o.extractor;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.runs) {
    if (*o.runs == 0) throw ConfigError("--runs must be at least 1");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < *o.runs; ++i) cfg.seeds.push_back(cfg.train.seed + i);
  } else if (o.seed) {
    cfg.seeds.clear();
  }
  cfg.validate();
}

// ---- data ------------------------------------------------------------------

Dataset::Dataset(const RunConfig& cfg) : cfg_(cfg) {
  if (cfg_.synthetic) return;
  manifest_ = data::load_manifest(cfg_.manifest);
  raw_ = data::load_raw_domains(manifest_);
  if (cfg_.fold >= manifest_.folds) {
    throw ConfigError("fold " + std::to_string(cfg_.fold) + " is out of range for " +
                      std::to_string(manifest_.folds) + " folds");
  }
}

std::size_t Dataset::folds() const { return cfg_.synthetic ? 1 : manifest_.folds; }

data::DomainSet Dataset::fold(std::size_t index) const {
  if (index >= folds()) {
    throw ConfigError("fold " + std::to_string(index) + " is out of range for " +
                      std::to_string(folds()) + " folds");
  }
  if (cfg_.synthetic) return data::synth_generate(*cfg_.synthetic);
  std::string warning;
  data::DomainSet set = data::assemble_fold(manifest_, raw_, index, cfg_.split_seed, &warning);
  if (!warning.empty()) log().warn("{}", warning);
  return set;
}

ModelConfig model_config_for(const RunConfig& cfg, const data::DomainSet& set) {
  ModelConfig m = cfg.model;
  m.domains.clear();
  m.labeled_domains.clear();
  for (const auto& d : set.domains) m.domains.push_back(d.id);
  for (std::size_t i : set.labeled_indices()) m.labeled_domains.push_back(set.domains[i].id);
  m.num_classes = set.num_classes;
  if (set.kind == data::PayloadKind::kSparse) {
    if (m.extractor.kind != ExtractorKind::kMlp) {
      throw ConfigError("bag-of-features data needs the mlp extractor");
    }
    m.extractor.input_dim = set.input_dim;
  } else {
    if (m.extractor.kind != ExtractorKind::kCnn) {
      throw ConfigError("token data needs the cnn extractor");
    }
    if (!set.embeddings) throw DataError("token data set has no embedding table");
    m.vocab_rows = set.embeddings->words.size() + 1;
    m.extractor.embed_dim = set.embeddings->dim;
  }
  m.validate();
  return m;
}

// ---- run manifests ---------------------------------------------------------

Aggregate aggregate(const std::vector<std::vector<TrainReport>>& runs) {
  if (runs.empty() || runs.front().empty()) throw DataError("no completed runs to aggregate");
  Aggregate a;
  a.runs = runs.size();
  const json first = json::parse(runs.front().front().model_config);
  for (const auto& d : first.at("domains")) {
    const std::string id = d.get<std::string>();
    if (runs.front().front().final_test.count(id)) a.domains.push_back(id);
  }
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (runs[r].empty()) throw DataError("run " + std::to_string(r) + " has no reports");
    double avg = 0.0;
    for (const auto& id : a.domains) {
      double sum = 0.0;
      for (const auto& report : runs[r]) {
        auto f = report.final_test.find(id);
        if (f == report.final_test.end()) {
          throw DataError("a report of run " + std::to_string(r) + " lacks domain '" + id + "'");
        }
        sum += f->second;
      }
      const double v = sum / static_cast<double>(runs[r].size());
      a.per_run[id].push_back(v);
      avg += v;
    }
    a.per_run["Avg"].push_back(avg / static_cast<double>(a.domains.size()));
  }
  return a;
}

Table Aggregate::table() const {
  Table t;
  t.columns = runs > 1 ? std::vector<std::string>{"mean", "stderr"}
                       : std::vector<std::string>{"accuracy"};
  auto row = [&](const std::string& id) {
    const auto& xs = per_run.at(id);
    if (runs > 1) {
      t.add_row(id, {stats::mean(xs), stats::standard_error(xs)});
    } else {
      t.add_row(id, {stats::mean(xs)});
    }
  };
  for (const auto& id : domains) row(id);
  row("Avg");
  return t;
}

std::string RunManifest::to_json() const {
  json j;
  j["config"] = json::parse(config);
  j["seeds"] = seeds;
  json rs = json::array();
  for (const auto& r : runs) {
    json o{{"seed", r.seed}, {"reports", r.reports}};
    o["probe"] = r.probe ? json(*r.probe) : json(nullptr);
    o["probe_chance"] = r.probe_chance ? json(*r.probe_chance) : json(nullptr);
    rs.push_back(o);
  }
  j["runs"] = rs;
  if (aggregate) {
    json a;
    auto entry = [&](const std::string& id) {
      const auto& xs = aggregate->per_run.at(id);
      json e{{"per_run", xs}, {"mean", stats::mean(xs)}};
      e["stderr"] = xs.size() > 1 ? json(stats::standard_error(xs)) : json(nullptr);
      return e;
    };
    for (const auto& id : aggregate->domains) a[id] = entry(id);
    a["Avg"] = entry("Avg");
    j["aggregate"] = a;
  }
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunManifest m;
    m.config = j.at("config").dump();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& o : j.at("runs")) {
      RunRecord r;
      r.seed = o.at("seed").get<std::uint64_t>();
      r.reports = o.at("reports").get<std::vector<std::string>>();
      if (o.contains("probe") && !o["probe"].is_null()) r.probe = o["probe"].get<double>();
      if (o.contains("probe_chance") && !o["probe_chance"].is_null()) {
        r.probe_chance = o["probe_chance"].get<double>();
      }
      m.runs.push_back(std::move(r));
    }
    if (m.seeds.size() != m.runs.size()) {
      throw DataError("run manifest lists " + std::to_string(m.seeds.size()) + " seeds for " +
                      std::to_string(m.runs.size()) + " runs");
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run manifest: ") + e.what());
  }
}

}  // namespace man::cli
