#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "man/cli.hpp"
#include "man/divergence.hpp"
#include "man/errors.hpp"
#include "man/rng.hpp"
#include "man/stats.hpp"

namespace man::cli {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Mirrors everything logged at info and above into a file while alive.
class LogFile {
 public:
  explicit LogFile(const fs::path& path)
      : sink_(std::make_shared<spdlog::sinks::basic_file_sink_mt>(path.string(), true)) {
    sink_->set_level(spdlog::level::info);
    sink_->set_pattern("[%l] %v");
    log().sinks().push_back(sink_);
  }
  ~LogFile() {
    log().flush();
    auto& sinks = log().sinks();
    sinks.erase(std::remove(sinks.begin(), sinks.end(), sink_), sinks.end());
  }
  LogFile(const LogFile&) = delete;
  LogFile& operator=(const LogFile&) = delete;

 private:
  spdlog::sink_ptr sink_;
};

RunConfig load_with(const fs::path& config, const Overrides& overrides) {
  RunConfig cfg = load_run_config(config);
  apply(cfg, overrides);
  return cfg;
}

struct Outcome {
  ManModel model;
  TrainReport report;
  std::optional<ProbeResult> probe;
};

Outcome train_one(const RunConfig& cfg, const data::DomainSet& set, std::uint64_t seed) {
  const ModelConfig mc = model_config_for(cfg, set);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const data::EmbeddingTable* pretrained = set.embeddings ? &*set.embeddings : nullptr;
  ManModel model(mc, derive_seed(seed, "model"), pretrained);
  Trainer trainer(model, set, tc);
  trainer.on_eval([](const EvalPoint& p) {
    log().info("iteration {}: loss_main {:.6f} loss_d {:.6f} mean_dev {:.4f}", p.iteration,
               p.loss_main, p.loss_d, p.mean_dev);
  });
  TrainReport report = trainer.train();
  log().info("seed {}: best iteration {} of {}, dev {:.4f}{}", seed, report.best_iteration,
             report.iterations, report.best_dev, report.stopped_early ? " (stopped early)" : "");
  std::optional<ProbeResult> probe;
  if (cfg.probe) {
    ProbeConfig pc = cfg.probe_config;
    pc.seed = seed;
    probe = probe_invariance(model, set, pc);
    log().info("seed {}: probe accuracy {:.4f} (chance {:.4f})", seed, probe->accuracy,
               probe->chance);
  }
  return {std::move(model), std::move(report), probe};
}

std::optional<double> lookup(const std::map<std::string, double>& m, const std::string& key) {
  auto f = m.find(key);
  return f == m.end() ? std::nullopt : std::optional<double>(f->second);
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  std::vector<double> present;
  for (const auto& x : xs) {
    if (x) present.push_back(*x);
  }
  return present.empty() ? std::nullopt : std::optional<double>(stats::mean(present));
}

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

}  // namespace

int cmd_train(const fs::path& config, const Overrides& overrides, std::ostream& out) {
  const RunConfig cfg = load_with(config, overrides);
  const Dataset data(cfg);
  const data::DomainSet set = data.fold(cfg.fold);
  model_config_for(cfg, set);

  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  const LogFile log_file(dir / "train.log");
  const std::string snapshot = run_config_to_json(cfg);
  write_file(dir / "config.json", snapshot);
  log().info("training seed {} into {}", cfg.train.seed, dir.string());

  Outcome o = train_one(cfg, set, cfg.train.seed);
  write_file(dir / "report.json", o.report.to_json());
  save_checkpoint(dir / "best.ckpt", o.model);

  RunManifest manifest;
  manifest.config = snapshot;
  manifest.seeds = {cfg.train.seed};
  RunRecord record{cfg.train.seed, {"report.json"}, std::nullopt, std::nullopt};
  if (o.probe) {
    record.probe = o.probe->accuracy;
    record.probe_chance = o.probe->chance;
  }
  manifest.runs.push_back(record);
  manifest.aggregate = aggregate({{o.report}});
  write_file(dir / "runs.json", manifest.to_json());

  Table t;
  t.columns = {"dev", "test"};
  std::vector<std::optional<double>> devs, tests;
  for (const auto& id : o.model.config().domains) {
    const auto dev = lookup(o.report.final_dev, id);
    const auto test = lookup(o.report.final_test, id);
    if (!dev && !test) continue;
    devs.push_back(dev);
    tests.push_back(test);
    t.add_row(id, {dev, test});
  }
  t.add_row("Avg", {mean_of(devs), mean_of(tests)});
  out << render_text(t);
  if (o.probe) {
    out << "probe " << format_number(o.probe->accuracy) << " chance "
        << format_number(o.probe->chance) << "\n";
  }
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& config, const Overrides& overrides,
             std::ostream& out) {
  const RunConfig cfg = load_with(config, overrides);
  ManModel model = load_checkpoint(checkpoint);
  const Dataset data(cfg);
  const data::DomainSet set = data.fold(cfg.fold);
  std::vector<std::string> ids;
  for (const auto& d : set.domains) ids.push_back(d.id);
  if (ids != model.config().domains) {
    throw ConfigError("checkpoint domains do not match the data set in '" + config.string() + "'");
  }
  Table t;
  t.columns = {"accuracy"};
  std::vector<std::optional<double>> accs;
  for (const auto& d : set.domains) {
    if (d.test.samples.empty()) continue;
    const bool with_fd = model.has_domain_extractor(d.id);
    if (!with_fd && !model.has_shared()) continue;
    const double acc = evaluate(model, d.test, with_fd);
    accs.push_back(acc);
    t.add_row(d.id, {acc});
  }
  if (accs.empty()) throw DataError("no domain has a test set this model can score");
  t.add_row("Avg", {mean_of(accs)});
  out << render_text(t);
  return 0;
}

int cmd_cross_validate(const fs::path& config, const Overrides& overrides, std::ostream& out) {
  const RunConfig cfg = load_with(config, overrides);
  const Dataset data(cfg);
  const std::vector<std::uint64_t> seeds = cfg.seed_list();
  std::vector<data::DomainSet> sets;
  for (std::size_t f = 0; f < data.folds(); ++f) {
    sets.push_back(data.fold(f));
    model_config_for(cfg, sets.back());
  }

  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  const LogFile log_file(dir / "cross_validate.log");
  RunManifest manifest;
  manifest.config = run_config_to_json(cfg);
  write_file(dir / "config.json", manifest.config);

  std::vector<std::vector<TrainReport>> all;
  for (std::uint64_t seed : seeds) {
    RunRecord record;
    record.seed = seed;
    std::vector<TrainReport> reports;
    double probe_sum = 0.0;
    for (std::size_t f = 0; f < sets.size(); ++f) {
      log().info("seed {} fold {}/{}", seed, f + 1, sets.size());
      Outcome o = train_one(cfg, sets[f], seed);
      const fs::path rel =
          fs::path("seed-" + std::to_string(seed)) / ("fold-" + std::to_string(f)) / "report.json";
      fs::create_directories((dir / rel).parent_path());
      write_file(dir / rel, o.report.to_json());
      record.reports.push_back(rel.generic_string());
      reports.push_back(std::move(o.report));
      if (o.probe) {
        probe_sum += o.probe->accuracy;
        record.probe_chance = o.probe->chance;
      }
    }
    if (cfg.probe) record.probe = probe_sum / static_cast<double>(sets.size());
    all.push_back(std::move(reports));
    manifest.seeds.push_back(seed);
    manifest.runs.push_back(std::move(record));
    manifest.aggregate = aggregate(all);
    write_file(dir / "runs.json", manifest.to_json());
  }

  const Table t = manifest.aggregate->table();
  write_file(dir / "table.txt", render_text(t));
  write_file(dir / "table.csv", render_csv(t));
  out << render_text(t);
  return 0;
}

int cmd_verify_theory(const VerifyOptions& options, std::ostream& out) {
  if (options.instances == 0) throw ConfigError("--instances must be at least 1");
  if (!(options.tol >= 0.0)) throw ConfigError("--tol must be nonnegative");
  Rng rng(options.seed);
  std::size_t checks = 0, failed = 0;
  double max_gap = 0.0;
  if (!options.quiet) out << "instance variant N S lhs rhs gap bound pass\n";
  for (std::size_t i = 0; i < options.instances; ++i) {
    const std::size_t n = 2 + rng.below(5);
    const std::size_t s = 2 + rng.below(31);
    const auto dists = divergence::random_instance(rng, n, s);
    for (LossVariant v : {LossVariant::kNll, LossVariant::kL2}) {
      const auto check = divergence::verify_theorem(dists, v, options.tol);
      ++checks;
      if (!check.pass) ++failed;
      max_gap = std::max(max_gap, check.gap);
      if (!options.quiet) {
        out << i << ' ' << to_string(v) << ' ' << n << ' ' << s << ' '
            << fmt("%.17g", check.lhs) << ' ' << fmt("%.17g", check.rhs) << ' '
            << fmt("%.3e", check.gap) << ' ' << fmt("%.17g", check.bound) << ' '
            << (check.pass ? "pass" : "FAIL") << '\n';
      }
    }
  }
  out << "summary instances=" << options.instances << " checks=" << checks
      << " passed=" << checks - failed << " failed=" << failed
      << " max_gap=" << fmt("%.3e", max_gap) << " tol=" << fmt("%.3e", options.tol)
      << " status=" << (failed ? "fail" : "pass") << '\n';
  if (failed) log().error("{} of {} theorem checks failed", failed, checks);
  return failed ? 1 : 0;
}

int cmd_synth_gen(const data::SynthConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  data::synth_write(cfg, out_dir);
  RunConfig starter;
  starter.manifest = "manifest.json";
  starter.model.extractor.hidden_dims = {64};
  starter.model.shared_dim = 32;
  starter.model.domain_dim = 16;
  starter.train.lambda = 1.0;
  starter.train.lr_main = 2e-4;
  starter.train.lr_d = 1e-3;
  starter.train.max_iterations = 2000;
  starter.train.eval_every = 100;
  starter.out_dir = (out_dir / "run").string();
  std::string text = run_config_to_json(starter);
  // Keep the manifest path relative so the directory can be moved.
  auto j = nlohmann::json::parse(text);
  j["manifest"] = "manifest.json";
  write_file(out_dir / "config.json", j.dump(2) + "\n");
  out << (out_dir / "manifest.json").string() << '\n' << (out_dir / "config.json").string() << '\n';
  return 0;
}

int cmd_report(const fs::path& manifest_path, const ReportOptions& options, std::ostream& out) {
  const RunManifest manifest = RunManifest::from_json(read_file(manifest_path));
  if (manifest.runs.empty()) throw DataError("run manifest has no completed runs");
  const fs::path base = manifest_path.parent_path();
  std::vector<std::string> missing;
  for (const auto& r : manifest.runs) {
    for (const auto& p : r.reports) {
      if (!fs::exists(base / p)) missing.push_back((base / p).string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing run files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  std::vector<std::vector<TrainReport>> all;
  for (const auto& r : manifest.runs) {
    std::vector<TrainReport> reports;
    for (const auto& p : r.reports) reports.push_back(TrainReport::from_json(read_file(base / p)));
    all.push_back(std::move(reports));
  }
  const Aggregate agg = aggregate(all);
  const Table t = agg.table();

  std::vector<std::pair<std::string, std::string>> summary;
  std::vector<double> probes;
  std::optional<double> chance;
  for (const auto& r : manifest.runs) {
    if (r.probe) probes.push_back(*r.probe);
    if (r.probe_chance) chance = r.probe_chance;
  }
  if (!probes.empty()) {
    summary.emplace_back("probe_accuracy", format_number(stats::mean(probes)));
    if (probes.size() > 1) {
      summary.emplace_back("probe_stderr", format_number(stats::standard_error(probes)));
    }
    if (chance) summary.emplace_back("probe_chance", format_number(*chance));
  }
  if (options.baseline) {
    const auto test = stats::one_sample_t_test(agg.per_run.at("Avg"), *options.baseline);
    summary.emplace_back("baseline", format_number(*options.baseline));
    summary.emplace_back("t", format_number(test.t));
    summary.emplace_back("df", format_number(test.df, 0));
    summary.emplace_back("p", format_number(test.p));
  }

  if (options.csv) {
    out << render_csv(t);
    if (!summary.empty()) {
      out << "\nmetric,value\n";
      for (const auto& [k, v] : summary) out << k << ',' << v << '\n';
    }
  } else {
    out << render_text(t);
    for (const auto& [k, v] : summary) out << k << ' ' << v << '\n';
  }
  return 0;
}

// ---- argument parsing ------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multinomial adversarial networks: training, evaluation and analysis",
               "man-cli"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, checkpoint, out_dir, loss, mode, extractor, manifest;
    std::uint64_t seed = 1;
    double lambda = 0.0, tol = 1e-9, baseline = 0.0;
    std::size_t k = 0, runs = 0, instances = 500;
    bool quiet = false, csv = false;
  } f;
  std::map<std::string, CLI::Option*> opt;

  auto add_overrides = [&](CLI::App* sub, bool with_runs) {
    opt[sub->get_name() + "seed"] = sub->add_option("--seed", f.seed, "Training seed");
    opt[sub->get_name() + "lambda"] =
        sub->add_option("--lambda", f.lambda, "Adversarial loss weight");
    opt[sub->get_name() + "k"] = sub->add_option("--k", f.k, "Discriminator steps per iteration");
    opt[sub->get_name() + "loss"] =
        sub->add_option("--loss", f.loss, "Loss variant")->check(CLI::IsMember({"nll", "l2"}));
    opt[sub->get_name() + "mode"] =
        sub->add_option("--mode", f.mode, "Model mode")
            ->check(CLI::IsMember({"shared-private", "shared-only", "domain-only"}));
    opt[sub->get_name() + "extractor"] =
        sub->add_option("--extractor", f.extractor, "Feature extractor")
            ->check(CLI::IsMember({"mlp", "cnn"}));
    opt[sub->get_name() + "out-dir"] =
        sub->add_option("--out-dir", f.out_dir, "Directory for run artifacts");
    if (with_runs) {
      opt[sub->get_name() + "runs"] =
          sub->add_option("--runs", f.runs, "Number of seeds, counting up from --seed");
    }
  };
  auto overrides = [&](const std::string& name) {
    Overrides o;
    auto given = [&](const std::string& key) {
      auto it = opt.find(name + key);
      return it != opt.end() && it->second->count() > 0;
    };
    if (given("seed")) o.seed = f.seed;
    if (given("lambda")) o.lambda = f.lambda;
    if (given("k")) o.k = f.k;
    if (given("loss")) o.loss = parse_loss_variant(f.loss);
    if (given("mode")) o.mode = parse_model_mode(f.mode);
    if (given("extractor")) o.extractor = parse_extractor_kind(f.extractor);
    if (given("out-dir")) o.out_dir = f.out_dir;
    if (given("runs")) o.runs = f.runs;
    return o;
  };

  auto* train = app.add_subcommand("train", "Train one model");
  train->add_option("--config", f.config, "Run config (JSON)")->required();
  add_overrides(train, false);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the configured test sets");
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  eval->add_option("--config", f.config, "Run config (JSON)")->required();
  add_overrides(eval, false);

  auto* cv = app.add_subcommand("cross-validate", "Train every fold for every seed");
  cv->add_option("--config", f.config, "Run config (JSON)")->required();
  add_overrides(cv, true);

  auto* verify = app.add_subcommand("verify-theory", "Check the divergence identities");
  verify->add_option("--instances", f.instances, "Random instances")->capture_default_str();
  auto* verify_seed = verify->add_option("--seed", f.seed, "Instance seed");
  verify->add_option("--tol", f.tol, "Tolerance")->capture_default_str();
  verify->add_flag("--quiet", f.quiet, "Print the summary line only");

  auto* synth = app.add_subcommand("synth-gen", "Write a synthetic multi-domain data set");
  synth->add_option("--out-dir", f.out_dir, "Output directory")->required();
  synth->add_option("--config", f.config, "JSON object of generator settings");
  auto* synth_seed = synth->add_option("--seed", f.seed, "Generator seed");

  auto* report = app.add_subcommand("report", "Aggregate the runs of a run manifest");
  report->add_option("manifest", f.manifest, "runs.json")->required();
  auto* baseline =
      report->add_option("--baseline", f.baseline, "Baseline mean for a one-sample t-test");
  report->add_flag("--csv", f.csv, "CSV instead of aligned text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) return cmd_train(f.config, overrides("train"), out);
    if (*eval) return cmd_eval(f.checkpoint, f.config, overrides("eval"), out);
    if (*cv) return cmd_cross_validate(f.config, overrides("cross-validate"), out);
    if (*verify) {
      VerifyOptions v;
      v.instances = f.instances;
      if (verify_seed->count()) v.seed = f.seed;
      v.tol = f.tol;
      v.quiet = f.quiet;
      return cmd_verify_theory(v, out);
    }
    if (*synth) {
      data::SynthConfig s;
      if (!f.config.empty()) s = synth_config_from_json(read_file(f.config));
      if (synth_seed->count()) s.seed = f.seed;
      return cmd_synth_gen(s, f.out_dir, out);
    }
    if (*report) {
      ReportOptions r;
      if (baseline->count()) r.baseline = f.baseline;
      r.csv = f.csv;
      return cmd_report(f.manifest, r, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace man::cli
