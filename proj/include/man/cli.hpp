#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "man/data.hpp"
#include "man/model.hpp"
#include "man/table.hpp"
#include "man/trainer.hpp"

namespace spdlog {
class logger;
}

namespace man::cli {

// Logger shared by every subcommand. Console output goes to stderr at the
// level named by MAN_LOG_LEVEL (error, warn, info, debug; default warn).
spdlog::logger& log();
// ConfigError for anything but error, warn, info, debug.
void set_console_level(const std::string& level);

// One JSON document with flat keys; see README for the full list.
struct RunConfig {
  std::string manifest;  // dataset manifest, resolved against the config's directory
  std::optional<data::SynthConfig> synthetic;  // used instead of a manifest
  std::size_t fold = 0;
  std::uint64_t split_seed = 1;  // k-fold partition, independent of the training seed
  ModelConfig model;             // domains are filled in from the data
  TrainConfig train;
  std::vector<std::uint64_t> seeds;  // cross-validate; empty means {train.seed}
  bool probe = false;
  ProbeConfig probe_config;
  std::string out_dir = "man-run";

  void validate() const;  // ConfigError
  std::vector<std::uint64_t> seed_list() const;
};

RunConfig run_config_from_json(const std::string& text,
                               const std::filesystem::path& base_dir = {});
std::string run_config_to_json(const RunConfig& cfg);
// The "synthetic" object on its own.
data::SynthConfig synth_config_from_json(const std::string& text);
// ConfigError when the file is missing or malformed.
RunConfig load_run_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<std::size_t> k;
  std::optional<LossVariant> loss;
  std::optional<ModelMode> mode;
  std::optional<ExtractorKind> extractor;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> runs;  // seeds seed, seed + 1, ...
};
void apply(RunConfig& cfg, const Overrides& overrides);

// Loaded corpora, split into folds on demand.
class Dataset {
 public:
  explicit Dataset(const RunConfig& cfg);
  std::size_t folds() const;  // 1 for synthetic data
  data::DomainSet fold(std::size_t index) const;

 private:
  RunConfig cfg_;
  data::Manifest manifest_;
  std::vector<data::RawDomain> raw_;
};

// cfg.model with the domain list, input width and vocabulary size of `set`.
ModelConfig model_config_for(const RunConfig& cfg, const data::DomainSet& set);

// ---- run manifests ---------------------------------------------------------

// Per-domain test accuracy over runs: each run averages its folds, then the
// runs give a mean and (with two or more) a standard error. Rows follow the
// domain order of the first report and end with "Avg", the mean over domains.
struct Aggregate {
  std::vector<std::string> domains;
  std::map<std::string, std::vector<double>> per_run;  // includes "Avg"
  std::size_t runs = 0;

  Table table() const;
};

Aggregate aggregate(const std::vector<std::vector<TrainReport>>& runs);

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<std::string> reports;  // one TrainReport per fold, relative to the manifest
  std::optional<double> probe;       // mean probe accuracy over folds
  std::optional<double> probe_chance;
};

struct RunManifest {
  std::string config;  // RunConfig snapshot (JSON)
  std::vector<std::uint64_t> seeds;
  std::vector<RunRecord> runs;  // one per seed
  std::optional<Aggregate> aggregate;  // written for readers; from_json leaves it empty

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};


// ---- subcommands -----------------------------------------------------------
// Machine output goes to `out`; diagnostics go through log(). Errors throw.

int cmd_train(const std::filesystem::path& config, const Overrides& overrides, std::ostream& out);
int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& config,
             const Overrides& overrides, std::ostream& out);
int cmd_cross_validate(const std::filesystem::path& config, const Overrides& overrides,
                       std::ostream& out);

struct VerifyOptions {
  std::size_t instances = 500;
  std::uint64_t seed = 1;
  double tol = 1e-9;
  bool quiet = false;  // summary line only
};
// Returns 1 when any check fails.
int cmd_verify_theory(const VerifyOptions& options, std::ostream& out);

// Writes the data set, its manifest and a starter config.json under out_dir.
int cmd_synth_gen(const data::SynthConfig& cfg, const std::filesystem::path& out_dir,
                  std::ostream& out);

struct ReportOptions {
  std::optional<double> baseline;  // mean for the one-sample t-test on Avg
  bool csv = false;
};
// DataError listing every missing report file.
int cmd_report(const std::filesystem::path& manifest, const ReportOptions& options,
               std::ostream& out);

// Parses argv and dispatches. Returns the exit code; errors are written to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace man::cli
