#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "man/adam.hpp"
#include "man/data.hpp"
#include "man/model.hpp"
#include "man/rng.hpp"

namespace man {

// Where D's batches for a labeled domain come from. Unlabeled-only domains
// always use their unlabeled corpus.
enum class UnlabeledSource { kReuseLabeled, kSeparate, kBoth };
std::string to_string(UnlabeledSource source);
UnlabeledSource parse_unlabeled_source(std::string_view text);

struct TrainConfig {
  double lambda = 0.05;  // 0 is accepted for the no-adversary ablation
  std::size_t k = 5;
  double lr_main = 1e-4;
  double lr_d = 1e-4;
  std::size_t batch_size = 8;
  std::size_t max_iterations = 20000;
  std::size_t eval_every = 50;
  std::size_t patience = 10;  // evaluations without improvement before stopping
  std::uint64_t seed = 1;
  LossVariant loss = LossVariant::kNll;
  UnlabeledSource unlabeled_source = UnlabeledSource::kReuseLabeled;

  void validate() const;  // ConfigError
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Shuffled cursor over [0, n); reshuffles at every epoch boundary. Batches
// that cross a boundary continue into the next epoch.
class Sampler {
 public:
  Sampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t count);
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  Rng rng_;
};

struct EvalPoint {
  std::size_t iteration = 0;
  double loss_main = 0.0;  // mean over main steps since the previous point
  double loss_d = 0.0;     // mean over D steps since the previous point
  std::map<std::string, double> dev;   // labeled domains
  std::map<std::string, double> test;  // every domain with a test set
  double mean_dev = 0.0;
};

struct TrainReport {
  std::string model_config;  // JSON snapshots
  std::string train_config;
  std::size_t iterations = 0;
  std::size_t best_iteration = 0;
  double best_dev = 0.0;
  bool stopped_early = false;
  std::vector<EvalPoint> history;
  std::map<std::string, double> final_dev;
  std::map<std::string, double> final_test;
  double mean_test_labeled = 0.0;

  std::string to_json() const;
  static TrainReport from_json(const std::string& text);
};

// Optimizers, samplers and the dropout stream for one training run. The
// model and domain set must outlive the trainer.
class Trainer {
 public:
  Trainer(ManModel& model, const data::DomainSet& domains, TrainConfig cfg);

  // One round of D training: one batch per domain through F_s and D,
  // losses summed, one Adam step on D only. Returns the summed loss.
  double d_step();
  // Classifier loss over labeled domains plus lambda times the shared
  // domain loss over all domains; one Adam step on F_s, every F_d and C.
  double main_step();
  // One outer iteration: k d_steps (when the model has D) then main_step.
  void iteration();

  TrainReport train();
  // Called with every evaluation point as train() records it.
  void on_eval(std::function<void(const EvalPoint&)> fn) { on_eval_ = std::move(fn); }

  std::size_t d_updates() const { return d_updates_; }
  std::size_t main_updates() const { return main_updates_; }

  // The batch the next d_step / main_step will draw, recorded for replay.
  struct Draw {
    std::vector<std::vector<std::size_t>> labeled;    // per labeled domain
    std::vector<std::vector<std::size_t>> unlabeled;  // per domain
  };
  const Draw& last_draw() const { return last_draw_; }
  // Payload pool D samples from for domain i.
  const std::vector<const data::Payload*>& unlabeled_pool(std::size_t i) const {
    return unlabeled_pools_[i];
  }
  std::uint64_t dropout_seed() const { return dropout_seed_; }

 private:
  Batch gather(const std::vector<const data::Payload*>& pool,
               const std::vector<std::size_t>& idx) const;
  Tensor joint_discriminate(Pass& pass, bool update_running);
  std::vector<Tensor> split(Tape& tape, const Tensor& joint, std::size_t parts) const;

  ManModel& model_;
  const data::DomainSet& domains_;
  TrainConfig cfg_;
  Adam main_opt_;
  Adam d_opt_;
  std::vector<std::size_t> labeled_;  // domain indices with a classifier loss
  std::vector<Sampler> labeled_samplers_;
  std::vector<Sampler> unlabeled_samplers_;
  std::vector<std::vector<const data::Payload*>> unlabeled_pools_;
  std::uint64_t dropout_seed_;
  Rng dropout_;
  std::size_t d_updates_ = 0;
  std::size_t main_updates_ = 0;
  Draw last_draw_;
  double d_loss_sum_ = 0.0;
  std::size_t d_loss_count_ = 0;
  double main_loss_sum_ = 0.0;
  std::size_t main_loss_count_ = 0;
  std::function<void(const EvalPoint&)> on_eval_;
};

// Convenience wrapper: Trainer(model, domains, cfg).train().
TrainReport train(ManModel& model, const data::DomainSet& domains, const TrainConfig& cfg);

// Eval-mode accuracy on a labeled corpus. Without domain features the
// classifier sees f_s ++ 0. Ties go to the lowest class index.
double evaluate(ManModel& model, const data::LabeledCorpus& corpus, bool use_domain_features);

struct ProbeConfig {
  std::size_t iterations = 3000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double holdout_fraction = 0.5;
  std::uint64_t seed = 1;
};

struct ProbeResult {
  double accuracy = 1.0;  // held-out domain-classification accuracy
  double chance = 1.0;    // 1/N
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

// Freezes F_s, extracts eval-mode shared features for each domain's test
// set (its unlabeled corpus if there is no test set), balances the domains,
// and trains a fresh discriminator-shaped head on one part to predict the
// domain, reporting its accuracy on the other part.
ProbeResult probe_invariance(const ManModel& model, const data::DomainSet& domains,
                             const ProbeConfig& cfg);

ModelConfig ablation_mode(ModelConfig cfg, ModelMode mode);

}  // namespace man
