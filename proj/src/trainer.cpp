#include "man/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "man/errors.hpp"
#include "man/nn.hpp"
#include "man/ops.hpp"

namespace man {
namespace {

using nlohmann::json;

constexpr std::size_t kEvalChunk = 256;

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

std::size_t argmax_row(const Tensor& probs, std::size_t row) {
  const std::size_t c = probs.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (probs.at(row, j) > probs.at(row, best)) best = j;
  }
  return best;
}

std::vector<std::vector<double>> snapshot(const ManModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& n : model.state()) out.emplace_back(n.tensor.data().begin(), n.tensor.data().end());
  return out;
}

void restore(ManModel& model, const std::vector<std::vector<double>>& values) {
  auto state = model.state();
  for (std::size_t i = 0; i < state.size(); ++i) {
    std::copy(values[i].begin(), values[i].end(), state[i].tensor.mutable_data().begin());
  }
}

}  // namespace

std::string to_string(UnlabeledSource source) {
  switch (source) {
    case UnlabeledSource::kReuseLabeled: return "reuse-labeled";
    case UnlabeledSource::kSeparate: return "separate";
    case UnlabeledSource::kBoth: return "both";
  }
  return "?";
}

UnlabeledSource parse_unlabeled_source(std::string_view text) {
  if (text == "reuse-labeled") return UnlabeledSource::kReuseLabeled;
  if (text == "separate") return UnlabeledSource::kSeparate;
  if (text == "both") return UnlabeledSource::kBoth;
  throw ConfigError("unknown unlabeled source '" + std::string(text) +
                    "' (expected reuse-labeled, separate or both)");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (k < 1) throw ConfigError("k must be at least 1");
  if (!(lr_main > 0.0) || !(lr_d > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 (batch norm)");
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["lambda"] = c.lambda;
  j["k"] = c.k;
  j["lr_main"] = c.lr_main;
  j["lr_d"] = c.lr_d;
  j["batch_size"] = c.batch_size;
  j["max_iterations"] = c.max_iterations;
  j["eval_every"] = c.eval_every;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["loss"] = to_string(c.loss);
  j["unlabeled_source"] = to_string(c.unlabeled_source);
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.lambda = j.at("lambda");
    c.k = j.at("k");
    c.lr_main = j.at("lr_main");
    c.lr_d = j.at("lr_d");
    c.batch_size = j.at("batch_size");
    c.max_iterations = j.at("max_iterations");
    c.eval_every = j.at("eval_every");
    c.patience = j.at("patience");
    c.seed = j.at("seed");
    c.loss = parse_loss_variant(j.at("loss").get<std::string>());
    c.unlabeled_source = parse_unlabeled_source(j.at("unlabeled_source").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

// ---- sampler ---------------------------------------------------------------

Sampler::Sampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
  if (n == 0) throw DataError("cannot sample from an empty corpus");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void Sampler::reshuffle() { rng_.shuffle(std::span<std::size_t>(order_)); }

std::vector<std::size_t> Sampler::next(std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (cursor_ == order_.size()) {
      cursor_ = 0;
      ++epoch_;
      reshuffle();
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

// ---- report ----------------------------------------------------------------

std::string TrainReport::to_json() const {
  json j;
  j["model_config"] = json::parse(model_config);
  j["train_config"] = json::parse(train_config);
  j["iterations"] = iterations;
  j["best_iteration"] = best_iteration;
  j["best_dev"] = best_dev;
  j["stopped_early"] = stopped_early;
  json hist = json::array();
  for (const auto& p : history) {
    hist.push_back({{"iteration", p.iteration},
                    {"loss_main", p.loss_main},
                    {"loss_d", p.loss_d},
                    {"dev", p.dev},
                    {"test", p.test},
                    {"mean_dev", p.mean_dev}});
  }
  j["history"] = hist;
  j["final_dev"] = final_dev;
  j["final_test"] = final_test;
  j["mean_test_labeled"] = mean_test_labeled;
  return j.dump(2) + "\n";
}

TrainReport TrainReport::from_json(const std::string& text) {
  TrainReport r;
  try {
    const json j = json::parse(text);
    r.model_config = j.at("model_config").dump();
    r.train_config = j.at("train_config").dump();
    r.iterations = j.at("iterations");
    r.best_iteration = j.at("best_iteration");
    r.best_dev = j.at("best_dev");
    r.stopped_early = j.at("stopped_early");
    for (const auto& p : j.at("history")) {
      EvalPoint e;
      e.iteration = p.at("iteration");
      e.loss_main = p.at("loss_main");
      e.loss_d = p.at("loss_d");
      e.dev = p.at("dev").get<std::map<std::string, double>>();
      e.test = p.at("test").get<std::map<std::string, double>>();
      e.mean_dev = p.at("mean_dev");
      r.history.push_back(std::move(e));
    }
    r.final_dev = j.at("final_dev").get<std::map<std::string, double>>();
    r.final_test = j.at("final_test").get<std::map<std::string, double>>();
    r.mean_test_labeled = j.at("mean_test_labeled");
  } catch (const json::exception& e) {
    throw DataError(std::string("train report: ") + e.what());
  }
  return r;
}

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(ManModel& model, const data::DomainSet& domains, TrainConfig cfg)
    : model_(model),
      domains_(domains),
      cfg_(std::move(cfg)),
      main_opt_(tensors_of(model.main_parameters()), AdamConfig{.learning_rate = cfg_.lr_main}),
      d_opt_(tensors_of(model.discriminator_parameters()), AdamConfig{.learning_rate = cfg_.lr_d}),
      dropout_seed_(derive_seed(cfg_.seed, "dropout")),
      dropout_(dropout_seed_) {
  cfg_.validate();
  const ModelConfig& mc = model_.config();
  if (mc.loss != cfg_.loss) {
    throw ConfigError("model loss " + to_string(mc.loss) + " differs from training loss " +
                      to_string(cfg_.loss));
  }
  std::vector<std::string> ids;
  for (const auto& d : domains_.domains) ids.push_back(d.id);
  if (ids != mc.domains) throw ConfigError("model domains do not match the domain set");

  labeled_ = domains_.labeled_indices();
  if (labeled_.empty()) throw DataError("training needs at least one labeled domain");
  for (std::size_t i : labeled_) {
    const auto& d = domains_.domains[i];
    if (d.train.samples.empty()) throw DataError("domain '" + d.id + "' has no labeled training data");
    if (mc.mode != ModelMode::kSharedOnly && !model_.has_domain_extractor(d.id)) {
      throw ConfigError("labeled domain '" + d.id + "' has no domain feature extractor");
    }
    labeled_samplers_.emplace_back(d.train.samples.size(),
                                   derive_seed(cfg_.seed, "labeled-" + d.id));
  }
  for (const auto& d : domains_.domains) {
    std::vector<const data::Payload*> pool;
    const bool labeled = d.role == data::DomainRole::kLabeled;
    const bool use_train = labeled && cfg_.unlabeled_source != UnlabeledSource::kSeparate;
    const bool use_unlabeled = !labeled || cfg_.unlabeled_source != UnlabeledSource::kReuseLabeled;
    if (use_train) {
      for (const auto& s : d.train.samples) pool.push_back(&s.x);
    }
    if (use_unlabeled) {
      for (const auto& x : d.unlabeled.samples) pool.push_back(&x);
    }
    if (pool.empty()) {
      throw DataError("domain '" + d.id + "' has no unlabeled data for the discriminator");
    }
    unlabeled_samplers_.emplace_back(pool.size(), derive_seed(cfg_.seed, "unlabeled-" + d.id));
    unlabeled_pools_.push_back(std::move(pool));
  }
}

Batch Trainer::gather(const std::vector<const data::Payload*>& pool,
                      const std::vector<std::size_t>& idx) const {
  std::vector<const data::Payload*> picked;
  picked.reserve(idx.size());
  for (std::size_t i : idx) picked.push_back(pool[i]);
  return make_batch(picked, model_.config());
}

// D and C each see every domain's mini-batch in a single forward pass, so
// their batch-norm statistics span domains; per-domain losses are taken on
// row slices.
Tensor Trainer::joint_discriminate(Pass& pass, bool update_running) {
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    auto idx = unlabeled_samplers_[i].next(cfg_.batch_size);
    parts.push_back(model_.forward_shared(pass, gather(unlabeled_pools_[i], idx)));
    last_draw_.unlabeled[i] = std::move(idx);
  }
  return model_.discriminate(pass, ops::concat_rows(pass.tape, parts), update_running);
}

std::vector<Tensor> Trainer::split(Tape& tape, const Tensor& joint, std::size_t parts) const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < parts; ++i) {
    out.push_back(ops::slice_rows(tape, joint, i * cfg_.batch_size, (i + 1) * cfg_.batch_size));
  }
  return out;
}

double Trainer::d_step() {
  if (!model_.has_discriminator()) throw ConfigError("model has no discriminator to train");
  RequiresGradGuard freeze(tensors_of(model_.main_parameters()), false);
  d_opt_.zero_grad();
  last_draw_.labeled.clear();
  last_draw_.unlabeled.assign(domains_.size(), {});
  Tape tape;
  Pass pass{tape, Mode::kTrain, &dropout_};
  const auto d_hats = split(tape, joint_discriminate(pass, true), domains_.size());
  Tensor total;
  for (std::size_t i = 0; i < d_hats.size(); ++i) {
    const Tensor li = discriminator_loss(tape, d_hats[i], i, cfg_.loss);
    total = total.defined() ? ops::add(tape, total, li) : li;
  }
  tape.backward(total);
  d_opt_.step();
  ++d_updates_;
  const double value = total.item();
  d_loss_sum_ += value;
  ++d_loss_count_;
  return value;
}

double Trainer::main_step() {
  RequiresGradGuard freeze(tensors_of(model_.discriminator_parameters()), false);
  main_opt_.zero_grad();
  last_draw_.labeled.assign(labeled_.size(), {});
  last_draw_.unlabeled.assign(domains_.size(), {});
  Tape tape;
  Pass pass{tape, Mode::kTrain, &dropout_};
  std::vector<Tensor> shared, private_part;
  std::vector<std::size_t> ys;
  for (std::size_t j = 0; j < labeled_.size(); ++j) {
    const auto& d = domains_.domains[labeled_[j]];
    auto idx = labeled_samplers_[j].next(cfg_.batch_size);
    std::vector<const data::Payload*> xs;
    for (std::size_t i : idx) {
      xs.push_back(&d.train.samples[i].x);
      ys.push_back(static_cast<std::size_t>(d.train.samples[i].label));
    }
    last_draw_.labeled[j] = std::move(idx);
    const Batch batch = make_batch(xs, model_.config());
    if (model_.has_shared()) shared.push_back(model_.forward_shared(pass, batch));
    if (model_.has_domain_extractor(d.id)) {
      private_part.push_back(model_.forward_domain(pass, batch, d.id));
    }
  }
  std::optional<Tensor> fs, fd;
  if (!shared.empty()) fs = ops::concat_rows(tape, shared);
  if (!private_part.empty()) fd = ops::concat_rows(tape, private_part);
  const Tensor probs = model_.classify(pass, fs ? &*fs : nullptr, fd ? &*fd : nullptr);
  const auto per_domain = split(tape, probs, labeled_.size());
  Tensor total;
  for (std::size_t j = 0; j < per_domain.size(); ++j) {
    const std::span<const std::size_t> yj(ys.data() + j * cfg_.batch_size, cfg_.batch_size);
    const Tensor lj = classifier_loss(tape, per_domain[j], yj);
    total = total.defined() ? ops::add(tape, total, lj) : lj;
  }
  if (cfg_.lambda > 0.0 && model_.has_discriminator()) {
    const auto d_hats = split(tape, joint_discriminate(pass, false), domains_.size());
    const Tensor adv = shared_domain_loss(tape, d_hats, cfg_.loss);
    total = ops::add(tape, total, ops::scale(tape, adv, cfg_.lambda));
  }
  tape.backward(total);
  main_opt_.step();
  ++main_updates_;
  const double value = total.item();
  main_loss_sum_ += value;
  ++main_loss_count_;
  return value;
}

void Trainer::iteration() {
  if (model_.has_discriminator()) {
    for (std::size_t r = 0; r < cfg_.k; ++r) d_step();
  }
  main_step();
}

TrainReport Trainer::train() {
  TrainReport report;
  report.model_config = config_to_json(model_.config());
  report.train_config = train_config_to_json(cfg_);

  auto measure = [&](std::map<std::string, double>& dev, std::map<std::string, double>& test) {
    double sum = 0.0;
    for (std::size_t i : labeled_) {
      const auto& d = domains_.domains[i];
      const bool with_fd = model_.has_domain_extractor(d.id);
      if (!d.dev.samples.empty()) dev[d.id] = evaluate(model_, d.dev, with_fd);
      sum += dev.count(d.id) ? dev[d.id] : 0.0;
    }
    for (const auto& d : domains_.domains) {
      if (d.test.samples.empty()) continue;
      if (!model_.has_shared() && !model_.has_domain_extractor(d.id)) continue;
      test[d.id] = evaluate(model_, d.test, model_.has_domain_extractor(d.id));
    }
    return sum / static_cast<double>(labeled_.size());
  };

  double best = -1.0;
  std::vector<std::vector<double>> best_state;
  std::size_t bad = 0;
  std::size_t it = 0;
  while (it < cfg_.max_iterations) {
    iteration();
    ++it;
    if (it % cfg_.eval_every != 0 && it != cfg_.max_iterations) continue;
    EvalPoint p;
    p.iteration = it;
    p.loss_main = main_loss_count_ ? main_loss_sum_ / static_cast<double>(main_loss_count_) : 0.0;
    p.loss_d = d_loss_count_ ? d_loss_sum_ / static_cast<double>(d_loss_count_) : 0.0;
    main_loss_sum_ = d_loss_sum_ = 0.0;
    main_loss_count_ = d_loss_count_ = 0;
    p.mean_dev = measure(p.dev, p.test);
    report.history.push_back(p);
    if (on_eval_) on_eval_(p);
    if (p.mean_dev > best) {
      best = p.mean_dev;
      best_state = snapshot(model_);
      report.best_iteration = it;
      bad = 0;
    } else if (++bad > cfg_.patience) {
      report.stopped_early = true;
      break;
    }
  }
  report.iterations = it;
  report.best_dev = best;
  if (!best_state.empty()) restore(model_, best_state);
  measure(report.final_dev, report.final_test);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i : labeled_) {
    auto f = report.final_test.find(domains_.domains[i].id);
    if (f == report.final_test.end()) continue;
    sum += f->second;
    ++count;
  }
  report.mean_test_labeled = count ? sum / static_cast<double>(count) : 0.0;
  return report;
}

TrainReport train(ManModel& model, const data::DomainSet& domains, const TrainConfig& cfg) {
  return Trainer(model, domains, cfg).train();
}

// ---- evaluation ------------------------------------------------------------

double evaluate(ManModel& model, const data::LabeledCorpus& corpus, bool use_domain_features) {
  if (corpus.samples.empty()) {
    throw DataError("cannot evaluate on an empty corpus for domain '" + corpus.domain_id + "'");
  }
  if (use_domain_features && !model.has_domain_extractor(corpus.domain_id)) {
    throw ConfigError("domain '" + corpus.domain_id +
                      "' has no domain feature extractor; evaluate it without domain features");
  }
  if (!use_domain_features && !model.has_shared()) {
    throw ConfigError("a model without a shared extractor needs domain features");
  }
  std::size_t correct = 0;
  for (std::size_t start = 0; start < corpus.samples.size(); start += kEvalChunk) {
    const std::size_t end = std::min(corpus.samples.size(), start + kEvalChunk);
    std::vector<const data::Payload*> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(&corpus.samples[i].x);
    const Batch batch = make_batch(xs, model.config());
    Tape tape;
    tape.freeze();
    Pass pass{tape, Mode::kEval, nullptr};
    std::optional<Tensor> fs, fd;
    if (model.has_shared()) fs = model.forward_shared(pass, batch);
    if (use_domain_features) fd = model.forward_domain(pass, batch, corpus.domain_id);
    const Tensor probs = model.classify(pass, fs ? &*fs : nullptr, fd ? &*fd : nullptr);
    for (std::size_t r = 0; r < end - start; ++r) {
      if (static_cast<int>(argmax_row(probs, r)) == corpus.samples[start + r].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(corpus.samples.size());
}

// ---- invariance probe ------------------------------------------------------

ProbeResult probe_invariance(const ManModel& model, const data::DomainSet& domains,
                             const ProbeConfig& cfg) {
  ProbeResult result;
  const std::size_t n = domains.size();
  result.chance = 1.0 / static_cast<double>(n);
  if (n == 1) return result;
  if (!model.has_shared()) throw ConfigError("probe needs a shared feature extractor");
  if (!(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0)) {
    throw ConfigError("probe holdout fraction must lie in (0, 1)");
  }

  // Held-out payloads per domain, balanced to the smallest domain.
  std::vector<std::vector<const data::Payload*>> pools(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = domains.domains[i];
    if (!d.test.samples.empty()) {
      for (const auto& s : d.test.samples) pools[i].push_back(&s.x);
    } else {
      for (const auto& x : d.unlabeled.samples) pools[i].push_back(&x);
    }
    if (pools[i].empty()) throw DataError("domain '" + d.id + "' has no held-out data to probe");
  }
  std::size_t per_domain = pools[0].size();
  for (const auto& p : pools) per_domain = std::min(per_domain, p.size());
  const auto n_test = static_cast<std::size_t>(
      std::round(cfg.holdout_fraction * static_cast<double>(per_domain)));
  const std::size_t n_train = per_domain - n_test;
  if (n_train < 2 || n_test < 1) throw DataError("too few held-out samples to probe invariance");

  const std::size_t width = model.config().shared_dim;
  std::vector<double> train_x, test_x;
  std::vector<std::size_t> train_y, test_y;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order(pools[i].size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split(derive_seed(cfg.seed, "probe-split-" + domains.domains[i].id));
    split.shuffle(std::span<std::size_t>(order));
    order.resize(per_domain);
    for (std::size_t start = 0; start < per_domain; start += kEvalChunk) {
      const std::size_t end = std::min(per_domain, start + kEvalChunk);
      std::vector<const data::Payload*> xs;
      for (std::size_t r = start; r < end; ++r) xs.push_back(pools[i][order[r]]);
      Tape tape;
      tape.freeze();
      Pass pass{tape, Mode::kEval, nullptr};
      const Tensor fs = model.forward_shared(pass, make_batch(xs, model.config()));
      for (std::size_t r = start; r < end; ++r) {
        const auto row = fs.data().subspan((r - start) * width, width);
        auto& xv = r < n_train ? train_x : test_x;
        auto& yv = r < n_train ? train_y : test_y;
        xv.insert(xv.end(), row.begin(), row.end());
        yv.push_back(i);
      }
    }
  }
  result.train_size = train_y.size();
  result.test_size = test_y.size();

  Rng init(derive_seed(cfg.seed, "probe-init"));
  MlpHead probe(width, width, n, init);
  std::vector<NamedTensor> named;
  probe.collect("probe", named);
  Adam opt(tensors_of(named), AdamConfig{.learning_rate = cfg.lr});
  Sampler sampler(train_y.size(), derive_seed(cfg.seed, "probe-batches"));
  const std::size_t b = std::max<std::size_t>(2, std::min(cfg.batch_size, train_y.size()));
  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    const auto idx = sampler.next(b);
    std::vector<double> xb;
    std::vector<std::size_t> yb;
    for (std::size_t r : idx) {
      xb.insert(xb.end(), train_x.begin() + r * width, train_x.begin() + (r + 1) * width);
      yb.push_back(train_y[r]);
    }
    opt.zero_grad();
    Tape tape;
    Pass pass{tape, Mode::kTrain, nullptr};
    const Tensor probs = probe.forward(pass, Tensor({b, width}, std::move(xb)), 0.0, true);
    tape.backward(ops::nll(tape, probs, yb));
    opt.step();
  }

  Tape tape;
  tape.freeze();
  Pass pass{tape, Mode::kEval, nullptr};
  const Tensor probs = probe.forward(pass, Tensor({test_y.size(), width}, std::move(test_x)), 0.0,
                                     false);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test_y.size(); ++r) {
    if (argmax_row(probs, r) == test_y[r]) ++correct;
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(test_y.size());
  return result;
}

ModelConfig ablation_mode(ModelConfig cfg, ModelMode mode) {
  cfg.mode = mode;
  return cfg;
}

}  // namespace man
