#include "man/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <set>

#include "man/errors.hpp"
#include "man/ops.hpp"

namespace man {
namespace {

using nlohmann::json;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

std::string to_string(ExtractorKind kind) { return kind == ExtractorKind::kMlp ? "mlp" : "cnn"; }

ExtractorKind parse_extractor_kind(std::string_view text) {
  if (text == "mlp") return ExtractorKind::kMlp;
  if (text == "cnn") return ExtractorKind::kCnn;
  throw ConfigError("unknown extractor '" + std::string(text) + "' (expected mlp or cnn)");
}

std::string to_string(ModelMode mode) {
  switch (mode) {
    case ModelMode::kSharedPrivate: return "shared-private";
    case ModelMode::kSharedOnly: return "shared-only";
    case ModelMode::kDomainOnly: return "domain-only";
  }
  return "?";
}

ModelMode parse_model_mode(std::string_view text) {
  if (text == "shared-private") return ModelMode::kSharedPrivate;
  if (text == "shared-only") return ModelMode::kSharedOnly;
  if (text == "domain-only") return ModelMode::kDomainOnly;
  throw ConfigError("unknown mode '" + std::string(text) +
                    "' (expected shared-private, shared-only or domain-only)");
}

void ModelConfig::validate() const {
  require(shared_dim > 0 && domain_dim > 0, "feature sizes must be positive");
  require(num_classes >= 2, "need at least 2 classes");
  require(!domains.empty(), "model needs at least one domain");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  std::set<std::string> ids(domains.begin(), domains.end());
  require(ids.size() == domains.size(), "duplicate domain id in model config");
  std::set<std::string> labeled;
  for (const auto& d : labeled_domains) {
    require(ids.count(d) == 1, "labeled domain '" + d + "' is not among the model's domains");
    require(labeled.insert(d).second, "labeled domain '" + d + "' listed twice");
  }
  require(!labeled_domains.empty(), "model needs at least one labeled domain");
  if (extractor.kind == ExtractorKind::kMlp) {
    require(extractor.input_dim > 0, "mlp input size must be positive");
    for (auto h : extractor.hidden_dims) require(h > 0, "mlp hidden sizes must be positive");
  } else {
    require(extractor.embed_dim > 0 && extractor.kernels_per_width > 0,
            "cnn embedding size and kernel count must be positive");
    require(!extractor.kernel_widths.empty(), "cnn needs at least one kernel width");
    for (auto w : extractor.kernel_widths) require(w > 0, "cnn kernel widths must be positive");
    require(vocab_rows > 0, "cnn needs an embedding table");
  }
}

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["extractor"] = {{"kind", to_string(c.extractor.kind)},
                    {"input_dim", c.extractor.input_dim},
                    {"hidden_dims", c.extractor.hidden_dims},
                    {"embed_dim", c.extractor.embed_dim},
                    {"kernel_widths", c.extractor.kernel_widths},
                    {"kernels_per_width", c.extractor.kernels_per_width}};
  j["shared_dim"] = c.shared_dim;
  j["domain_dim"] = c.domain_dim;
  j["num_classes"] = c.num_classes;
  j["domains"] = c.domains;
  j["labeled_domains"] = c.labeled_domains;
  j["dropout"] = c.dropout;
  j["loss"] = to_string(c.loss);
  j["mode"] = to_string(c.mode);
  j["vocab_rows"] = c.vocab_rows;
  j["train_embeddings"] = c.train_embeddings;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    const json& e = j.at("extractor");
    c.extractor.kind = parse_extractor_kind(e.at("kind").get<std::string>());
    c.extractor.input_dim = e.at("input_dim");
    c.extractor.hidden_dims = e.at("hidden_dims").get<std::vector<std::size_t>>();
    c.extractor.embed_dim = e.at("embed_dim");
    c.extractor.kernel_widths = e.at("kernel_widths").get<std::vector<std::size_t>>();
    c.extractor.kernels_per_width = e.at("kernels_per_width");
    c.shared_dim = j.at("shared_dim");
    c.domain_dim = j.at("domain_dim");
    c.num_classes = j.at("num_classes");
    c.domains = j.at("domains").get<std::vector<std::string>>();
    c.labeled_domains = j.at("labeled_domains").get<std::vector<std::string>>();
    c.dropout = j.at("dropout");
    c.loss = parse_loss_variant(j.at("loss").get<std::string>());
    c.mode = parse_model_mode(j.at("mode").get<std::string>());
    c.vocab_rows = j.at("vocab_rows");
    c.train_embeddings = j.at("train_embeddings");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

Batch make_batch(std::span<const data::Payload* const> payloads, const ModelConfig& cfg) {
  Batch batch;
  if (payloads.empty()) throw DataError("empty mini-batch");
  if (cfg.extractor.kind == ExtractorKind::kMlp) {
    const std::size_t width = cfg.extractor.input_dim;
    std::vector<double> values(payloads.size() * width, 0.0);
    for (std::size_t b = 0; b < payloads.size(); ++b) {
      const auto* v = std::get_if<data::SparseVector>(payloads[b]);
      if (!v) throw ConfigError("mlp extractor needs bag-of-features input");
      for (std::size_t k = 0; k < v->index.size(); ++k) {
        const auto idx = static_cast<std::size_t>(v->index[k]);
        if (idx >= width) {
          throw ConfigError("feature index " + std::to_string(idx) +
                            " outside the extractor input size " + std::to_string(width));
        }
        values[b * width + idx] += v->value[k];
      }
    }
    batch.dense = Tensor({payloads.size(), width}, std::move(values));
  } else {
    for (const auto* p : payloads) {
      const auto* t = std::get_if<data::TokenSequence>(p);
      if (!t) throw ConfigError("cnn extractor needs token input");
      batch.tokens.push_back(t);
    }
  }
  return batch;
}

// ---- extractor -------------------------------------------------------------

Extractor::Extractor(const ExtractorConfig& cfg, std::size_t output_dim, Rng& rng)
    : kind_(cfg.kind), input_dim_(cfg.input_dim) {
  std::size_t width = 0;
  if (kind_ == ExtractorKind::kMlp) {
    width = cfg.input_dim;
    for (std::size_t h : cfg.hidden_dims) {
      hidden_.emplace_back(width, h, rng);
      width = h;
    }
  } else {
    for (std::size_t w : cfg.kernel_widths) {
      const std::size_t k = cfg.kernels_per_width;
      kernels_.push_back(glorot_uniform({w, cfg.embed_dim, k}, w * cfg.embed_dim, k, rng));
      kernel_biases_.push_back(Tensor::zeros({k}, true));
      widths_.push_back(w);
    }
    width = cfg.kernel_widths.size() * cfg.kernels_per_width;
  }
  out_ = Linear(width, output_dim, rng);
}

Tensor Extractor::forward(const Pass& pass, const Batch& batch, const Tensor* embeddings,
                          double dropout) const {
  Tape& tape = pass.tape;
  Tensor h;
  if (kind_ == ExtractorKind::kMlp) {
    if (!batch.dense.defined() || batch.dense.rank() != 2 || batch.dense.dim(1) != input_dim_) {
      throw ConfigError("extractor expects inputs of width " + std::to_string(input_dim_) +
                        ", got " +
                        (batch.dense.defined() ? shape_to_string(batch.dense.shape()) : "none"));
    }
    h = batch.dense;
    for (const auto& layer : hidden_) {
      h = ops::dropout(tape, h, dropout, pass.mode, pass.rng);
      h = ops::relu(tape, layer.forward(tape, h));
    }
  } else {
    if (!embeddings || !embeddings->defined()) throw ConfigError("cnn extractor needs embeddings");
    if (batch.tokens.empty()) throw ConfigError("cnn extractor expects token input");
    const std::size_t longest = *std::max_element(widths_.begin(), widths_.end());
    std::vector<Tensor> pooled;
    pooled.reserve(batch.tokens.size());
    for (const auto* doc : batch.tokens) {
      Tensor emb = ops::embedding(tape, *embeddings, *doc, longest);
      pooled.push_back(ops::conv1d_maxpool(tape, emb, kernels_, kernel_biases_));
    }
    h = ops::stack_rows(tape, pooled);
  }
  h = ops::dropout(tape, h, dropout, pass.mode, pass.rng);
  return ops::relu(tape, out_.forward(tape, h));
}

void Extractor::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    hidden_[i].collect(prefix + ".hidden" + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    const std::string name = prefix + ".conv" + std::to_string(widths_[i]);
    out.push_back({name + ".weight", kernels_[i]});
    out.push_back({name + ".bias", kernel_biases_[i]});
  }
  out_.collect(prefix + ".out", out);
}

// ---- heads -----------------------------------------------------------------

MlpHead::MlpHead(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : hidden_(in, hidden, rng), norm_(hidden), out_(hidden, out, rng) {}

Tensor MlpHead::forward(const Pass& pass, const Tensor& x, double dropout, bool update_running) {
  if (x.rank() != 2 || x.dim(1) != hidden_.in_features()) {
    throw DimensionError("head expects inputs of width " + std::to_string(hidden_.in_features()) +
                         ", got " + shape_to_string(x.shape()));
  }
  Tape& tape = pass.tape;
  Tensor h = ops::dropout(tape, x, dropout, pass.mode, pass.rng);
  h = hidden_.forward(tape, h);
  h = ops::relu(tape, norm_.forward(pass, h, update_running));
  return ops::softmax(tape, out_.forward(tape, h));
}

void MlpHead::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  hidden_.collect(prefix + ".hidden", out);
  norm_.collect(prefix + ".norm", out);
  out_.collect(prefix + ".out", out);
}

void MlpHead::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
  norm_.collect_buffers(prefix + ".norm", out);
}

// ---- model -----------------------------------------------------------------

ManModel::ManModel(ModelConfig cfg, std::uint64_t seed, const data::EmbeddingTable* pretrained)
    : cfg_(std::move(cfg)) {
  if (cfg_.extractor.kind == ExtractorKind::kCnn && pretrained && cfg_.vocab_rows == 0) {
    cfg_.vocab_rows = pretrained->rows();
  }
  cfg_.validate();

  if (cfg_.extractor.kind == ExtractorKind::kCnn) {
    const std::size_t rows = cfg_.vocab_rows;
    const std::size_t dim = cfg_.extractor.embed_dim;
    std::vector<double> values(rows * dim, 0.0);
    if (pretrained && !pretrained->values.empty()) {
      if (pretrained->rows() != rows || pretrained->dim != dim) {
        throw ConfigError("pretrained embeddings are " + std::to_string(pretrained->rows()) +
                          "x" + std::to_string(pretrained->dim) + ", model expects " +
                          std::to_string(rows) + "x" + std::to_string(dim));
      }
      values = pretrained->values;
    } else {
      Rng rng(derive_seed(seed, "init-embeddings"));
      for (std::size_t i = dim; i < values.size(); ++i) values[i] = 0.1 * rng.normal();
    }
    embeddings_ = Tensor({rows, dim}, std::move(values), cfg_.train_embeddings);
  }

  if (has_shared()) {
    Rng rng(derive_seed(seed, "init-shared"));
    shared_.emplace(cfg_.extractor, cfg_.shared_dim, rng);
  }
  for (const auto& id : cfg_.labeled_domains) {
    if (cfg_.mode == ModelMode::kSharedOnly) break;
    Rng rng(derive_seed(seed, "init-private-" + id));
    private_.emplace(id, Extractor(cfg_.extractor, cfg_.domain_dim, rng));
  }
  {
    Rng rng(derive_seed(seed, "init-classifier"));
    const std::size_t in = cfg_.shared_dim + cfg_.domain_dim;
    classifier_ = MlpHead(in, in, cfg_.num_classes, rng);
  }
  if (has_discriminator()) {
    Rng rng(derive_seed(seed, "init-discriminator"));
    discriminator_.emplace(cfg_.shared_dim, cfg_.shared_dim, cfg_.num_domains(), rng);
  }
}

bool ManModel::has_domain_extractor(const std::string& domain) const {
  return private_.count(domain) == 1;
}

std::size_t ManModel::domain_index(const std::string& domain) const {
  auto it = std::find(cfg_.domains.begin(), cfg_.domains.end(), domain);
  if (it == cfg_.domains.end()) throw ConfigError("unknown domain '" + domain + "'");
  return static_cast<std::size_t>(it - cfg_.domains.begin());
}

Tensor ManModel::forward_shared(const Pass& pass, const Batch& batch) const {
  if (!shared_) throw ConfigError("model has no shared extractor (mode " + to_string(cfg_.mode) + ")");
  return shared_->forward(pass, batch, &embeddings_, cfg_.dropout);
}

Tensor ManModel::forward_domain(const Pass& pass, const Batch& batch,
                                const std::string& domain) const {
  auto it = private_.find(domain);
  if (it == private_.end()) {
    throw ConfigError("no domain feature extractor for domain '" + domain + "'");
  }
  return it->second.forward(pass, batch, &embeddings_, cfg_.dropout);
}

Tensor ManModel::classify(const Pass& pass, const Tensor* f_s, const Tensor* f_d) {
  if (!f_s && !f_d) throw DimensionError("classify needs shared or domain features");
  auto check = [](const Tensor* t, std::size_t width, const char* what) {
    if (t && (t->rank() != 2 || t->dim(1) != width)) {
      throw DimensionError(std::string(what) + " features must be [B x " + std::to_string(width) +
                           "], got " + shape_to_string(t->shape()));
    }
  };
  check(f_s, cfg_.shared_dim, "shared");
  check(f_d, cfg_.domain_dim, "domain");
  const std::size_t b = f_s ? f_s->dim(0) : f_d->dim(0);
  if (f_s && f_d && f_d->dim(0) != b) {
    throw DimensionError("shared and domain features have different batch sizes");
  }
  const Tensor s = f_s ? *f_s : Tensor::zeros({b, cfg_.shared_dim});
  const Tensor d = f_d ? *f_d : Tensor::zeros({b, cfg_.domain_dim});
  const Tensor joined = ops::concat_cols(pass.tape, s, d);
  return classifier_.forward(pass, joined, cfg_.dropout, true);
}

Tensor ManModel::discriminate(const Pass& pass, const Tensor& f_s, bool update_running) {
  if (!discriminator_) {
    throw ConfigError("model has no discriminator (mode " + to_string(cfg_.mode) + ")");
  }
  return discriminator_->forward(pass, f_s, cfg_.dropout, update_running);
}

std::vector<NamedTensor> ManModel::main_parameters() const {
  std::vector<NamedTensor> out;
  if (shared_) shared_->collect("f_s", out);
  for (const auto& [id, ex] : private_) ex.collect("f_d." + id, out);
  classifier_.collect("c", out);
  if (embeddings_.defined() && cfg_.train_embeddings) out.push_back({"emb.weight", embeddings_});
  return out;
}

std::vector<NamedTensor> ManModel::discriminator_parameters() const {
  std::vector<NamedTensor> out;
  if (discriminator_) discriminator_->collect("d", out);
  return out;
}

std::vector<NamedTensor> ManModel::state() const {
  std::vector<NamedTensor> out;
  if (shared_) shared_->collect("f_s", out);
  for (const auto& [id, ex] : private_) ex.collect("f_d." + id, out);
  classifier_.collect("c", out);
  classifier_.collect_buffers("c", out);
  if (discriminator_) {
    discriminator_->collect("d", out);
    discriminator_->collect_buffers("d", out);
  }
  if (embeddings_.defined()) out.push_back({"emb.weight", embeddings_});
  return out;
}

void ManModel::load_state(const std::vector<NamedTensor>& incoming) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& n : incoming) by_name[n.name] = &n.tensor;
  for (auto& target : state()) {
    auto it = by_name.find(target.name);
    if (it == by_name.end()) throw StateError("state is missing '" + target.name + "'");
    const Tensor& src = *it->second;
    if (src.shape() != target.tensor.shape()) {
      throw StateError("state entry '" + target.name + "' has shape " +
                       shape_to_string(src.shape()) + ", expected " +
                       shape_to_string(target.tensor.shape()));
    }
    auto dst = target.tensor.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

ManModel ManModel::clone() const {
  ManModel copy(cfg_, 0);
  copy.load_state(state());
  return copy;
}

// ---- losses ----------------------------------------------------------------

Tensor classifier_loss(Tape& tape, const Tensor& probs, std::span<const std::size_t> labels) {
  return ops::nll(tape, probs, labels);
}

Tensor discriminator_loss(Tape& tape, const Tensor& d_hat, std::size_t domain,
                          LossVariant variant) {
  if (d_hat.rank() != 2 || domain >= d_hat.dim(1)) {
    throw DimensionError("discriminator output " + shape_to_string(d_hat.shape()) +
                         " has no domain " + std::to_string(domain));
  }
  const std::size_t b = d_hat.dim(0);
  const std::size_t n = d_hat.dim(1);
  if (variant == LossVariant::kNll) {
    std::vector<std::size_t> targets(b, domain);
    return ops::nll(tape, d_hat, targets);
  }
  std::vector<double> onehot(b * n, 0.0);
  for (std::size_t r = 0; r < b; ++r) onehot[r * n + domain] = 1.0;
  Tensor diff = ops::sub(tape, d_hat, Tensor({b, n}, std::move(onehot)));
  return ops::scale(tape, ops::sum(tape, ops::square(tape, diff)), 1.0 / static_cast<double>(b));
}

Tensor shared_domain_loss(Tape& tape, std::span<const Tensor> d_hats, LossVariant variant) {
  if (d_hats.empty()) throw DataError("shared_domain_loss needs one batch per domain");
  const std::size_t n = d_hats.size();
  Tensor total;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& d_hat = d_hats[i];
    if (d_hat.rank() != 2 || d_hat.dim(0) == 0) {
      throw DataError("empty discriminator batch for domain " + std::to_string(i));
    }
    if (d_hat.dim(1) != n) {
      throw DimensionError("discriminator output " + shape_to_string(d_hat.shape()) + " for " +
                           std::to_string(n) + " domains");
    }
    Tensor term;
    if (variant == LossVariant::kNll) {
      term = discriminator_loss(tape, d_hat, i, variant);
    } else {
      const std::size_t b = d_hat.dim(0);
      Tensor diff = ops::sub(tape, d_hat, Tensor::full({b, n}, 1.0 / static_cast<double>(n)));
      term = ops::scale(tape, ops::sum(tape, ops::square(tape, diff)),
                        1.0 / static_cast<double>(b));
    }
    total = total.defined() ? ops::add(tape, total, term) : term;
  }
  return variant == LossVariant::kNll ? ops::scale(tape, total, -1.0) : total;
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'A', 'N', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw DataError(path.string() + ": truncated checkpoint");
  return value;
}

std::string get_string(std::istream& in, std::uint64_t len, const std::filesystem::path& path) {
  if (len > (1u << 30)) throw DataError(path.string() + ": corrupt checkpoint");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ManModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::string cfg = config_to_json(model.config());
  put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto entries = model.state();
  put<std::uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    put<std::uint64_t>(out, e.name.size());
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint64_t>(out, e.tensor.rank());
    for (std::size_t d : e.tensor.shape()) put<std::uint64_t>(out, d);
    const auto values = e.tensor.data();
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed for checkpoint " + path.string());
}

ManModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path.string() + ": not a MAN checkpoint (bad format tag)");
  }
  const std::string cfg_text = get_string(in, get<std::uint64_t>(in, path), path);
  ManModel model(config_from_json(cfg_text), 0);
  const auto count = get<std::uint64_t>(in, path);
  std::vector<NamedTensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in, get<std::uint64_t>(in, path), path);
    const auto rank = get<std::uint64_t>(in, path);
    if (rank > 8) throw DataError(path.string() + ": corrupt checkpoint entry '" + name + "'");
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(get<std::uint64_t>(in, path));
    std::vector<double> values(shape_numel(shape));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw DataError(path.string() + ": truncated checkpoint");
    entries.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  try {
    model.load_state(entries);
  } catch (const StateError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return model;
}

}  // namespace man
