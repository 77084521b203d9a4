#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "man/data.hpp"
#include "man/loss_variant.hpp"
#include "man/nn.hpp"
#include "man/tensor.hpp"

namespace man {

enum class ExtractorKind { kMlp, kCnn };
std::string to_string(ExtractorKind kind);
ExtractorKind parse_extractor_kind(std::string_view text);

// Which components exist. shared-only drops every F_d (C sees f_s ++ 0);
// domain-only drops F_s and D (C sees 0 ++ f_d).
enum class ModelMode { kSharedPrivate, kSharedOnly, kDomainOnly };
std::string to_string(ModelMode mode);
ModelMode parse_model_mode(std::string_view text);

struct ExtractorConfig {
  ExtractorKind kind = ExtractorKind::kMlp;
  std::size_t input_dim = 5000;                 // mlp
  std::vector<std::size_t> hidden_dims{1000, 500};  // mlp
  std::size_t embed_dim = 100;                  // cnn
  std::vector<std::size_t> kernel_widths{3, 4, 5};  // cnn
  std::size_t kernels_per_width = 200;          // cnn
};

struct ModelConfig {
  ExtractorConfig extractor;
  std::size_t shared_dim = 128;
  std::size_t domain_dim = 64;
  std::size_t num_classes = 2;
  std::vector<std::string> domains;          // all N domains; index = position
  std::vector<std::string> labeled_domains;  // subset owning an F_d
  double dropout = 0.4;
  LossVariant loss = LossVariant::kNll;
  ModelMode mode = ModelMode::kSharedPrivate;
  std::size_t vocab_rows = 0;  // cnn: embedding rows, including the OOV row 0
  bool train_embeddings = true;

  // Throws ConfigError on nonpositive sizes, unknown or duplicate domains,
  // or a dropout outside [0, 1).
  void validate() const;
  std::size_t num_domains() const { return domains.size(); }
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

// A mini-batch in the form an extractor consumes: a dense [B x input_dim]
// matrix for the MLP, token sequences for the CNN.
struct Batch {
  Tensor dense;
  std::vector<const data::TokenSequence*> tokens;

  std::size_t size() const { return dense.numel() ? dense.dim(0) : tokens.size(); }
};

Batch make_batch(std::span<const data::Payload* const> payloads, const ModelConfig& cfg);

class Extractor {
 public:
  Extractor() = default;
  Extractor(const ExtractorConfig& cfg, std::size_t output_dim, Rng& rng);

  // MLP: [dropout, linear, relu] per hidden layer, then dropout, linear, relu.
  // CNN: conv + relu + max-over-time per document, then dropout, linear, relu.
  Tensor forward(const Pass& pass, const Batch& batch, const Tensor* embeddings,
                 double dropout) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  std::size_t output_dim() const { return out_.out_features(); }

 private:
  ExtractorKind kind_ = ExtractorKind::kMlp;
  std::size_t input_dim_ = 0;
  std::vector<Linear> hidden_;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> kernel_biases_;
  std::vector<std::size_t> widths_;
  Linear out_;
};

// Dropout, linear, batch norm, relu, linear, softmax.
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

  Tensor forward(const Pass& pass, const Tensor& x, double dropout, bool update_running);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;
  std::size_t in_features() const { return hidden_.in_features(); }

 private:
  Linear hidden_;
  BatchNorm1d norm_;
  Linear out_;
};

// Shared extractor F_s, one private extractor F_d per labeled domain,
// classifier C over [f_s ++ f_d] and domain discriminator D over f_s.
class ManModel {
 public:
  ManModel(ModelConfig cfg, std::uint64_t seed,
           const data::EmbeddingTable* pretrained = nullptr);

  const ModelConfig& config() const { return cfg_; }
  bool has_shared() const { return cfg_.mode != ModelMode::kDomainOnly; }
  bool has_discriminator() const { return has_shared(); }
  bool has_domain_extractor(const std::string& domain) const;
  std::size_t domain_index(const std::string& domain) const;  // ConfigError if unknown

  // [B x shared_dim]
  Tensor forward_shared(const Pass& pass, const Batch& batch) const;
  // [B x domain_dim]; ConfigError for a domain without a private extractor.
  Tensor forward_domain(const Pass& pass, const Batch& batch, const std::string& domain) const;
  // Class probabilities [B x C]. An absent part is replaced by zeros.
  Tensor classify(const Pass& pass, const Tensor* f_s, const Tensor* f_d);
  // Domain probabilities [B x N].
  Tensor discriminate(const Pass& pass, const Tensor& f_s, bool update_running = true);

  // F_s, every F_d, C and (if trainable) the embedding table.
  std::vector<NamedTensor> main_parameters() const;
  std::vector<NamedTensor> discriminator_parameters() const;
  // Parameters and batch-norm running statistics, the full checkpoint content.
  std::vector<NamedTensor> state() const;
  // Copies values by name; throws StateError on a missing key or shape mismatch.
  void load_state(const std::vector<NamedTensor>& state);

  ManModel clone() const;
  const Tensor& embeddings() const { return embeddings_; }

 private:
  ModelConfig cfg_;
  Tensor embeddings_;
  std::optional<Extractor> shared_;
  std::map<std::string, Extractor> private_;
  MlpHead classifier_;
  std::optional<MlpHead> discriminator_;
};

// Batch mean of -log y_hat[y].
Tensor classifier_loss(Tape& tape, const Tensor& probs, std::span<const std::size_t> labels);

// NLL: batch mean of -log d_hat[d]. L2: batch mean of sum_i (d_hat_i - 1{i=d})^2.
Tensor discriminator_loss(Tape& tape, const Tensor& d_hat, std::size_t domain,
                          LossVariant variant);

// The shared extractor's adversarial loss given D's output on one batch per
// domain (d_hats[i] from domain i). NLL: minus the sum over domains of
// discriminator_loss. L2: sum over domains of the batch mean of
// sum_j (d_hat_j - 1/N)^2.
Tensor shared_domain_loss(Tape& tape, std::span<const Tensor> d_hats, LossVariant variant);

void save_checkpoint(const std::filesystem::path& path, const ManModel& model);
ManModel load_checkpoint(const std::filesystem::path& path);

}  // namespace man
