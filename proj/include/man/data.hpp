#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace man::data {

inline constexpr int kNoLabel = -1;

// Sorted by index, no duplicate indices.
struct SparseVector {
  std::vector<std::int32_t> index;
  std::vector<double> value;

  bool operator==(const SparseVector&) const = default;
};

// Token ids into an embedding table; 0 is the shared out-of-vocabulary row.
using TokenSequence = std::vector<std::int32_t>;
using Payload = std::variant<SparseVector, TokenSequence>;

enum class PayloadKind { kSparse, kTokens };

struct LabeledSample {
  Payload x;
  int label = 0;
};

struct LabeledCorpus {
  std::string domain_id;
  std::vector<LabeledSample> samples;
};

struct UnlabeledCorpus {
  std::string domain_id;
  std::vector<Payload> samples;
};

enum class DomainRole { kLabeled, kUnlabeledOnly };

std::string to_string(DomainRole role);
DomainRole parse_domain_role(const std::string& text);

// Unlabeled-only domains have empty train/dev; their test corpus (if any) is
// only used for zero-domain-vector evaluation.
struct Domain {
  std::string id;
  DomainRole role = DomainRole::kLabeled;
  LabeledCorpus train;
  LabeledCorpus dev;
  LabeledCorpus test;
  UnlabeledCorpus unlabeled;
};

// Row 0 is the out-of-vocabulary row; word w_k lives in row k + 1.
// Empty `values` means no pretrained vectors: the model initializes them.
struct EmbeddingTable {
  std::vector<std::string> words;
  std::size_t dim = 0;
  std::vector<double> values;  // (words.size() + 1) x dim, row-major

  std::size_t rows() const { return words.size() + 1; }
};

struct DomainSet {
  std::vector<Domain> domains;  // config order; domain index = position
  std::size_t num_classes = 2;
  PayloadKind kind = PayloadKind::kSparse;
  std::size_t input_dim = 0;  // sparse payloads: width of the dense input
  std::optional<EmbeddingTable> embeddings;  // token payloads

  std::size_t size() const { return domains.size(); }
  std::size_t index_of(const std::string& id) const;  // DataError if absent
  std::vector<std::size_t> labeled_indices() const;
  std::vector<std::size_t> unlabeled_only_indices() const;
  // Checks unique ids, at least one domain, payload kinds, index and label
  // ranges. Throws DataError naming the offending domain.
  void validate() const;
};

// ---- raw corpora and preprocessing -----------------------------------------

// A document before vectorization. Bag-of-features lines give (feature,
// count) pairs; text lines give their tokens in order, each with count 1.
struct RawSample {
  int label = kNoLabel;
  std::vector<std::pair<std::string, double>> features;
};

struct RawCorpus {
  std::string domain_id;
  bool labeled = true;
  std::vector<RawSample> samples;
};

struct Vocabulary {
  std::vector<std::string> features;  // index -> feature
  std::unordered_map<std::string, std::int32_t> index;
  std::string warning;  // nonempty when fewer than the requested size exist

  std::size_t size() const { return features.size(); }
  std::optional<std::int32_t> find(const std::string& feature) const;
};

// Top-`size` features by total count over the given samples; ties go to the
// lexicographically smaller feature.
Vocabulary build_vocabulary(const std::vector<const RawCorpus*>& corpora, std::size_t size);
Vocabulary vocabulary_from_words(const std::vector<std::string>& words);

// Drops out-of-vocabulary features, sums repeated features.
SparseVector vectorize(const RawSample& sample, const Vocabulary& vocab);
// Token i maps to vocab index + 1, out-of-vocabulary tokens to 0.
TokenSequence tokenize(const RawSample& sample, const Vocabulary& vocab);

std::vector<double> densify(const SparseVector& v, std::size_t width);

struct FoldIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> test;
};

// Seeded shuffle into `folds` near-equal folds (earlier folds take the
// remainder). Split i uses fold i as test, fold (i + 1) % folds as dev and
// the rest as train, each list in ascending order.
std::vector<FoldIndices> kfold_split(std::size_t n, std::size_t folds, std::uint64_t seed);

// ---- file formats ----------------------------------------------------------

// "label<TAB>feat:count feat:count ..." per line, or the feature list alone
// for unlabeled files. Labels must be integers in [0, num_classes).
RawCorpus load_bof_corpus(const std::filesystem::path& path, bool labeled,
                          std::size_t num_classes, const std::string& domain_id);
void write_bof_corpus(const std::filesystem::path& path, const RawCorpus& corpus);

// Whitespace-tokenized documents, one per line, optionally "label<TAB>" first.
// Empty lines are kept as empty documents.
RawCorpus load_text_corpus(const std::filesystem::path& path, bool labeled,
                           std::size_t num_classes, const std::string& domain_id);

// "word v1 ... v_dim" per line.
EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t dim = 100);

// ---- dataset manifest ------------------------------------------------------

struct ManifestDomain {
  std::string id;
  DomainRole role = DomainRole::kLabeled;
  std::string labeled;    // labeled file (labeled domains)
  std::string unlabeled;  // optional for labeled domains, required otherwise
  std::string test;       // optional explicit test file
};

struct Manifest {
  std::string format = "bof";  // bof | text
  std::size_t num_classes = 2;
  std::size_t vocab_size = 5000;
  std::size_t folds = 5;
  std::string embeddings;  // optional, text format only
  std::size_t embed_dim = 100;
  std::vector<ManifestDomain> domains;
  std::filesystem::path base_dir;  // relative file paths resolve against this
};

Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct RawDomain {
  std::string id;
  DomainRole role = DomainRole::kLabeled;
  RawCorpus labeled;
  std::optional<RawCorpus> unlabeled;
  std::optional<RawCorpus> test;
};

std::vector<RawDomain> load_raw_domains(const Manifest& manifest);

// Builds one cross-validation split. Labeled domains without a test file get
// train/dev/test from kfold_split(fold); with a test file, the fold's test
// and train parts both go to train. The vocabulary (bag-of-features, or text
// without embeddings) is built from the training parts plus unlabeled data.
DomainSet assemble_fold(const Manifest& manifest, const std::vector<RawDomain>& raw,
                        std::size_t fold, std::uint64_t seed, std::string* warning = nullptr);

// ---- synthetic multi-domain data -------------------------------------------

struct SynthConfig {
  std::size_t n_labeled = 3;
  std::size_t n_unlabeled_only = 1;
  std::size_t n_train = 200;      // per labeled domain
  std::size_t n_dev = 100;        // per labeled domain
  std::size_t n_test = 200;       // per domain
  std::size_t n_unlabeled = 200;  // per domain
  std::size_t dim = 32;
  double shared_signal = 1.0;
  double domain_signal = 1.0;
  double offset_scale = 3.0;
  double noise = 1.0;
  std::uint64_t seed = 1;
};

// Binary labels y with sign s = 2y - 1. Domain i draws
//   x = offset_i + s * (shared_signal * u + domain_signal * v_i) + noise * eps
// with u, every v_i and every offset direction mutually orthonormal, and
// |offset_i| = offset_scale. Domains are "d0", "d1", ... with the
// unlabeled-only ones last.
DomainSet synth_generate(const SynthConfig& cfg);

// Writes the synth_generate samples under `dir` as bag-of-features files with
// features "f0", "f1", ... (labeled file = train + dev, test file = test) and
// returns the matching manifest, also saved as dir/manifest.json.
Manifest synth_write(const SynthConfig& cfg, const std::filesystem::path& dir);

}  // namespace man::data
