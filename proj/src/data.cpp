#include "man/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "man/errors.hpp"
#include "man/rng.hpp"

namespace man::data {
namespace {

std::string located(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
  return path.string() + ":" + std::to_string(line) + ": " + msg;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (lines.empty()) throw DataError(path.string() + ": empty file");
  return lines;
}

std::vector<std::string_view> split_ws(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t') ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Splits an optional "label<TAB>" prefix off a line.
std::string_view take_label(std::string_view line, bool labeled, std::size_t num_classes,
                            const std::filesystem::path& path, std::size_t lineno, int& label) {
  label = kNoLabel;
  if (!labeled) return line;
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) {
    throw DataError(located(path, lineno, "missing label column"));
  }
  const std::string_view field = line.substr(0, tab);
  int value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError(located(path, lineno, "label '" + std::string(field) + "' is not an integer"));
  }
  if (value < 0 || static_cast<std::size_t>(value) >= num_classes) {
    throw DataError(located(path, lineno, "unknown label " + std::to_string(value) +
                                              " (expected 0.." +
                                              std::to_string(num_classes - 1) + ")"));
  }
  label = value;
  return line.substr(tab + 1);
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

std::string to_string(DomainRole role) {
  return role == DomainRole::kLabeled ? "labeled" : "unlabeled-only";
}

DomainRole parse_domain_role(const std::string& text) {
  if (text == "labeled") return DomainRole::kLabeled;
  if (text == "unlabeled-only" || text == "unlabeled") return DomainRole::kUnlabeledOnly;
  throw DataError("unknown domain role '" + text + "' (expected labeled or unlabeled-only)");
}

std::size_t DomainSet::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].id == id) return i;
  }
  throw DataError("unknown domain '" + id + "'");
}

std::vector<std::size_t> DomainSet::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].role == DomainRole::kLabeled) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> DomainSet::unlabeled_only_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].role == DomainRole::kUnlabeledOnly) out.push_back(i);
  }
  return out;
}

void DomainSet::validate() const {
  if (domains.empty()) throw DataError("domain set is empty");
  if (num_classes < 2) throw DataError("need at least 2 classes");
  std::set<std::string> seen;
  const std::size_t vocab_rows = embeddings ? embeddings->rows() : 0;
  auto check_payload = [&](const Payload& x, const std::string& where) {
    if (kind == PayloadKind::kSparse) {
      const auto* v = std::get_if<SparseVector>(&x);
      if (!v) throw DataError(where + ": expected a sparse vector");
      if (v->index.size() != v->value.size()) throw DataError(where + ": ragged sparse vector");
      for (auto k : v->index) {
        if (k < 0 || static_cast<std::size_t>(k) >= input_dim) {
          throw DataError(where + ": feature index " + std::to_string(k) + " outside [0," +
                          std::to_string(input_dim) + ")");
        }
      }
    } else {
      const auto* t = std::get_if<TokenSequence>(&x);
      if (!t) throw DataError(where + ": expected a token sequence");
      for (auto k : *t) {
        if (k < 0 || static_cast<std::size_t>(k) >= vocab_rows) {
          throw DataError(where + ": token id " + std::to_string(k) + " outside the embedding table");
        }
      }
    }
  };
  auto check_labeled = [&](const LabeledCorpus& c, const std::string& where) {
    for (std::size_t i = 0; i < c.samples.size(); ++i) {
      const auto& s = c.samples[i];
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
        throw DataError(where + " sample " + std::to_string(i) + ": label " +
                        std::to_string(s.label) + " out of range");
      }
      check_payload(s.x, where + " sample " + std::to_string(i));
    }
  };
  if (kind == PayloadKind::kTokens && !embeddings) {
    throw DataError("token payloads need an embedding table");
  }
  for (const auto& d : domains) {
    if (!seen.insert(d.id).second) throw DataError("duplicate domain id '" + d.id + "'");
    if (d.role == DomainRole::kLabeled && d.train.samples.empty()) {
      throw DataError("domain '" + d.id + "': labeled domain without training samples");
    }
    if (d.role == DomainRole::kUnlabeledOnly && d.unlabeled.samples.empty()) {
      throw DataError("domain '" + d.id + "': unlabeled-only domain without unlabeled samples");
    }
    check_labeled(d.train, "domain '" + d.id + "' train");
    check_labeled(d.dev, "domain '" + d.id + "' dev");
    check_labeled(d.test, "domain '" + d.id + "' test");
    for (std::size_t i = 0; i < d.unlabeled.samples.size(); ++i) {
      check_payload(d.unlabeled.samples[i],
                    "domain '" + d.id + "' unlabeled sample " + std::to_string(i));
    }
  }
}

std::optional<std::int32_t> Vocabulary::find(const std::string& feature) const {
  auto it = index.find(feature);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocabulary(const std::vector<const RawCorpus*>& corpora, std::size_t size) {
  if (size == 0) throw ConfigError("vocabulary size must be at least 1");
  std::map<std::string, double> counts;
  for (const RawCorpus* c : corpora) {
    for (const auto& s : c->samples) {
      for (const auto& [f, n] : s.features) counts[f] += n;
    }
  }
  std::vector<std::pair<std::string, double>> ranked(counts.begin(), counts.end());
  // map order is lexicographic, so a stable sort on count keeps ties lexicographic
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  if (ranked.size() < size) {
    vocab.warning = "requested " + std::to_string(size) + " features but only " +
                    std::to_string(ranked.size()) + " distinct features exist";
  }
  const std::size_t keep = std::min(size, ranked.size());
  for (std::size_t i = 0; i < keep; ++i) {
    vocab.index.emplace(ranked[i].first, static_cast<std::int32_t>(i));
    vocab.features.push_back(std::move(ranked[i].first));
  }
  return vocab;
}

Vocabulary vocabulary_from_words(const std::vector<std::string>& words) {
  Vocabulary vocab;
  for (const auto& w : words) {
    if (vocab.index.emplace(w, static_cast<std::int32_t>(vocab.features.size())).second) {
      vocab.features.push_back(w);
    }
  }
  return vocab;
}

SparseVector vectorize(const RawSample& sample, const Vocabulary& vocab) {
  std::map<std::int32_t, double> acc;
  for (const auto& [f, n] : sample.features) {
    if (auto k = vocab.find(f)) acc[*k] += n;
  }
  SparseVector out;
  out.index.reserve(acc.size());
  out.value.reserve(acc.size());
  for (const auto& [k, v] : acc) {
    out.index.push_back(k);
    out.value.push_back(v);
  }
  return out;
}

TokenSequence tokenize(const RawSample& sample, const Vocabulary& vocab) {
  TokenSequence out;
  out.reserve(sample.features.size());
  for (const auto& [f, n] : sample.features) {
    auto k = vocab.find(f);
    out.push_back(k ? *k + 1 : 0);
  }
  return out;
}

std::vector<double> densify(const SparseVector& v, std::size_t width) {
  std::vector<double> out(width, 0.0);
  for (std::size_t i = 0; i < v.index.size(); ++i) {
    const auto k = static_cast<std::size_t>(v.index[i]);
    if (k >= width) {
      throw DimensionError("densify: index " + std::to_string(k) + " outside width " +
                           std::to_string(width));
    }
    out[k] += v.value[i];
  }
  return out;
}

std::vector<FoldIndices> kfold_split(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 3) throw ConfigError("kfold_split: need at least 3 folds");
  if (n < folds) {
    throw DataError("kfold_split: corpus of " + std::to_string(n) + " samples cannot fill " +
                    std::to_string(folds) + " folds");
  }
  std::vector<std::size_t> perm = all_indices(n);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));

  std::vector<std::vector<std::size_t>> parts(folds);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t len = n / folds + (f < n % folds ? 1 : 0);
    parts[f].assign(perm.begin() + pos, perm.begin() + pos + len);
    pos += len;
  }
  std::vector<FoldIndices> out(folds);
  for (std::size_t i = 0; i < folds; ++i) {
    out[i].test = parts[i];
    out[i].dev = parts[(i + 1) % folds];
    for (std::size_t f = 0; f < folds; ++f) {
      if (f != i && f != (i + 1) % folds) {
        out[i].train.insert(out[i].train.end(), parts[f].begin(), parts[f].end());
      }
    }
    std::sort(out[i].train.begin(), out[i].train.end());
    std::sort(out[i].dev.begin(), out[i].dev.end());
    std::sort(out[i].test.begin(), out[i].test.end());
  }
  return out;
}

RawCorpus load_bof_corpus(const std::filesystem::path& path, bool labeled,
                          std::size_t num_classes, const std::string& domain_id) {
  const auto lines = read_lines(path);
  RawCorpus corpus{domain_id, labeled, {}};
  corpus.samples.reserve(lines.size());
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    RawSample sample;
    const std::string_view body = take_label(lines[ln], labeled, num_classes, path, ln + 1,
                                             sample.label);
    for (std::string_view tok : split_ws(body)) {
      const auto colon = tok.rfind(':');
      if (colon == std::string_view::npos || colon == 0) {
        throw DataError(located(path, ln + 1, "expected feature:count, got '" +
                                                  std::string(tok) + "'"));
      }
      double count = 0.0;
      if (!parse_double(tok.substr(colon + 1), count)) {
        throw DataError(located(path, ln + 1, "bad count in '" + std::string(tok) + "'"));
      }
      sample.features.emplace_back(std::string(tok.substr(0, colon)), count);
    }
    corpus.samples.push_back(std::move(sample));
  }
  return corpus;
}

void write_bof_corpus(const std::filesystem::path& path, const RawCorpus& corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : corpus.samples) {
    if (corpus.labeled) out << s.label << '\t';
    for (std::size_t i = 0; i < s.features.size(); ++i) {
      if (i) out << ' ';
      out << s.features[i].first << ':' << format_double(s.features[i].second);
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

RawCorpus load_text_corpus(const std::filesystem::path& path, bool labeled,
                           std::size_t num_classes, const std::string& domain_id) {
  const auto lines = read_lines(path);
  RawCorpus corpus{domain_id, labeled, {}};
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    RawSample sample;
    const std::string_view body = take_label(lines[ln], labeled, num_classes, path, ln + 1,
                                             sample.label);
    for (std::string_view tok : split_ws(body)) sample.features.emplace_back(std::string(tok), 1.0);
    corpus.samples.push_back(std::move(sample));
  }
  return corpus;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t dim) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  const auto lines = read_lines(path);
  EmbeddingTable table;
  table.dim = dim;
  table.values.assign(dim, 0.0);  // OOV row
  std::set<std::string> seen;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto fields = split_ws(lines[ln]);
    if (fields.empty()) continue;
    if (fields.size() != dim + 1) {
      throw DataError(located(path, ln + 1, "expected a word and " + std::to_string(dim) +
                                                " values, got " +
                                                std::to_string(fields.size() - 1) + " values"));
    }
    std::string word(fields[0]);
    if (!seen.insert(word).second) {
      throw DataError(located(path, ln + 1, "duplicate word '" + word + "'"));
    }
    for (std::size_t k = 1; k <= dim; ++k) {
      double v = 0.0;
      if (!parse_double(fields[k], v)) {
        throw DataError(located(path, ln + 1, "bad value '" + std::string(fields[k]) + "'"));
      }
      table.values.push_back(v);
    }
    table.words.push_back(std::move(word));
  }
  if (table.words.empty()) throw DataError(path.string() + ": no embedding rows");
  return table;
}

}  // namespace man::data
