#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "man/data.hpp"
#include "man/errors.hpp"
#include "man/rng.hpp"

namespace man::data {
namespace {

using nlohmann::json;

std::filesystem::path resolve(const Manifest& m, const std::string& file) {
  std::filesystem::path p(file);
  return p.is_absolute() ? p : m.base_dir / p;
}

RawCorpus load_any(const Manifest& m, const std::string& file, bool labeled,
                   const std::string& id) {
  const auto path = resolve(m, file);
  return m.format == "text" ? load_text_corpus(path, labeled, m.num_classes, id)
                            : load_bof_corpus(path, labeled, m.num_classes, id);
}

RawCorpus pick(const RawCorpus& raw, const std::vector<std::size_t>& idx) {
  RawCorpus out{raw.domain_id, raw.labeled, {}};
  out.samples.reserve(idx.size());
  for (std::size_t i : idx) out.samples.push_back(raw.samples.at(i));
  return out;
}

LabeledCorpus to_labeled(const RawCorpus& raw, const Vocabulary& vocab, PayloadKind kind) {
  LabeledCorpus out{raw.domain_id, {}};
  out.samples.reserve(raw.samples.size());
  for (const auto& s : raw.samples) {
    if (s.label == kNoLabel) throw DataError("domain '" + raw.domain_id + "': unlabeled sample in a labeled split");
    out.samples.push_back({kind == PayloadKind::kSparse ? Payload(vectorize(s, vocab))
                                                        : Payload(tokenize(s, vocab)),
                           s.label});
  }
  return out;
}

UnlabeledCorpus to_unlabeled(const RawCorpus& raw, const Vocabulary& vocab, PayloadKind kind) {
  UnlabeledCorpus out{raw.domain_id, {}};
  out.samples.reserve(raw.samples.size());
  for (const auto& s : raw.samples) {
    out.samples.push_back(kind == PayloadKind::kSparse ? Payload(vectorize(s, vocab))
                                                       : Payload(tokenize(s, vocab)));
  }
  return out;
}

// Gram-Schmidt on Gaussian draws.
std::vector<std::vector<double>> orthonormal_directions(std::size_t count, std::size_t dim,
                                                        Rng& rng) {
  std::vector<std::vector<double>> out;
  while (out.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& w : out) {
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += v[k] * w[k];
      for (std::size_t k = 0; k < dim; ++k) v[k] -= dot * w[k];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

std::string synth_id(std::size_t i) { return "d" + std::to_string(i); }

struct SynthDomain {
  std::vector<std::vector<double>> x[4];  // train, dev, test, unlabeled
  std::vector<int> y[3];
};

std::vector<SynthDomain> synth_samples(const SynthConfig& cfg) {
  const std::size_t n = cfg.n_labeled + cfg.n_unlabeled_only;
  if (n == 0) throw ConfigError("synthetic data needs at least one domain");
  if (cfg.dim < 2 * n + 1) {
    throw ConfigError("synthetic dim " + std::to_string(cfg.dim) + " too small for " +
                      std::to_string(n) + " domains (need at least " +
                      std::to_string(2 * n + 1) + ")");
  }
  if (cfg.shared_signal < 0 || cfg.domain_signal < 0 || cfg.noise < 0 || cfg.offset_scale < 0) {
    throw ConfigError("synthetic signal, offset and noise scales must be nonnegative");
  }
  Rng dir_rng(derive_seed(cfg.seed, "synth-directions"));
  const auto dirs = orthonormal_directions(2 * n + 1, cfg.dim, dir_rng);
  const auto& u = dirs[0];

  std::vector<SynthDomain> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = dirs[1 + i];
    const auto& m = dirs[1 + n + i];
    const bool labeled = i < cfg.n_labeled;
    const std::size_t sizes[4] = {labeled ? cfg.n_train : 0, labeled ? cfg.n_dev : 0, cfg.n_test,
                                  cfg.n_unlabeled};
    for (int split = 0; split < 4; ++split) {
      Rng rng(derive_seed(cfg.seed, "synth-" + synth_id(i), static_cast<std::uint64_t>(split)));
      for (std::size_t s = 0; s < sizes[split]; ++s) {
        const int y = static_cast<int>(rng.below(2));
        const double sign = y == 1 ? 1.0 : -1.0;
        std::vector<double> x(cfg.dim);
        for (std::size_t k = 0; k < cfg.dim; ++k) {
          x[k] = cfg.offset_scale * m[k] +
                 sign * (cfg.shared_signal * u[k] + cfg.domain_signal * v[k]) +
                 cfg.noise * rng.normal();
        }
        out[i].x[split].push_back(std::move(x));
        if (split < 3) out[i].y[split].push_back(y);
      }
    }
  }
  return out;
}

SparseVector dense_to_sparse(const std::vector<double>& x) {
  SparseVector v;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] == 0.0) continue;
    v.index.push_back(static_cast<std::int32_t>(k));
    v.value.push_back(x[k]);
  }
  return v;
}

RawSample dense_to_raw(const std::vector<double>& x, int label) {
  RawSample s;
  s.label = label;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] != 0.0) s.features.emplace_back("f" + std::to_string(k), x[k]);
  }
  return s;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  Manifest m;
  m.base_dir = path.parent_path();
  try {
    m.format = j.value("format", m.format);
    m.num_classes = j.value("num_classes", m.num_classes);
    m.vocab_size = j.value("vocab_size", m.vocab_size);
    m.folds = j.value("folds", m.folds);
    m.embeddings = j.value("embeddings", m.embeddings);
    m.embed_dim = j.value("embed_dim", m.embed_dim);
    if (!j.contains("domains") || !j["domains"].is_array()) {
      throw DataError(path.string() + ": missing 'domains' array");
    }
    for (const auto& d : j["domains"]) {
      ManifestDomain md;
      md.id = d.at("id").get<std::string>();
      md.role = parse_domain_role(d.value("role", std::string("labeled")));
      md.labeled = d.value("labeled", std::string());
      md.unlabeled = d.value("unlabeled", std::string());
      md.test = d.value("test", std::string());
      m.domains.push_back(std::move(md));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (m.format != "bof" && m.format != "text") {
    throw DataError(path.string() + ": format must be bof or text, got '" + m.format + "'");
  }
  if (m.domains.empty()) throw DataError(path.string() + ": no domains listed");
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  json j;
  j["format"] = m.format;
  j["num_classes"] = m.num_classes;
  j["vocab_size"] = m.vocab_size;
  j["folds"] = m.folds;
  if (!m.embeddings.empty()) j["embeddings"] = m.embeddings;
  j["embed_dim"] = m.embed_dim;
  j["domains"] = json::array();
  for (const auto& d : m.domains) {
    json e{{"id", d.id}, {"role", to_string(d.role)}};
    if (!d.labeled.empty()) e["labeled"] = d.labeled;
    if (!d.unlabeled.empty()) e["unlabeled"] = d.unlabeled;
    if (!d.test.empty()) e["test"] = d.test;
    j["domains"].push_back(std::move(e));
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<RawDomain> load_raw_domains(const Manifest& m) {
  std::vector<RawDomain> out;
  for (const auto& d : m.domains) {
    RawDomain r;
    r.id = d.id;
    r.role = d.role;
    if (d.role == DomainRole::kLabeled) {
      if (d.labeled.empty()) throw DataError("domain '" + d.id + "': labeled file missing");
      r.labeled = load_any(m, d.labeled, true, d.id);
    } else if (d.unlabeled.empty()) {
      throw DataError("domain '" + d.id + "': unlabeled-only domain needs an unlabeled file");
    }
    if (!d.unlabeled.empty()) r.unlabeled = load_any(m, d.unlabeled, false, d.id);
    if (!d.test.empty()) r.test = load_any(m, d.test, true, d.id);
    out.push_back(std::move(r));
  }
  return out;
}

DomainSet assemble_fold(const Manifest& m, const std::vector<RawDomain>& raw, std::size_t fold,
                        std::uint64_t seed, std::string* warning) {
  if (fold >= m.folds) {
    throw ConfigError("fold " + std::to_string(fold) + " outside [0," + std::to_string(m.folds) +
                      ")");
  }
  struct Parts {
    RawCorpus train, dev, test;
  };
  std::vector<Parts> parts(raw.size());
  std::vector<const RawCorpus*> vocab_sources;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const RawDomain& r = raw[i];
    Parts& p = parts[i];
    p.train = p.dev = p.test = RawCorpus{r.id, true, {}};
    if (r.role == DomainRole::kLabeled) {
      const auto splits = kfold_split(r.labeled.samples.size(), m.folds,
                                      derive_seed(seed, "kfold-" + r.id));
      const FoldIndices& f = splits[fold];
      p.dev = pick(r.labeled, f.dev);
      if (r.test) {
        auto train_idx = f.train;
        train_idx.insert(train_idx.end(), f.test.begin(), f.test.end());
        std::sort(train_idx.begin(), train_idx.end());
        p.train = pick(r.labeled, train_idx);
        p.test = *r.test;
      } else {
        p.train = pick(r.labeled, f.train);
        p.test = pick(r.labeled, f.test);
      }
      vocab_sources.push_back(&p.train);
    } else if (r.test) {
      p.test = *r.test;
    }
    if (r.unlabeled) vocab_sources.push_back(&*r.unlabeled);
  }

  DomainSet set;
  set.num_classes = m.num_classes;
  Vocabulary vocab;
  if (m.format == "bof") {
    set.kind = PayloadKind::kSparse;
    vocab = build_vocabulary(vocab_sources, m.vocab_size);
    set.input_dim = vocab.size();
  } else {
    set.kind = PayloadKind::kTokens;
    EmbeddingTable table;
    if (!m.embeddings.empty()) {
      table = load_embeddings(resolve(m, m.embeddings), m.embed_dim);
      vocab = vocabulary_from_words(table.words);
    } else {
      vocab = build_vocabulary(vocab_sources, m.vocab_size);
      table.words = vocab.features;
      table.dim = m.embed_dim;
    }
    set.embeddings = std::move(table);
  }
  if (warning) *warning = vocab.warning;

  for (std::size_t i = 0; i < raw.size(); ++i) {
    Domain d;
    d.id = raw[i].id;
    d.role = raw[i].role;
    d.train = to_labeled(parts[i].train, vocab, set.kind);
    d.dev = to_labeled(parts[i].dev, vocab, set.kind);
    d.test = to_labeled(parts[i].test, vocab, set.kind);
    d.unlabeled.domain_id = d.id;
    if (raw[i].unlabeled) d.unlabeled = to_unlabeled(*raw[i].unlabeled, vocab, set.kind);
    set.domains.push_back(std::move(d));
  }
  set.validate();
  return set;
}

DomainSet synth_generate(const SynthConfig& cfg) {
  const auto samples = synth_samples(cfg);
  DomainSet set;
  set.num_classes = 2;
  set.kind = PayloadKind::kSparse;
  set.input_dim = cfg.dim;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Domain d;
    d.id = synth_id(i);
    d.role = i < cfg.n_labeled ? DomainRole::kLabeled : DomainRole::kUnlabeledOnly;
    LabeledCorpus* splits[3] = {&d.train, &d.dev, &d.test};
    for (int s = 0; s < 3; ++s) {
      splits[s]->domain_id = d.id;
      for (std::size_t k = 0; k < samples[i].x[s].size(); ++k) {
        splits[s]->samples.push_back({dense_to_sparse(samples[i].x[s][k]), samples[i].y[s][k]});
      }
    }
    d.unlabeled.domain_id = d.id;
    for (const auto& x : samples[i].x[3]) d.unlabeled.samples.push_back(dense_to_sparse(x));
    set.domains.push_back(std::move(d));
  }
  set.validate();
  return set;
}

Manifest synth_write(const SynthConfig& cfg, const std::filesystem::path& dir) {
  const auto samples = synth_samples(cfg);
  std::filesystem::create_directories(dir);
  Manifest m;
  m.format = "bof";
  m.num_classes = 2;
  m.vocab_size = cfg.dim;
  m.base_dir = dir;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ManifestDomain md;
    md.id = synth_id(i);
    md.role = i < cfg.n_labeled ? DomainRole::kLabeled : DomainRole::kUnlabeledOnly;
    if (md.role == DomainRole::kLabeled) {
      RawCorpus labeled{md.id, true, {}};
      for (int s = 0; s < 2; ++s) {
        for (std::size_t k = 0; k < samples[i].x[s].size(); ++k) {
          labeled.samples.push_back(dense_to_raw(samples[i].x[s][k], samples[i].y[s][k]));
        }
      }
      md.labeled = md.id + ".labeled.tsv";
      write_bof_corpus(dir / md.labeled, labeled);
    }
    if (!samples[i].x[2].empty()) {
      RawCorpus test{md.id, true, {}};
      for (std::size_t k = 0; k < samples[i].x[2].size(); ++k) {
        test.samples.push_back(dense_to_raw(samples[i].x[2][k], samples[i].y[2][k]));
      }
      md.test = md.id + ".test.tsv";
      write_bof_corpus(dir / md.test, test);
    }
    if (!samples[i].x[3].empty()) {
      RawCorpus unl{md.id, false, {}};
      for (const auto& x : samples[i].x[3]) unl.samples.push_back(dense_to_raw(x, kNoLabel));
      md.unlabeled = md.id + ".unlabeled.tsv";
      write_bof_corpus(dir / md.unlabeled, unl);
    }
    m.domains.push_back(std::move(md));
  }
  write_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace man::data
