#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "man/errors.hpp"
#include "man/model.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

namespace man {
namespace {

using data::Payload;
using data::SparseVector;
using data::TokenSequence;

ModelConfig tiny_mlp(std::size_t input = 6) {
  ModelConfig c;
  c.extractor.kind = ExtractorKind::kMlp;
  c.extractor.input_dim = input;
  c.extractor.hidden_dims = {5};
  c.shared_dim = 4;
  c.domain_dim = 3;
  c.domains = {"a", "b", "u"};
  c.labeled_domains = {"a", "b"};
  c.dropout = 0.4;
  return c;
}

ModelConfig tiny_cnn() {
  ModelConfig c;
  c.extractor.kind = ExtractorKind::kCnn;
  c.extractor.embed_dim = 3;
  c.extractor.kernel_widths = {2, 3};
  c.extractor.kernels_per_width = 2;
  c.vocab_rows = 7;
  c.shared_dim = 3;
  c.domain_dim = 2;
  c.domains = {"a", "b", "u"};
  c.labeled_domains = {"a", "b"};
  c.dropout = 0.4;
  return c;
}

Batch dense_batch(std::size_t rows, std::size_t width, Rng& rng) {
  Batch b;
  b.dense = testing::random_tensor({rows, width}, rng, false, -2.0, 2.0);
  return b;
}

std::vector<TokenSequence> random_docs(std::size_t n, Rng& rng, std::size_t vocab_rows) {
  std::vector<TokenSequence> docs(n);
  for (auto& d : docs) {
    const std::size_t len = 1 + rng.below(6);
    for (std::size_t i = 0; i < len; ++i) d.push_back(static_cast<std::int32_t>(rng.below(vocab_rows)));
  }
  return docs;
}

Batch token_batch(const std::vector<TokenSequence>& docs) {
  Batch b;
  for (const auto& d : docs) b.tokens.push_back(&d);
  return b;
}

std::vector<Tensor> tensors(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

double grad_norm(const std::vector<NamedTensor>& named, const std::string& prefix) {
  double s = 0.0;
  for (const auto& n : named) {
    if (n.name.rfind(prefix, 0) != 0 || !n.tensor.has_grad()) continue;
    for (double g : n.tensor.grad()) s += g * g;
  }
  return std::sqrt(s);
}

TEST(ModelConfig, ParsesEnumsAndRejectsUnknown) {
  EXPECT_EQ(parse_extractor_kind("cnn"), ExtractorKind::kCnn);
  EXPECT_EQ(parse_model_mode("shared-only"), ModelMode::kSharedOnly);
  EXPECT_EQ(to_string(ModelMode::kDomainOnly), "domain-only");
  EXPECT_THROW(parse_extractor_kind("rnn"), ConfigError);
  EXPECT_THROW(parse_model_mode("both"), ConfigError);
}

TEST(ModelConfig, ValidateRejectsBadSettings) {
  auto c = tiny_mlp();
  EXPECT_NO_THROW(c.validate());
  c.labeled_domains = {"a", "zz"};
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_mlp();
  c.domains = {"a", "a"};
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_mlp();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_mlp();
  c.shared_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
  auto c = tiny_cnn();
  c.loss = LossVariant::kL2;
  c.mode = ModelMode::kSharedOnly;
  c.train_embeddings = false;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.extractor.kernel_widths, c.extractor.kernel_widths);
  EXPECT_EQ(back.loss, LossVariant::kL2);
  EXPECT_THROW(config_from_json("{\"shared_dim\": 3}"), ConfigError);
}

TEST(MakeBatch, DensifiesSparseVectors) {
  const auto cfg = tiny_mlp(4);
  Payload p0 = SparseVector{{1, 3}, {0.5, 2.0}};
  Payload p1 = SparseVector{{}, {}};
  std::vector<const Payload*> ptrs{&p0, &p1};
  const Batch b = make_batch(ptrs, cfg);
  ASSERT_EQ(b.dense.shape(), (Shape{2, 4}));
  const std::vector<double> want{0, 0.5, 0, 2.0, 0, 0, 0, 0};
  EXPECT_EQ(std::vector<double>(b.dense.data().begin(), b.dense.data().end()), want);

  Payload bad = SparseVector{{4}, {1.0}};
  std::vector<const Payload*> bad_ptrs{&bad};
  EXPECT_THROW(make_batch(bad_ptrs, cfg), ConfigError);
  Payload tokens = TokenSequence{1, 2};
  std::vector<const Payload*> tok_ptrs{&tokens};
  EXPECT_THROW(make_batch(tok_ptrs, cfg), ConfigError);
}

TEST(ManModel, OutputShapesAndSimplexRows) {
  ManModel m(tiny_mlp(), 3);
  Rng rng(1);
  const Batch b = dense_batch(5, 6, rng);
  Tape tape;
  Pass pass{tape, Mode::kTrain, &rng};
  const Tensor fs = m.forward_shared(pass, b);
  const Tensor fd = m.forward_domain(pass, b, "a");
  EXPECT_EQ(fs.shape(), (Shape{5, 4}));
  EXPECT_EQ(fd.shape(), (Shape{5, 3}));
  const Tensor y = m.classify(pass, &fs, &fd);
  const Tensor d = m.discriminate(pass, fs);
  EXPECT_EQ(y.shape(), (Shape{5, 2}));
  EXPECT_EQ(d.shape(), (Shape{5, 3}));
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_NEAR(y.at(r, 0) + y.at(r, 1), 1.0, 1e-12);
    EXPECT_NEAR(d.at(r, 0) + d.at(r, 1) + d.at(r, 2), 1.0, 1e-12);
  }
  for (double v : fs.data()) EXPECT_GE(v, 0.0);
}

TEST(ManModel, EvalModeIsDeterministic) {
  ManModel m(tiny_mlp(), 3);
  Rng rng(2);
  const Batch b = dense_batch(4, 6, rng);
  auto run = [&](std::uint64_t seed) {
    Tape tape;
    Rng drop(seed);
    Pass pass{tape, Mode::kEval, &drop};
    const Tensor fs = m.forward_shared(pass, b);
    const Tensor fd = m.forward_domain(pass, b, "b");
    const Tensor y = m.classify(pass, &fs, &fd);
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(1), run(99));
}

TEST(ManModel, TrainModeDropoutDependsOnStream) {
  ManModel m(tiny_mlp(), 3);
  Rng rng(2);
  const Batch b = dense_batch(4, 6, rng);
  auto run = [&](std::uint64_t seed) {
    Tape tape;
    Rng drop(seed);
    Pass pass{tape, Mode::kTrain, &drop};
    const Tensor fs = m.forward_shared(pass, b);
    return std::vector<double>(fs.data().begin(), fs.data().end());
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}

TEST(ManModel, SameSeedSameInitialization) {
  ManModel m1(tiny_mlp(), 11);
  ManModel m2(tiny_mlp(), 11);
  ManModel m3(tiny_mlp(), 12);
  const auto s1 = m1.state();
  const auto s2 = m2.state();
  const auto s3 = m3.state();
  ASSERT_EQ(s1.size(), s2.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].name, s2[i].name);
    EXPECT_TRUE(std::equal(s1[i].tensor.data().begin(), s1[i].tensor.data().end(),
                           s2[i].tensor.data().begin()));
    if (!std::equal(s1[i].tensor.data().begin(), s1[i].tensor.data().end(),
                    s3[i].tensor.data().begin())) {
      any_diff = true;
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(ManModel, SharedExtractorInitIndependentOfDomainSet) {
  auto c1 = tiny_mlp();
  auto c2 = tiny_mlp();
  c2.domains = {"a", "b", "c", "u"};
  c2.labeled_domains = {"a", "b", "c"};
  ManModel m1(c1, 4);
  ManModel m2(c2, 4);
  auto pick = [](const ManModel& m, const std::string& name) {
    for (const auto& n : m.state()) {
      if (n.name == name) return std::vector<double>(n.tensor.data().begin(), n.tensor.data().end());
    }
    return std::vector<double>{};
  };
  EXPECT_FALSE(pick(m1, "f_s.out.weight").empty());
  EXPECT_EQ(pick(m1, "f_s.out.weight"), pick(m2, "f_s.out.weight"));
  EXPECT_EQ(pick(m1, "f_d.a.hidden0.weight"), pick(m2, "f_d.a.hidden0.weight"));
}

TEST(ManModel, PrivateExtractorsAreDisjoint) {
  ManModel m(tiny_mlp(), 5);
  EXPECT_TRUE(m.has_domain_extractor("a"));
  EXPECT_TRUE(m.has_domain_extractor("b"));
  EXPECT_FALSE(m.has_domain_extractor("u"));
  const auto params = m.main_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = i + 1; j < params.size(); ++j) {
      EXPECT_FALSE(params[i].tensor.same_storage(params[j].tensor))
          << params[i].name << " aliases " << params[j].name;
    }
  }

  Rng rng(6);
  const Batch b = dense_batch(4, 6, rng);
  Tape tape;
  Pass pass{tape, Mode::kTrain, &rng};
  const Tensor fs = m.forward_shared(pass, b);
  const Tensor fd = m.forward_domain(pass, b, "a");
  const std::vector<std::size_t> labels{0, 1, 1, 0};
  tape.backward(classifier_loss(tape, m.classify(pass, &fs, &fd), labels));
  EXPECT_GT(grad_norm(params, "f_d.a."), 0.0);
  EXPECT_EQ(grad_norm(params, "f_d.b."), 0.0);
  EXPECT_GT(grad_norm(params, "f_s."), 0.0);
}

TEST(ManModel, UnlabeledDomainHasNoPrivateExtractor) {
  ManModel m(tiny_mlp(), 5);
  Rng rng(6);
  const Batch b = dense_batch(2, 6, rng);
  Tape tape;
  Pass pass{tape, Mode::kEval, nullptr};
  EXPECT_THROW(m.forward_domain(pass, b, "u"), ConfigError);
  EXPECT_EQ(m.domain_index("u"), 2u);
  EXPECT_THROW(m.domain_index("zz"), ConfigError);
}

TEST(ManModel, AbsentDomainFeaturesEqualExplicitZeros) {
  ManModel m(tiny_mlp(), 7);
  Rng rng(8);
  const Batch b = dense_batch(3, 6, rng);
  Tape tape;
  Pass pass{tape, Mode::kEval, nullptr};
  const Tensor fs = m.forward_shared(pass, b);
  const Tensor zeros = Tensor::zeros({3, 3});
  const Tensor y1 = m.classify(pass, &fs, nullptr);
  const Tensor y2 = m.classify(pass, &fs, &zeros);
  EXPECT_EQ(std::vector<double>(y1.data().begin(), y1.data().end()),
            std::vector<double>(y2.data().begin(), y2.data().end()));
  const Tensor wrong = Tensor::zeros({3, 4});
  EXPECT_THROW(m.classify(pass, &fs, &wrong), DimensionError);
  EXPECT_THROW(m.classify(pass, nullptr, nullptr), DimensionError);
}

TEST(ManModel, AblationModesDropComponents) {
  auto c = tiny_mlp();
  c.mode = ModelMode::kSharedOnly;
  ManModel shared_only(c, 1);
  EXPECT_FALSE(shared_only.has_domain_extractor("a"));
  EXPECT_TRUE(shared_only.has_discriminator());
  for (const auto& n : shared_only.main_parameters()) EXPECT_NE(n.name.rfind("f_d.", 0), 0u);

  c.mode = ModelMode::kDomainOnly;
  ManModel domain_only(c, 1);
  EXPECT_FALSE(domain_only.has_shared());
  EXPECT_FALSE(domain_only.has_discriminator());
  EXPECT_TRUE(domain_only.discriminator_parameters().empty());
  Rng rng(3);
  const Batch b = dense_batch(2, 6, rng);
  Tape tape;
  Pass pass{tape, Mode::kEval, nullptr};
  EXPECT_THROW(domain_only.forward_shared(pass, b), ConfigError);
  const Tensor fd = domain_only.forward_domain(pass, b, "a");
  EXPECT_EQ(domain_only.classify(pass, nullptr, &fd).shape(), (Shape{2, 2}));
}

TEST(Losses, ClassifierUniformIsLn2) {
  Tape tape;
  const Tensor p = Tensor::from_rows({{0.5, 0.5}, {0.5, 0.5}});
  const std::vector<std::size_t> y{0, 1};
  EXPECT_NEAR(classifier_loss(tape, p, y).item(), std::log(2.0), 1e-15);
}

TEST(Losses, DiscriminatorExamples) {
  Tape tape;
  const double third = 1.0 / 3.0;
  const Tensor uniform3 = Tensor::from_rows({{third, third, third}});
  EXPECT_NEAR(discriminator_loss(tape, uniform3, 0, LossVariant::kL2).item(), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(discriminator_loss(tape, uniform3, 2, LossVariant::kNll).item(), std::log(3.0),
              1e-15);
  const Tensor p = Tensor::from_rows({{0.75, 0.25}});
  EXPECT_NEAR(discriminator_loss(tape, p, 0, LossVariant::kNll).item(), 0.2876820724517809,
              1e-15);
  const Tensor q = Tensor::from_rows({{0.7, 0.3}});
  EXPECT_NEAR(discriminator_loss(tape, q, 0, LossVariant::kL2).item(), 0.18, 1e-15);
  EXPECT_THROW(discriminator_loss(tape, q, 2, LossVariant::kL2), DimensionError);
}

TEST(Losses, SharedNllIsMinusSumOfDiscriminatorLosses) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> d_hats;
    for (std::size_t i = 0; i < 3; ++i) {
      Tape t;
      d_hats.push_back(ops::softmax(t, testing::random_tensor({4, 3}, rng, false, -3, 3)));
    }
    Tape tape;
    double left_fold = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double li = discriminator_loss(tape, d_hats[i], i, LossVariant::kNll).item();
      left_fold = i == 0 ? li : left_fold + li;
    }
    EXPECT_EQ(shared_domain_loss(tape, d_hats, LossVariant::kNll).item(), -left_fold);
  }
}

TEST(Losses, SharedL2BoundsAndUniformMinimum) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> d_hats;
    for (std::size_t i = 0; i < 3; ++i) {
      Tape t;
      d_hats.push_back(ops::softmax(t, testing::random_tensor({5, 3}, rng, false, -6, 6)));
    }
    Tape tape;
    const double v = shared_domain_loss(tape, d_hats, LossVariant::kL2).item();
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0);  // N * (N-1)/N with N = 3
  }
  const double third = 1.0 / 3.0;
  std::vector<Tensor> uniform(3, Tensor::full({2, 3}, third));
  Tape tape;
  EXPECT_NEAR(shared_domain_loss(tape, uniform, LossVariant::kL2).item(), 0.0, 1e-30);
  std::vector<Tensor> peaked(3, Tensor::from_rows({{1.0, 0.0, 0.0}}));
  EXPECT_NEAR(shared_domain_loss(tape, peaked, LossVariant::kL2).item(), 2.0, 1e-15);
}

TEST(Losses, SharedLossRejectsBadInput) {
  Tape tape;
  std::vector<Tensor> none;
  EXPECT_THROW(shared_domain_loss(tape, none, LossVariant::kNll), DataError);
  std::vector<Tensor> wrong{Tensor::full({2, 3}, 1.0 / 3.0), Tensor::full({2, 3}, 1.0 / 3.0)};
  EXPECT_THROW(shared_domain_loss(tape, wrong, LossVariant::kNll), DimensionError);
}

TEST(ManModel, DomainLossLeavesPrivateExtractorsAndClassifierUntouched) {
  for (auto variant : {LossVariant::kNll, LossVariant::kL2}) {
    auto c = tiny_mlp();
    c.loss = variant;
    ManModel m(c, 12);
    Rng rng(13);
    std::vector<Tensor> d_hats;
    Tape tape;
    Pass pass{tape, Mode::kTrain, &rng};
    for (std::size_t i = 0; i < 3; ++i) {
      const Batch b = dense_batch(4, 6, rng);
      d_hats.push_back(m.discriminate(pass, m.forward_shared(pass, b), false));
    }
    auto params = m.main_parameters();
    for (auto& p : params) p.tensor.zero_grad();
    tape.backward(shared_domain_loss(tape, d_hats, variant));
    EXPECT_GT(grad_norm(params, "f_s."), 0.0) << to_string(variant);
    EXPECT_EQ(grad_norm(params, "f_d."), 0.0) << to_string(variant);
    EXPECT_EQ(grad_norm(params, "c."), 0.0) << to_string(variant);
  }
}

// Full objective on three domains (two labeled, one unlabeled), checked
// against central differences for every main and discriminator parameter.
void check_full_gradients(ModelConfig cfg, std::uint64_t seed, bool tokens) {
  ManModel m(cfg, seed);
  Rng data_rng(seed + 100);
  // Zero biases and shifts put dead or constant rows exactly on a ReLU kink.
  for (auto& n : m.state()) {
    if (n.name.ends_with(".bias") || n.name.ends_with(".beta")) {
      for (double& v : n.tensor.mutable_data()) v = data_rng.uniform(-0.2, 0.2);
    }
    // The zero OOV row ties with padding windows in the max-pool.
    if (n.name == "emb.weight") {
      for (std::size_t j = 0; j < n.tensor.dim(1); ++j) {
        n.tensor.mutable_data()[j] = data_rng.uniform(-0.2, 0.2);
      }
    }
  }
  std::vector<Batch> batches;
  std::vector<std::vector<TokenSequence>> docs;
  docs.reserve(3);
  for (std::size_t i = 0; i < 3; ++i) {
    if (tokens) {
      docs.push_back(random_docs(4, data_rng, cfg.vocab_rows));
      batches.push_back(token_batch(docs.back()));
    } else {
      batches.push_back(dense_batch(4, cfg.extractor.input_dim, data_rng));
    }
  }
  const std::vector<std::size_t> labels{0, 1, 1, 0};
  const double lambda = 0.7;

  auto main_loss = [&](Tape& tape) {
    Rng drop(seed + 7);
    Pass pass{tape, Mode::kTrain, &drop};
    Tensor total;
    std::vector<Tensor> d_hats;
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor fs = m.forward_shared(pass, batches[i]);
      if (i < 2) {
        const Tensor fd = m.forward_domain(pass, batches[i], cfg.domains[i]);
        const Tensor li = classifier_loss(tape, m.classify(pass, &fs, &fd), labels);
        total = total.defined() ? ops::add(tape, total, li) : li;
      }
      d_hats.push_back(m.discriminate(pass, fs, false));
    }
    return ops::add(tape, total,
                    ops::scale(tape, shared_domain_loss(tape, d_hats, cfg.loss), lambda));
  };
  auto main = testing::gradcheck(main_loss, tensors(m.main_parameters()), 1e-5, 1e-4);
  EXPECT_LT(main.max_rel_error, 1e-4) << to_string(cfg.loss) << " main: " << main.worst;

  auto d_loss = [&](Tape& tape) {
    Rng drop(seed + 8);
    Pass pass{tape, Mode::kTrain, &drop};
    Tensor total;
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor fs = m.forward_shared(pass, batches[i]).detach();
      const Tensor li = discriminator_loss(tape, m.discriminate(pass, fs, false), i, cfg.loss);
      total = total.defined() ? ops::add(tape, total, li) : li;
    }
    return total;
  };
  auto disc = testing::gradcheck(d_loss, tensors(m.discriminator_parameters()), 1e-5, 1e-4);
  EXPECT_LT(disc.max_rel_error, 1e-4) << to_string(cfg.loss) << " discriminator: " << disc.worst;
}

TEST(ManModel, FullObjectiveGradientsMatchFiniteDifferencesNll) {
  check_full_gradients(tiny_mlp(), 21, false);
}

TEST(ManModel, FullObjectiveGradientsMatchFiniteDifferencesL2) {
  auto c = tiny_mlp();
  c.loss = LossVariant::kL2;
  check_full_gradients(c, 21, false);
}

TEST(ManModel, CnnGradientsMatchFiniteDifferences) {
  auto c = tiny_cnn();
  check_full_gradients(c, 31, true);
  c.loss = LossVariant::kL2;
  check_full_gradients(c, 31, true);
}

TEST(ManModel, CnnHandlesEmptyAndShortDocuments) {
  ManModel m(tiny_cnn(), 2);
  std::vector<TokenSequence> docs{{}, {3}, {1, 2, 3, 4, 5, 6}};
  const Batch b = token_batch(docs);
  Tape tape;
  Pass pass{tape, Mode::kEval, nullptr};
  const Tensor fs = m.forward_shared(pass, b);
  EXPECT_EQ(fs.shape(), (Shape{3, 3}));
  for (double v : fs.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ManModel, CnnUsesPretrainedEmbeddings) {
  auto c = tiny_cnn();
  data::EmbeddingTable table;
  table.words = {"w1", "w2", "w3", "w4", "w5", "w6"};
  table.dim = 3;
  table.values.resize(7 * 3);
  std::iota(table.values.begin(), table.values.end(), 0.0);
  ManModel m(c, 1, &table);
  EXPECT_EQ(std::vector<double>(m.embeddings().data().begin(), m.embeddings().data().end()),
            table.values);
  table.dim = 4;
  table.values.resize(7 * 4);
  EXPECT_THROW(ManModel(c, 1, &table), ConfigError);
}

TEST(ManModel, FrozenEmbeddingsAreNotMainParameters) {
  auto c = tiny_cnn();
  ManModel trainable(c, 1);
  c.train_embeddings = false;
  ManModel frozen(c, 1);
  auto has_emb = [](const ManModel& m) {
    for (const auto& n : m.main_parameters()) {
      if (n.name == "emb.weight") return true;
    }
    return false;
  };
  EXPECT_TRUE(has_emb(trainable));
  EXPECT_FALSE(has_emb(frozen));
}

void expect_same_state(const ManModel& a, const ManModel& b) {
  const auto sa = a.state();
  const auto sb = b.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].name, sb[i].name);
    EXPECT_EQ(sa[i].tensor.shape(), sb[i].tensor.shape());
    EXPECT_EQ(std::memcmp(sa[i].tensor.data().data(), sb[i].tensor.data().data(),
                          sa[i].tensor.numel() * sizeof(double)),
              0)
        << sa[i].name;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool cnn : {false, true}) {
    ManModel m(cnn ? tiny_cnn() : tiny_mlp(), 17);
    // Move the batch-norm running statistics away from their defaults.
    Rng rng(18);
    std::vector<TokenSequence> docs = random_docs(4, rng, 7);
    const Batch b = cnn ? token_batch(docs) : dense_batch(4, 6, rng);
    Tape tape;
    Pass pass{tape, Mode::kTrain, &rng};
    const Tensor fs = m.forward_shared(pass, b);
    const Tensor fd = m.forward_domain(pass, b, "a");
    m.classify(pass, &fs, &fd);
    m.discriminate(pass, fs);

    testing::TempDir dir;
    save_checkpoint(dir / "m.ckpt", m);
    const ManModel back = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(config_to_json(back.config()), config_to_json(m.config()));
    expect_same_state(m, back);

    Tape t1, t2;
    Pass e1{t1, Mode::kEval, nullptr};
    Pass e2{t2, Mode::kEval, nullptr};
    ManModel& mm = m;
    ManModel bb = load_checkpoint(dir / "m.ckpt");
    const Tensor f1 = mm.forward_shared(e1, b);
    const Tensor f2 = bb.forward_shared(e2, b);
    const Tensor y1 = mm.classify(e1, &f1, nullptr);
    const Tensor y2 = bb.classify(e2, &f2, nullptr);
    EXPECT_EQ(std::vector<double>(y1.data().begin(), y1.data().end()),
              std::vector<double>(y2.data().begin(), y2.data().end()));
  }
}

TEST(Checkpoint, RejectsForeignAndTruncatedFiles) {
  testing::TempDir dir;
  EXPECT_THROW(load_checkpoint(dir.write("junk.bin", "NOTACHECKPOINT")), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
  ManModel m(tiny_mlp(), 1);
  save_checkpoint(dir / "m.ckpt", m);
  const std::string full = testing::read_file(dir / "m.ckpt");
  EXPECT_THROW(load_checkpoint(dir.write("cut.ckpt", full.substr(0, full.size() - 9))), DataError);
}

TEST(ManModel, LoadStateValidatesNamesAndShapes) {
  ManModel m(tiny_mlp(), 1);
  auto state = m.state();
  state.pop_back();
  EXPECT_THROW(m.load_state(state), StateError);
  state = m.state();
  state[0].tensor = Tensor::zeros({1, 1});
  EXPECT_THROW(m.load_state(state), StateError);
}

TEST(ManModel, CloneIsIndependent) {
  ManModel m(tiny_mlp(), 1);
  ManModel copy = m.clone();
  expect_same_state(m, copy);
  const double before = m.state()[0].tensor[0];
  copy.state()[0].tensor.mutable_data()[0] += 1.0;
  EXPECT_EQ(m.state()[0].tensor[0], before);
  EXPECT_FALSE(m.state()[0].tensor.same_storage(copy.state()[0].tensor));
}

}  // namespace
}  // namespace man
