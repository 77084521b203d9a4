#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "man/adam.hpp"
#include "man/errors.hpp"
#include "man/nn.hpp"
#include "man/ops.hpp"
#include "support/gradcheck.hpp"

using namespace man;
using man::testing::gradcheck;
using man::testing::random_tensor;

namespace {

// Weighted sum with constant random weights, so a gradient check exercises
// the full Jacobian rather than just its column sums.
Tensor probe_sum(Tape& tape, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(y.shape(), rng, false);
  return ops::sum(tape, ops::mul(tape, y, w));
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Rng rng(3);
  Tape tape;
  Tensor eye = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  Tensor a = random_tensor({3, 3}, rng, false);
  Tensor out = ops::matmul(tape, eye, a);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(out[i], a[i]);
}

TEST(Matmul, HandComputedProduct) {
  Tape tape;
  Tensor out = ops::matmul(tape, Tensor::from_rows({{1, 2}, {3, 4}}), Tensor::from_rows({{1}, {1}}));
  ASSERT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(out[0], 3.0);
  EXPECT_EQ(out[1], 7.0);
}

TEST(Matmul, GradientOfSumIsColumnSumsOfB) {
  Rng rng(11);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3, 5}, rng);
  Tape tape;
  tape.backward(ops::sum(tape, ops::matmul(tape, a, b)));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t p = 0; p < 3; ++p) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < 5; ++j) row_sum += b.at(p, j);
      EXPECT_NEAR(a.grad()[i * 3 + p], row_sum, 1e-12);
    }
  }
  auto check = gradcheck([&](Tape& t) { return ops::sum(t, ops::matmul(t, a, b)); }, {a, b});
  EXPECT_LT(check.max_rel_error, 1e-6) << check.worst;
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    ops::matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Relu, ForwardAndSubgradient) {
  Tape tape;
  Tensor x({3}, {1, -2, 3}, true);
  Tensor y = ops::relu(tape, x);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 0, 3}));
  tape.backward(ops::sum(tape, y));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 1}));
}

TEST(Relu, AllNegativeGivesZeroOutputAndGradient) {
  Tape tape;
  Tensor x({4}, {-1, -0.5, -3, 0}, true);
  Tensor y = ops::relu(tape, x);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  tape.backward(ops::sum(tape, y));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Softmax, UniformOnEqualLogits) {
  Tape tape;
  Tensor y = ops::softmax(tape, Tensor({3}, {0, 0, 0}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tape tape;
  Tensor y = ops::softmax(tape, Tensor({2}, {1000, 0}));
  EXPECT_TRUE(std::isfinite(y[0]) && std::isfinite(y[1]));
  EXPECT_NEAR(y[0], 1.0, 1e-300);
  EXPECT_NEAR(y[1], 0.0, 1e-300);
}

TEST(Softmax, RowsSumToOneEvenAtMagnitudeThousand) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    Tensor x = random_tensor({4, 7}, rng, false, -1000.0, 1000.0);
    Tensor y = ops::softmax(tape, x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(y.at(r, j), 0.0);
        s += y.at(r, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  Rng rng(21);
  Tensor x = random_tensor({5}, rng);
  auto check = gradcheck([&](Tape& t) { return probe_sum(t, ops::softmax(t, x), 99); }, {x});
  EXPECT_LT(check.max_rel_error, 1e-5) << check.worst;
}

// Naive oracle: materialize every window, take the max, then clip at zero.
namespace {
std::vector<double> naive_conv_pool(const Tensor& tokens, const std::vector<Tensor>& kernels,
                                    const std::vector<Tensor>& biases) {
  const std::size_t len = tokens.dim(0), e = tokens.dim(1);
  std::vector<double> out;
  for (std::size_t bank = 0; bank < kernels.size(); ++bank) {
    const Tensor& w = kernels[bank];
    const std::size_t width = w.dim(0), k = w.dim(2);
    for (std::size_t c = 0; c < k; ++c) {
      double best = -INFINITY;
      for (std::size_t t = 0; t + width <= len; ++t) {
        double z = biases[bank][c];
        for (std::size_t r = 0; r < width; ++r)
          for (std::size_t j = 0; j < e; ++j)
            z += tokens.at(t + r, j) * w.data()[(r * e + j) * k + c];
        best = std::max(best, z);
      }
      out.push_back(std::max(0.0, best));
    }
  }
  return out;
}

struct ConvBanks {
  std::vector<Tensor> kernels;
  std::vector<Tensor> biases;
};

ConvBanks make_banks(std::size_t e, std::size_t k, Rng& rng, bool zero = false) {
  ConvBanks banks;
  for (std::size_t w : {3, 4, 5}) {
    banks.kernels.push_back(zero ? Tensor::zeros({w, e, k}, true) : random_tensor({w, e, k}, rng));
    banks.biases.push_back(zero ? Tensor::zeros({k}, true) : random_tensor({k}, rng));
  }
  return banks;
}
}  // namespace

TEST(ConvMaxPool, OutputIsAlways600) {
  Rng rng(8);
  ConvBanks banks = make_banks(100, 200, rng);
  for (std::size_t len : {5, 9, 23}) {
    Tape tape;
    Tensor tokens = random_tensor({len, 100}, rng, false);
    Tensor out = ops::conv1d_maxpool(tape, tokens, banks.kernels, banks.biases);
    EXPECT_EQ(out.shape(), (Shape{600}));
  }
}

TEST(ConvMaxPool, ZeroEmbeddingsAndBiasGiveZeros) {
  Rng rng(9);
  ConvBanks banks = make_banks(100, 200, rng);
  for (auto& b : banks.biases) std::fill(b.mutable_data().begin(), b.mutable_data().end(), 0.0);
  Tape tape;
  Tensor out = ops::conv1d_maxpool(tape, Tensor::zeros({7, 100}), banks.kernels, banks.biases);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvMaxPool, MatchesNaiveSlidingWindow) {
  Rng rng(10);
  ConvBanks banks = make_banks(6, 4, rng);
  for (std::size_t len : {5, 8, 13}) {
    Tensor tokens = random_tensor({len, 6}, rng, false);
    Tape tape;
    Tensor out = ops::conv1d_maxpool(tape, tokens, banks.kernels, banks.biases);
    auto expected = naive_conv_pool(tokens, banks.kernels, banks.biases);
    ASSERT_EQ(out.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(out[i], expected[i], 1e-12);
  }
}

TEST(ConvMaxPool, EmbeddingWidthMismatchIsConfigError) {
  Rng rng(12);
  ConvBanks banks = make_banks(100, 2, rng);
  Tape tape;
  EXPECT_THROW(ops::conv1d_maxpool(tape, Tensor::zeros({6, 50}), banks.kernels, banks.biases),
               ConfigError);
}

TEST(ConvMaxPool, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  ConvBanks banks = make_banks(3, 2, rng);
  Tensor tokens = random_tensor({7, 3}, rng);
  std::vector<Tensor> params{tokens};
  for (auto& k : banks.kernels) params.push_back(k);
  for (auto& b : banks.biases) params.push_back(b);
  auto check = gradcheck(
      [&](Tape& t) {
        return probe_sum(t, ops::conv1d_maxpool(t, tokens, banks.kernels, banks.biases), 4);
      },
      params);
  EXPECT_LT(check.max_rel_error, 1e-4) << check.worst;
}

TEST(Embedding, PadsToMinimumRowsWithZeros) {
  Tape tape;
  Tensor table = Tensor::from_rows({{0, 0}, {1, 2}, {3, 4}});
  std::vector<std::int32_t> ids{2, 1};
  Tensor rows = ops::embedding(tape, table, ids, 5);
  ASSERT_EQ(rows.shape(), (Shape{5, 2}));
  EXPECT_EQ(rows.at(0, 0), 3);
  EXPECT_EQ(rows.at(1, 1), 2);
  for (std::size_t r = 2; r < 5; ++r) EXPECT_EQ(rows.at(r, 0), 0);
}

TEST(BatchNorm, TrainModeStandardizesColumns) {
  Rng rng(14);
  Tensor x = random_tensor({8, 5}, rng, false);
  BatchNorm1d bn(5);
  Tape tape;
  Tensor y = bn.forward(Pass{tape, Mode::kTrain}, x);
  for (std::size_t j = 0; j < 5; ++j) {
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 8; ++i) mu += y.at(i, j);
    mu /= 8.0;
    for (std::size_t i = 0; i < 8; ++i) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
    var /= 8.0;
    EXPECT_NEAR(mu, 0.0, 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(BatchNorm, EvalWithUnitRunningStatsIsIdentity) {
  Rng rng(15);
  Tensor x = random_tensor({3, 4}, rng, false);
  BatchNorm1d bn(4);
  Tape tape;
  Tensor y = bn.forward(Pass{tape, Mode::kEval}, x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i], 1e-7);
}

TEST(BatchNorm, EvalIsBitIdenticalAcrossCalls) {
  Rng rng(16);
  Tensor x = random_tensor({6, 4}, rng, false);
  BatchNorm1d bn(4);
  {
    Tape warm;
    bn.forward(Pass{warm, Mode::kTrain}, random_tensor({6, 4}, rng, false));
  }
  Tape t1, t2;
  Tensor a = bn.forward(Pass{t1, Mode::kEval}, x);
  Tensor b = bn.forward(Pass{t2, Mode::kEval}, x);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(BatchNorm, TrainBatchOfOneIsRejected) {
  BatchNorm1d bn(3);
  Tape tape;
  EXPECT_THROW(bn.forward(Pass{tape, Mode::kTrain}, Tensor::zeros({1, 3})), DimensionError);
}

TEST(BatchNorm, RunningStatsUseMomentum) {
  BatchNorm1d bn(1);
  Tape tape;
  bn.forward(Pass{tape, Mode::kTrain}, Tensor({2, 1}, {1.0, 3.0}));
  // batch mean 2, unbiased variance 2
  EXPECT_NEAR(bn.stats.running_mean[0], 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(bn.stats.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, FrozenRunningStatsStayPut) {
  BatchNorm1d bn(1);
  Tape tape;
  bn.forward(Pass{tape, Mode::kTrain}, Tensor({2, 1}, {1.0, 3.0}), false);
  EXPECT_EQ(bn.stats.running_mean[0], 0.0);
  EXPECT_EQ(bn.stats.running_var[0], 1.0);
}

TEST(Dropout, ZeroProbabilityIsIdentityInBothModes) {
  Rng rng(17);
  Tensor x = random_tensor({10}, rng, false);
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    Tape tape;
    Tensor y = ops::dropout(tape, x, 0.0, mode, &rng);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(y[i], x[i]);
  }
}

TEST(Dropout, EvalModeIsIdentity) {
  Rng rng(18);
  Tensor x = random_tensor({10}, rng, false);
  Tape tape;
  Tensor y = ops::dropout(tape, x, 0.4, Mode::kEval, nullptr);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Dropout, TrainModeKeepsExpectation) {
  Rng rng(19);
  Tape tape;
  Tensor y = ops::dropout(tape, Tensor::full({100000}, 1.0), 0.4, Mode::kTrain, &rng);
  const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 1e5;
  EXPECT_NEAR(mean, 1.0, 0.01);
}

TEST(Dropout, ProbabilityOutsideRangeIsConfigError) {
  Rng rng(20);
  Tape tape;
  EXPECT_THROW(ops::dropout(tape, Tensor::zeros({2}), 1.0, Mode::kTrain, &rng), ConfigError);
  EXPECT_THROW(ops::dropout(tape, Tensor::zeros({2}), -0.1, Mode::kEval, &rng), ConfigError);
}

TEST(Backward, SumOfSquares) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  tape.backward(ops::sum(tape, ops::mul(tape, x, x)));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, TwoLossTermsAccumulate) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  Tensor y = ops::square(tape, x);
  tape.backward(ops::sum(tape, y));
  tape.backward(ops::sum(tape, ops::scale(tape, x, 3.0)));
  EXPECT_EQ(x.grad()[0], 2.0 + 3.0);
  EXPECT_EQ(x.grad()[1], 4.0 + 3.0);
}

TEST(Backward, NonScalarLossIsShapeError) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  EXPECT_THROW(tape.backward(ops::square(tape, x)), DimensionError);
}

TEST(Backward, FrozenTapeIsStateError) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  Tensor loss = ops::sum(tape, x);
  tape.freeze();
  EXPECT_THROW(tape.backward(loss), StateError);
}

TEST(Backward, FrozenTapeRecordsNothing) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  tape.freeze();
  Tensor y = ops::sum(tape, x);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.node().has_value());
}

TEST(Backward, VisitsEachNodeOnceInReverseOrder) {
  Tensor x({1}, {2.0}, true);
  Tape tape;
  std::vector<int> visits;
  auto counting = [&](int tag) {
    return [&visits, tag](std::span<const double> g, std::span<const std::span<double>> gin) {
      visits.push_back(tag);
      if (!gin[0].empty()) gin[0][0] += g[0];
    };
  };
  Tensor a = tape.record(OpKind::kScale, {x}, Tensor({1}, {2.0}), counting(0));
  Tensor b = tape.record(OpKind::kScale, {a}, Tensor({1}, {2.0}), counting(1));
  Tensor c = tape.record(OpKind::kAdd, {a, b}, Tensor({1}, {4.0}),
                         [&visits](std::span<const double> g, std::span<const std::span<double>> gin) {
                           visits.push_back(2);
                           gin[0][0] += g[0];
                           gin[1][0] += g[0];
                         });
  tape.backward(c);
  EXPECT_EQ(visits, (std::vector<int>{2, 1, 0}));
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tensor w({2}, {1, 2}, true);
  Tensor c({2}, {3, 4}, false);
  Tape tape;
  tape.backward(ops::sum(tape, ops::mul(tape, w, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_EQ(w.grad()[1], 4.0);
}

// Every differentiable op against central differences on inputs in [-1, 1].
class OpGradientProperty : public ::testing::TestWithParam<int> {};

TEST_P(OpGradientProperty, MatchesFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 2}, rng);
  Tensor bias = random_tensor({4}, rng);
  Tensor gamma = random_tensor({4}, rng);
  Tensor beta = random_tensor({4}, rng);
  Tensor table = random_tensor({5, 3}, rng);
  Tensor tall = random_tensor({8, 4}, rng);
  std::vector<std::size_t> targets{0, 1, 1};
  std::vector<std::int32_t> ids{4, 0, 2, 2};

  struct Case {
    const char* name;
    std::function<Tensor(Tape&)> fn;
    std::vector<Tensor> params;
  };
  BatchNormStats stats = BatchNormStats::fresh(4);
  stats.running_mean = random_tensor({4}, rng, false);
  stats.running_var = random_tensor({4}, rng, false, 0.5, 2.0);
  const std::vector<Case> cases = {
      {"matmul", [&](Tape& t) { return probe_sum(t, ops::matmul(t, a, w), seed); }, {a, w}},
      {"add_bias", [&](Tape& t) { return probe_sum(t, ops::add_bias(t, a, bias), seed); }, {a, bias}},
      {"add", [&](Tape& t) { return probe_sum(t, ops::add(t, a, b), seed); }, {a, b}},
      {"sub", [&](Tape& t) { return probe_sum(t, ops::sub(t, a, b), seed); }, {a, b}},
      {"mul", [&](Tape& t) { return probe_sum(t, ops::mul(t, a, b), seed); }, {a, b}},
      {"scale", [&](Tape& t) { return probe_sum(t, ops::scale(t, a, -1.7), seed); }, {a}},
      {"square", [&](Tape& t) { return probe_sum(t, ops::square(t, a), seed); }, {a}},
      {"mean", [&](Tape& t) { return ops::mean(t, ops::square(t, a)); }, {a}},
      {"relu", [&](Tape& t) { return probe_sum(t, ops::relu(t, a), seed); }, {a}},
      {"softmax", [&](Tape& t) { return probe_sum(t, ops::softmax(t, a), seed); }, {a}},
      {"nll", [&](Tape& t) { return ops::nll(t, ops::softmax(t, ops::matmul(t, a, w)), targets); }, {a, w}},
      {"concat", [&](Tape& t) { return probe_sum(t, ops::concat_cols(t, a, ops::matmul(t, a, w)), seed); }, {a, w}},
      {"stack", [&](Tape& t) {
         std::vector<Tensor> rows{ops::scale(t, bias, 2.0), gamma};
         return probe_sum(t, ops::stack_rows(t, rows), seed);
       }, {bias, gamma}},
      {"concat_rows", [&](Tape& t) {
         std::vector<Tensor> parts{a, tall, ops::scale(t, b, 0.5)};
         return probe_sum(t, ops::concat_rows(t, parts), seed);
       }, {a, tall, b}},
      {"slice_rows", [&](Tape& t) { return probe_sum(t, ops::slice_rows(t, tall, 1, 4), seed); }, {tall}},
      {"batch_norm_train", [&](Tape& t) {
         return probe_sum(t, ops::batch_norm(t, tall, gamma, beta, stats, Mode::kTrain, false), seed);
       }, {tall, gamma, beta}},
      {"batch_norm_eval", [&](Tape& t) {
         return probe_sum(t, ops::batch_norm(t, a, gamma, beta, stats, Mode::kEval), seed);
       }, {a, gamma, beta}},
      {"dropout", [&](Tape& t) {
         Rng mask_rng(seed);
         return probe_sum(t, ops::dropout(t, a, 0.4, Mode::kTrain, &mask_rng), seed);
       }, {a}},
      {"embedding", [&](Tape& t) { return probe_sum(t, ops::embedding(t, table, ids, 6), seed); }, {table}},
  };
  for (const auto& c : cases) {
    auto result = gradcheck(c.fn, c.params);
    EXPECT_LT(result.max_rel_error, 1e-4) << c.name << ": " << result.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(TwentySeeds, OpGradientProperty, ::testing::Range(1, 21));

TEST(Determinism, SameSeedGivesBitIdenticalTensors) {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Linear layer(6, 4, rng);
    BatchNorm1d bn(4);
    Tensor x = random_tensor({5, 6}, rng, false);
    Tape tape;
    Pass pass{tape, Mode::kTrain, &rng};
    Tensor h = ops::dropout(tape, ops::relu(tape, bn.forward(pass, layer.forward(tape, x))), 0.4,
                            Mode::kTrain, &rng);
    Tensor y = ops::softmax(tape, h);
    tape.backward(ops::sum(tape, ops::square(tape, y)));
    std::vector<double> out(y.data().begin(), y.data().end());
    out.insert(out.end(), layer.weight.grad().begin(), layer.weight.grad().end());
    return out;
  };
  EXPECT_EQ(run(42), run(42));
  EXPECT_NE(run(42), run(43));
}

TEST(GlorotInit, BoundsAndZeroBias) {
  Rng rng(1);
  Linear layer(30, 10, rng);
  const double limit = std::sqrt(6.0 / 40.0);
  for (double v : layer.weight.data()) {
    EXPECT_LE(std::abs(v), limit);
  }
  for (double v : layer.bias.data()) EXPECT_EQ(v, 0.0);
}

// --- Adam -------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParamsButAdvancesStep) {
  std::vector<double> p{0.5, -1.0};
  std::vector<double> g{0.0, 0.0};
  AdamState s = AdamState::for_size(2, AdamConfig{});
  adam_step(p, g, s);
  EXPECT_EQ(p, (std::vector<double>{0.5, -1.0}));
  EXPECT_EQ(s.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{0.0};
  std::vector<double> g{3.0};
  AdamConfig cfg;
  cfg.learning_rate = 1e-4;
  AdamState s = AdamState::for_size(1, cfg);
  adam_step(p, g, s);
  EXPECT_LT(std::abs(p[0] + 1e-4), 1e-8);
}

TEST(Adam, ShapeMismatchIsDimensionError) {
  std::vector<double> p{0.0, 1.0};
  std::vector<double> g{3.0};
  AdamState s = AdamState::for_size(2, AdamConfig{});
  EXPECT_THROW(adam_step(p, g, s), DimensionError);
}

TEST(Adam, MatchesStraightLineReference) {
  Rng rng(77);
  const std::size_t n = 6;
  AdamConfig cfg;
  cfg.learning_rate = 1e-3;
  std::vector<double> p(n), ref(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = ref[i] = rng.uniform(-1, 1);
  AdamState s = AdamState::for_size(n, cfg);

  // Reference: the textbook update written out independently.
  std::vector<double> m(n, 0.0), v(n, 0.0);
  double b1t = 1.0, b2t = 1.0;
  for (int step = 0; step < 100; ++step) {
    std::vector<double> g(n);
    for (double& x : g) x = rng.uniform(-2, 2);
    adam_step(p, g, s);
    b1t *= 0.9;
    b2t *= 0.999;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      ref[i] -= 1e-3 * (m[i] / (1 - b1t)) / (std::sqrt(v[i] / (1 - b2t)) + 1e-8);
    }
  }
  EXPECT_EQ(s.step_count, 100u);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], ref[i], 1e-12);
}

TEST(Adam, OptimizerTouchesOnlyItsGroup) {
  Rng rng(3);
  Tensor mine = random_tensor({3}, rng);
  Tensor other = random_tensor({3}, rng);
  Tape tape;
  tape.backward(ops::sum(tape, ops::mul(tape, mine, other)));
  std::vector<double> before(other.data().begin(), other.data().end());
  Adam opt({mine}, AdamConfig{});
  opt.step();
  EXPECT_EQ(std::vector<double>(other.data().begin(), other.data().end()), before);
}
