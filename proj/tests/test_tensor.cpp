#include "clozespan/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "clozespan/rng.hpp"
#include "support/gradcheck.hpp"

using namespace clozespan;
using clozespan::testing::max_rel_grad_error;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true,
                             double scale = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.next_normal() * scale;
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

constexpr double kPrimitiveTolerance = 1e-6;

}  // namespace

TEST(TensorOps, GeluAtZeroIsZero) {
  auto x = Tensor<double>::from({3}, {0.0, 1.0, -1.0});
  auto y = gelu_fast(x);
  EXPECT_DOUBLE_EQ(y.value()[0], 0.0);
  EXPECT_NEAR(y.value()[1], 0.8411919906082768, 1e-12);  // direct evaluation
  EXPECT_NEAR(y.value()[2], -0.15880800939172324, 1e-12);
}

TEST(TensorOps, SoftmaxOfConstantIsUniform) {
  for (std::size_t k : {1u, 4u, 9u}) {
    auto x = Tensor<double>::full({k}, 3.25);
    auto y = softmax(x);
    for (double v : y.value()) EXPECT_NEAR(v, 1.0 / static_cast<double>(k), 1e-12);
  }
}

TEST(TensorOps, SoftmaxRowsSumToOne) {
  Rng rng(1);
  auto x = random_tensor({6, 5}, rng, false, 10.0);
  auto y = softmax(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 5; ++c) sum += y.value()[r * 5 + c];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(TensorOps, MatmulAgainstIdentity) {
  Rng rng(2);
  auto x = random_tensor({4, 4}, rng, false);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[static_cast<std::size_t>(i) * 4 + i] = 1.0;
  auto identity = Tensor<double>::from({4, 4}, eye);
  auto y = matmul(x, identity);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y.value()[i], x.value()[i], 1e-12);
}

TEST(TensorOps, LayerNormMeanAndVariance) {
  Rng rng(3);
  auto x = random_tensor({8, 16}, rng, false, 4.0);
  auto gain = Tensor<double>::full({16}, 1.0);
  auto bias = Tensor<double>::zeros({16});
  auto y = layer_norm(x, gain, bias);
  for (std::size_t r = 0; r < 8; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.value()[r * 16 + c];
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) {
      const double d = y.value()[r * 16 + c] - mean;
      var += d * d;
    }
    var /= 16;
    EXPECT_NEAR(mean, 0.0, 1e-4);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(TensorOps, DropoutEvalIsIdentityAndScalesInTraining) {
  Rng rng(4);
  auto x = random_tensor({100}, rng, true);
  Rng mask_rng(9);
  auto eval_out = dropout(x, 0.5, /*training=*/false, mask_rng);
  EXPECT_EQ(eval_out.value(), x.value());

  auto train_out = dropout(x, 0.5, /*training=*/true, mask_rng);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    if (train_out.value()[i] == 0.0)
      ++zeros;
    else
      EXPECT_NEAR(train_out.value()[i], 2.0 * x.value()[i], 1e-12);
  }
  EXPECT_GT(zeros, 20u);
  EXPECT_LT(zeros, 80u);
}

TEST(TensorOps, ShapeErrorsNameOpAndShapes) {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL() << "expected shape error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("(2,3)"), std::string::npos);
    EXPECT_NE(msg.find("(4,5)"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), std::invalid_argument);
  EXPECT_THROW(mul(a, b), std::invalid_argument);
}

TEST(Backward, RequiresScalarLoss) {
  auto x = Tensor<double>::zeros({3}, true);
  EXPECT_THROW(backward(x), std::invalid_argument);
}

TEST(Backward, DiamondGraphAccumulates) {
  // y = sum(x * x) visits x twice; d/dx = 2x
  auto x = Tensor<double>::from({3}, {1.0, -2.0, 3.0}, true);
  auto loss = reduce_sum(mul(x, x));
  backward(loss);
  EXPECT_NEAR(x.grad()[0], 2.0, 1e-12);
  EXPECT_NEAR(x.grad()[1], -4.0, 1e-12);
  EXPECT_NEAR(x.grad()[2], 6.0, 1e-12);
}

TEST(Backward, NoGradGuardDetaches) {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = reduce_sum(mul(x, x));
  }
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, DeterministicBitIdentical) {
  Rng rng(7);
  auto x = random_tensor({5, 5}, rng);
  auto w = random_tensor({5, 5}, rng);
  auto run = [&] {
    x.zero_grad();
    w.zero_grad();
    auto loss = reduce_sum(softmax(matmul(gelu_fast(x), w)));
    backward(loss);
    return std::make_pair(loss.item(), x.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1, g2);
}

// --- finite-difference checks, one per primitive ---------------------------

TEST(GradCheck, AddSameShape) {
  Rng rng(11);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  EXPECT_LT(max_rel_grad_error({&a, &b},
                               [&] { return reduce_sum(mul(add(a, b), add(a, b))); }),
            kPrimitiveTolerance);
}

TEST(GradCheck, AddBiasBroadcast) {
  Rng rng(12);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4}, rng);
  EXPECT_LT(max_rel_grad_error({&a, &b},
                               [&] { return reduce_sum(mul(add(a, b), add(a, b))); }),
            kPrimitiveTolerance);
}

TEST(GradCheck, SubMulDiv) {
  Rng rng(13);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 3}, rng);
  // keep denominators away from zero
  for (double& v : b.value()) v = v + (v >= 0 ? 2.0 : -2.0);
  EXPECT_LT(max_rel_grad_error(
                {&a, &b}, [&] { return reduce_sum(div(mul(sub(a, b), a), b)); }),
            kPrimitiveTolerance);
}

TEST(GradCheck, ScalarOpsAndNeg) {
  Rng rng(14);
  auto a = random_tensor({5}, rng);
  EXPECT_LT(max_rel_grad_error({&a},
                               [&] {
                                 return reduce_sum(
                                     add_scalar(mul_scalar(neg(a), 1.7), 0.3));
                               }),
            kPrimitiveTolerance);
}

TEST(GradCheck, Matmul) {
  Rng rng(15);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  EXPECT_LT(max_rel_grad_error({&a, &b},
                               [&] { return reduce_sum(gelu_fast(matmul(a, b))); }),
            kPrimitiveTolerance);
}

TEST(GradCheck, TransposeReshapeSlices) {
  Rng rng(16);
  auto a = random_tensor({4, 6}, rng);
  EXPECT_LT(max_rel_grad_error({&a},
                               [&] {
                                 auto t = transpose(a);                   // (6,4)
                                 auto r = reshape(t, Shape{4, 6});
                                 auto rows = slice_rows(r, 1, 3);         // (2,6)
                                 auto cols = slice_cols(rows, 2, 5);      // (2,3)
                                 return reduce_sum(mul(cols, cols));
                               }),
            kPrimitiveTolerance);
}

TEST(GradCheck, SoftmaxLogsumexp) {
  Rng rng(17);
  auto a = random_tensor({3, 5}, rng, true, 2.0);
  EXPECT_LT(max_rel_grad_error({&a},
                               [&] {
                                 auto s = softmax(a);
                                 auto l = logsumexp(a);  // (3)
                                 return add(reduce_sum(mul(s, s)), reduce_sum(l));
                               }),
            kPrimitiveTolerance);
}

TEST(GradCheck, LayerNorm) {
  Rng rng(18);
  auto x = random_tensor({4, 6}, rng, true, 2.0);
  auto gain = random_tensor({6}, rng);
  auto bias = random_tensor({6}, rng);
  EXPECT_LT(max_rel_grad_error({&x, &gain, &bias},
                               [&] {
                                 auto y = layer_norm(x, gain, bias);
                                 return reduce_sum(mul(y, y));
                               }),
            kPrimitiveTolerance);
}

TEST(GradCheck, UnaryElementwise) {
  Rng rng(19);
  auto a = random_tensor({6}, rng);
  for (double& v : a.value()) v = std::abs(v) + 0.5;  // keep log/sqrt in domain
  EXPECT_LT(max_rel_grad_error({&a},
                               [&] {
                                 auto y = add(exp_t(neg(a)), log_t(a));
                                 y = add(y, sqrt_t(a));
                                 y = add(y, tanh_t(a));
                                 y = add(y, gelu_fast(a));
                                 return reduce_sum(y);
                               }),
            kPrimitiveTolerance);
}

TEST(GradCheck, EmbeddingLookup) {
  Rng rng(20);
  auto table = random_tensor({7, 3}, rng);
  const std::vector<int> ids = {0, 3, 3, 6, 1};
  EXPECT_LT(max_rel_grad_error({&table},
                               [&] {
                                 auto e = embedding_lookup(table, ids);
                                 return reduce_sum(mul(e, e));
                               }),
            kPrimitiveTolerance);
}

TEST(GradCheck, DropoutFixedMask) {
  Rng rng(21);
  auto a = random_tensor({8}, rng);
  // the mask must be identical across forward evaluations: re-seed per call
  EXPECT_LT(max_rel_grad_error({&a},
                               [&] {
                                 Rng mask_rng(99);
                                 auto y = dropout(a, 0.4, true, mask_rng);
                                 return reduce_sum(mul(y, y));
                               }),
            kPrimitiveTolerance);
}

TEST(GradCheck, DropoutEvalGradientIsIdentity) {
  auto a = Tensor<double>::from({3}, {1.0, 2.0, 3.0}, true);
  Rng mask_rng(1);
  auto y = dropout(a, 0.9, /*training=*/false, mask_rng);
  backward(reduce_sum(y));
  for (double g : a.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(GradCheck, ConcatStackDiag) {
  Rng rng(22);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 3}, rng);
  auto v1 = random_tensor({4}, rng);
  auto v2 = random_tensor({4}, rng);
  EXPECT_LT(max_rel_grad_error(
                {&a, &b, &v1, &v2},
                [&] {
                  auto cols = concat_cols(std::vector<Tensor<double>>{a, b});  // (2,6)
                  auto rows = concat_rows(std::vector<Tensor<double>>{a, b});  // (4,3)
                  auto stacked = stack_rows(std::vector<Tensor<double>>{v1, v2, v1});
                  auto square = matmul(stacked, transpose(stacked));  // (3,3)
                  return add(add(reduce_sum(mul(cols, cols)), reduce_sum(mul(rows, rows))),
                             reduce_sum(diag(square)));
                }),
            kPrimitiveTolerance);
}

TEST(GradCheck, MaskedSumAndMean) {
  Rng rng(23);
  auto a = random_tensor({3, 4}, rng);
  std::vector<double> mask(12, 0.0);
  mask[1] = 1.0;
  mask[5] = 1.0;
  mask[10] = 1.0;
  EXPECT_LT(max_rel_grad_error({&a},
                               [&] {
                                 return add(sum_masked(a, mask),
                                            reduce_mean(mul(a, a)));
                               }),
            kPrimitiveTolerance);
}

TEST(GradCheck, NormalizeAndCosine) {
  Rng rng(24);
  auto m = random_tensor({3, 5}, rng);
  auto a = random_tensor({5}, rng);
  auto b = random_tensor({5}, rng);
  EXPECT_LT(max_rel_grad_error({&m, &a, &b},
                               [&] {
                                 auto n = l2_normalize_rows(m);
                                 auto c = cosine_similarity(a, b);
                                 return add(reduce_sum(mul(n, n)), mul_scalar(c, 2.0));
                               }),
            kPrimitiveTolerance);
}

TEST(CosineSimilarity, KnownValues) {
  auto a = Tensor<double>::from({2}, {1.0, 0.0});
  auto b = Tensor<double>::from({2}, {0.0, 1.0});
  EXPECT_NEAR(cosine_similarity(a, b).item(), 0.0, 1e-12);
  auto c = Tensor<double>::from({2}, {2.0, 0.0});
  EXPECT_NEAR(cosine_similarity(a, c).item(), 1.0, 1e-12);
  auto d = Tensor<double>::from({2}, {-3.0, 0.0});
  EXPECT_NEAR(cosine_similarity(a, d).item(), -1.0, 1e-12);
}
