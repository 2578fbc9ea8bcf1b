#include "clozespan/optim.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "clozespan/checkpoint.hpp"
#include "clozespan/rng.hpp"

using namespace clozespan;

namespace {

NamedParams<double> single_param(Tensor<double> t) {
  return NamedParams<double>{{"p", std::move(t)}};
}

double quadratic_step(NamedParams<double>& params) {
  // f(x) = sum x^2, grad = 2x
  auto& p = params[0].second;
  p.node()->ensure_grad();
  double f = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    f += p.value()[i] * p.value()[i];
    p.grad()[i] += 2.0 * p.value()[i];
  }
  return f;
}

}  // namespace

TEST(Adadelta, ZeroGradientLeavesParametersUnchanged) {
  auto params = single_param(Tensor<double>::from({3}, {1.0, -2.0, 3.0}, true));
  auto before = params[0].second.value();
  params[0].second.node()->ensure_grad();  // all-zero gradient
  Adadelta<double> opt(0.3, 0.9);
  opt.step(params);
  EXPECT_EQ(params[0].second.value(), before);
}

TEST(Adadelta, StepOnQuadraticDecreasesIt) {
  auto params = single_param(Tensor<double>::from({2}, {3.0, -4.0}, true));
  Adadelta<double> opt(1.0, 0.9);
  const double before = quadratic_step(params);
  opt.step(params);
  zero_grads(params);
  double after = 0;
  for (double v : params[0].second.value()) after += v * v;
  EXPECT_LT(after, before);
}

TEST(Adadelta, UntouchedParametersSkipped) {
  NamedParams<double> params{{"used", Tensor<double>::from({1}, {2.0}, true)},
                             {"unused", Tensor<double>::from({1}, {5.0}, true)}};
  params[0].second.node()->ensure_grad();
  params[0].second.grad()[0] = 1.0;
  Adadelta<double> opt;
  opt.step(params);
  EXPECT_NE(params[0].second.value()[0], 2.0);
  EXPECT_EQ(params[1].second.value()[0], 5.0);  // grad buffer empty
}

TEST(Adam, ZeroGradientWithZeroMomentsIsNoOp) {
  auto params = single_param(Tensor<double>::from({2}, {1.5, -0.5}, true));
  auto before = params[0].second.value();
  params[0].second.node()->ensure_grad();
  Adam<double> opt([](std::int64_t) { return 0.01; });
  opt.step(params);
  EXPECT_EQ(params[0].second.value(), before);
}

TEST(Adam, ConvergesOnConvexQuadratic) {
  auto params = single_param(Tensor<double>::from({2}, {5.0, -3.0}, true));
  Adam<double> opt([](std::int64_t) { return 0.05; });
  double f = 0;
  for (int step = 0; step < 2000; ++step) {
    f = quadratic_step(params);
    opt.step(params);
    zero_grads(params);
  }
  EXPECT_LT(f, 1e-4);
}

TEST(Adam, ConsumesPerStepLearningRateCallback) {
  std::vector<std::int64_t> seen;
  auto params = single_param(Tensor<double>::from({1}, {1.0}, true));
  Adam<double> opt([&seen](std::int64_t step) {
    seen.push_back(step);
    return 0.0;  // lr 0: parameters must not move
  });
  for (int i = 0; i < 3; ++i) {
    params[0].second.node()->ensure_grad();
    params[0].second.grad()[0] = 1.0;
    opt.step(params);
    zero_grads(params);
  }
  EXPECT_EQ(seen, (std::vector<std::int64_t>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(params[0].second.value()[0], 1.0);
}

TEST(Checkpoint, RoundTripWithMeta) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "czs_ckpt_test.ckpt").string();
  NamedParams<double> params{{"enc.w", Tensor<double>::from({2, 2}, {1, 2, 3, 4}, true)},
                             {"dec.b", Tensor<double>::from({3}, {-1, 0, 1}, true)}};
  save_checkpoint(path, params, {{"note", "round-trip"}});

  NamedParams<double> loaded{{"enc.w", Tensor<double>::zeros({2, 2}, true)},
                             {"dec.b", Tensor<double>::zeros({3}, true)}};
  load_checkpoint(path, loaded);
  EXPECT_EQ(loaded[0].second.value(), params[0].second.value());
  EXPECT_EQ(loaded[1].second.value(), params[1].second.value());
  EXPECT_EQ(load_checkpoint_meta(path).at("note"), "round-trip");
  std::remove(path.c_str());
}

TEST(Checkpoint, SubsetLoadAndDtypeCast) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "czs_ckpt_cast.ckpt").string();
  NamedParams<float> params{{"a", Tensor<float>::from({2}, {1.5f, -2.25f}, true)},
                            {"b", Tensor<float>::from({1}, {7.0f}, true)}};
  save_checkpoint(path, params);

  // double-precision model loads the float file; extra entries are ignored
  NamedParams<double> partial{{"a", Tensor<double>::zeros({2}, true)}};
  load_checkpoint(path, partial);
  EXPECT_DOUBLE_EQ(partial[0].second.value()[0], 1.5);
  EXPECT_DOUBLE_EQ(partial[0].second.value()[1], -2.25);
  std::remove(path.c_str());
}

TEST(Checkpoint, ShapeAndNameMismatchErrors) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "czs_ckpt_err.ckpt").string();
  NamedParams<float> params{{"a", Tensor<float>::from({2}, {1.0f, 2.0f}, true)}};
  save_checkpoint(path, params);

  NamedParams<float> wrong_shape{{"a", Tensor<float>::zeros({3}, true)}};
  EXPECT_THROW(load_checkpoint(path, wrong_shape), std::runtime_error);
  NamedParams<float> wrong_name{{"missing", Tensor<float>::zeros({2}, true)}};
  EXPECT_THROW(load_checkpoint(path, wrong_name), std::runtime_error);
  std::remove(path.c_str());
}
