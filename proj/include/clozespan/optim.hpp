#pragma once

// Adadelta and Adam over named parameter sets. Parameters with an empty
// gradient buffer (never touched by backward) are left unchanged.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clozespan/tensor.hpp"

namespace clozespan {

template <typename Real>
using NamedParams = std::vector<std::pair<std::string, Tensor<Real>>>;

template <typename Real>
void zero_grads(NamedParams<Real>& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

template <typename Real>
class Adadelta {
 public:
  explicit Adadelta(double learning_rate = 1.0, double rho = 0.9, double eps = 1e-6)
      : lr_(learning_rate), rho_(rho), eps_(eps) {}

  void step(NamedParams<Real>& params) {
    for (auto& [name, p] : params) {
      if (p.grad().empty()) continue;
      State& st = states_[p.node()];
      if (st.accum_grad.empty()) {
        st.accum_grad.assign(p.size(), 0.0);
        st.accum_update.assign(p.size(), 0.0);
      }
      auto& value = p.value();
      const auto& grad = p.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        st.accum_grad[i] = rho_ * st.accum_grad[i] + (1.0 - rho_) * g * g;
        const double update = -std::sqrt(st.accum_update[i] + eps_) /
                              std::sqrt(st.accum_grad[i] + eps_) * g;
        st.accum_update[i] = rho_ * st.accum_update[i] + (1.0 - rho_) * update * update;
        value[i] += static_cast<Real>(lr_ * update);
      }
    }
  }

 private:
  struct State {
    std::vector<double> accum_grad;
    std::vector<double> accum_update;
  };
  double lr_, rho_, eps_;
  std::unordered_map<void*, State> states_;
};

template <typename Real>
class Adam {
 public:
  using LrSchedule = std::function<double(std::int64_t step)>;

  explicit Adam(LrSchedule lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(std::move(lr)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  std::int64_t step_count() const { return t_; }

  void step(NamedParams<Real>& params) {
    const double lr = lr_(t_);
    ++t_;
    for (auto& [name, p] : params) {
      if (p.grad().empty()) continue;
      State& st = states_[p.node()];
      if (st.m.empty()) {
        st.m.assign(p.size(), 0.0);
        st.v.assign(p.size(), 0.0);
      }
      auto& value = p.value();
      const auto& grad = p.grad();
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
        st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        value[i] -= static_cast<Real>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  struct State {
    std::vector<double> m;
    std::vector<double> v;
  };
  LrSchedule lr_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::unordered_map<void*, State> states_;
};

}  // namespace clozespan
