#ifndef PULSETRACE_ADAM_HPP
#define PULSETRACE_ADAM_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pulsetrace/errors.hpp"
#include "pulsetrace/tensor.hpp"

namespace pulsetrace {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed set of bound Params. A step consumes
// and zeroes the accumulated gradients. The optimizer owns its params for
// the duration of a step.
template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  void bind(std::string key, Param<T>* param) {
    keys_.push_back(std::move(key));
    params_.push_back(param);
    m_.emplace_back(param->value.shape());
    v_.emplace_back(param->value.shape());
  }

  const AdamConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }
  const std::vector<std::string>& keys() const { return keys_; }

  // Moment access for checkpointing / exact resume.
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }
  void restore(std::size_t i, Tensor<T> m, Tensor<T> v) {
    m_[i] = std::move(m);
    v_[i] = std::move(v);
  }
  void set_step_count(std::size_t s) { step_ = s; }

  void step() {
    // abort before touching anything if any gradient is non-finite
    for (std::size_t p = 0; p < params_.size(); ++p) {
      const auto& g = params_[p]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
          throw NumericError("adam_step: non-finite gradient in '" +
                             keys_[p] + "'");
        }
      }
    }
    ++step_;
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T lr = static_cast<T>(cfg_.lr);
    const T eps = static_cast<T>(cfg_.epsilon);
    const T c1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, double(step_)));
    const T c2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, double(step_)));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto& value = params_[p]->value;
      auto& grad = params_[p]->grad;
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const T g = grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T m_hat = m[i] / c1;
        const T v_hat = v[i] / c2;
        value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
      params_[p]->zero_grad();
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<std::string> keys_;
  std::vector<Param<T>*> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::size_t step_ = 0;
};

}  // namespace pulsetrace

#endif  // PULSETRACE_ADAM_HPP
