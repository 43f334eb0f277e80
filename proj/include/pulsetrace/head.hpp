#ifndef PULSETRACE_HEAD_HPP
#define PULSETRACE_HEAD_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "pulsetrace/cgru.hpp"
#include "pulsetrace/detail/rng.hpp"
#include "pulsetrace/ops.hpp"

// Fully connected stack reducing the flattened recurrent state to the
// scalar diameter estimate in mm. Hidden layers ReLU, output linear.

namespace pulsetrace {

struct HeadConfig {
  std::vector<std::size_t> widths;  // input, hidden..., 1
  Activation hidden_act = Activation::Relu;

  static HeadConfig full() { return HeadConfig{{43264, 512, 64, 1}}; }
  static HeadConfig test(std::size_t input_width) {
    return HeadConfig{{input_width, 32, 1}};
  }

  void validate() const {
    if (widths.size() < 2) throw ShapeError("HeadConfig: need >= 2 widths");
    if (widths.back() != 1) {
      throw ShapeError("HeadConfig: final width must be 1, got " +
                       std::to_string(widths.back()));
    }
  }

  std::size_t input_width() const { return widths.front(); }
  std::size_t layer_count() const { return widths.size() - 1; }
};

template <typename T>
struct HeadParams {
  std::vector<Param<T>> weights;
  std::vector<Param<T>> biases;

  static HeadParams init(const HeadConfig& cfg, detail::Rng& rng) {
    cfg.validate();
    HeadParams p;
    for (std::size_t i = 0; i + 1 < cfg.widths.size(); ++i) {
      Tensor<T> w({cfg.widths[i + 1], cfg.widths[i]});
      detail::kaiming_uniform_fill(w, cfg.widths[i], rng);
      p.weights.emplace_back(std::move(w));
      p.biases.emplace_back(Tensor<T>({cfg.widths[i + 1]}));
    }
    return p;
  }

  void zero_grad() {
    for (auto& w : weights) w.zero_grad();
    for (auto& b : biases) b.zero_grad();
  }
};

template <typename T>
struct HeadTrace {
  std::vector<Tensor<T>> layer_inputs;  // flat input, then hidden outputs
  bool valid = false;
};

template <typename T>
T predict(const Tensor<T>& features, const HeadParams<T>& params,
          const HeadConfig& cfg, HeadTrace<T>* trace = nullptr) {
  auto flat = flatten(features);
  if (flat.size() != cfg.input_width()) {
    throw ShapeError("predict: state flattens to " +
                     std::to_string(flat.size()) + ", head expects " +
                     std::to_string(cfg.input_width()));
  }
  if (trace) {
    *trace = HeadTrace<T>{};
    trace->valid = true;
  }
  Tensor<T> cur = std::move(flat);
  for (std::size_t i = 0; i < cfg.layer_count(); ++i) {
    if (trace) trace->layer_inputs.push_back(cur);
    cur = dense(cur, params.weights[i], params.biases[i]);
    if (i + 1 < cfg.layer_count()) {
      cur = activation(cur, cfg.hidden_act);
    }
  }
  return cur[0];
}

template <typename T>
T predict(const CGruState<T>& state, const HeadParams<T>& params,
          const HeadConfig& cfg, HeadTrace<T>* trace = nullptr) {
  return predict(state.h, params, cfg, trace);
}

// Gradient wrt the flattened input; parameter grads accumulate.
template <typename T>
Tensor<T> head_backward(T upstream, HeadParams<T>& params,
                        const HeadConfig& cfg, const HeadTrace<T>& trace) {
  if (!trace.valid || trace.layer_inputs.size() != cfg.layer_count()) {
    throw std::logic_error(
        "head_backward: no retained forward state (run predict with a trace "
        "first)");
  }
  Tensor<T> grad({1});
  grad[0] = upstream;
  for (std::size_t ri = cfg.layer_count(); ri-- > 0;) {
    if (ri + 1 < cfg.layer_count()) {
      // layer_inputs[ri + 1] is this layer's post-activation output
      grad = activation_backward(trace.layer_inputs[ri + 1], cfg.hidden_act,
                                 grad);
    }
    grad = dense_backward(trace.layer_inputs[ri], params.weights[ri],
                          params.biases[ri], grad);
  }
  return grad;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_HEAD_HPP
