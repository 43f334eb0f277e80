#ifndef PULSETRACE_ENCODER_HPP
#define PULSETRACE_ENCODER_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "pulsetrace/detail/rng.hpp"
#include "pulsetrace/ops.hpp"

// Per-frame feature extractor: a shallow stack of conv / ReLU / max-pool
// layers squeezing an N x N grayscale frame into a D x N_x x M_x map.

namespace pulsetrace {

struct EncoderLayer {
  ConvSpec conv;
  Activation act = Activation::Relu;
  std::size_t pool_window = 0;  // 0 = no pool after this layer
  std::size_t pool_stride = 0;
};

struct EncoderConfig {
  std::vector<EncoderLayer> layers;
  std::size_t input_extent = 0;              // N = M
  std::size_t out_channels = 0;              // D
  std::size_t out_h = 0, out_w = 0;          // N_x, M_x

  // 128 -> 64@32^2 -> pool -> 192@15^2 -> 384 -> 256 -> 256@13^2
  static EncoderConfig full() {
    EncoderConfig cfg;
    cfg.input_extent = 128;
    cfg.layers = {
        {ConvSpec::make(1, 64, 11, 4, 5), Activation::Relu, 3, 2},
        {ConvSpec::make(64, 192, 5, 1, 2), Activation::Relu, 0, 0},
        {ConvSpec::make(192, 384, 3, 1, 1), Activation::Relu, 0, 0},
        {ConvSpec::make(384, 256, 3, 1, 1), Activation::Relu, 0, 0},
        {ConvSpec::make(256, 256, 3, 1, 0), Activation::Relu, 0, 0},
    };
    cfg.out_channels = 256;
    cfg.out_h = cfg.out_w = 13;
    cfg.validate();
    return cfg;
  }

  // Small profile for fast suites: 64 -> 32x6x6.
  static EncoderConfig test() {
    EncoderConfig cfg;
    cfg.input_extent = 64;
    cfg.layers = {
        {ConvSpec::make(1, 16, 5, 2, 2), Activation::Relu, 2, 2},
        {ConvSpec::make(16, 32, 3, 1, 1), Activation::Relu, 2, 2},
        {ConvSpec::make(32, 32, 3, 1, 0), Activation::Relu, 0, 0},
    };
    cfg.out_channels = 32;
    cfg.out_h = cfg.out_w = 6;
    cfg.validate();
    return cfg;
  }

  // Walks the shape algebra from 1 x N x N and checks the declared output.
  void validate() const {
    if (layers.empty()) throw ShapeError("EncoderConfig: no layers");
    std::size_t ch = 1, h = input_extent, w = input_extent;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.conv.in_channels != ch) {
        throw ShapeError("EncoderConfig: layer " + std::to_string(i) +
                         " expects " + std::to_string(l.conv.in_channels) +
                         " channels, gets " + std::to_string(ch));
      }
      h = l.conv.out_h(h);
      w = l.conv.out_w(w);
      ch = l.conv.out_channels;
      if (l.pool_window) {
        if (l.pool_window > h || l.pool_window > w) {
          throw ShapeError("EncoderConfig: layer " + std::to_string(i) +
                           " pool window exceeds map");
        }
        h = (h - l.pool_window) / l.pool_stride + 1;
        w = (w - l.pool_window) / l.pool_stride + 1;
      }
    }
    if (ch != out_channels || h != out_h || w != out_w) {
      throw ShapeError("EncoderConfig: layers map to " + std::to_string(ch) +
                       "x" + std::to_string(h) + "x" + std::to_string(w) +
                       ", declared " + std::to_string(out_channels) + "x" +
                       std::to_string(out_h) + "x" + std::to_string(out_w));
    }
  }

  std::size_t feature_size() const { return out_channels * out_h * out_w; }
};

template <typename T>
struct FeatureMap {
  Tensor<T> x;
  std::size_t frame_index = 0;
};

template <typename T>
struct EncoderParams {
  std::vector<Param<T>> weights;
  std::vector<Param<T>> biases;

  static EncoderParams init(const EncoderConfig& cfg, detail::Rng& rng) {
    EncoderParams p;
    for (const auto& l : cfg.layers) {
      Tensor<T> w({l.conv.out_channels, l.conv.in_channels, l.conv.kernel_h,
                   l.conv.kernel_w});
      detail::kaiming_uniform_fill(
          w, l.conv.in_channels * l.conv.kernel_h * l.conv.kernel_w, rng);
      p.weights.emplace_back(std::move(w));
      p.biases.emplace_back(Tensor<T>({l.conv.out_channels}));
    }
    return p;
  }

  void zero_grad() {
    for (auto& w : weights) w.zero_grad();
    for (auto& b : biases) b.zero_grad();
  }
};

// Forward intermediates retained for the backward pass.
template <typename T>
struct EncoderTrace {
  std::vector<Tensor<T>> layer_inputs;  // tensor entering each conv
  std::vector<Tensor<T>> act_outputs;   // post-activation, pre-pool
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  bool valid = false;
};

template <typename T>
FeatureMap<T> encode_frame(const Tensor<T>& frame,
                           const EncoderParams<T>& params,
                           const EncoderConfig& cfg,
                           std::size_t frame_index = 0,
                           EncoderTrace<T>* trace = nullptr) {
  detail::expect_rank(frame, 3, "encode_frame", "frame");
  detail::expect_extent(frame, 0, 1, "encode_frame", "frame");
  detail::expect_extent(frame, 1, cfg.input_extent, "encode_frame", "frame");
  detail::expect_extent(frame, 2, cfg.input_extent, "encode_frame", "frame");
  if (params.weights.size() != cfg.layers.size()) {
    throw ShapeError("encode_frame: params/config layer count mismatch");
  }
  if (trace) {
    *trace = EncoderTrace<T>{};
    trace->valid = true;
  }

  Tensor<T> cur = frame;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& l = cfg.layers[i];
    if (trace) trace->layer_inputs.push_back(cur);
    auto pre = conv2d(cur, params.weights[i], params.biases[i], l.conv);
    auto act = activation(pre, l.act);
    if (trace) trace->act_outputs.push_back(act);
    if (l.pool_window) {
      std::vector<std::uint32_t> argmax;
      cur = max_pool2d(act, l.pool_window, l.pool_stride,
                       trace ? &argmax : nullptr);
      if (trace) trace->pool_argmax.push_back(std::move(argmax));
    } else {
      cur = std::move(act);
      if (trace) trace->pool_argmax.emplace_back();
    }
  }
  return FeatureMap<T>{std::move(cur), frame_index};
}

// Accumulates parameter grads, returns the gradient wrt the input frame.
template <typename T>
Tensor<T> encode_backward(const Tensor<T>& upstream, EncoderParams<T>& params,
                          const EncoderConfig& cfg,
                          const EncoderTrace<T>& trace) {
  if (!trace.valid || trace.layer_inputs.size() != cfg.layers.size()) {
    throw std::logic_error(
        "encode_backward: no retained forward state (run encode_frame with a "
        "trace first)");
  }
  Tensor<T> grad = upstream;
  for (std::size_t ri = cfg.layers.size(); ri-- > 0;) {
    const auto& l = cfg.layers[ri];
    if (l.pool_window) {
      grad = max_pool2d_backward(trace.pool_argmax[ri],
                                 trace.act_outputs[ri].shape(), grad);
    }
    grad = activation_backward(trace.act_outputs[ri], l.act, grad);
    grad = conv2d_backward(trace.layer_inputs[ri], params.weights[ri],
                           params.biases[ri], l.conv, grad);
  }
  return grad;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_ENCODER_HPP
