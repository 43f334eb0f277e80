#ifndef PULSETRACE_MODEL_HPP
#define PULSETRACE_MODEL_HPP

#include <string>
#include <utility>
#include <vector>

#include "pulsetrace/cgru.hpp"
#include "pulsetrace/encoder.hpp"
#include "pulsetrace/head.hpp"
#include "pulsetrace/sequence_io.hpp"

// Network assembly: encoder -> C-GRU -> head (or encoder -> head for the
// frame-wise ablation baseline), with the flat parameter registry that
// optimizer and checkpoints share.

namespace pulsetrace {

enum class ModelProfile { Full, Test };
enum class ModelVariant { Recurrent, Framewise };

inline std::string to_string(ModelProfile p) {
  return p == ModelProfile::Full ? "full" : "test";
}
inline std::string to_string(ModelVariant v) {
  return v == ModelVariant::Recurrent ? "cgru" : "framewise";
}

inline ModelProfile parse_profile(const std::string& s) {
  if (s == "full") return ModelProfile::Full;
  if (s == "test") return ModelProfile::Test;
  throw ConfigError("unknown profile '" + s + "' (expected full|test)");
}
inline ModelVariant parse_variant(const std::string& s) {
  if (s == "cgru") return ModelVariant::Recurrent;
  if (s == "framewise") return ModelVariant::Framewise;
  throw ConfigError("unknown variant '" + s + "' (expected cgru|framewise)");
}

template <typename T>
struct Model {
  ModelProfile profile = ModelProfile::Test;
  ModelVariant variant = ModelVariant::Recurrent;
  EncoderConfig encoder_cfg;
  HeadConfig head_cfg;
  EncoderParams<T> encoder;
  CGruWeights<T> cgru;  // present only for the recurrent variant
  HeadParams<T> head;

  static Model create(ModelProfile profile, ModelVariant variant,
                      std::uint64_t seed) {
    Model m;
    m.profile = profile;
    m.variant = variant;
    m.encoder_cfg = profile == ModelProfile::Full ? EncoderConfig::full()
                                                  : EncoderConfig::test();
    m.head_cfg = profile == ModelProfile::Full
                     ? HeadConfig::full()
                     : HeadConfig::test(m.encoder_cfg.feature_size());
    detail::Rng rng(seed);
    m.encoder = EncoderParams<T>::init(m.encoder_cfg, rng);
    if (variant == ModelVariant::Recurrent) {
      m.cgru = CGruWeights<T>::init(m.encoder_cfg.out_channels, rng);
    }
    m.head = HeadParams<T>::init(m.head_cfg, rng);
    return m;
  }

  std::size_t input_extent() const { return encoder_cfg.input_extent; }
  bool recurrent() const { return variant == ModelVariant::Recurrent; }

  // Fixed registry order: encoder layers, recurrent kernels, head layers.
  std::vector<std::pair<std::string, Param<T>*>> param_registry() {
    std::vector<std::pair<std::string, Param<T>*>> out;
    for (std::size_t i = 0; i < encoder.weights.size(); ++i) {
      const std::string base = "encoder.conv" + std::to_string(i + 1);
      out.emplace_back(base + ".weight", &encoder.weights[i]);
      out.emplace_back(base + ".bias", &encoder.biases[i]);
    }
    if (recurrent()) {
      out.emplace_back("cgru.W_hr", &cgru.w_hr);
      out.emplace_back("cgru.W_xr", &cgru.w_xr);
      out.emplace_back("cgru.W_hz", &cgru.w_hz);
      out.emplace_back("cgru.W_xz", &cgru.w_xz);
      out.emplace_back("cgru.W_h", &cgru.w_h);
      out.emplace_back("cgru.W_x", &cgru.w_x);
      out.emplace_back("cgru.b_r", &cgru.b_r);
      out.emplace_back("cgru.b_z", &cgru.b_z);
      out.emplace_back("cgru.b", &cgru.b);
    }
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
      const std::string base = "head.fc" + std::to_string(i + 1);
      out.emplace_back(base + ".weight", &head.weights[i]);
      out.emplace_back(base + ".bias", &head.biases[i]);
    }
    return out;
  }

  void zero_grad() {
    encoder.zero_grad();
    if (recurrent()) cgru.zero_grad();
    head.zero_grad();
  }
};

template <typename T>
Tensor<T> to_precision(const Tensor<float>& f) {
  if constexpr (std::is_same_v<T, float>) {
    return f;
  } else {
    Tensor<T> t(f.shape());
    for (std::size_t i = 0; i < f.size(); ++i) t[i] = static_cast<T>(f[i]);
    return t;
  }
}

// Retained forward state for one training sequence.
template <typename T>
struct SequenceForward {
  std::vector<FeatureMap<T>> features;
  std::vector<EncoderTrace<T>> encoder_traces;
  std::vector<CGruState<T>> states;  // recurrent variant only
  CGruTrace<T> cgru_trace;
  std::vector<HeadTrace<T>> head_traces;
  std::vector<T> y_hat;
};

// Inference over a whole sequence; per-frame state is discarded as it is
// consumed, matching the streaming path.
template <typename T>
std::vector<T> predict_sequence(const Model<T>& model,
                                const std::vector<Tensor<float>>& frames) {
  std::vector<T> y_hat;
  y_hat.reserve(frames.size());
  CGruState<T> state = zero_state<T>(model.encoder_cfg.out_channels,
                                     model.encoder_cfg.out_h,
                                     model.encoder_cfg.out_w);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    auto frame = to_precision<T>(frames[t]);
    auto fm = encode_frame(frame, model.encoder, model.encoder_cfg, t);
    if (model.recurrent()) {
      state = step(state, fm, model.cgru);
      y_hat.push_back(predict(state, model.head, model.head_cfg));
    } else {
      y_hat.push_back(predict(fm.x, model.head, model.head_cfg));
    }
  }
  return y_hat;
}

// Training-mode forward retaining every intermediate.
template <typename T>
void forward_sequence(Model<T>& model,
                      const std::vector<Tensor<float>>& frames,
                      SequenceForward<T>& fwd) {
  if (frames.empty()) throw ShapeError("forward_sequence: empty sequence");
  fwd = SequenceForward<T>{};
  const std::size_t k = frames.size();
  fwd.features.reserve(k);
  fwd.encoder_traces.resize(k);
  fwd.head_traces.resize(k);
  fwd.y_hat.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    auto frame = to_precision<T>(frames[t]);
    fwd.features.push_back(encode_frame(frame, model.encoder,
                                        model.encoder_cfg, t,
                                        &fwd.encoder_traces[t]));
  }
  if (model.recurrent()) {
    auto h0 = zero_state<T>(model.encoder_cfg.out_channels,
                            model.encoder_cfg.out_h, model.encoder_cfg.out_w);
    fwd.states = unroll(fwd.features, model.cgru, h0, &fwd.cgru_trace);
    for (std::size_t t = 0; t < k; ++t) {
      fwd.y_hat.push_back(predict(fwd.states[t], model.head, model.head_cfg,
                                  &fwd.head_traces[t]));
    }
  } else {
    for (std::size_t t = 0; t < k; ++t) {
      fwd.y_hat.push_back(predict(fwd.features[t].x, model.head,
                                  model.head_cfg, &fwd.head_traces[t]));
    }
  }
}

// Accumulates gradients for d loss / d y_hat[t] through head, recurrence
// and encoder.
template <typename T>
void backward_sequence(Model<T>& model, const SequenceForward<T>& fwd,
                       const std::vector<T>& grad_y_hat) {
  const std::size_t k = fwd.y_hat.size();
  if (grad_y_hat.size() != k) {
    throw ShapeError("backward_sequence: gradient count mismatch");
  }
  const std::vector<std::size_t> state_shape{model.encoder_cfg.out_channels,
                                             model.encoder_cfg.out_h,
                                             model.encoder_cfg.out_w};
  if (model.recurrent()) {
    std::vector<Tensor<T>> upstream(k);
    for (std::size_t t = 0; t < k; ++t) {
      auto flat = head_backward(grad_y_hat[t], model.head, model.head_cfg,
                                fwd.head_traces[t]);
      upstream[t] = flat.reshaped(state_shape);
    }
    auto h0 = zero_state<T>(state_shape[0], state_shape[1], state_shape[2]);
    auto grad_x = bptt(fwd.features, fwd.states, h0, upstream, model.cgru,
                       fwd.cgru_trace);
    for (std::size_t t = 0; t < k; ++t) {
      encode_backward(grad_x[t], model.encoder, model.encoder_cfg,
                      fwd.encoder_traces[t]);
    }
  } else {
    for (std::size_t t = 0; t < k; ++t) {
      auto flat = head_backward(grad_y_hat[t], model.head, model.head_cfg,
                                fwd.head_traces[t]);
      encode_backward(flat.reshaped(state_shape), model.encoder,
                      model.encoder_cfg, fwd.encoder_traces[t]);
    }
  }
}

}  // namespace pulsetrace

#endif  // PULSETRACE_MODEL_HPP
