#ifndef PULSETRACE_INFER_HPP
#define PULSETRACE_INFER_HPP

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "pulsetrace/detail/winograd.hpp"
#include "pulsetrace/model.hpp"

// Streaming inference over frozen weights. 3x3 stride-1 convolutions take
// the Winograd path with kernel transforms built once at construction;
// everything else shares the training-path ops. All per-frame buffers are
// owned by the predictor, so steady state allocates nothing. One predictor
// serves one stream; reset() rewinds the recurrent state between
// sequences.

namespace pulsetrace {

template <typename T>
class StreamingPredictor {
 public:
  explicit StreamingPredictor(const Model<T>& model) : model_(&model) {
    const auto& cfg = model.encoder_cfg;
    enc_wino_.resize(cfg.layers.size());
    layer_out_.resize(cfg.layers.size());
    pool_out_.resize(cfg.layers.size());
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
      const auto& conv = cfg.layers[i].conv;
      if (conv.kernel_h == 3 && conv.kernel_w == 3 && conv.stride_h == 1 &&
          conv.stride_w == 1 && conv.pad_h <= 1 && conv.pad_h == conv.pad_w) {
        enc_wino_[i] = detail::wino_transform_weights<T>(
            {&model.encoder.weights[i].value});
      }
    }
    if (model.recurrent()) {
      const auto& w = model.cgru;
      // one GEMM per pass: state and input halves concatenated along k
      gates_ = detail::wino_concat_k(
          detail::wino_transform_weights<T>({&w.w_hr.value, &w.w_hz.value}),
          detail::wino_transform_weights<T>({&w.w_xr.value, &w.w_xz.value}));
      cand_ker_ = detail::wino_concat_k(
          detail::wino_transform_weights<T>({&w.w_h.value}),
          detail::wino_transform_weights<T>({&w.w_x.value}));
      const std::size_t d = w.channels;
      gate_bias_.assign(2 * d, T(0));
      for (std::size_t c = 0; c < d; ++c) {
        gate_bias_[c] = w.b_r.value[c];
        gate_bias_[d + c] = w.b_z.value[c];
      }
    }
    reset();
  }

  void reset() {
    state_ = zero_state<T>(model_->encoder_cfg.out_channels,
                           model_->encoder_cfg.out_h,
                           model_->encoder_cfg.out_w);
    frame_index_ = 0;
  }

  const CGruState<T>& state() const { return state_; }

  // Per-frame feature extraction; Winograd where the layer qualifies.
  const Tensor<T>& encode(const Tensor<float>& raw_frame) {
    const auto& cfg = model_->encoder_cfg;
    detail::expect_rank(raw_frame, 3, "encode", "frame");
    detail::expect_extent(raw_frame, 0, 1, "encode", "frame");
    detail::expect_extent(raw_frame, 1, cfg.input_extent, "encode", "frame");
    detail::expect_extent(raw_frame, 2, cfg.input_extent, "encode", "frame");
    frame_in_ = to_precision<T>(raw_frame);
    const Tensor<T>* cur = &frame_in_;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
      const auto& l = cfg.layers[i];
      ensure(layer_out_[i], {l.conv.out_channels, l.conv.out_h(cur->extent(1)),
                             l.conv.out_w(cur->extent(2))});
      if (enc_wino_[i]) {
        detail::wino_conv3x3(*cur, *enc_wino_[i],
                             model_->encoder.biases[i].value.data(),
                             l.conv.pad_h, layer_out_[i], scratch_v_,
                             scratch_m_);
      } else {
        const auto cols = detail::build_cols(*cur, l.conv);
        detail::conv_gemm(cols, model_->encoder.weights[i].value,
                          model_->encoder.biases[i].value.data(),
                          layer_out_[i], false, &conv_scratch_);
      }
      activation_inplace(layer_out_[i], l.act);
      if (l.pool_window) {
        pool_out_[i] = max_pool2d(layer_out_[i], l.pool_window, l.pool_stride);
        cur = &pool_out_[i];
      } else {
        cur = &layer_out_[i];
      }
    }
    return *cur;
  }

  // Recurrent state update; both gates come out of one fused GEMM pass.
  void advance(const Tensor<T>& features) {
    ++frame_index_;
    if (!model_->recurrent()) {
      framewise_features_ = features;
      return;
    }
    const auto& w = model_->cgru;
    const std::size_t d = w.channels;
    const std::size_t gh = state_.h.extent(1), gw = state_.h.extent(2);

    // paired transform: state in the low channel block, input in the high
    detail::wino_transform_input(state_.h, 1, gh, gw, v_pair_, 2 * d, 0);
    detail::wino_transform_input(features, 1, gh, gw, v_pair_, 2 * d, d);

    ensure(rz_, {2 * d, gh, gw});
    detail::wino_matmul(gates_, v_pair_, m_, false);
    detail::wino_output(m_, 2 * d, gates_.c_out_pad, v_pair_,
                        gate_bias_.data(), rz_);
    activation_inplace(rz_, Activation::Sigmoid);

    // u = r . h_prev with r still packed in the gate block
    ensure(u_, {d, gh, gw});
    const std::size_t plane = d * gh * gw;
    for (std::size_t i = 0; i < plane; ++i) u_[i] = rz_[i] * state_.h[i];

    // the input half of the pair is still valid; overwrite the state half
    detail::wino_transform_input(u_, 1, gh, gw, v_pair_, 2 * d, 0);
    ensure(cand_, {d, gh, gw});
    detail::wino_matmul(cand_ker_, v_pair_, m_, false);
    detail::wino_output(m_, d, cand_ker_.c_out_pad, v_pair_,
                        w.b.value.data(), cand_);
    activation_inplace(cand_, Activation::Tanh);

    // h = (1-z).h + z.cand, z in the upper gate block
    ensure(next_h_, {d, gh, gw});
    for (std::size_t i = 0; i < plane; ++i) {
      const T z = rz_[plane + i];
      next_h_[i] = (T(1) - z) * state_.h[i] + z * cand_[i];
    }
    std::swap(state_.h, next_h_);
    state_.time_index = frame_index_;
  }

  T readout() const {
    if (model_->recurrent()) {
      return predict(state_, model_->head, model_->head_cfg);
    }
    return predict(framewise_features_, model_->head, model_->head_cfg);
  }

  const Tensor<T>& readout_source() const {
    return model_->recurrent() ? state_.h : framewise_features_;
  }

  // Pool-free readout for callers that overlap it with the next frame's
  // dispatching work. Same lane-blocked dot as dense(), so the value is
  // bitwise identical to readout().
  T readout_serial() const { return readout_serial_from(readout_source()); }

  T readout_serial_from(const Tensor<T>& src) const {
    const auto& params = model_->head;
    const auto& cfg = model_->head_cfg;
    std::vector<T> cur(src.data(), src.data() + src.size());
    std::vector<T> next;
    for (std::size_t l = 0; l < cfg.layer_count(); ++l) {
      const auto& w = params.weights[l].value;
      const auto& b = params.biases[l].value;
      const std::size_t rows = w.extent(0), colsn = w.extent(1);
      next.resize(rows);
      for (std::size_t i = 0; i < rows; ++i) {
        next[i] = detail::dot(colsn, w.data() + i * colsn, cur.data()) + b[i];
      }
      if (l + 1 < cfg.layer_count()) {
        switch (cfg.hidden_act) {
          case Activation::Relu:
            for (auto& v : next) v = v > T(0) ? v : T(0);
            break;
          case Activation::Sigmoid:
            for (auto& v : next) v = detail::scalar_sigmoid(v);
            break;
          case Activation::Tanh:
            for (auto& v : next) v = detail::scalar_tanh(v);
            break;
        }
      }
      cur.swap(next);
    }
    return cur[0];
  }

  T push(const Tensor<float>& frame) {
    advance(encode(frame));
    return readout();
  }

 private:
  // lazily sized; stale contents are fully overwritten by each producer
  static void ensure(Tensor<T>& t, std::vector<std::size_t> shape) {
    if (t.shape() != shape) t = Tensor<T>(std::move(shape));
  }

  const Model<T>* model_;
  std::vector<std::optional<detail::WinoKernel<T>>> enc_wino_;
  detail::WinoKernel<T> gates_, cand_ker_;
  std::vector<T> gate_bias_;
  CGruState<T> state_;
  Tensor<T> framewise_features_;
  std::size_t frame_index_ = 0;

  Tensor<T> frame_in_;
  std::vector<Tensor<T>> layer_out_;
  std::vector<Tensor<T>> pool_out_;
  Tensor<T> rz_, u_, cand_, next_h_;
  detail::WinoTransformed<T> v_pair_, scratch_v_;
  std::vector<T> m_, scratch_m_, conv_scratch_;
};

// Overlaps the bandwidth-bound head readout of frame t with the
// compute-bound encoder and recurrence of frame t+1 on a dedicated thread.
// Predictions are bitwise identical to the sequential path; only their
// completion timing changes. Output order equals input order.
template <typename T>
class PipelinedRunner {
 public:
  explicit PipelinedRunner(StreamingPredictor<T>& predictor)
      : predictor_(&predictor),
        worker_(&PipelinedRunner::worker_loop, this) {}

  ~PipelinedRunner() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  PipelinedRunner(const PipelinedRunner&) = delete;
  PipelinedRunner& operator=(const PipelinedRunner&) = delete;

  // Blocks until the worker is idle; hands back the completed prediction
  // when one is pending.
  std::optional<T> wait_and_take() {
    std::unique_lock<std::mutex> lk(mutex_);
    cv_.wait(lk, [&] { return !busy_; });
    std::optional<T> out;
    if (has_result_) {
      out = result_;
      has_result_ = false;
    }
    return out;
  }

  // Snapshots the current readout source and kicks the worker; call only
  // after wait_and_take().
  void submit() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      snapshot_ = predictor_->readout_source();
      busy_ = true;
    }
    cv_.notify_all();
  }

  // Feeds frame t; returns the prediction for frame t-1 (nothing on the
  // first call).
  std::optional<T> feed(const Tensor<float>& frame) {
    predictor_->advance(predictor_->encode(frame));
    auto previous = wait_and_take();
    submit();
    return previous;
  }

  // Final pending prediction after the last feed().
  T drain() {
    std::unique_lock<std::mutex> lk(mutex_);
    cv_.wait(lk, [&] { return !busy_; });
    has_result_ = false;
    return result_;
  }

  double readout_ms_total() const { return readout_ms_; }

 private:
  void worker_loop() {
    for (;;) {
      std::unique_lock<std::mutex> lk(mutex_);
      cv_.wait(lk, [&] { return stop_ || busy_; });
      if (stop_) return;
      lk.unlock();
      const auto t0 = std::chrono::steady_clock::now();
      const T y = predictor_->readout_serial_from(snapshot_);
      readout_ms_ += std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
      lk.lock();
      result_ = y;
      has_result_ = true;
      busy_ = false;
      lk.unlock();
      cv_.notify_all();
    }
  }

  StreamingPredictor<T>* predictor_;
  Tensor<T> snapshot_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool busy_ = false;
  bool has_result_ = false;
  bool stop_ = false;
  T result_{};
  double readout_ms_ = 0.0;
  std::thread worker_;
};

}  // namespace pulsetrace

#endif  // PULSETRACE_INFER_HPP
