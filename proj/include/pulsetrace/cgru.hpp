#ifndef PULSETRACE_CGRU_HPP
#define PULSETRACE_CGRU_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "pulsetrace/detail/rng.hpp"
#include "pulsetrace/encoder.hpp"
#include "pulsetrace/ops.hpp"

// Convolutional gated recurrent unit. Reset and update gates are sigmoid
// fields over the feature map; the state is a convex blend of the previous
// state and a tanh candidate, so every element stays in (-1, 1) when the
// initial state is zero. All six kernels are D->D 3x3 with padding 1,
// preserving the map extents across time.

namespace pulsetrace {

template <typename T>
struct CGruWeights {
  std::size_t channels = 0;
  Param<T> w_hr, w_xr, w_hz, w_xz, w_h, w_x;  // [D x D x 3 x 3]
  Param<T> b_r, b_z, b;                       // [D]

  ConvSpec conv_spec() const {
    return ConvSpec::make(channels, channels, 3, 1, 1);
  }

  static CGruWeights init(std::size_t d, detail::Rng& rng) {
    CGruWeights w;
    w.channels = d;
    const std::size_t fan_in = d * 9;
    auto kernel = [&] {
      Tensor<T> k({d, d, 3, 3});
      detail::kaiming_uniform_fill(k, fan_in, rng);
      return Param<T>(std::move(k));
    };
    w.w_hr = kernel();
    w.w_xr = kernel();
    w.w_hz = kernel();
    w.w_xz = kernel();
    w.w_h = kernel();
    w.w_x = kernel();
    w.b_r = Param<T>(Tensor<T>({d}));
    w.b_z = Param<T>(Tensor<T>({d}));
    w.b = Param<T>(Tensor<T>({d}));
    return w;
  }

  void zero_grad() {
    for (Param<T>* p : {&w_hr, &w_xr, &w_hz, &w_xz, &w_h, &w_x, &b_r, &b_z,
                        &b}) {
      p->zero_grad();
    }
  }
};

template <typename T>
struct CGruState {
  Tensor<T> h;
  std::size_t time_index = 0;
};

template <typename T>
struct GateActivations {
  Tensor<T> r, z;
};

template <typename T>
CGruState<T> zero_state(std::size_t channels, std::size_t h, std::size_t w) {
  return CGruState<T>{Tensor<T>({channels, h, w}), 0};
}

namespace detail {

template <typename T>
void check_cgru_shapes(const Tensor<T>& h, const Tensor<T>& x,
                       const CGruWeights<T>& w) {
  if (!h.same_shape(x)) {
    throw ShapeError("cgru: state " + Tensor<T>::shape_string(h.shape()) +
                     " vs input " + Tensor<T>::shape_string(x.shape()));
  }
  expect_rank(h, 3, "cgru", "state");
  expect_extent(h, 0, w.channels, "cgru", "state");
}

}  // namespace detail

template <typename T>
struct CGruStepTrace {
  Tensor<T> r, z, cand, u;  // u = r . h_prev
};

template <typename T>
struct CGruTrace {
  std::vector<CGruStepTrace<T>> steps;
};

namespace detail {

// Shared core: column buffers for h_prev and x are built once and feed
// both gates (and the candidate's input half).
template <typename T>
Tensor<T> cgru_step_core(const Tensor<T>& h_prev, const Tensor<T>& x,
                         const CGruWeights<T>& w, GateActivations<T>* gates,
                         CGruStepTrace<T>* trace) {
  check_cgru_shapes(h_prev, x, w);
  const ConvSpec spec = w.conv_spec();
  const auto cols_h = build_cols(h_prev, spec);
  const auto cols_x = build_cols(x, spec);

  Tensor<T> r_pre(h_prev.shape());
  conv_gemm(cols_h, w.w_hr.value, w.b_r.value.data(), r_pre, false);
  conv_gemm(cols_x, w.w_xr.value, static_cast<const T*>(nullptr), r_pre, true);
  auto r = activation(r_pre, Activation::Sigmoid);

  Tensor<T> z_pre(h_prev.shape());
  conv_gemm(cols_h, w.w_hz.value, w.b_z.value.data(), z_pre, false);
  conv_gemm(cols_x, w.w_xz.value, static_cast<const T*>(nullptr), z_pre, true);
  auto z = activation(z_pre, Activation::Sigmoid);

  if (gates) {
    *gates = GateActivations<T>{r, z};
    if (!trace) return Tensor<T>();
  }

  auto u = elementwise(r, h_prev, Elementwise::Mul);
  const auto cols_u = build_cols(u, spec);
  Tensor<T> c_pre(h_prev.shape());
  conv_gemm(cols_u, w.w_h.value, w.b.value.data(), c_pre, false);
  conv_gemm(cols_x, w.w_x.value, static_cast<const T*>(nullptr), c_pre, true);
  auto cand = activation(c_pre, Activation::Tanh);

  auto h = gru_blend(z, h_prev, cand);
  if (trace) {
    *trace = CGruStepTrace<T>{std::move(r), std::move(z), std::move(cand),
                              std::move(u)};
  }
  return h;
}

}  // namespace detail

// r = sigmoid(W_hr*h + W_xr*x + b_r), z likewise with the update kernels.
template <typename T>
GateActivations<T> gates(const CGruState<T>& h_prev, const FeatureMap<T>& x,
                         const CGruWeights<T>& w) {
  GateActivations<T> g;
  detail::cgru_step_core(h_prev.h, x.x, w, &g,
                         static_cast<CGruStepTrace<T>*>(nullptr));
  return g;
}

// h = (1-z).h_prev + z.tanh(W_h*(r.h_prev) + W_x*x + b)
template <typename T>
CGruState<T> step(const CGruState<T>& h_prev, const FeatureMap<T>& x,
                  const CGruWeights<T>& w,
                  CGruStepTrace<T>* trace = nullptr) {
  auto h = detail::cgru_step_core(
      h_prev.h, x.x, w, static_cast<GateActivations<T>*>(nullptr), trace);
  return CGruState<T>{std::move(h), h_prev.time_index + 1};
}

// States h[1..K]; pass a trace to retain the per-step intermediates that
// bptt needs.
template <typename T>
std::vector<CGruState<T>> unroll(const std::vector<FeatureMap<T>>& xs,
                                 const CGruWeights<T>& w,
                                 const CGruState<T>& h0,
                                 CGruTrace<T>* trace = nullptr) {
  if (xs.empty()) throw ShapeError("unroll: empty sequence");
  std::vector<CGruState<T>> states;
  states.reserve(xs.size());
  if (trace) {
    trace->steps.clear();
    trace->steps.reserve(xs.size());
  }
  const CGruState<T>* prev = &h0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    CGruStepTrace<T> st;
    states.push_back(step(*prev, xs[t], w, trace ? &st : nullptr));
    if (trace) trace->steps.push_back(std::move(st));
    prev = &states.back();
  }
  return states;
}

// Full backpropagation through time (no truncation). upstream[t] is
// dL/dh[t+1]; returns dL/dx[t] per step and accumulates all weight grads.
template <typename T>
std::vector<Tensor<T>> bptt(const std::vector<FeatureMap<T>>& xs,
                            const std::vector<CGruState<T>>& states,
                            const CGruState<T>& h0,
                            const std::vector<Tensor<T>>& upstream,
                            CGruWeights<T>& w, const CGruTrace<T>& trace) {
  const std::size_t k = xs.size();
  if (trace.steps.size() != k || states.size() != k) {
    throw std::logic_error(
        "bptt: no retained state (unroll must run in training mode)");
  }
  if (upstream.size() != k) {
    throw ShapeError("bptt: upstream count " +
                     std::to_string(upstream.size()) + " != sequence length " +
                     std::to_string(k));
  }
  const ConvSpec spec = w.conv_spec();
  const std::size_t d = w.channels;
  const std::size_t k_eff = d * 9;

  // Weights are constant across the sweep; transpose each kernel once.
  auto transposed = [&](const Param<T>& p) {
    std::vector<T> t(k_eff * d);
    detail::transpose(d, k_eff, p.value.data(), t.data());
    return t;
  };
  const auto w_hr_t = transposed(w.w_hr);
  const auto w_xr_t = transposed(w.w_xr);
  const auto w_hz_t = transposed(w.w_hz);
  const auto w_xz_t = transposed(w.w_xz);
  const auto w_h_t = transposed(w.w_h);
  const auto w_x_t = transposed(w.w_x);

  std::vector<Tensor<T>> grad_x(k);
  Tensor<T> carry(states[0].h.shape());

  for (std::size_t t = k; t-- > 0;) {
    const Tensor<T>& h_prev = t == 0 ? h0.h : states[t - 1].h;
    const Tensor<T>& x = xs[t].x;
    const auto& st = trace.steps[t];

    auto g_h = elementwise(upstream[t], carry, Elementwise::Add);
    auto blend = gru_blend_backward(st.z, h_prev, st.cand, g_h);
    carry = std::move(blend.keep);

    auto d_candpre = activation_backward(st.cand, Activation::Tanh,
                                         blend.cand);
    auto d_zpre = activation_backward(st.z, Activation::Sigmoid, blend.z);

    const auto cols_h = detail::build_cols(h_prev, spec);
    const auto cols_x = detail::build_cols(x, spec);
    const auto cols_u = detail::build_cols(st.u, spec);
    const auto cols_h_t = detail::transposed_cols(cols_h);
    const auto cols_x_t = detail::transposed_cols(cols_x);
    const auto cols_u_t = detail::transposed_cols(cols_u);
    const std::size_t n = cols_h.n;

    // candidate: dW_h, dW_x, db, then d_u through W_h
    detail::gemm(d, k_eff, n, d_candpre.data(), cols_u_t.data(),
                 w.w_h.grad.data(), true);
    detail::gemm(d, k_eff, n, d_candpre.data(), cols_x_t.data(),
                 w.w_x.grad.data(), true);
    detail::add_channel_sums(d_candpre, w.b.grad);

    std::vector<T> dcols(k_eff * n);
    detail::gemm(k_eff, n, d, w_h_t.data(), d_candpre.data(), dcols.data(),
                 false);
    Tensor<T> d_u(h_prev.shape());
    detail::add_cols_to_grid(cols_u, spec, dcols.data(), n, d_u);

    // reset gate
    auto d_r = elementwise(d_u, h_prev, Elementwise::Mul);
    auto d_rpre = activation_backward(st.r, Activation::Sigmoid, d_r);
    for (std::size_t i = 0; i < carry.size(); ++i) {
      carry[i] += d_u[i] * st.r[i];
    }

    detail::gemm(d, k_eff, n, d_rpre.data(), cols_h_t.data(),
                 w.w_hr.grad.data(), true);
    detail::gemm(d, k_eff, n, d_rpre.data(), cols_x_t.data(),
                 w.w_xr.grad.data(), true);
    detail::add_channel_sums(d_rpre, w.b_r.grad);

    // update gate
    detail::gemm(d, k_eff, n, d_zpre.data(), cols_h_t.data(),
                 w.w_hz.grad.data(), true);
    detail::gemm(d, k_eff, n, d_zpre.data(), cols_x_t.data(),
                 w.w_xz.grad.data(), true);
    detail::add_channel_sums(d_zpre, w.b_z.grad);

    // into h_prev: both gate convs share one scatter
    detail::gemm(k_eff, n, d, w_hr_t.data(), d_rpre.data(), dcols.data(),
                 false);
    detail::gemm(k_eff, n, d, w_hz_t.data(), d_zpre.data(), dcols.data(),
                 true);
    detail::add_cols_to_grid(cols_h, spec, dcols.data(), n, carry);

    // into x: three convs share one scatter
    detail::gemm(k_eff, n, d, w_xr_t.data(), d_rpre.data(), dcols.data(),
                 false);
    detail::gemm(k_eff, n, d, w_xz_t.data(), d_zpre.data(), dcols.data(),
                 true);
    detail::gemm(k_eff, n, d, w_x_t.data(), d_candpre.data(), dcols.data(),
                 true);
    Tensor<T> dx(x.shape());
    detail::add_cols_to_grid(cols_x, spec, dcols.data(), n, dx);
    grad_x[t] = std::move(dx);
  }
  return grad_x;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_CGRU_HPP
