#ifndef PULSETRACE_METRICS_HPP
#define PULSETRACE_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pulsetrace/infer.hpp"
#include "pulsetrace/model.hpp"

// Test-set evaluation (MSE, relative error) and the two-sample
// Kolmogorov-Smirnov comparison used to contrast error distributions.

namespace pulsetrace {

struct SequenceEval {
  std::string id;
  double mse_mm2 = 0.0;
  double re_percent = 0.0;
};

struct EvalReport {
  std::vector<SequenceEval> per_sequence;
  double mse_mean = 0.0, mse_std = 0.0;
  double re_mean = 0.0, re_std = 0.0;
  std::vector<double> abs_errors_mm;  // pooled per-frame |y_hat - y|
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

}  // namespace detail

// Inference-only: the cyclic machinery and the cardiac period are never
// consulted here.
template <typename T>
EvalReport evaluate(const Model<T>& model,
                    const std::vector<UltrasoundSequence>& sequences,
                    const std::vector<std::string>& ids = {}) {
  EvalReport report;
  std::vector<double> mses, res;
  StreamingPredictor<T> predictor(model);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    if (seq.rows() != model.input_extent()) {
      throw ShapeError("evaluate: sequence is " + std::to_string(seq.rows()) +
                       "px, " + to_string(model.profile) + " profile expects " +
                       std::to_string(model.input_extent()) + "px");
    }
    if (seq.diameters_mm.size() != seq.length()) {
      throw ShapeError("evaluate: ground truth length mismatch");
    }
    predictor.reset();
    std::vector<T> y_hat;
    y_hat.reserve(seq.length());
    for (const auto& frame : seq.frames) {
      y_hat.push_back(predictor.push(frame));
    }
    const std::size_t k = seq.length();
    double se = 0.0, re = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double err =
          static_cast<double>(y_hat[t]) - double(seq.diameters_mm[t]);
      se += err * err;
      re += std::fabs(err) / double(seq.diameters_mm[t]);
      report.abs_errors_mm.push_back(std::fabs(err));
    }
    SequenceEval ev;
    ev.id = s < ids.size() ? ids[s] : "seq" + std::to_string(s);
    ev.mse_mm2 = se / static_cast<double>(k);
    ev.re_percent = 100.0 * re / static_cast<double>(k);
    mses.push_back(ev.mse_mm2);
    res.push_back(ev.re_percent);
    report.per_sequence.push_back(std::move(ev));
  }
  std::tie(report.mse_mean, report.mse_std) = detail::mean_std(mses);
  std::tie(report.re_mean, report.re_std) = detail::mean_std(res);
  return report;
}

// --- two-sample Kolmogorov-Smirnov ------------------------------------------

struct KsResult {
  double d_stat = 0.0;
  double p_value = 1.0;
  double alpha = 0.05 / 7.0;  // Bonferroni over the comparison family
  bool significant = false;
};

// D = sup |F_a - F_b| over the pooled sample points. The supremum is
// taken over exact integer step counts and divided once, so ECDF values
// like 1/3 come out as the closest representable number rather than a
// difference of two roundings.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) {
    throw ShapeError("ks_statistic: empty sample");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::uint64_t na = a.size(), nb = b.size();
  std::size_t i = 0, j = 0;
  std::uint64_t peak = 0;
  while (i < a.size() && j < b.size()) {
    const double va = a[i], vb = b[j];
    if (va <= vb) ++i;
    if (vb <= va) ++j;
    const std::uint64_t fa = static_cast<std::uint64_t>(i) * nb;
    const std::uint64_t fb = static_cast<std::uint64_t>(j) * na;
    peak = std::max(peak, fa > fb ? fa - fb : fb - fa);
  }
  return static_cast<double>(peak) /
         (static_cast<double>(na) * static_cast<double>(nb));
}

// Asymptotic survival function Q(lambda) = 2 sum (-1)^{j-1} exp(-2 j^2
// lambda^2), with the small-sample correction on lambda.
inline double ks_p_value(double d, std::size_t na, std::size_t nb) {
  const double ne = static_cast<double>(na) * static_cast<double>(nb) /
                    static_cast<double>(na + nb);
  const double sqrt_ne = std::sqrt(ne);
  const double lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d;
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * double(j) * double(j) * lambda *
                                 lambda);
    sum += sign * term;
    if (term < 1e-12) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// Bonferroni-corrected comparison at alpha = 0.05 / m.
inline KsResult ks_compare(const std::vector<double>& a,
                           const std::vector<double>& b,
                           std::size_t comparisons = 7) {
  KsResult r;
  r.d_stat = ks_statistic(a, b);
  r.p_value = ks_p_value(r.d_stat, a.size(), b.size());
  r.alpha = 0.05 / static_cast<double>(comparisons);
  r.significant = r.p_value < r.alpha;
  return r;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_METRICS_HPP
