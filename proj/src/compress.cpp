// Copyright 2026 The ctc-compress Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ctcc/compress.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace ctcc {

std::string to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::kAverage:
      return "average";
    case PoolingKind::kWeighted:
      return "weighted";
    case PoolingKind::kSoftmax:
      return "softmax";
  }
  return "average";
}

PoolingKind parse_pooling_kind(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (n == "average" || n == "avg") return PoolingKind::kAverage;
  if (n == "weighted") return PoolingKind::kWeighted;
  if (n == "softmax") return PoolingKind::kSoftmax;
  throw InvalidInput("unknown compression policy: " + name);
}

std::vector<SegmentSpan> segment_runs(std::span<const int> frame_labels) {
  std::vector<SegmentSpan> spans;
  const int n = static_cast<int>(frame_labels.size());
  int start = 0;
  for (int t = 1; t <= n; ++t) {
    if (t == n || frame_labels[t] != frame_labels[start]) {
      spans.push_back({start, t, frame_labels[start]});
      start = t;
    }
  }
  return spans;
}

namespace {

// Fills span-local weights for one span into `w` (indexed by frame).
template <typename T>
void fill_weights(const Mat<T>& log_probs, const SegmentSpan& span, PoolingKind kind,
                  std::vector<T>& w) {
  const int n = span.length();
  switch (kind) {
    case PoolingKind::kAverage:
      for (int t = span.start; t < span.end; ++t) w[t] = T(1) / static_cast<T>(n);
      return;
    case PoolingKind::kWeighted: {
      // p_t / sum p_s, evaluated in log space.
      double m = kLogZero;
      for (int t = span.start; t < span.end; ++t) m = std::max(m, double(log_probs(t, span.label)));
      double z = 0.0;
      for (int t = span.start; t < span.end; ++t) z += std::exp(double(log_probs(t, span.label)) - m);
      for (int t = span.start; t < span.end; ++t) {
        w[t] = static_cast<T>(std::exp(double(log_probs(t, span.label)) - m) / z);
      }
      return;
    }
    case PoolingKind::kSoftmax: {
      // Softmax over probabilities (not log-probabilities), temperature 1.
      double m = -1.0;
      for (int t = span.start; t < span.end; ++t) {
        m = std::max(m, std::exp(double(log_probs(t, span.label))));
      }
      double z = 0.0;
      for (int t = span.start; t < span.end; ++t) {
        z += std::exp(std::exp(double(log_probs(t, span.label))) - m);
      }
      for (int t = span.start; t < span.end; ++t) {
        w[t] = static_cast<T>(std::exp(std::exp(double(log_probs(t, span.label))) - m) / z);
      }
      return;
    }
  }
}

}  // namespace

template <typename T>
CompressResult<T> compress(const Mat<T>& states, const Mat<T>& log_probs, int length,
                           const CompressionPolicy& policy, int blank_index) {
  if (length < 0 || length > states.rows() || length > log_probs.rows()) {
    throw InvalidInput("compress: length exceeds states or posteriors");
  }
  if (states.rows() != log_probs.rows()) {
    throw InvalidInput("compress: states and posteriors have different frame counts");
  }
  if (log_probs.topRows(length).array().isNaN().any()) {
    throw InvalidInput("compress: NaN in posteriors");
  }
  if (blank_index < 0 || blank_index >= log_probs.cols()) {
    throw InvalidInput("compress: blank_index out of range");
  }

  const std::vector<int> labels = frame_argmax(log_probs, length);
  const std::vector<SegmentSpan> runs = segment_runs(labels);

  CompressResult<T> r;
  r.weights.assign(states.rows(), T(0));
  const bool any_non_blank = std::any_of(runs.begin(), runs.end(), [&](const SegmentSpan& s) {
    return s.label != blank_index;
  });
  // Never emit an empty sequence: an all-blank input keeps its blank spans.
  const bool drop_blank = !policy.keep_blank_segments && any_non_blank;
  for (const auto& span : runs) {
    if (drop_blank && span.label == blank_index) continue;
    r.spans.push_back(span);
  }

  r.compressed = Mat<T>::Zero(static_cast<Eigen::Index>(r.spans.size()), states.cols());
  for (std::size_t i = 0; i < r.spans.size(); ++i) {
    const SegmentSpan& span = r.spans[i];
    fill_weights(log_probs, span, policy.kind, r.weights);
    for (int t = span.start; t < span.end; ++t) {
      r.compressed.row(static_cast<Eigen::Index>(i)) += r.weights[t] * states.row(t);
    }
  }
  return r;
}

CompressResult<double> compress(const MatD& states, const FramePosteriors& posteriors,
                                const CompressionPolicy& policy, int blank_index) {
  return compress<double>(states, posteriors.log_probs, posteriors.length, policy, blank_index);
}

template <typename T>
CompressGrads<T> compress_backward(const Mat<T>& states, const Mat<T>& log_probs,
                                   const CompressResult<T>& forward, const Mat<T>& grad_out,
                                   const CompressionPolicy& policy) {
  if (grad_out.rows() != static_cast<Eigen::Index>(forward.spans.size()) ||
      grad_out.cols() != states.cols()) {
    throw InvalidInput("compress_backward: gradient shape mismatch");
  }
  CompressGrads<T> g;
  g.states = Mat<T>::Zero(states.rows(), states.cols());
  g.log_probs = Mat<T>::Zero(log_probs.rows(), log_probs.cols());
  const bool weights_flow = policy.kind != PoolingKind::kAverage && !policy.detach_weights;

  std::vector<double> dw;
  for (std::size_t i = 0; i < forward.spans.size(); ++i) {
    const SegmentSpan& span = forward.spans[i];
    const auto go = grad_out.row(static_cast<Eigen::Index>(i));
    for (int t = span.start; t < span.end; ++t) g.states.row(t) = forward.weights[t] * go;
    if (!weights_flow) continue;

    // dL/dw_t = <grad_out, x_t>; then through the normalization to p_t and
    // finally to log p_t (dp/dlogp = p).
    dw.assign(span.length(), 0.0);
    double wdw = 0.0;
    for (int t = span.start; t < span.end; ++t) {
      dw[t - span.start] = static_cast<double>(go.dot(states.row(t)));
      wdw += double(forward.weights[t]) * dw[t - span.start];
    }
    for (int t = span.start; t < span.end; ++t) {
      const double w = forward.weights[t];
      const double p = std::exp(double(log_probs(t, span.label)));
      const double centered = dw[t - span.start] - wdw;
      double dlogp = 0.0;
      if (policy.kind == PoolingKind::kWeighted) {
        // w = p / S  =>  dL/dp_t = (dw_t - sum_s w_s dw_s) / S, and p_t / S = w_t.
        dlogp = w * centered;
      } else {
        // w = softmax(p)  =>  dL/dp_t = w_t (dw_t - sum_s w_s dw_s).
        dlogp = w * centered * p;
      }
      g.log_probs(t, span.label) = static_cast<T>(dlogp);
    }
  }
  return g;
}

template <typename T>
CompressBatch<T> compress_batch(const std::vector<Mat<T>>& padded_states,
                                const std::vector<Mat<T>>& padded_log_probs,
                                std::span<const int> lengths, const CompressionPolicy& policy,
                                int blank_index) {
  if (padded_states.size() != padded_log_probs.size() || padded_states.size() != lengths.size()) {
    throw InvalidInput("compress_batch: batch size mismatch");
  }
  CompressBatch<T> b;
  std::vector<Mat<T>> items;
  for (std::size_t i = 0; i < padded_states.size(); ++i) {
    CompressResult<T> r =
        compress<T>(padded_states[i], padded_log_probs[i], lengths[i], policy, blank_index);
    b.lengths.push_back(static_cast<int>(r.compressed.rows()));
    b.max_length = std::max(b.max_length, b.lengths.back());
    b.spans.push_back(std::move(r.spans));
    items.push_back(std::move(r.compressed));
  }
  for (auto& m : items) {
    Mat<T> padded = Mat<T>::Zero(b.max_length, m.cols());
    padded.topRows(m.rows()) = m;
    b.compressed.push_back(std::move(padded));
  }
  return b;
}

template CompressResult<float> compress<float>(const Mat<float>&, const Mat<float>&, int,
                                               const CompressionPolicy&, int);
template CompressResult<double> compress<double>(const Mat<double>&, const Mat<double>&, int,
                                                 const CompressionPolicy&, int);
template CompressGrads<float> compress_backward<float>(const Mat<float>&, const Mat<float>&,
                                                       const CompressResult<float>&,
                                                       const Mat<float>&,
                                                       const CompressionPolicy&);
template CompressGrads<double> compress_backward<double>(const Mat<double>&, const Mat<double>&,
                                                         const CompressResult<double>&,
                                                         const Mat<double>&,
                                                         const CompressionPolicy&);
template CompressBatch<float> compress_batch<float>(const std::vector<Mat<float>>&,
                                                    const std::vector<Mat<float>>&,
                                                    std::span<const int>,
                                                    const CompressionPolicy&, int);
template CompressBatch<double> compress_batch<double>(const std::vector<Mat<double>>&,
                                                      const std::vector<Mat<double>>&,
                                                      std::span<const int>,
                                                      const CompressionPolicy&, int);

}  // namespace ctcc
