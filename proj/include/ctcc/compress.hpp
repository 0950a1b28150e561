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

#pragma once

#include <span>
#include <string>
#include <vector>

#include "ctcc/ctc.hpp"
#include "ctcc/tensor.hpp"

namespace ctcc {

/// Half-open frame interval [start, end) sharing one greedy CTC label.
struct SegmentSpan {
  int start = 0;
  int end = 0;
  int label = 0;

  int length() const { return end - start; }
  bool operator==(const SegmentSpan&) const = default;
};

enum class PoolingKind { kAverage, kWeighted, kSoftmax };

std::string to_string(PoolingKind kind);
/// Accepts "average"/"avg", "weighted", "softmax" (case-insensitive).
PoolingKind parse_pooling_kind(const std::string& name);

struct CompressionPolicy {
  PoolingKind kind = PoolingKind::kAverage;
  bool keep_blank_segments = true;
  // Stops gradients from reaching the posteriors through the pooling weights.
  bool detach_weights = false;
};

/// Maximal runs of equal labels, in order.
std::vector<SegmentSpan> segment_runs(std::span<const int> frame_labels);

template <typename T>
struct CompressResult {
  Mat<T> compressed;               // one row per entry of `spans`
  std::vector<SegmentSpan> spans;  // spans that produced an output row
  std::vector<T> weights;          // per input frame; 0 on dropped spans
};

/// Pools the first `length` rows of `states` over the greedy-label runs of
/// `log_probs`.
template <typename T>
CompressResult<T> compress(const Mat<T>& states, const Mat<T>& log_probs, int length,
                           const CompressionPolicy& policy, int blank_index);

CompressResult<double> compress(const MatD& states, const FramePosteriors& posteriors,
                                const CompressionPolicy& policy, int blank_index);

template <typename T>
struct CompressGrads {
  Mat<T> states;     // same shape as the forward `states`
  Mat<T> log_probs;  // same shape as the forward `log_probs`; zero if detached
};

/// Vector-Jacobian product of `compress`. Span boundaries are constants.
template <typename T>
CompressGrads<T> compress_backward(const Mat<T>& states, const Mat<T>& log_probs,
                                   const CompressResult<T>& forward, const Mat<T>& grad_out,
                                   const CompressionPolicy& policy);

template <typename T>
struct CompressBatch {
  std::vector<Mat<T>> compressed;  // each zero-padded to max_length rows
  std::vector<int> lengths;
  std::vector<std::vector<SegmentSpan>> spans;
  int max_length = 0;
};

template <typename T>
CompressBatch<T> compress_batch(const std::vector<Mat<T>>& padded_states,
                                const std::vector<Mat<T>>& padded_log_probs,
                                std::span<const int> lengths, const CompressionPolicy& policy,
                                int blank_index);

}  // namespace ctcc
