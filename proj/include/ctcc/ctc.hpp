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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ctcc/tensor.hpp"

namespace ctcc {

inline constexpr const char* kBlankSymbol = "<blank>";

/// Label inventory of a CTC output layer. Exactly one entry is the blank.
struct Vocabulary {
  std::vector<std::string> labels;
  int blank_index = 0;

  /// Builds a vocabulary with "<blank>" at index 0 followed by `labels`.
  static Vocabulary with_blank(const std::vector<std::string>& labels);

  int size() const { return static_cast<int>(labels.size()); }
  /// Returns -1 when the label is unknown.
  int index_of(const std::string& label) const;
  void validate() const;
};

/// One label per line; line 0 must be "<blank>".
Vocabulary read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);

/// Per-frame log-probabilities over the blank-augmented vocabulary. Rows at
/// or beyond `length` are padding.
struct FramePosteriors {
  MatD log_probs;
  int length = 0;

  static FramePosteriors from(MatD log_probs);
  int num_classes() const { return static_cast<int>(log_probs.cols()); }
  /// Throws InvalidInput on NaN, bad length, or rows that do not normalize.
  void validate(double tolerance = 1e-6) const;
};

using LabelSequence = std::vector<int>;

/// Merges maximal runs of equal labels and removes blanks.
LabelSequence ctc_collapse(std::span<const int> frame_labels, int blank_index,
                           int vocab_size);

/// Smallest frame count that can emit `target`: L plus one separator frame
/// per adjacent repeated pair.
int min_alignable_frames(std::span<const int> target);

template <typename T>
struct CtcResult {
  /// -log P(target | posteriors); +inf when the target cannot be aligned.
  double loss = 0.0;
  bool feasible = true;
  /// d loss / d log_probs, treating each entry as independent (= -occupancy).
  Mat<T> grad_log_probs;
  /// d loss / d logits when log_probs = log_softmax(logits).
  Mat<T> grad_logits;
};

/// Forward and backward lattices, exposed for consistency checks.
struct CtcLattice {
  MatD log_alpha;  // length x (2L+1)
  MatD log_beta;   // length x (2L+1)
  double log_likelihood_forward = kLogZero;
  double log_likelihood_backward = kLogZero;
};

CtcLattice ctc_lattice(const MatD& log_probs, int length, std::span<const int> target,
                       int blank_index);

/// CTC negative log-likelihood with analytic gradients. Only the first
/// `length` rows of `log_probs` are read; gradient rows past it are zero.
template <typename T>
CtcResult<T> ctc_loss(const Mat<T>& log_probs, int length, std::span<const int> target,
                      int blank_index);

CtcResult<double> ctc_loss(const FramePosteriors& posteriors, std::span<const int> target,
                           int blank_index);

/// Padded-batch variant; items are independent.
template <typename T>
std::vector<CtcResult<T>> ctc_loss_batch(const std::vector<Mat<T>>& padded_log_probs,
                                         std::span<const int> lengths,
                                         const std::vector<LabelSequence>& targets,
                                         int blank_index);

inline constexpr double kBruteforcePathLimit = 1e6;

/// Reference value by enumerating every frame labelling. Refuses inputs with
/// more than kBruteforcePathLimit paths.
double ctc_loss_bruteforce(const FramePosteriors& posteriors, std::span<const int> target,
                           int blank_index);

struct GreedyDecoding {
  std::vector<int> frame_labels;
  LabelSequence collapsed;
};

/// Framewise argmax (lowest index wins ties) followed by collapse.
GreedyDecoding greedy_decode(const FramePosteriors& posteriors, int blank_index);

template <typename T>
std::vector<int> frame_argmax(const Mat<T>& log_probs, int length);

void write_posteriors(const std::filesystem::path& path, const MatF& log_probs);
MatF read_posteriors(const std::filesystem::path& path);

}  // namespace ctcc
