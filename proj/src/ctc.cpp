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

#include "ctcc/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "ctcc/frame_io.hpp"

namespace ctcc {

Vocabulary Vocabulary::with_blank(const std::vector<std::string>& labels) {
  Vocabulary v;
  v.labels.reserve(labels.size() + 1);
  v.labels.emplace_back(kBlankSymbol);
  v.labels.insert(v.labels.end(), labels.begin(), labels.end());
  v.blank_index = 0;
  v.validate();
  return v;
}

int Vocabulary::index_of(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

void Vocabulary::validate() const {
  if (blank_index < 0 || blank_index >= size()) {
    throw InvalidInput("blank_index out of range");
  }
  if (labels[blank_index] != kBlankSymbol) {
    throw InvalidInput("label at blank_index must be " + std::string(kBlankSymbol));
  }
  std::unordered_set<std::string> seen;
  for (const auto& l : labels) {
    if (!seen.insert(l).second) throw InvalidInput("duplicate vocabulary label: " + l);
  }
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open vocabulary: " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    v.labels.push_back(line);
  }
  if (v.labels.empty() || v.labels[0] != kBlankSymbol) {
    throw DataError("vocabulary must start with " + std::string(kBlankSymbol) + ": " +
                    path.string());
  }
  try {
    v.validate();
  } catch (const InvalidInput& e) {
    throw DataError(std::string(e.what()) + ": " + path.string());
  }
  return v;
}

void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  vocab.validate();
  if (vocab.blank_index != 0) throw InvalidInput("vocabulary files require blank at line 0");
  std::ofstream os(path);
  if (!os) throw DataError("cannot write vocabulary: " + path.string());
  for (const auto& l : vocab.labels) os << l << '\n';
}

FramePosteriors FramePosteriors::from(MatD log_probs) {
  FramePosteriors p;
  p.length = static_cast<int>(log_probs.rows());
  p.log_probs = std::move(log_probs);
  return p;
}

void FramePosteriors::validate(double tolerance) const {
  if (length < 0 || length > log_probs.rows()) throw InvalidInput("posterior length out of range");
  for (int t = 0; t < length; ++t) {
    for (Eigen::Index c = 0; c < log_probs.cols(); ++c) {
      if (std::isnan(log_probs(t, c))) throw InvalidInput("NaN in posteriors");
    }
    const double lse = log_sum_exp(log_probs.row(t));
    if (std::abs(lse) > tolerance) {
      throw InvalidInput("posterior row " + std::to_string(t) + " is not normalized");
    }
  }
}

LabelSequence ctc_collapse(std::span<const int> frame_labels, int blank_index,
                           int vocab_size) {
  LabelSequence out;
  int prev = -1;
  for (const int l : frame_labels) {
    if (l < 0 || l >= vocab_size) throw InvalidInput("frame label out of vocabulary range");
    if (l != prev && l != blank_index) out.push_back(l);
    prev = l;
  }
  return out;
}

int min_alignable_frames(std::span<const int> target) {
  int n = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++n;
  }
  return n;
}

namespace {

void check_target(std::span<const int> target, int num_classes, int blank_index) {
  if (blank_index < 0 || blank_index >= num_classes) throw InvalidInput("blank_index out of range");
  for (const int l : target) {
    if (l < 0 || l >= num_classes) throw InvalidInput("target label out of vocabulary range");
    if (l == blank_index) throw InvalidInput("target contains the blank label");
  }
}

std::vector<int> extended_target(std::span<const int> target, int blank_index) {
  std::vector<int> ext(2 * target.size() + 1, blank_index);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

template <typename T>
MatD as_double(const Mat<T>& m, int length) {
  return m.topRows(length).template cast<double>();
}

}  // namespace

CtcLattice ctc_lattice(const MatD& lp, int length, std::span<const int> target,
                       int blank_index) {
  check_target(target, static_cast<int>(lp.cols()), blank_index);
  if (length < 0 || length > lp.rows()) throw InvalidInput("posterior length out of range");
  const std::vector<int> ext = extended_target(target, blank_index);
  const int S = static_cast<int>(ext.size());
  CtcLattice lat;
  lat.log_alpha = MatD::Constant(length, S, kLogZero);
  lat.log_beta = MatD::Constant(length, S, kLogZero);
  if (length == 0) {
    const double v = target.empty() ? 0.0 : kLogZero;
    lat.log_likelihood_forward = v;
    lat.log_likelihood_backward = v;
    return lat;
  }

  // skip[s]: the s-2 -> s transition is allowed (label differs from the
  // previous label, so no separating blank is required).
  std::vector<char> skip(S, 0);
  for (int s = 2; s < S; ++s) skip[s] = (s % 2 == 1 && ext[s] != ext[s - 2]);

  auto& a = lat.log_alpha;
  a(0, 0) = lp(0, ext[0]);
  if (S > 1) a(0, 1) = lp(0, ext[1]);
  for (int t = 1; t < length; ++t) {
    for (int s = 0; s < S; ++s) {
      double acc = a(t - 1, s);
      if (s >= 1) acc = log_add(acc, a(t - 1, s - 1));
      if (s >= 2 && skip[s]) acc = log_add(acc, a(t - 1, s - 2));
      a(t, s) = acc == kLogZero ? kLogZero : acc + lp(t, ext[s]);
    }
  }
  lat.log_likelihood_forward = a(length - 1, S - 1);
  if (S > 1) lat.log_likelihood_forward = log_add(lat.log_likelihood_forward, a(length - 1, S - 2));

  auto& b = lat.log_beta;
  b(length - 1, S - 1) = lp(length - 1, ext[S - 1]);
  if (S > 1) b(length - 1, S - 2) = lp(length - 1, ext[S - 2]);
  for (int t = length - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double acc = b(t + 1, s);
      if (s + 1 < S) acc = log_add(acc, b(t + 1, s + 1));
      if (s + 2 < S && skip[s + 2]) acc = log_add(acc, b(t + 1, s + 2));
      b(t, s) = acc == kLogZero ? kLogZero : acc + lp(t, ext[s]);
    }
  }
  lat.log_likelihood_backward = b(0, 0);
  if (S > 1) lat.log_likelihood_backward = log_add(lat.log_likelihood_backward, b(0, 1));
  return lat;
}

template <typename T>
CtcResult<T> ctc_loss(const Mat<T>& log_probs, int length, std::span<const int> target,
                      int blank_index) {
  if (length < 0 || length > log_probs.rows()) throw InvalidInput("posterior length out of range");
  if (log_probs.topRows(length).array().isNaN().any()) throw InvalidInput("NaN in posteriors");
  check_target(target, static_cast<int>(log_probs.cols()), blank_index);

  CtcResult<T> r;
  r.grad_log_probs = Mat<T>::Zero(log_probs.rows(), log_probs.cols());
  r.grad_logits = Mat<T>::Zero(log_probs.rows(), log_probs.cols());
  if (length < min_alignable_frames(target)) {
    r.loss = std::numeric_limits<double>::infinity();
    r.feasible = false;
    return r;
  }

  const MatD lp = as_double(log_probs, length);
  const CtcLattice lat = ctc_lattice(lp, length, target, blank_index);
  const double log_p = lat.log_likelihood_forward;
  if (log_p == kLogZero) {
    // Alignable in length but every path has zero probability.
    r.loss = std::numeric_limits<double>::infinity();
    r.feasible = false;
    return r;
  }
  r.loss = -log_p;

  const std::vector<int> ext = extended_target(target, blank_index);
  const int S = static_cast<int>(ext.size());
  MatD log_occ = MatD::Constant(length, log_probs.cols(), kLogZero);
  for (int t = 0; t < length; ++t) {
    for (int s = 0; s < S; ++s) {
      const double ab = lat.log_alpha(t, s) + lat.log_beta(t, s);
      if (ab == kLogZero || std::isnan(ab)) continue;
      log_occ(t, ext[s]) = log_add(log_occ(t, ext[s]), ab);
    }
  }
  for (int t = 0; t < length; ++t) {
    for (Eigen::Index c = 0; c < log_probs.cols(); ++c) {
      // alpha and beta both include the emission at t, so divide it out once.
      const double occ = log_occ(t, c) == kLogZero
                             ? 0.0
                             : std::exp(log_occ(t, c) - lp(t, c) - log_p);
      r.grad_log_probs(t, c) = static_cast<T>(-occ);
      r.grad_logits(t, c) = static_cast<T>(std::exp(lp(t, c)) - occ);
    }
  }
  return r;
}

CtcResult<double> ctc_loss(const FramePosteriors& posteriors, std::span<const int> target,
                           int blank_index) {
  return ctc_loss<double>(posteriors.log_probs, posteriors.length, target, blank_index);
}

template <typename T>
std::vector<CtcResult<T>> ctc_loss_batch(const std::vector<Mat<T>>& padded_log_probs,
                                         std::span<const int> lengths,
                                         const std::vector<LabelSequence>& targets,
                                         int blank_index) {
  if (padded_log_probs.size() != lengths.size() || lengths.size() != targets.size()) {
    throw InvalidInput("batch size mismatch between posteriors, lengths and targets");
  }
  std::vector<CtcResult<T>> out;
  out.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    out.push_back(ctc_loss<T>(padded_log_probs[i], lengths[i], targets[i], blank_index));
  }
  return out;
}

double ctc_loss_bruteforce(const FramePosteriors& posteriors, std::span<const int> target,
                           int blank_index) {
  const int T = posteriors.length;
  const int C = posteriors.num_classes();
  check_target(target, C, blank_index);
  if (std::pow(static_cast<double>(C), T) > kBruteforcePathLimit) {
    throw SizeError("brute-force CTC refused: C^T exceeds the path limit");
  }
  const LabelSequence want(target.begin(), target.end());
  std::vector<int> path(T, 0);
  double log_total = kLogZero;
  while (true) {
    if (ctc_collapse(path, blank_index, C) == want) {
      double lp = 0.0;
      for (int t = 0; t < T; ++t) lp += posteriors.log_probs(t, path[t]);
      log_total = log_add(log_total, lp);
    }
    int pos = 0;
    while (pos < T && ++path[pos] == C) path[pos++] = 0;
    if (pos == T) break;
  }
  return -log_total;
}

template <typename T>
std::vector<int> frame_argmax(const Mat<T>& log_probs, int length) {
  std::vector<int> labels(length);
  for (int t = 0; t < length; ++t) {
    int best = 0;
    for (Eigen::Index c = 1; c < log_probs.cols(); ++c) {
      if (log_probs(t, c) > log_probs(t, best)) best = static_cast<int>(c);
    }
    labels[t] = best;
  }
  return labels;
}

GreedyDecoding greedy_decode(const FramePosteriors& posteriors, int blank_index) {
  if (posteriors.length < 0 || posteriors.length > posteriors.log_probs.rows()) {
    throw InvalidInput("posterior length out of range");
  }
  if (posteriors.log_probs.topRows(posteriors.length).array().isNaN().any()) {
    throw InvalidInput("NaN in posteriors");
  }
  GreedyDecoding d;
  d.frame_labels = frame_argmax(posteriors.log_probs, posteriors.length);
  d.collapsed = ctc_collapse(d.frame_labels, blank_index, posteriors.num_classes());
  return d;
}

void write_posteriors(const std::filesystem::path& path, const MatF& log_probs) {
  write_frame_matrix(path, kPosteriorsMagic, log_probs);
}

MatF read_posteriors(const std::filesystem::path& path) {
  return read_frame_matrix(path, kPosteriorsMagic);
}

template CtcResult<float> ctc_loss<float>(const Mat<float>&, int, std::span<const int>, int);
template CtcResult<double> ctc_loss<double>(const Mat<double>&, int, std::span<const int>, int);
template std::vector<CtcResult<float>> ctc_loss_batch<float>(const std::vector<Mat<float>>&,
                                                             std::span<const int>,
                                                             const std::vector<LabelSequence>&,
                                                             int);
template std::vector<CtcResult<double>> ctc_loss_batch<double>(
    const std::vector<Mat<double>>&, std::span<const int>, const std::vector<LabelSequence>&,
    int);
template std::vector<int> frame_argmax<float>(const Mat<float>&, int);
template std::vector<int> frame_argmax<double>(const Mat<double>&, int);

}  // namespace ctcc
