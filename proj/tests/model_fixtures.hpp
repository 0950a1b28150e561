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

// Tiny double-precision models and a full finite-difference gradient check,
// shared by the unit tests and the acceptance runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "ctcc/features.hpp"
#include "ctcc/model.hpp"

namespace ctcc::testing {

struct TinyProblem {
  ModelConfig config;
  MatD features;
  std::vector<int> phones;
  std::vector<int> translation;
};

/// d_model 8, 2+2 layers, CTC after layer 1, inputs of at most 12 encoder
/// frames.
inline TinyProblem tiny_problem(std::optional<PoolingKind> pooling, std::uint64_t seed = 1) {
  SyntheticParams sp;
  sp.alphabet_size = 4;
  sp.feature_dim = 6;
  sp.frames_per_unit = 4;
  sp.min_duration = 1;
  sp.max_duration = 2;
  sp.word_gap = 1;
  sp.max_words = 2;
  sp.max_word_length = 2;
  const SyntheticTask task = SyntheticTask::create(sp);
  Dataset data = generate_dataset(task, 4, seed, "tiny");
  const Utterance& u = *std::max_element(
      data.begin(), data.end(),
      [](const Utterance& a, const Utterance& b) { return a.phones.size() < b.phones.size(); });

  TinyProblem p;
  ModelConfig& c = p.config;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 2;
  c.ctc_layer = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.ffn_dim = 12;
  c.dropout = 0.0;
  c.feature_dim = sp.feature_dim;
  c.conv_channels = 2;
  c.ctc_vocab = task.ctc_vocab;
  c.target_vocab = task.target_vocab;
  if (pooling) {
    CompressionPolicy policy;
    policy.kind = *pooling;
    c.compression = policy;
  }
  p.features = u.features.cast<double>();
  p.phones = u.phones;
  p.translation = u.translation;
  return p;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  long checked = 0;
  int length_before = 0;
  int length_after = 0;
};

/// Compares backprop of the multitask loss against central differences for
/// every parameter entry.
inline GradCheckResult model_gradient_check(const TinyProblem& p, std::uint64_t init_seed = 7,
                                            double h = 1e-6, double floor = 1e-5) {
  Seq2SeqModel<double> model(p.config, init_seed);
  auto loss = [&] {
    ag::Tape<double> tape(false);
    return model.forward_loss(tape, p.features, p.phones, p.translation, ForwardContext{})
        .total_value;
  };
  GradCheckResult r;
  model.params().zero_grad();
  {
    ag::Tape<double> tape;
    const LossTerms<double> lt =
        model.forward_loss(tape, p.features, p.phones, p.translation, ForwardContext{});
    tape.backward(lt.total);
    r.length_before = lt.length_before;
    r.length_after = lt.length_after;
  }
  for (auto& [name, param] : model.params().map()) {
    for (Eigen::Index i = 0; i < param.value.size(); ++i) {
      const double old = param.value.data()[i];
      param.value.data()[i] = old + h;
      const double up = loss();
      param.value.data()[i] = old - h;
      const double down = loss();
      param.value.data()[i] = old;
      const double numeric = (up - down) / (2 * h);
      const double analytic = param.grad.size() ? param.grad.data()[i] : 0.0;
      const double rel = std::abs(numeric - analytic) /
                         std::max({std::abs(numeric), std::abs(analytic), floor});
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_param = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace ctcc::testing
