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

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcc/features.hpp"
#include "ctcc/model.hpp"

namespace ctcc {

struct TrainConfig {
  double lr_start = 3e-4;
  double lr_peak = 5e-3;
  int warmup_updates = 4000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  int batch_sentences = 8;
  int accumulation_steps = 8;
  int patience_epochs = 5;
  int checkpoint_avg_n = 5;
  int max_epochs = 100;
  long max_updates = 0;  // 0 = unlimited
  std::uint64_t seed = 1;
  bool shuffle = true;
  SpecAugmentConfig spec_augment;
  bool log_steps = false;  // one JSON line per update in addition to epochs

  void validate() const;

  static TrainConfig full_profile();
  /// Short warmup and no accumulation, sized for a few thousand utterances.
  static TrainConfig desk_profile();
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear warmup from lr_start to lr_peak, then lr_peak * sqrt(warmup / u).
double lr_at_step(long update_count, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::map<std::string, Mat<T>> m;
  std::map<std::string, Mat<T>> v;
  long step = 0;
  long skipped = 0;  // updates dropped because of non-finite gradients
};

/// One bias-corrected Adam step using the `grad` buffers of `params`
/// (missing buffers count as zero). Returns false, leaving everything but
/// `state.skipped` untouched, when any gradient is non-finite.
template <typename T>
bool adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const AdamOptions& options);

/// Elementwise mean of the given parameter sets (all with the same names and
/// shapes). Calls `warn` when fewer than `expected` sets are available.
ParamStore<float> average_checkpoints(std::span<const ParamStore<float>> checkpoints,
                                      std::size_t expected = 0,
                                      const std::function<void(const std::string&)>& warn = {});

// ---------------------------------------------------------------------------
// Activation accounting

struct ActivationCount {
  long long frontend = 0;
  long long encoder_below = 0;  // layers up to and including the CTC tap
  long long encoder_above = 0;  // layers after the tap
  long long encoder_attention = 0;  // attention score elements, all layers
  long long decoder = 0;
  long long total() const { return frontend + encoder_below + encoder_above + decoder; }
};

/// Elements of every length-dependent activation kept for the backward pass
/// of one padded batch. `compressed_lengths` holds the per-item lengths after
/// the CTC tap; pass an empty span when the model does not compress.
ActivationCount activation_elements(const ModelConfig& config, std::span<const int> input_frames,
                                    std::span<const int> compressed_lengths,
                                    std::span<const int> target_lengths);

long long peak_activation_elements(const ModelConfig& config, std::span<const int> input_frames,
                                   std::span<const int> compressed_lengths,
                                   std::span<const int> target_lengths);

// ---------------------------------------------------------------------------
// Evaluation helpers

struct DevStats {
  double ce = 0.0;   // label-smoothed CE per target token
  double ctc = 0.0;  // CTC per target token over feasible items
  double token_accuracy = 0.0;  // teacher-forced argmax accuracy incl. EOS
  double mean_length_before = 0.0;
  double mean_length_after = 0.0;
  long tokens = 0;
  long ctc_infeasible = 0;
};

DevStats evaluate_dev(const Seq2SeqModel<float>& model, const Dataset& data);

// ---------------------------------------------------------------------------
// Training loop

struct TrainState {
  AdamState<float> adam;
  long update_count = 0;
  int epoch = 0;  // completed epochs
  double best_dev = 0.0;
  bool has_best = false;
  int epochs_since_improvement = 0;
  bool stopped = false;
  long ctc_skipped = 0;
  std::deque<ParamStore<float>> ring;  // last checkpoint_avg_n epoch checkpoints
};

/// Model parameters plus optimizer and loop state in one file.
void save_train_state(const std::filesystem::path& path, const Seq2SeqModel<float>& model,
                      const TrainState& state);
/// Restores the model parameters in place and returns the loop state.
TrainState load_train_state(const std::filesystem::path& path, Seq2SeqModel<float>& model);

struct TrainHooks {
  std::ostream* metrics = nullptr;  // JSON Lines
  std::filesystem::path checkpoint_dir;  // per-epoch checkpoints when set
  std::function<void(const std::string&)> warn;
  std::function<void(const nlohmann::json&)> on_record;
};

struct TrainResult {
  ParamStore<float> averaged;
  int epochs_run = 0;  // epochs completed during this call
  bool early_stopped = false;
  DevStats final_dev;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs epochs until early stopping, max_epochs or max_updates. Parameters
/// of `model` hold the last trained values afterwards; the averaged ones are
/// returned. Continues from `state`, so a loaded state resumes training.
TrainResult train_loop(Seq2SeqModel<float>& model, const TrainConfig& config,
                       const Dataset& train, const Dataset& dev, TrainState& state,
                       const TrainHooks& hooks = {});

}  // namespace ctcc
