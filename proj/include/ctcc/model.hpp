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
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcc/autograd.hpp"
#include "ctcc/compress.hpp"
#include "ctcc/ctc.hpp"
#include "ctcc/tensor.hpp"
#include "ctcc/token_vocab.hpp"

namespace ctcc {

struct ModelConfig {
  int n_encoder_layers = 11;
  int n_decoder_layers = 4;
  int ctc_layer = 8;  // 1-based encoder layer feeding the CTC projection
  std::optional<CompressionPolicy> compression;
  int d_model = 512;
  int n_heads = 8;
  int ffn_dim = 2048;
  double dropout = 0.2;
  double label_smoothing = 0.1;
  int feature_dim = 40;
  int conv_channels = 64;
  Vocabulary ctc_vocab;
  TokenVocabulary target_vocab;
  double loss_weight_ctc = 1.0;
  // Sinusoidal positions added after the frontend. Off by default: the
  // distance penalty is then the only source of order in the encoder.
  bool encoder_positions = false;

  void validate() const;

  /// 512-wide, 8 heads, 2048 FFN, 0.2 dropout, 11+4 layers, CTC at layer 8.
  static ModelConfig full_profile(Vocabulary ctc_vocab, TokenVocabulary target_vocab);
  /// 64-wide, 4 heads, 256 FFN, 4+2 layers, CTC at layer 3, no dropout,
  /// encoder positions on.
  static ModelConfig desk_profile(Vocabulary ctc_vocab, TokenVocabulary target_vocab);
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named parameters in a stable (lexicographic) order.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, ag::Parameter<T>>;

  ag::Parameter<T>& add(const std::string& name, Mat<T> value);
  ag::Parameter<T>& at(const std::string& name);
  const ag::Parameter<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad();
  std::size_t num_tensors() const { return params_.size(); }
  std::size_t num_elements() const;

  Map& map() { return params_; }
  const Map& map() const { return params_; }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
    return out;
  }

 private:
  Map params_;
};

// ---------------------------------------------------------------------------
// Stateless pieces

/// bias(i, j) = -ln(1 + |i - j|).
template <typename T>
Mat<T> log_distance_penalty(int length);

/// Time length after the two stride-2 convolutions.
int subsampled_length(int num_frames);

/// Sinusoidal position table (length x dim).
template <typename T>
Mat<T> sinusoidal_positions(int length, int dim);

enum class Reduction { kSum, kMean };

template <typename T>
struct CeResult {
  double loss = 0.0;
  Mat<T> grad;  // d loss / d logits
  int num_tokens = 0;
};

/// Label-smoothed cross entropy; targets equal to `pad_id` are masked out.
/// kMean divides the sum by the number of non-pad tokens.
template <typename T>
CeResult<T> label_smoothed_ce(const Mat<T>& logits, std::span<const int> target_ids, double eps,
                              int pad_id = TokenVocabulary::kPad,
                              Reduction reduction = Reduction::kMean);

struct LossCounters {
  long ctc_skipped = 0;
};

/// weight * ctc + ce. A non-finite CTC value marks an infeasible item: it
/// contributes nothing and bumps `counters.ctc_skipped`.
double multitask_loss(double ctc_loss_value, double ce_loss_value, double loss_weight_ctc,
                      LossCounters& counters);

// ---------------------------------------------------------------------------
// Model

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

template <typename T>
struct EncoderOutput {
  ag::Var states;         // final encoder output, length_after x d_model
  ag::Var ctc_log_probs;  // length_before x |ctc vocab|
  ag::Var tap_states;     // E_{N_CTC} before compression
  std::vector<ag::Var> layer_states;  // E_1 .. E_{N_E}
  int length_before = 0;  // encoder frames at the CTC tap
  int length_after = 0;   // after compression (== length_before without)
  std::vector<SegmentSpan> spans;
};

template <typename T>
struct LossTerms {
  ag::Var total;
  ag::Var ctc;  // invalid when infeasible
  ag::Var ce;
  bool ctc_feasible = false;
  double ctc_value = 0.0;
  double ce_value = 0.0;
  double total_value = 0.0;
  int num_tokens = 0;  // decoder targets including end-of-sentence
  int length_before = 0;
  int length_after = 0;
};

struct DecodeOptions {
  int beam_size = 5;
  int max_length = 200;
  double length_penalty = 1.0;  // final scores are divided by length^penalty
};

struct Hypothesis {
  std::vector<int> tokens;  // target vocabulary ids, without BOS/EOS
  double score = 0.0;
  bool truncated = false;
  LabelSequence ctc_transcript;
  int length_before = 0;
  int length_after = 0;
};

template <typename T>
class Seq2SeqModel {
 public:
  /// Fresh parameters drawn deterministically from `seed`.
  Seq2SeqModel(ModelConfig config, std::uint64_t seed);
  /// Wraps existing parameters; throws DataError on missing or misshapen ones.
  Seq2SeqModel(ModelConfig config, ParamStore<T> params);

  Seq2SeqModel(Seq2SeqModel&&) noexcept = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) noexcept = default;
  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Two stride-2 convolutions with ReLU, then a projection to d_model.
  ag::Var conv_subsample(ag::Tape<T>& tape, const Mat<T>& features) const;

  EncoderOutput<T> encode(ag::Tape<T>& tape, const Mat<T>& features,
                          const ForwardContext& ctx) const;

  /// Teacher-forced decoder logits (len(input_ids) x |target vocab|).
  ag::Var decoder_logits(ag::Tape<T>& tape, ag::Var encoder_states,
                         std::span<const int> input_ids, const ForwardContext& ctx) const;

  /// lambda = w * CTC(E_{N_CTC}) + CE(D_{N_D}) for one utterance, summed
  /// over tokens (no normalization).
  LossTerms<T> forward_loss(ag::Tape<T>& tape, const Mat<T>& features,
                            std::span<const int> ctc_target, std::span<const int> target_ids,
                            const ForwardContext& ctx) const;

  Hypothesis decode(const Mat<T>& features, const DecodeOptions& options) const;

 private:
  ag::Var param(ag::Tape<T>& tape, const std::string& name) const;
  ag::Var attention_block(ag::Tape<T>& tape, const std::string& prefix, ag::Var query_in,
                          ag::Var memory, const Mat<T>* bias, bool causal) const;
  ag::Var ffn_block(ag::Tape<T>& tape, const std::string& prefix, ag::Var x) const;
  ag::Var norm(ag::Tape<T>& tape, const std::string& prefix, ag::Var x) const;
  ag::Var encoder_layer(ag::Tape<T>& tape, int layer, ag::Var x, const Mat<T>& bias,
                        const ForwardContext& ctx) const;

  ModelConfig config_;
  // Gradient buffers are written through const forward passes.
  mutable ParamStore<T> params_;
};

/// Free-function form of the encoder forward pass in evaluation mode.
template <typename T>
EncoderOutput<T> encoder_forward(ag::Tape<T>& tape, const Seq2SeqModel<T>& model,
                                 const Mat<T>& features);

template <typename T>
Hypothesis decode_translation(const Seq2SeqModel<T>& model, const Mat<T>& features,
                              const DecodeOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints

enum class CheckpointFormat { kBinary, kJson };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamStore<float> params;
};

std::string encode_checkpoint(const ModelConfig& config, const ParamStore<float>& params,
                              CheckpointFormat format = CheckpointFormat::kBinary);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                      const ParamStore<float>& params,
                      CheckpointFormat format = CheckpointFormat::kBinary);
/// Detects the format from the leading bytes.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace ctcc
