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
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctcc/ctc.hpp"
#include "ctcc/tensor.hpp"
#include "ctcc/token_vocab.hpp"

namespace ctcc {

struct FeatureSequence {
  MatF frames;  // T x F
  double frame_period_ms = 10.0;
  std::optional<std::string> speaker_id;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
  /// Rejects empty sequences and non-finite values.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Log-Mel filterbank

struct LogMelConfig {
  int num_mel_bins = 40;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  double log_floor = 1e-10;
  double low_freq_hz = 0.0;
  double high_freq_hz = 0.0;  // 0 means Nyquist
};

/// Number of analysis frames for a waveform of `num_samples` samples. A
/// waveform shorter than one window still yields one zero-padded frame.
int num_logmel_frames(std::size_t num_samples, int sample_rate, const LogMelConfig& config = {});

/// Hamming-windowed power spectrum through triangular HTK-scale Mel filters,
/// then natural log with a floor.
FeatureSequence logmel(std::span<const float> samples, int sample_rate,
                       const LogMelConfig& config = {});

// ---------------------------------------------------------------------------
// Speaker normalization

struct SpeakerStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;
  long num_frames = 0;
};

inline constexpr double kStddevFloor = 1e-8;

SpeakerStats compute_stats(std::span<const MatF* const> utterances);

/// Per-speaker statistics over every utterance of that speaker.
/// Utterances without a speaker id are skipped.
std::map<std::string, SpeakerStats> compute_speaker_stats(
    const std::vector<FeatureSequence>& utterances);

/// (x - mean) / max(stddev, kStddevFloor), per coefficient.
FeatureSequence speaker_normalize(const FeatureSequence& features, const SpeakerStats& stats);

/// Uses the speaker's entry when present, otherwise the utterance's own
/// statistics.
FeatureSequence speaker_normalize(const FeatureSequence& features,
                                  const std::map<std::string, SpeakerStats>& table);

// ---------------------------------------------------------------------------
// SpecAugment (frequency and time masking; no time warping)

struct SpecAugmentConfig {
  int n_freq_masks = 2;
  int max_freq_width = 13;
  int n_time_masks = 2;
  double max_time_width_fraction = 0.05;
  float mask_value = 0.0f;

  bool enabled() const { return n_freq_masks > 0 || n_time_masks > 0; }
  void validate() const;
};

FeatureSequence spec_augment(const FeatureSequence& features, const SpecAugmentConfig& config,
                             std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Synthetic task

enum class PhoneSuffixes { kNone, kPositional };

struct SyntheticParams {
  int alphabet_size = 12;
  int feature_dim = 40;
  int min_duration = 2;
  int max_duration = 4;
  // Feature frames emitted per duration unit. Set to the frontend's
  // subsampling factor to express durations in encoder frames.
  int frames_per_unit = 1;
  // Silence between words, in duration units. Without it word boundaries,
  // and hence the per-word reordering of the translation, are not audible.
  int word_gap = 2;
  double noise_sigma = 0.1;
  PhoneSuffixes suffixes = PhoneSuffixes::kNone;
  int min_words = 1;
  int max_words = 4;
  int min_word_length = 1;
  int max_word_length = 3;
  int num_speakers = 1;
  double speaker_shift = 0.0;
  std::uint64_t prototype_seed = 1234;

  void validate() const;
};

/// Frozen description of a synthetic task: prototypes, speaker offsets, the
/// source-to-target symbol map and both vocabularies.
struct SyntheticTask {
  SyntheticParams params;
  std::vector<std::string> source_symbols;
  MatF prototypes;       // alphabet_size x feature_dim
  MatF speaker_offsets;  // num_speakers x feature_dim
  std::vector<int> target_of_source;  // permutation of source symbol ids
  Vocabulary ctc_vocab;
  TokenVocabulary target_vocab;

  static SyntheticTask create(const SyntheticParams& params);

  /// CTC label id for a source symbol at a position inside a word.
  int phone_id(int symbol, int position, int word_length) const;
};

/// An utterance as words of source symbol ids.
struct SourceUtterance {
  std::vector<std::vector<int>> words;

  int num_symbols() const;
  std::vector<int> flat() const;
};

struct RenderedUtterance {
  FeatureSequence features;
  LabelSequence phones;             // CTC vocabulary ids
  std::vector<int> translation;     // target vocabulary ids
  std::vector<int> durations;       // per symbol, in duration units
  int num_gaps = 0;                 // silent stretches between words
};

/// Draws a word structure; adjacent symbols are always distinct so that run
/// boundaries are recoverable from the frames.
SourceUtterance sample_source_utterance(const SyntheticTask& task, std::mt19937_64& rng);

RenderedUtterance render_synthetic(const SyntheticTask& task, const SourceUtterance& utterance,
                                   std::mt19937_64& rng, int speaker = 0);

/// Target sequence: each word's symbols mapped through target_of_source and
/// emitted in reverse order.
std::vector<int> translate_source(const SyntheticTask& task, const SourceUtterance& utterance);

// ---------------------------------------------------------------------------
// Datasets and manifests

struct Utterance {
  std::string id;
  std::string speaker;
  MatF features;
  LabelSequence phones;
  std::vector<int> translation;
  std::vector<int> durations;  // optional; synthetic data only
  int num_gaps = 0;            // synthetic data only
};

using Dataset = std::vector<Utterance>;

/// Utterance i uses seed mix_seed(master_seed, i), so the result does not
/// depend on generation order.
Dataset generate_dataset(const SyntheticTask& task, int count, std::uint64_t master_seed,
                         const std::string& id_prefix);

/// In-place per-speaker normalization using statistics of `data` itself.
void normalize_dataset(Dataset& data);

/// JSON Lines; features are written as FEAT files under `feature_dir`
/// (relative paths in the manifest) unless `feature_dir` is empty, in which
/// case they are inlined.
void write_manifest(const std::filesystem::path& path, const Dataset& data,
                    const Vocabulary& ctc_vocab, const TokenVocabulary& target_vocab,
                    const std::filesystem::path& feature_dir = {});
Dataset read_manifest(const std::filesystem::path& path, const Vocabulary& ctc_vocab,
                      const TokenVocabulary& target_vocab);

void write_features(const std::filesystem::path& path, const MatF& frames);
MatF read_features(const std::filesystem::path& path);

}  // namespace ctcc
