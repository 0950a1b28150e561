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

#include "ctcc/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "ctcc/frame_io.hpp"

namespace ctcc {

using nlohmann::json;

void FeatureSequence::validate() const {
  if (frames.rows() < 1) throw InvalidInput("feature sequence has no frames");
  if (!all_finite(frames)) throw InvalidInput("feature sequence contains NaN or Inf");
}

// ---------------------------------------------------------------------------

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int window_samples(int sample_rate, const LogMelConfig& c) {
  return static_cast<int>(std::lround(sample_rate * c.window_ms / 1000.0));
}
int hop_samples(int sample_rate, const LogMelConfig& c) {
  return static_cast<int>(std::lround(sample_rate * c.hop_ms / 1000.0));
}

// num_mel_bins x (n_fft/2 + 1) triangular filters.
Eigen::MatrixXd mel_filterbank(int sample_rate, int n_fft, const LogMelConfig& c) {
  const int n_bins = n_fft / 2 + 1;
  const double high = c.high_freq_hz > 0 ? c.high_freq_hz : sample_rate / 2.0;
  const double mel_lo = hz_to_mel(c.low_freq_hz);
  const double mel_hi = hz_to_mel(high);
  std::vector<double> edges(c.num_mel_bins + 2);
  for (int i = 0; i < c.num_mel_bins + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (c.num_mel_bins + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(c.num_mel_bins, n_bins);
  for (int m = 0; m < c.num_mel_bins; ++m) {
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double up = (f - edges[m]) / (edges[m + 1] - edges[m]);
      const double down = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

}  // namespace

int num_logmel_frames(std::size_t num_samples, int sample_rate, const LogMelConfig& config) {
  const std::size_t win = window_samples(sample_rate, config);
  const std::size_t hop = hop_samples(sample_rate, config);
  if (num_samples == 0) return 0;
  if (num_samples <= win) return 1;
  return 1 + static_cast<int>((num_samples - win) / hop);
}

FeatureSequence logmel(std::span<const float> samples, int sample_rate,
                       const LogMelConfig& config) {
  if (samples.empty()) throw InvalidInput("logmel: empty waveform");
  if (sample_rate < 8000) throw InvalidInput("logmel: sample rate must be at least 8 kHz");
  const int win = window_samples(sample_rate, config);
  const int hop = hop_samples(sample_rate, config);
  int n_fft = 1;
  while (n_fft < win) n_fft *= 2;
  const int n_bins = n_fft / 2 + 1;
  const int n_frames = num_logmel_frames(samples.size(), sample_rate, config);
  const Eigen::MatrixXd fb = mel_filterbank(sample_rate, n_fft, config);

  std::vector<double> window(win);
  for (int i = 0; i < win; ++i) {
    window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (win - 1));
  }

  Eigen::FFT<double> fft;
  std::vector<double> frame(n_fft);
  std::vector<std::complex<double>> spectrum;
  Eigen::VectorXd power(n_bins);
  FeatureSequence out;
  out.frames.resize(n_frames, config.num_mel_bins);
  out.frame_period_ms = config.hop_ms;
  for (int t = 0; t < n_frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    const std::size_t offset = static_cast<std::size_t>(t) * hop;
    for (int i = 0; i < win && offset + i < samples.size(); ++i) {
      frame[i] = samples[offset + i] * window[i];
    }
    fft.fwd(spectrum, frame);
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(spectrum[k]);
    const Eigen::VectorXd energies = fb * power;
    for (int m = 0; m < config.num_mel_bins; ++m) {
      out.frames(t, m) = static_cast<float>(std::log(std::max(energies[m], config.log_floor)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

SpeakerStats compute_stats(std::span<const MatF* const> utterances) {
  SpeakerStats s;
  Eigen::Index dim = -1;
  Eigen::RowVectorXd sum, sumsq;
  for (const MatF* m : utterances) {
    if (dim < 0) {
      dim = m->cols();
      sum = Eigen::RowVectorXd::Zero(dim);
      sumsq = Eigen::RowVectorXd::Zero(dim);
    } else if (m->cols() != dim) {
      throw InvalidInput("speaker statistics: inconsistent feature dimensions");
    }
    const Eigen::MatrixXd d = m->cast<double>();
    sum += d.colwise().sum();
    sumsq += d.array().square().matrix().colwise().sum();
    s.num_frames += static_cast<long>(m->rows());
  }
  if (s.num_frames == 0) throw InvalidInput("speaker statistics: no frames");
  s.mean = sum / static_cast<double>(s.num_frames);
  const Eigen::RowVectorXd var =
      (sumsq / static_cast<double>(s.num_frames)).array() - s.mean.array().square();
  s.stddev = var.array().max(0.0).sqrt();
  return s;
}

std::map<std::string, SpeakerStats> compute_speaker_stats(
    const std::vector<FeatureSequence>& utterances) {
  std::map<std::string, std::vector<const MatF*>> by_speaker;
  for (const auto& u : utterances) {
    if (u.speaker_id) by_speaker[*u.speaker_id].push_back(&u.frames);
  }
  std::map<std::string, SpeakerStats> table;
  for (const auto& [spk, mats] : by_speaker) table[spk] = compute_stats(mats);
  return table;
}

FeatureSequence speaker_normalize(const FeatureSequence& features, const SpeakerStats& stats) {
  if (stats.mean.size() != features.frames.cols()) {
    throw InvalidInput("speaker_normalize: statistics dimension mismatch");
  }
  FeatureSequence out = features;
  const Eigen::RowVectorXd inv = stats.stddev.array().max(kStddevFloor).inverse();
  for (Eigen::Index t = 0; t < out.frames.rows(); ++t) {
    out.frames.row(t) = ((features.frames.row(t).cast<double>() - stats.mean).array() *
                         inv.array()).cast<float>();
  }
  return out;
}

FeatureSequence speaker_normalize(const FeatureSequence& features,
                                  const std::map<std::string, SpeakerStats>& table) {
  if (features.speaker_id) {
    const auto it = table.find(*features.speaker_id);
    if (it != table.end()) return speaker_normalize(features, it->second);
  }
  const MatF* self[] = {&features.frames};
  return speaker_normalize(features, compute_stats(self));
}

// ---------------------------------------------------------------------------

void SpecAugmentConfig::validate() const {
  if (n_freq_masks < 0 || n_time_masks < 0 || max_freq_width < 0) {
    throw InvalidInput("SpecAugment: counts and widths must be non-negative");
  }
  if (max_time_width_fraction < 0.0 || max_time_width_fraction > 1.0) {
    throw InvalidInput("SpecAugment: time width fraction must lie in [0, 1]");
  }
}

FeatureSequence spec_augment(const FeatureSequence& features, const SpecAugmentConfig& config,
                             std::mt19937_64& rng) {
  config.validate();
  FeatureSequence out = features;
  const int n_time = features.num_frames();
  const int n_freq = features.dim();
  for (int i = 0; i < config.n_freq_masks; ++i) {
    const int w = std::uniform_int_distribution<int>(0, std::min(config.max_freq_width, n_freq))(rng);
    const int f0 = std::uniform_int_distribution<int>(0, n_freq - w)(rng);
    out.frames.middleCols(f0, w).setConstant(config.mask_value);
  }
  const int max_t = static_cast<int>(std::floor(config.max_time_width_fraction * n_time));
  for (int i = 0; i < config.n_time_masks; ++i) {
    const int w = std::uniform_int_distribution<int>(0, max_t)(rng);
    const int t0 = std::uniform_int_distribution<int>(0, n_time - w)(rng);
    out.frames.middleRows(t0, w).setConstant(config.mask_value);
  }
  return out;
}

// ---------------------------------------------------------------------------

void SyntheticParams::validate() const {
  if (alphabet_size < 2) throw InvalidInput("synthetic: alphabet needs at least two symbols");
  if (feature_dim < 1) throw InvalidInput("synthetic: feature_dim must be positive");
  if (min_duration < 1 || max_duration < min_duration) {
    throw InvalidInput("synthetic: invalid duration range");
  }
  if (frames_per_unit < 1) throw InvalidInput("synthetic: frames_per_unit must be positive");
  if (word_gap < 0) throw InvalidInput("synthetic: word_gap must be non-negative");
  if (noise_sigma < 0) throw InvalidInput("synthetic: noise sigma must be non-negative");
  if (min_words < 1 || max_words < min_words || min_word_length < 1 ||
      max_word_length < min_word_length) {
    throw InvalidInput("synthetic: invalid word structure ranges");
  }
  if (num_speakers < 1) throw InvalidInput("synthetic: need at least one speaker");
}

namespace {

constexpr const char* kSuffixes[] = {"_B", "_I", "_E", "_S"};

std::string source_symbol_name(int i) {
  // a..z, then s26, s27, ...
  return i < 26 ? std::string(1, static_cast<char>('a' + i)) : "s" + std::to_string(i);
}

std::string target_symbol_name(int i) {
  return i < 26 ? std::string(1, static_cast<char>('A' + i)) : "T" + std::to_string(i);
}

}  // namespace

SyntheticTask SyntheticTask::create(const SyntheticParams& params) {
  params.validate();
  SyntheticTask task;
  task.params = params;
  std::mt19937_64 rng(params.prototype_seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  task.prototypes.resize(params.alphabet_size, params.feature_dim);
  for (Eigen::Index i = 0; i < task.prototypes.size(); ++i) task.prototypes.data()[i] = gauss(rng);
  task.speaker_offsets.resize(params.num_speakers, params.feature_dim);
  for (Eigen::Index i = 0; i < task.speaker_offsets.size(); ++i) {
    task.speaker_offsets.data()[i] = static_cast<float>(params.speaker_shift) * gauss(rng);
  }

  std::vector<std::string> ctc_labels;
  for (int i = 0; i < params.alphabet_size; ++i) {
    task.source_symbols.push_back(source_symbol_name(i));
    if (params.suffixes == PhoneSuffixes::kNone) {
      ctc_labels.push_back(task.source_symbols.back());
    } else {
      for (const char* s : kSuffixes) ctc_labels.push_back(task.source_symbols.back() + s);
    }
  }
  task.ctc_vocab = Vocabulary::with_blank(ctc_labels);

  task.target_of_source.resize(params.alphabet_size);
  for (int i = 0; i < params.alphabet_size; ++i) task.target_of_source[i] = i;
  std::shuffle(task.target_of_source.begin(), task.target_of_source.end(), rng);
  std::vector<std::string> targets;
  for (int i = 0; i < params.alphabet_size; ++i) targets.push_back(target_symbol_name(i));
  task.target_vocab = TokenVocabulary(targets);
  return task;
}

int SyntheticTask::phone_id(int symbol, int position, int word_length) const {
  if (params.suffixes == PhoneSuffixes::kNone) return 1 + symbol;
  int suffix = 1;  // middle
  if (word_length == 1) {
    suffix = 3;
  } else if (position == 0) {
    suffix = 0;
  } else if (position == word_length - 1) {
    suffix = 2;
  }
  return 1 + symbol * 4 + suffix;
}

int SourceUtterance::num_symbols() const {
  int n = 0;
  for (const auto& w : words) n += static_cast<int>(w.size());
  return n;
}

std::vector<int> SourceUtterance::flat() const {
  std::vector<int> out;
  for (const auto& w : words) out.insert(out.end(), w.begin(), w.end());
  return out;
}

SourceUtterance sample_source_utterance(const SyntheticTask& task, std::mt19937_64& rng) {
  const SyntheticParams& p = task.params;
  SourceUtterance u;
  const int n_words = std::uniform_int_distribution<int>(p.min_words, p.max_words)(rng);
  int prev = -1;
  for (int w = 0; w < n_words; ++w) {
    const int len = std::uniform_int_distribution<int>(p.min_word_length, p.max_word_length)(rng);
    std::vector<int> word;
    for (int i = 0; i < len; ++i) {
      int s;
      if (prev < 0) {
        s = std::uniform_int_distribution<int>(0, p.alphabet_size - 1)(rng);
      } else {
        s = std::uniform_int_distribution<int>(0, p.alphabet_size - 2)(rng);
        if (s >= prev) ++s;
      }
      word.push_back(s);
      prev = s;
    }
    u.words.push_back(std::move(word));
  }
  return u;
}

std::vector<int> translate_source(const SyntheticTask& task, const SourceUtterance& utterance) {
  std::vector<int> out;
  for (const auto& w : utterance.words) {
    for (auto it = w.rbegin(); it != w.rend(); ++it) {
      out.push_back(TokenVocabulary::kNumSpecial + task.target_of_source.at(*it));
    }
  }
  return out;
}

RenderedUtterance render_synthetic(const SyntheticTask& task, const SourceUtterance& utterance,
                                   std::mt19937_64& rng, int speaker) {
  const SyntheticParams& p = task.params;
  if (utterance.num_symbols() == 0) throw InvalidInput("render_synthetic: empty utterance");
  if (speaker < 0 || speaker >= p.num_speakers) throw InvalidInput("render_synthetic: bad speaker");
  RenderedUtterance r;
  std::uniform_int_distribution<int> duration(p.min_duration, p.max_duration);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  // Frame plan: symbol id per stretch, -1 for inter-word silence.
  std::vector<int> stretch_symbol;
  std::vector<int> stretch_units;
  for (std::size_t wi = 0; wi < utterance.words.size(); ++wi) {
    const auto& w = utterance.words[wi];
    if (wi > 0 && p.word_gap > 0) {
      stretch_symbol.push_back(-1);
      stretch_units.push_back(p.word_gap);
      ++r.num_gaps;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] < 0 || w[i] >= p.alphabet_size) throw InvalidInput("render_synthetic: bad symbol");
      r.phones.push_back(task.phone_id(w[i], static_cast<int>(i), static_cast<int>(w.size())));
      r.durations.push_back(duration(rng));
      stretch_symbol.push_back(w[i]);
      stretch_units.push_back(r.durations.back());
    }
  }
  int total = 0;
  for (const int d : stretch_units) total += d * p.frames_per_unit;
  r.features.frames.resize(total, p.feature_dim);
  r.features.speaker_id = "spk" + std::to_string(speaker);
  int t = 0;
  for (std::size_t i = 0; i < stretch_symbol.size(); ++i) {
    for (int k = 0; k < stretch_units[i] * p.frames_per_unit; ++k, ++t) {
      r.features.frames.row(t) = task.speaker_offsets.row(speaker);
      if (stretch_symbol[i] >= 0) r.features.frames.row(t) += task.prototypes.row(stretch_symbol[i]);
      if (p.noise_sigma > 0) {
        for (int f = 0; f < p.feature_dim; ++f) {
          r.features.frames(t, f) += static_cast<float>(p.noise_sigma) * noise(rng);
        }
      }
    }
  }
  r.translation = translate_source(task, utterance);
  return r;
}

Dataset generate_dataset(const SyntheticTask& task, int count, std::uint64_t master_seed,
                         const std::string& id_prefix) {
  Dataset data;
  data.reserve(count);
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix_seed(master_seed, static_cast<std::uint64_t>(i)));
    const SourceUtterance src = sample_source_utterance(task, rng);
    const int speaker = i % task.params.num_speakers;
    RenderedUtterance r = render_synthetic(task, src, rng, speaker);
    Utterance u;
    u.id = id_prefix + std::to_string(i);
    u.speaker = *r.features.speaker_id;
    u.features = std::move(r.features.frames);
    u.phones = std::move(r.phones);
    u.translation = std::move(r.translation);
    u.durations = std::move(r.durations);
    u.num_gaps = r.num_gaps;
    data.push_back(std::move(u));
  }
  return data;
}

void normalize_dataset(Dataset& data) {
  std::vector<FeatureSequence> seqs;
  seqs.reserve(data.size());
  for (const auto& u : data) {
    FeatureSequence f;
    f.frames = u.features;
    if (!u.speaker.empty()) f.speaker_id = u.speaker;
    seqs.push_back(std::move(f));
  }
  const auto table = compute_speaker_stats(seqs);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].features = speaker_normalize(seqs[i], table).frames;
  }
}

// ---------------------------------------------------------------------------

void write_features(const std::filesystem::path& path, const MatF& frames) {
  write_frame_matrix(path, kFeaturesMagic, frames);
}

MatF read_features(const std::filesystem::path& path) {
  return read_frame_matrix(path, kFeaturesMagic);
}

void write_manifest(const std::filesystem::path& path, const Dataset& data,
                    const Vocabulary& ctc_vocab, const TokenVocabulary& target_vocab,
                    const std::filesystem::path& feature_dir) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest: " + path.string());
  const std::filesystem::path base = path.parent_path();
  if (!feature_dir.empty()) std::filesystem::create_directories(base / feature_dir);
  for (const auto& u : data) {
    json j;
    j["id"] = u.id;
    j["speaker"] = u.speaker;
    if (feature_dir.empty()) {
      json rows = json::array();
      for (Eigen::Index t = 0; t < u.features.rows(); ++t) {
        rows.push_back(std::vector<float>(u.features.row(t).begin(), u.features.row(t).end()));
      }
      j["features"] = std::move(rows);
    } else {
      const std::filesystem::path rel = feature_dir / (u.id + ".feat");
      write_features(base / rel, u.features);
      j["features_path"] = rel.generic_string();
    }
    json phones = json::array();
    for (const int p : u.phones) phones.push_back(ctc_vocab.labels.at(p));
    j["phones"] = std::move(phones);
    json tr = json::array();
    for (const int t : u.translation) tr.push_back(target_vocab.symbol(t));
    j["translation"] = std::move(tr);
    if (!u.durations.empty()) j["durations"] = u.durations;
    if (u.num_gaps > 0) j["num_gaps"] = u.num_gaps;
    os << j.dump() << '\n';
  }
}

Dataset read_manifest(const std::filesystem::path& path, const Vocabulary& ctc_vocab,
                      const TokenVocabulary& target_vocab) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path.string());
  const std::filesystem::path base = path.parent_path();
  Dataset data;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      Utterance u;
      u.id = j.at("id").get<std::string>();
      u.speaker = j.value("speaker", std::string());
      if (j.contains("features_path")) {
        u.features = read_features(base / j.at("features_path").get<std::string>());
      } else if (j.contains("features")) {
        const auto& rows = j.at("features");
        const std::size_t dim = rows.empty() ? 0 : rows.at(0).size();
        u.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t t = 0; t < rows.size(); ++t) {
          if (rows[t].size() != dim) throw DataError("ragged inline features");
          for (std::size_t f = 0; f < dim; ++f) u.features(t, f) = rows[t][f].get<float>();
        }
      } else {
        throw DataError("utterance has neither features_path nor features");
      }
      for (const auto& p : j.value("phones", json::array())) {
        const int id = ctc_vocab.index_of(p.get<std::string>());
        if (id < 0 || id == ctc_vocab.blank_index) {
          throw DataError("unknown CTC label " + p.get<std::string>());
        }
        u.phones.push_back(id);
      }
      for (const auto& t : j.value("translation", json::array())) {
        u.translation.push_back(target_vocab.id_of(t.get<std::string>()));
      }
      if (j.contains("durations")) u.durations = j.at("durations").get<std::vector<int>>();
      u.num_gaps = j.value("num_gaps", 0);
      data.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return data;
}

}  // namespace ctcc
