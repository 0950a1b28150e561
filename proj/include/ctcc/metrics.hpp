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

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctcc {

struct EditCounts {
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;
  long ref_length = 0;
  long errors() const { return substitutions + deletions + insertions; }
};

/// Unit-cost Levenshtein alignment counts.
template <typename Token>
EditCounts edit_counts(std::span<const Token> hypothesis, std::span<const Token> reference);

/// Edit distance divided by the reference length; throws on an empty
/// reference.
template <typename Token>
double wer(std::span<const Token> hypothesis, std::span<const Token> reference);

/// Corpus WER: total edits over total reference length.
double corpus_wer(const std::vector<std::vector<std::string>>& hypotheses,
                  const std::vector<std::vector<std::string>>& references);

inline constexpr int kBleuOrder = 4;

struct BleuStats {
  std::array<long, kBleuOrder> matches{};
  std::array<long, kBleuOrder> totals{};
  long hyp_length = 0;
  long ref_length = 0;

  BleuStats& operator+=(const BleuStats& other);
};

struct BleuScore {
  double score = 0.0;  // 0..100
  std::array<double, kBleuOrder> precisions{};  // percentages
  double brevity_penalty = 0.0;
  int effective_order = 0;  // < 4 only when the hypotheses are too short for 4-grams
  long hyp_length = 0;
  long ref_length = 0;
};

/// Clipped n-gram counts of one sentence pair.
BleuStats sentence_bleu_stats(const std::vector<std::string>& hypothesis,
                              const std::vector<std::string>& reference);
BleuScore bleu_from_stats(const BleuStats& stats);
/// Corpus BLEU-4 without smoothing: any zero precision gives 0. Orders for
/// which the whole hypothesis corpus has no n-grams are skipped.
BleuScore corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                      const std::vector<std::vector<std::string>>& references);

/// The "13a" tokenizer of the mteval script: unescapes a few entities and
/// splits punctuation from words.
std::vector<std::string> tokenize_13a(const std::string& text);

struct UtteranceScore {
  std::string id;
  EditCounts edits;
  double wer = 0.0;
};

struct EvalReport {
  double wer = 0.0;
  BleuScore bleu;
  std::optional<double> compression_ratio;  // mean length_after / length_before
  std::optional<long long> peak_activation_elements;
  std::vector<UtteranceScore> utterances;
};

nlohmann::json to_json(const EvalReport& report);

}  // namespace ctcc
