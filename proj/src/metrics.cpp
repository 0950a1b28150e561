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

#include "ctcc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <regex>
#include <sstream>

#include "ctcc/tensor.hpp"

namespace ctcc {

using nlohmann::json;

template <typename Token>
EditCounts edit_counts(std::span<const Token> hyp, std::span<const Token> ref) {
  struct Cell {
    long cost;
    long sub;
    long del;
    long ins;
  };
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<Cell> prev(m + 1);
  std::vector<Cell> cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {static_cast<long>(j), 0, 0, static_cast<long>(j)};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {static_cast<long>(i), 0, static_cast<long>(i), 0};
    for (std::size_t j = 1; j <= m; ++j) {
      Cell diag = prev[j - 1];
      if (!(ref[i - 1] == hyp[j - 1])) {
        ++diag.cost;
        ++diag.sub;
      }
      Cell del = prev[j];
      ++del.cost;
      ++del.del;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.ins;
      Cell best = diag;
      if (del.cost < best.cost) best = del;
      if (ins.cost < best.cost) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  EditCounts e;
  e.substitutions = prev[m].sub;
  e.deletions = prev[m].del;
  e.insertions = prev[m].ins;
  e.ref_length = static_cast<long>(n);
  return e;
}

template <typename Token>
double wer(std::span<const Token> hyp, std::span<const Token> ref) {
  if (ref.empty()) throw InvalidInput("wer: empty reference");
  const EditCounts e = edit_counts(hyp, ref);
  return static_cast<double>(e.errors()) / static_cast<double>(e.ref_length);
}

double corpus_wer(const std::vector<std::vector<std::string>>& hyps,
                  const std::vector<std::vector<std::string>>& refs) {
  if (hyps.size() != refs.size()) throw InvalidInput("corpus_wer: corpus sizes differ");
  long errors = 0;
  long length = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const EditCounts e = edit_counts<std::string>(hyps[i], refs[i]);
    errors += e.errors();
    length += e.ref_length;
  }
  if (length == 0) throw InvalidInput("corpus_wer: empty references");
  return static_cast<double>(errors) / static_cast<double>(length);
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < kBleuOrder; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  return *this;
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, long> count_ngrams(const std::vector<std::string>& tokens, int n) {
  std::map<Ngram, long> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

}  // namespace

BleuStats sentence_bleu_stats(const std::vector<std::string>& hyp,
                              const std::vector<std::string>& ref) {
  BleuStats s;
  s.hyp_length = static_cast<long>(hyp.size());
  s.ref_length = static_cast<long>(ref.size());
  for (int n = 1; n <= kBleuOrder; ++n) {
    const auto h = count_ngrams(hyp, n);
    const auto r = count_ngrams(ref, n);
    for (const auto& [gram, count] : h) {
      s.totals[n - 1] += count;
      const auto it = r.find(gram);
      if (it != r.end()) s.matches[n - 1] += std::min(count, it->second);
    }
  }
  return s;
}

BleuScore bleu_from_stats(const BleuStats& s) {
  BleuScore b;
  b.hyp_length = s.hyp_length;
  b.ref_length = s.ref_length;
  bool zero = s.hyp_length == 0;
  double log_sum = 0.0;
  for (int n = 0; n < kBleuOrder; ++n) {
    // Orders with no hypothesis n-grams at all are left out of the mean.
    if (s.totals[n] == 0) break;
    b.effective_order = n + 1;
    if (s.matches[n] == 0) {
      zero = true;
      continue;
    }
    const double p = static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    b.precisions[n] = 100.0 * p;
    log_sum += std::log(p);
  }
  b.brevity_penalty =
      s.hyp_length == 0
          ? 0.0
          : std::exp(std::min(0.0, 1.0 - static_cast<double>(s.ref_length) /
                                             static_cast<double>(s.hyp_length)));
  b.score = zero ? 0.0 : 100.0 * b.brevity_penalty * std::exp(log_sum / b.effective_order);
  return b;
}

BleuScore corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                      const std::vector<std::vector<std::string>>& refs) {
  if (hyps.size() != refs.size()) throw InvalidInput("corpus_bleu: corpus sizes differ");
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) total += sentence_bleu_stats(hyps[i], refs[i]);
  return bleu_from_stats(total);
}

std::vector<std::string> tokenize_13a(const std::string& text) {
  std::string s = text;
  auto replace_all = [&s](const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
      s.replace(pos, from.size(), to);
      pos += to.size();
    }
  };
  replace_all("<skipped>", "");
  replace_all("-\n", "");
  replace_all("\n", " ");
  replace_all("&quot;", "\"");
  replace_all("&amp;", "&");
  replace_all("&lt;", "<");
  replace_all("&gt;", ">");

  static const std::regex punct(R"(([\{-\~\[-\` -\&\(-\+\:-\@\/]))");
  static const std::regex period_comma_1(R"(([^0-9])([\.,]))");
  static const std::regex period_comma_2(R"(([\.,])([^0-9]))");
  static const std::regex dash(R"(([0-9])(-))");
  s = " " + s + " ";
  s = std::regex_replace(s, punct, " $1 ");
  s = std::regex_replace(s, period_comma_1, "$1 $2 ");
  s = std::regex_replace(s, period_comma_2, " $1 $2");
  s = std::regex_replace(s, dash, "$1 $2 ");

  std::vector<std::string> tokens;
  std::istringstream is(s);
  for (std::string tok; is >> tok;) tokens.push_back(tok);
  return tokens;
}

json to_json(const EvalReport& r) {
  json j;
  j["wer"] = r.wer;
  j["bleu"] = {{"score", r.bleu.score},
               {"precisions", r.bleu.precisions},
               {"brevity_penalty", r.bleu.brevity_penalty},
               {"effective_order", r.bleu.effective_order},
               {"hyp_length", r.bleu.hyp_length},
               {"ref_length", r.bleu.ref_length}};
  j["compression_ratio"] = r.compression_ratio ? json(*r.compression_ratio) : json(nullptr);
  j["peak_activation_elements"] =
      r.peak_activation_elements ? json(*r.peak_activation_elements) : json(nullptr);
  json utts = json::array();
  for (const UtteranceScore& u : r.utterances) {
    utts.push_back({{"id", u.id},
                    {"wer", u.wer},
                    {"substitutions", u.edits.substitutions},
                    {"deletions", u.edits.deletions},
                    {"insertions", u.edits.insertions},
                    {"ref_length", u.edits.ref_length}});
  }
  j["utterances"] = std::move(utts);
  return j;
}

template EditCounts edit_counts<std::string>(std::span<const std::string>,
                                             std::span<const std::string>);
template EditCounts edit_counts<int>(std::span<const int>, std::span<const int>);
template double wer<std::string>(std::span<const std::string>, std::span<const std::string>);
template double wer<int>(std::span<const int>, std::span<const int>);

}  // namespace ctcc
