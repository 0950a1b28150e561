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

#include "ctcc/token_vocab.hpp"

#include <algorithm>
#include <fstream>

#include "ctcc/tensor.hpp"

namespace ctcc {

TokenVocabulary::TokenVocabulary(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) {
    if (std::find(symbols_.begin(), symbols_.end(), t) != symbols_.end()) {
      throw InvalidInput("duplicate or reserved token: " + t);
    }
    symbols_.push_back(t);
  }
}

int TokenVocabulary::id_of(const std::string& token) const {
  const auto it = std::find(symbols_.begin() + kNumSpecial, symbols_.end(), token);
  return it == symbols_.end() ? kUnk : static_cast<int>(it - symbols_.begin());
}

std::vector<std::string> TokenVocabulary::tokens() const {
  return {symbols_.begin() + kNumSpecial, symbols_.end()};
}

std::vector<int> TokenVocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> TokenVocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (const int id : ids) {
    if (id >= kNumSpecial && id < size()) out.push_back(symbols_[id]);
  }
  return out;
}

TokenVocabulary read_token_vocabulary(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open token vocabulary: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  try {
    return TokenVocabulary(tokens);
  } catch (const InvalidInput& e) {
    throw DataError(std::string(e.what()) + ": " + path.string());
  }
}

void write_token_vocabulary(const std::filesystem::path& path, const TokenVocabulary& vocab) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write token vocabulary: " + path.string());
  for (const auto& t : vocab.tokens()) os << t << '\n';
}

}  // namespace ctcc
