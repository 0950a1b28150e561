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
#include <string>
#include <vector>

namespace ctcc {

/// Decoder-side vocabulary: four reserved symbols followed by tokens. There
/// is no blank; CTC labels live in a separate Vocabulary.
class TokenVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;

  TokenVocabulary() = default;
  explicit TokenVocabulary(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(int id) const { return symbols_.at(id); }
  /// Unknown tokens map to kUnk.
  int id_of(const std::string& token) const;
  /// Tokens only, without the reserved symbols.
  std::vector<std::string> tokens() const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  /// Drops reserved symbols.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> symbols_ = {"<pad>", "<s>", "</s>", "<unk>"};
};

/// One token per line, reserved symbols omitted.
TokenVocabulary read_token_vocabulary(const std::filesystem::path& path);
void write_token_vocabulary(const std::filesystem::path& path, const TokenVocabulary& vocab);

}  // namespace ctcc
