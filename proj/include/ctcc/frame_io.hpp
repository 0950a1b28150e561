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

// Binary container shared by CTC posteriors and feature matrices:
// 4-byte magic, u32 rows, u32 cols, u32 reserved (zero), then rows*cols
// little-endian f32 values in row-major order.

#pragma once

#include <array>
#include <filesystem>
#include <string_view>

#include "ctcc/tensor.hpp"

namespace ctcc {

inline constexpr std::string_view kPosteriorsMagic = "CTCP";
inline constexpr std::string_view kFeaturesMagic = "FEAT";
inline constexpr std::size_t kFrameHeaderBytes = 16;

void write_frame_matrix(const std::filesystem::path& path, std::string_view magic,
                        const MatF& data);
MatF read_frame_matrix(const std::filesystem::path& path, std::string_view magic);

std::string encode_frame_matrix(std::string_view magic, const MatF& data);
MatF decode_frame_matrix(std::string_view bytes, std::string_view magic);

}  // namespace ctcc
