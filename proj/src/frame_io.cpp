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

#include "ctcc/frame_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ctcc {
namespace {

static_assert(std::endian::native == std::endian::little,
              "frame container I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + offset, 4);
  return v;
}

}  // namespace

std::string encode_frame_matrix(std::string_view magic, const MatF& data) {
  if (magic.size() != 4) throw InvalidInput("frame container magic must be 4 bytes");
  std::string out;
  out.reserve(kFrameHeaderBytes + sizeof(float) * static_cast<std::size_t>(data.size()));
  out.append(magic);
  put_u32(out, static_cast<std::uint32_t>(data.rows()));
  put_u32(out, static_cast<std::uint32_t>(data.cols()));
  put_u32(out, 0);
  out.append(reinterpret_cast<const char*>(data.data()),
             sizeof(float) * static_cast<std::size_t>(data.size()));
  return out;
}

MatF decode_frame_matrix(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < kFrameHeaderBytes) throw DataError("frame container truncated header");
  if (bytes.substr(0, 4) != magic) {
    throw DataError("frame container magic mismatch: expected " + std::string(magic));
  }
  const std::uint32_t rows = get_u32(bytes, 4);
  const std::uint32_t cols = get_u32(bytes, 8);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != kFrameHeaderBytes + n * sizeof(float)) {
    throw DataError("frame container payload size does not match header");
  }
  MatF m(rows, cols);
  if (n > 0) std::memcpy(m.data(), bytes.data() + kFrameHeaderBytes, n * sizeof(float));
  return m;
}

void write_frame_matrix(const std::filesystem::path& path, std::string_view magic,
                        const MatF& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  const std::string bytes = encode_frame_matrix(magic, data);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

MatF read_frame_matrix(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_frame_matrix(ss.str(), magic);
}

}  // namespace ctcc
