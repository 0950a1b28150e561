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

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace ctcc {

// Row-major so that row t is frame t and a T x (F*C) matrix maps onto a
// contiguous [time][freq][channel] buffer.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// Raised for malformed arguments: bad indices, shape mismatches, NaNs.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a request exceeds a hard size guard.
class SizeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Raised for unreadable or inconsistent files and manifests.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  if (v.size() == 0) return kLogZero;
  const double m = static_cast<double>(v.maxCoeff());
  if (m == kLogZero) return kLogZero;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    s += std::exp(static_cast<double>(v.derived().coeff(i)) - m);
  }
  return m + std::log(s);
}

/// Row-wise log-softmax.
template <typename T>
Mat<T> log_softmax_rows(const Mat<T>& x) {
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    const T lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

/// SplitMix64 finalizer, used to derive independent seeds from
/// (master seed, index) pairs.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
bool all_finite(const Mat<T>& m) {
  return m.array().isFinite().all();
}

}  // namespace ctcc
