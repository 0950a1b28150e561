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

// Shared generators and independent reference implementations for tests.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ctcc/tensor.hpp"

namespace ctcc::testing {

inline MatD random_logits(std::mt19937_64& rng, int rows, int cols, double scale = 1.5) {
  std::normal_distribution<double> n(0.0, scale);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline MatD random_log_probs(std::mt19937_64& rng, int rows, int cols) {
  return log_softmax_rows<double>(random_logits(rng, rows, cols));
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Random label sequence over [1, num_classes) (blank 0 excluded).
inline std::vector<int> random_target(std::mt19937_64& rng, int length, int num_classes) {
  std::vector<int> t(length);
  for (int& x : t) x = uniform_int(rng, 1, num_classes - 1);
  return t;
}

/// Sum over every frame labelling (probability space) of paths collapsing to
/// `target`, written independently of the library.
inline double path_sum_probability(const MatD& log_probs, const std::vector<int>& target,
                                   int blank) {
  const int t_len = static_cast<int>(log_probs.rows());
  const int c = static_cast<int>(log_probs.cols());
  double total = 0.0;
  std::vector<int> path(t_len, 0);
  std::function<void(int, double)> rec = [&](int t, double p) {
    if (t == t_len) {
      std::vector<int> out;
      int prev = -1;
      for (int x : path) {
        if (x != prev && x != blank) out.push_back(x);
        prev = x;
      }
      if (out == target) total += p;
      return;
    }
    for (int k = 0; k < c; ++k) {
      path[t] = k;
      rec(t + 1, p * std::exp(log_probs(t, k)));
    }
  };
  rec(0, 1.0);
  return total;
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f with respect to x[i] for every entry.
inline MatD numeric_gradient(const std::function<double(const MatD&)>& f, MatD x,
                             double h = 1e-6) {
  MatD g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double old = x.data()[i];
    x.data()[i] = old + h;
    const double up = f(x);
    x.data()[i] = old - h;
    const double down = f(x);
    x.data()[i] = old;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace ctcc::testing
