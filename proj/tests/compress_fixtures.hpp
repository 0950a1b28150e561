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

// Random compression inputs shared by the unit tests and the acceptance runner.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ctcc/compress.hpp"
#include "testing.hpp"

namespace ctcc::testing {

/// Log-probabilities whose frame t puts `conf[t]` on `labels[t]` and spreads
/// the rest evenly over the other classes.
inline MatD posteriors_with(const std::vector<int>& labels, const std::vector<double>& conf,
                            int classes) {
  MatD lp(labels.size(), classes);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const double rest = (1.0 - conf[t]) / (classes - 1);
    for (int k = 0; k < classes; ++k) lp(t, k) = std::log(k == labels[t] ? conf[t] : rest);
  }
  return lp;
}

inline CompressionPolicy policy_of(PoolingKind kind) {
  CompressionPolicy p;
  p.kind = kind;
  return p;
}

inline const PoolingKind kKinds[] = {PoolingKind::kAverage, PoolingKind::kWeighted,
                                     PoolingKind::kSoftmax};

/// Random frame labels with random run lengths, and matching posteriors
/// whose argmax reproduces them.
struct RandomCase {
  std::vector<int> labels;
  MatD log_probs;
  MatD states;
};

inline RandomCase random_case(std::mt19937_64& rng, int classes = 4, int dim = 3) {
  RandomCase c;
  const int runs = uniform_int(rng, 1, 6);
  int prev = -1;
  for (int r = 0; r < runs; ++r) {
    int label;
    do {
      label = uniform_int(rng, 0, classes - 1);
    } while (label == prev);
    prev = label;
    const int len = uniform_int(rng, 1, 4);
    for (int i = 0; i < len; ++i) c.labels.push_back(label);
  }
  std::uniform_real_distribution<double> u(0.4, 0.95);
  std::vector<double> conf(c.labels.size());
  for (double& x : conf) x = u(rng);
  c.log_probs = posteriors_with(c.labels, conf, classes);
  c.states = random_logits(rng, static_cast<int>(c.labels.size()), dim, 1.0);
  return c;
}

}  // namespace ctcc::testing
