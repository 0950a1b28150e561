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

// Minimal reverse-mode differentiation over row-major matrices. A Tape
// records one forward pass as a list of nodes; backward() replays the
// recorded vector-Jacobian products in reverse order.

#pragma once

#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "ctcc/compress.hpp"
#include "ctcc/tensor.hpp"

namespace ctcc::ag {

template <typename T>
struct Parameter {
  Mat<T> value;
  Mat<T> grad;

  void zero_grad() { grad = Mat<T>::Zero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<T>& grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat<T> value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // The parameter must outlive the tape. Gradients accumulate directly into
  // p.grad, which is allocated on first use.
  Var parameter(Parameter<T>& p) {
    nodes_.push_back(Node{{}, {}, &p.value, &p.grad, grad_enabled_, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var record(Mat<T> value, std::initializer_list<Var> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var record(Mat<T> value, std::span<const Var> inputs, Backward fn) {
    bool rg = false;
    if (grad_enabled_) {
      for (const Var& v : inputs) rg = rg || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, rg, {}});
    if (rg) nodes_.back().backward = std::move(fn);
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ext_value ? *n.ext_value : n.value;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of `v`, zero-initialized on first access.
  Mat<T>& mutable_grad(Var v) {
    Node& n = nodes_[v.id];
    Mat<T>& g = n.ext_grad ? *n.ext_grad : n.grad;
    const Mat<T>& val = value(v);
    if (g.rows() != val.rows() || g.cols() != val.cols()) {
      g = Mat<T>::Zero(val.rows(), val.cols());
    }
    return g;
  }

  template <typename Expr>
  void accumulate(Var v, const Expr& e) {
    if (!requires_grad(v)) return;
    mutable_grad(v) += e;
  }

  /// Seeds d(root)/d(root) = seed for a 1x1 root and propagates.
  void backward(Var root, T seed = T(1)) {
    if (!grad_enabled_) return;
    if (value(root).size() != 1) throw InvalidInput("backward root must be a scalar");
    if (!requires_grad(root)) return;
    mutable_grad(root)(0, 0) += seed;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
      n.grad.resize(0, 0);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    const Mat<T>* ext_value;
    Mat<T>* ext_grad;
    bool requires_grad;
    Backward backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);

/// x * w + b with w stored as (in x out) and b as (1 x out).
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

/// a + c for a constant matrix c of the same shape.
template <typename T>
Var add_constant(Tape<T>& tape, Var a, const Mat<T>& c);

template <typename T>
Var scale(Tape<T>& tape, Var a, T s);

template <typename T>
Var relu(Tape<T>& tape, Var a);

/// Inverted dropout; identity when p == 0 or gradients are disabled.
template <typename T>
Var dropout(Tape<T>& tape, Var a, double p, std::mt19937_64& rng);

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-5));

template <typename T>
Var log_softmax(Tape<T>& tape, Var x);

template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> ids);

/// Multi-head scaled dot-product attention. `bias` (rows(q) x rows(k)) is
/// added to the logits before the softmax; `causal` masks j > i.
template <typename T>
Var attention(Tape<T>& tape, Var q, Var k, Var v, int heads, const Mat<T>* bias,
              bool causal);

/// 3x3 convolution with stride 2 and padding 1 along both time and
/// frequency. Input is T x (F*C_in) in [time][freq][channel] order; weight is
/// C_out x (9*C_in) ordered [kt][kf][c_in]; output is T' x (F'*C_out).
template <typename T>
Var conv2d_stride2(Tape<T>& tape, Var x, Var weight, Var bias, int freq_in, int channels_in);

/// Output length of one stride-2, kernel-3, padding-1 layer.
inline int conv_out_length(int n) { return (n - 1) / 2 + 1; }

template <typename T>
struct CompressedVar {
  Var out;
  std::vector<SegmentSpan> spans;
};

template <typename T>
CompressedVar<T> compress(Tape<T>& tape, Var states, Var log_probs,
                          const CompressionPolicy& policy, int blank_index);

struct CtcVar {
  Var loss;  // 1x1; only meaningful when feasible
  bool feasible = false;
  double value = 0.0;
};

template <typename T>
CtcVar ctc_loss(Tape<T>& tape, Var log_probs, std::span<const int> target, int blank_index);

/// Sum over rows of the label-smoothed cross entropy of `logits` against
/// `targets`, with eps spread uniformly over all classes.
template <typename T>
Var label_smoothed_ce(Tape<T>& tape, Var logits, std::span<const int> targets, double eps);

/// sum_i coeffs[i] * terms[i] over 1x1 terms.
template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> terms, std::span<const T> coeffs);

}  // namespace ctcc::ag
