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

#include <gtest/gtest.h>

#include <cmath>

#include "ctcc/autograd.hpp"
#include "testing.hpp"

namespace ctcc {
namespace {

using Tape = ag::Tape<double>;
using Builder = std::function<ag::Var(Tape&, const std::vector<ag::Var>&)>;

/// Scalar <out, g> recorded on the tape so backward() can start from it.
ag::Var dot_with(Tape& tape, ag::Var out, const MatD& g) {
  const double value = tape.value(out).cwiseProduct(g).sum();
  return tape.record(MatD::Constant(1, 1, value), {out},
                     [out, g](Tape& t, const MatD& grad) { t.accumulate(out, grad(0, 0) * g); });
}

/// Max relative error between backprop and central differences of <op(x), g>.
double op_gradient_error(std::vector<MatD> inputs, const Builder& build, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<ag::Parameter<double>> params(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) params[i].value = inputs[i];
  MatD g;
  auto run = [&](bool with_grad) {
    Tape tape(with_grad);
    std::vector<ag::Var> vars;
    for (auto& p : params) vars.push_back(tape.parameter(p));
    const ag::Var out = build(tape, vars);
    if (g.size() == 0) {
      g = testing::random_logits(rng, static_cast<int>(tape.value(out).rows()),
                                 static_cast<int>(tape.value(out).cols()), 1.0);
    }
    const ag::Var s = dot_with(tape, out, g);
    if (with_grad) tape.backward(s);
    return tape.value(s)(0, 0);
  };
  for (auto& p : params) p.zero_grad();
  run(true);
  double worst = 0.0;
  for (auto& p : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double old = p.value.data()[i];
      p.value.data()[i] = old + 1e-6;
      const double up = run(false);
      p.value.data()[i] = old - 1e-6;
      const double down = run(false);
      p.value.data()[i] = old;
      worst = std::max(worst, testing::rel_error(p.grad.data()[i], (up - down) / 2e-6, 1e-5));
    }
  }
  return worst;
}

MatD rnd(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return testing::random_logits(rng, r, c, 1.0);
}

TEST(AutogradOps, LinearAndMatmul) {
  EXPECT_LT(op_gradient_error({rnd(3, 4, 1), rnd(4, 5, 2), rnd(1, 5, 3)},
                              [](Tape& t, const auto& v) { return ag::linear(t, v[0], v[1], v[2]); }),
            1e-6);
  EXPECT_LT(op_gradient_error({rnd(3, 4, 4), rnd(4, 2, 5)},
                              [](Tape& t, const auto& v) { return ag::matmul(t, v[0], v[1]); }),
            1e-6);
}

TEST(AutogradOps, ElementwiseOps) {
  EXPECT_LT(op_gradient_error({rnd(3, 4, 6), rnd(3, 4, 7)},
                              [](Tape& t, const auto& v) {
                                return ag::scale(t, ag::add(t, v[0], v[1]), 0.5);
                              }),
            1e-6);
  const MatD c = rnd(3, 4, 8);
  EXPECT_LT(op_gradient_error({rnd(3, 4, 9)},
                              [&](Tape& t, const auto& v) {
                                return ag::relu(t, ag::add_constant(t, v[0], c));
                              }),
            1e-6);
}

TEST(AutogradOps, LayerNormAndLogSoftmax) {
  EXPECT_LT(op_gradient_error({rnd(3, 6, 10), rnd(1, 6, 11), rnd(1, 6, 12)},
                              [](Tape& t, const auto& v) {
                                return ag::layer_norm(t, v[0], v[1], v[2]);
                              }),
            1e-5);
  EXPECT_LT(op_gradient_error({rnd(4, 5, 13)},
                              [](Tape& t, const auto& v) { return ag::log_softmax(t, v[0]); }),
            1e-6);
}

TEST(AutogradOps, LayerNormNormalizesRows) {
  Tape tape(false);
  ag::Parameter<double> x{rnd(3, 6, 14), {}};
  ag::Parameter<double> gamma{MatD::Ones(1, 6), {}};
  ag::Parameter<double> beta{MatD::Zero(1, 6), {}};
  const MatD y = tape.value(ag::layer_norm(tape, tape.parameter(x), tape.parameter(gamma),
                                           tape.parameter(beta)));
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR((y.row(i).array() - y.row(i).mean()).square().mean(), 1.0, 1e-4);
  }
}

TEST(AutogradOps, Embedding) {
  const std::vector<int> ids = {2, 0, 2, 1};
  EXPECT_LT(op_gradient_error({rnd(3, 4, 15)},
                              [&](Tape& t, const auto& v) { return ag::embedding<double>(t, v[0], ids); }),
            1e-6);
}

TEST(AutogradOps, AttentionWithBiasAndCausalMask) {
  const MatD bias = rnd(4, 5, 16);
  EXPECT_LT(op_gradient_error({rnd(4, 6, 17), rnd(5, 6, 18), rnd(5, 6, 19)},
                              [&](Tape& t, const auto& v) {
                                return ag::attention(t, v[0], v[1], v[2], 2, &bias, false);
                              }),
            1e-5);
  EXPECT_LT(op_gradient_error({rnd(4, 6, 20), rnd(4, 6, 21), rnd(4, 6, 22)},
                              [&](Tape& t, const auto& v) {
                                return ag::attention<double>(t, v[0], v[1], v[2], 3, nullptr, true);
                              }),
            1e-5);
}

TEST(AutogradOps, CausalAttentionIgnoresTheFuture) {
  const MatD q = rnd(4, 4, 23);
  MatD k = rnd(4, 4, 24);
  MatD v = rnd(4, 4, 25);
  auto first_row = [&](const MatD& kk, const MatD& vv) {
    Tape tape(false);
    const ag::Var out = ag::attention<double>(tape, tape.constant(q), tape.constant(kk),
                                              tape.constant(vv), 2, nullptr, true);
    return MatD(tape.value(out).topRows(2));
  };
  const MatD before = first_row(k, v);
  k.bottomRows(2).setConstant(3.0);
  v.bottomRows(2).setConstant(-7.0);
  EXPECT_TRUE(first_row(k, v) == before);
}

TEST(AutogradOps, DistanceBiasBreaksPermutationEquivariance) {
  // Plain self-attention commutes with a row permutation; with the
  // -ln(1 + |i - j|) bias it does not.
  const MatD x = rnd(5, 4, 26);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  MatD bias(5, 5);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) bias(i, j) = -std::log1p(std::abs(i - j));
  }
  auto self_attend = [](const MatD& in, const MatD* b) {
    Tape tape(false);
    const ag::Var v = tape.constant(in);
    return MatD(tape.value(ag::attention(tape, v, v, v, 2, b, false)));
  };
  const MatD px = perm * x;
  EXPECT_LT((self_attend(px, nullptr) - perm * self_attend(x, nullptr)).cwiseAbs().maxCoeff(),
            1e-12);
  EXPECT_GT((self_attend(px, &bias) - perm * self_attend(x, &bias)).cwiseAbs().maxCoeff(), 1e-3);
}

/// Direct loop convolution used as the reference for the im2col version.
MatD conv_reference(const MatD& x, const MatD& w, const MatD& b, int freq, int cin) {
  const int t_in = static_cast<int>(x.rows());
  const int cout = static_cast<int>(w.rows());
  const int t_out = ag::conv_out_length(t_in);
  const int f_out = ag::conv_out_length(freq);
  MatD y = MatD::Zero(t_out, f_out * cout);
  for (int t = 0; t < t_out; ++t) {
    for (int f = 0; f < f_out; ++f) {
      for (int o = 0; o < cout; ++o) {
        double acc = b(0, o);
        for (int kt = 0; kt < 3; ++kt) {
          for (int kf = 0; kf < 3; ++kf) {
            const int ti = 2 * t - 1 + kt;
            const int fi = 2 * f - 1 + kf;
            if (ti < 0 || ti >= t_in || fi < 0 || fi >= freq) continue;
            for (int c = 0; c < cin; ++c) {
              acc += w(o, (kt * 3 + kf) * cin + c) * x(ti, fi * cin + c);
            }
          }
        }
        y(t, f * cout + o) = acc;
      }
    }
  }
  return y;
}

TEST(AutogradOps, ConvMatchesDirectLoops) {
  for (const auto& [t_in, freq, cin, cout] :
       std::vector<std::array<int, 4>>{{7, 5, 1, 3}, {8, 6, 2, 2}, {1, 3, 2, 1}}) {
    const MatD x = rnd(t_in, freq * cin, 27);
    const MatD w = rnd(cout, 9 * cin, 28);
    const MatD b = rnd(1, cout, 29);
    Tape tape(false);
    const ag::Var y = ag::conv2d_stride2(tape, tape.constant(x), tape.constant(w),
                                         tape.constant(b), freq, cin);
    EXPECT_LT((tape.value(y) - conv_reference(x, w, b, freq, cin)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(op_gradient_error({x, w, b},
                                [&](Tape& t, const auto& v) {
                                  return ag::conv2d_stride2(t, v[0], v[1], v[2], freq, cin);
                                }),
              1e-6);
  }
}

TEST(AutogradOps, ConvLengths) {
  EXPECT_EQ(ag::conv_out_length(7), 4);
  EXPECT_EQ(ag::conv_out_length(4), 2);
  EXPECT_EQ(ag::conv_out_length(1), 1);
  EXPECT_EQ(ag::conv_out_length(ag::conv_out_length(100)), 25);
}

TEST(AutogradOps, DropoutScalesKeptUnitsAndIsOffWithoutGrad) {
  std::mt19937_64 rng(30);
  const MatD x = MatD::Ones(200, 50);
  {
    Tape tape;
    ag::Parameter<double> p{x, {}};
    const MatD y = tape.value(ag::dropout(tape, tape.parameter(p), 0.25, rng));
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      EXPECT_TRUE(y.data()[i] == 0.0 || std::abs(y.data()[i] - 1.0 / 0.75) < 1e-12);
    }
    EXPECT_NEAR(y.mean(), 1.0, 0.03);
  }
  Tape eval(false);
  EXPECT_TRUE(eval.value(ag::dropout(eval, eval.constant(x), 0.25, rng)) == x);
}

TEST(AutogradOps, CtcLossNode) {
  const std::vector<int> target = {1, 2};
  EXPECT_LT(op_gradient_error({rnd(5, 3, 31)},
                              [&](Tape& t, const auto& v) {
                                const ag::Var lp = ag::log_softmax(t, v[0]);
                                return ag::ctc_loss<double>(t, lp, target, 0).loss;
                              }),
            1e-5);
}

TEST(AutogradOps, CompressNodeThroughAllPolicies) {
  // Logits biased so that the argmax runs have length two.
  MatD logits = rnd(6, 3, 32) * 0.3;
  for (int t = 0; t < 6; ++t) logits(t, (t / 2) % 3) += 2.0;
  for (PoolingKind kind : {PoolingKind::kAverage, PoolingKind::kWeighted, PoolingKind::kSoftmax}) {
    CompressionPolicy policy;
    policy.kind = kind;
    EXPECT_LT(op_gradient_error({rnd(6, 4, 33), logits},
                                [&](Tape& t, const auto& v) {
                                  const ag::Var lp = ag::log_softmax(t, v[1]);
                                  return ag::compress<double>(t, v[0], lp, policy, 0).out;
                                }),
              1e-5);
  }
}

TEST(AutogradOps, LabelSmoothedCeAndWeightedSum) {
  const std::vector<int> targets = {1, 0, 3};
  EXPECT_LT(op_gradient_error({rnd(3, 4, 34)},
                              [&](Tape& t, const auto& v) {
                                return ag::label_smoothed_ce<double>(t, v[0], targets, 0.1);
                              }),
            1e-6);
  EXPECT_LT(op_gradient_error({rnd(1, 1, 35), rnd(1, 1, 36)},
                              [](Tape& t, const auto& v) {
                                const double c[] = {0.3, 2.0};
                                return ag::weighted_sum<double>(t, v, c);
                              }),
            1e-6);
}

TEST(Tape, GradientsAccumulateIntoParameters) {
  ag::Parameter<double> p{MatD::Constant(1, 1, 3.0), {}};
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    const ag::Var x = tape.parameter(p);
    tape.backward(ag::scale(tape, x, 2.0));
  }
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 4.0);
  p.zero_grad();
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 0.0);
}

TEST(Tape, RejectsNonScalarRoot) {
  Tape tape;
  ag::Parameter<double> p{MatD::Ones(2, 2), {}};
  EXPECT_THROW(tape.backward(tape.parameter(p)), InvalidInput);
}

}  // namespace
}  // namespace ctcc
