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

#include "ctcc/autograd.hpp"

#include <cmath>

#include "ctcc/ctc.hpp"

namespace ctcc::ag {

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  Mat<T> out = tape.value(a) * tape.value(b);
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Mat<T>& xv = tape.value(x);
  const Mat<T>& wv = tape.value(w);
  if (xv.cols() != wv.rows()) throw InvalidInput("linear: input width does not match weight");
  Mat<T> out = xv * wv;
  out.rowwise() += tape.value(b).row(0);
  return tape.record(std::move(out), {x, w, b}, [x, w, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(w).transpose());
    if (t.requires_grad(w)) t.accumulate(w, t.value(x).transpose() * g);
    if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  Mat<T> out = tape.value(a) + tape.value(b);
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var add_constant(Tape<T>& tape, Var a, const Mat<T>& c) {
  Mat<T> out = tape.value(a) + c;
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, g);
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T s) {
  Mat<T> out = tape.value(a) * s;
  return tape.record(std::move(out), {a}, [a, s](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, g * s);
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var a) {
  Mat<T> out = tape.value(a).cwiseMax(T(0));
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, (t.value(a).array() > T(0)).select(g, T(0)));
  });
}

template <typename T>
Var dropout(Tape<T>& tape, Var a, double p, std::mt19937_64& rng) {
  if (p <= 0.0 || !tape.grad_enabled()) return a;
  const Mat<T>& av = tape.value(a);
  Mat<T> mask(av.rows(), av.cols());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask.data()[i] = u < p ? T(0) : keep_scale;
  }
  Mat<T> out = av.cwiseProduct(mask);
  return tape.record(std::move(out), {a}, [a, mask](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, g.cwiseProduct(mask));
  });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps) {
  const Mat<T>& xv = tape.value(x);
  const Eigen::Index n = xv.cols();
  Mat<T> xhat(xv.rows(), n);
  std::vector<T> inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    inv_std[r] = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std[r];
  }
  Mat<T> out = xhat.array().rowwise() * tape.value(gamma).row(0).array();
  out.rowwise() += tape.value(beta).row(0);
  return tape.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std](Tape<T>& t, const Mat<T>& g) {
        if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
        if (!t.requires_grad(x)) return;
        const Mat<T> dxhat = g.array().rowwise() * t.value(gamma).row(0).array();
        Mat<T>& dx = t.mutable_grad(x);
        const T inv_n = T(1) / static_cast<T>(xhat.cols());
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
          const T m1 = dxhat.row(r).sum() * inv_n;
          const T m2 = dxhat.row(r).dot(xhat.row(r)) * inv_n;
          dx.row(r).array() +=
              inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
      });
}

template <typename T>
Var log_softmax(Tape<T>& tape, Var x) {
  Mat<T> out = log_softmax_rows(tape.value(x));
  Mat<T> p = out.array().exp();
  return tape.record(std::move(out), {x}, [x, p = std::move(p)](Tape<T>& t, const Mat<T>& g) {
    Mat<T> dx = g;
    for (Eigen::Index r = 0; r < g.rows(); ++r) dx.row(r) -= p.row(r) * g.row(r).sum();
    t.accumulate(x, dx);
  });
}

template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> ids) {
  const Mat<T>& tv = tape.value(table);
  Mat<T> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw InvalidInput("embedding id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return tape.record(std::move(out), {table}, [table, idv](Tape<T>& t, const Mat<T>& g) {
    if (!t.requires_grad(table)) return;
    Mat<T>& dt = t.mutable_grad(table);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      dt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

namespace {

template <typename T>
void softmax_rows_inplace(Mat<T>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const T m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

}  // namespace

template <typename T>
Var attention(Tape<T>& tape, Var q, Var k, Var v, int heads, const Mat<T>* bias,
              bool causal) {
  const Mat<T>& qv = tape.value(q);
  const Mat<T>& kv = tape.value(k);
  const Mat<T>& vv = tape.value(v);
  const Eigen::Index tq = qv.rows();
  const Eigen::Index tk = kv.rows();
  const Eigen::Index d = qv.cols();
  if (heads <= 0 || d % heads != 0) throw InvalidInput("attention: width not divisible by heads");
  if (kv.cols() != d || vv.cols() != d || vv.rows() != tk) {
    throw InvalidInput("attention: q/k/v shapes disagree");
  }
  if (bias && (bias->rows() != tq || bias->cols() != tk)) {
    throw InvalidInput("attention: bias shape does not match sequence lengths");
  }
  const Eigen::Index dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));

  std::vector<Mat<T>> probs(heads);
  Mat<T> out(tq, d);
  for (int h = 0; h < heads; ++h) {
    Mat<T> s = (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose()) * sc;
    if (bias) s += *bias;
    if (causal) {
      for (Eigen::Index i = 0; i < tq; ++i) {
        for (Eigen::Index j = i + 1; j < tk; ++j) s(i, j) = -std::numeric_limits<T>::infinity();
      }
    }
    softmax_rows_inplace(s);
    out.middleCols(h * dh, dh).noalias() = s * vv.middleCols(h * dh, dh);
    probs[h] = std::move(s);
  }

  return tape.record(
      std::move(out), {q, k, v},
      [q, k, v, heads, dh, sc, probs = std::move(probs)](Tape<T>& t, const Mat<T>& g) {
        const Mat<T>& qv = t.value(q);
        const Mat<T>& kv = t.value(k);
        const Mat<T>& vv = t.value(v);
        Mat<T> dq = Mat<T>::Zero(qv.rows(), qv.cols());
        Mat<T> dk = Mat<T>::Zero(kv.rows(), kv.cols());
        Mat<T> dv = Mat<T>::Zero(vv.rows(), vv.cols());
        for (int h = 0; h < heads; ++h) {
          const Mat<T>& p = probs[h];
          const auto gh = g.middleCols(h * dh, dh);
          dv.middleCols(h * dh, dh).noalias() = p.transpose() * gh;
          Mat<T> dp = gh * vv.middleCols(h * dh, dh).transpose();
          const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(p).rowwise().sum();
          Mat<T> ds = p.cwiseProduct(dp.colwise() - rowdot) * sc;
          dq.middleCols(h * dh, dh).noalias() = ds * kv.middleCols(h * dh, dh);
          dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qv.middleCols(h * dh, dh);
        }
        t.accumulate(q, dq);
        t.accumulate(k, dk);
        t.accumulate(v, dv);
      });
}

template <typename T>
Var conv2d_stride2(Tape<T>& tape, Var x, Var weight, Var bias, int freq_in, int channels_in) {
  const Mat<T>& xv = tape.value(x);
  const Mat<T>& wv = tape.value(weight);
  if (xv.cols() != static_cast<Eigen::Index>(freq_in) * channels_in) {
    throw InvalidInput("conv2d: input width does not match freq * channels");
  }
  if (wv.cols() != 9 * channels_in) throw InvalidInput("conv2d: weight shape mismatch");
  if (xv.rows() < 1) throw InvalidInput("conv2d: empty input");
  const int t_in = static_cast<int>(xv.rows());
  const int t_out = conv_out_length(t_in);
  const int f_out = conv_out_length(freq_in);
  const int c_out = static_cast<int>(wv.rows());
  const int cin = channels_in;

  Mat<T> col = Mat<T>::Zero(static_cast<Eigen::Index>(t_out) * f_out, 9 * cin);
  for (int to = 0; to < t_out; ++to) {
    for (int fo = 0; fo < f_out; ++fo) {
      auto row = col.row(static_cast<Eigen::Index>(to) * f_out + fo);
      for (int kt = 0; kt < 3; ++kt) {
        const int ti = 2 * to + kt - 1;
        if (ti < 0 || ti >= t_in) continue;
        for (int kf = 0; kf < 3; ++kf) {
          const int fi = 2 * fo + kf - 1;
          if (fi < 0 || fi >= freq_in) continue;
          row.segment((kt * 3 + kf) * cin, cin) = xv.row(ti).segment(fi * cin, cin);
        }
      }
    }
  }
  Mat<T> flat = col * wv.transpose();
  flat.rowwise() += tape.value(bias).row(0);
  Mat<T> out = Eigen::Map<Mat<T>>(flat.data(), t_out, static_cast<Eigen::Index>(f_out) * c_out);

  return tape.record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, col, t_in, t_out, f_out, c_out, cin, freq_in](Tape<T>& t,
                                                                      const Mat<T>& g) {
        const Eigen::Map<const Mat<T>> gflat(g.data(), static_cast<Eigen::Index>(t_out) * f_out,
                                             c_out);
        if (t.requires_grad(weight)) t.accumulate(weight, gflat.transpose() * col);
        if (t.requires_grad(bias)) t.accumulate(bias, gflat.colwise().sum());
        if (!t.requires_grad(x)) return;
        const Mat<T> dcol = gflat * t.value(weight);
        Mat<T>& dx = t.mutable_grad(x);
        for (int to = 0; to < t_out; ++to) {
          for (int fo = 0; fo < f_out; ++fo) {
            const auto row = dcol.row(static_cast<Eigen::Index>(to) * f_out + fo);
            for (int kt = 0; kt < 3; ++kt) {
              const int ti = 2 * to + kt - 1;
              if (ti < 0 || ti >= t_in) continue;
              for (int kf = 0; kf < 3; ++kf) {
                const int fi = 2 * fo + kf - 1;
                if (fi < 0 || fi >= freq_in) continue;
                dx.row(ti).segment(fi * cin, cin) += row.segment((kt * 3 + kf) * cin, cin);
              }
            }
          }
        }
      });
}

template <typename T>
CompressedVar<T> compress(Tape<T>& tape, Var states, Var log_probs,
                          const CompressionPolicy& policy, int blank_index) {
  const Mat<T>& sv = tape.value(states);
  const Mat<T>& lv = tape.value(log_probs);
  CompressResult<T> r =
      ctcc::compress<T>(sv, lv, static_cast<int>(sv.rows()), policy, blank_index);
  CompressedVar<T> cv;
  cv.spans = r.spans;
  Mat<T> out = r.compressed;
  cv.out = tape.record(std::move(out), {states, log_probs},
                       [states, log_probs, policy, r = std::move(r)](Tape<T>& t,
                                                                     const Mat<T>& g) {
                         const CompressGrads<T> cg = compress_backward<T>(
                             t.value(states), t.value(log_probs), r, g, policy);
                         t.accumulate(states, cg.states);
                         if (policy.kind != PoolingKind::kAverage && !policy.detach_weights) {
                           t.accumulate(log_probs, cg.log_probs);
                         }
                       });
  return cv;
}

template <typename T>
CtcVar ctc_loss(Tape<T>& tape, Var log_probs, std::span<const int> target, int blank_index) {
  const Mat<T>& lv = tape.value(log_probs);
  CtcResult<T> r =
      ctcc::ctc_loss<T>(lv, static_cast<int>(lv.rows()), target, blank_index);
  CtcVar cv;
  cv.feasible = r.feasible;
  cv.value = r.loss;
  if (!r.feasible) return cv;
  Mat<T> out(1, 1);
  out(0, 0) = static_cast<T>(r.loss);
  cv.loss = tape.record(std::move(out), {log_probs},
                        [log_probs, grad = std::move(r.grad_log_probs)](Tape<T>& t,
                                                                        const Mat<T>& g) {
                          t.accumulate(log_probs, grad * g(0, 0));
                        });
  return cv;
}

template <typename T>
Var label_smoothed_ce(Tape<T>& tape, Var logits, std::span<const int> targets, double eps) {
  const Mat<T>& zv = tape.value(logits);
  if (zv.rows() != static_cast<Eigen::Index>(targets.size())) {
    throw InvalidInput("label_smoothed_ce: one target per logits row required");
  }
  const Mat<T> lp = log_softmax_rows(zv);
  const Eigen::Index c = zv.cols();
  const double uniform = eps / static_cast<double>(c);
  double total = 0.0;
  for (Eigen::Index r = 0; r < lp.rows(); ++r) {
    const int y = targets[r];
    if (y < 0 || y >= c) throw InvalidInput("label_smoothed_ce: target out of range");
    total -= (1.0 - eps) * double(lp(r, y)) + uniform * double(lp.row(r).sum());
  }
  Mat<T> out(1, 1);
  out(0, 0) = static_cast<T>(total);
  std::vector<int> ys(targets.begin(), targets.end());
  return tape.record(std::move(out), {logits},
                     [logits, lp, ys, eps, uniform](Tape<T>& t, const Mat<T>& g) {
                       Mat<T> d = lp.array().exp() - static_cast<T>(uniform);
                       for (std::size_t r = 0; r < ys.size(); ++r) {
                         d(static_cast<Eigen::Index>(r), ys[r]) -= static_cast<T>(1.0 - eps);
                       }
                       t.accumulate(logits, d * g(0, 0));
                     });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> terms, std::span<const T> coeffs) {
  if (terms.size() != coeffs.size()) throw InvalidInput("weighted_sum: size mismatch");
  Mat<T> out = Mat<T>::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) out(0, 0) += coeffs[i] * tape.value(terms[i])(0, 0);
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<T> cs(coeffs.begin(), coeffs.end());
  return tape.record(std::move(out), std::span<const Var>(ts), [ts, cs](Tape<T>& t, const Mat<T>& g) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      Mat<T> gi(1, 1);
      gi(0, 0) = cs[i] * g(0, 0);
      t.accumulate(ts[i], gi);
    }
  });
}

#define CTCC_INSTANTIATE_AG(T)                                                            \
  template Var matmul<T>(Tape<T>&, Var, Var);                                             \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                        \
  template Var add<T>(Tape<T>&, Var, Var);                                                \
  template Var add_constant<T>(Tape<T>&, Var, const Mat<T>&);                             \
  template Var scale<T>(Tape<T>&, Var, T);                                                \
  template Var relu<T>(Tape<T>&, Var);                                                    \
  template Var dropout<T>(Tape<T>&, Var, double, std::mt19937_64&);                       \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                 \
  template Var log_softmax<T>(Tape<T>&, Var);                                             \
  template Var embedding<T>(Tape<T>&, Var, std::span<const int>);                         \
  template Var attention<T>(Tape<T>&, Var, Var, Var, int, const Mat<T>*, bool);           \
  template Var conv2d_stride2<T>(Tape<T>&, Var, Var, Var, int, int);                      \
  template CompressedVar<T> compress<T>(Tape<T>&, Var, Var, const CompressionPolicy&, int); \
  template CtcVar ctc_loss<T>(Tape<T>&, Var, std::span<const int>, int);                  \
  template Var label_smoothed_ce<T>(Tape<T>&, Var, std::span<const int>, double);         \
  template Var weighted_sum<T>(Tape<T>&, std::span<const Var>, std::span<const T>);

CTCC_INSTANTIATE_AG(float)
CTCC_INSTANTIATE_AG(double)

#undef CTCC_INSTANTIATE_AG

}  // namespace ctcc::ag
