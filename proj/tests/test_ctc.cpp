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
#include <filesystem>
#include <limits>

#include "ctcc/ctc.hpp"
#include "testing.hpp"

namespace ctcc {
namespace {

using testing::path_sum_probability;
using testing::random_log_probs;
using testing::random_target;
using testing::uniform_int;

constexpr int kBlank = 0;
constexpr int kA = 1;
constexpr int kB = 2;

MatD log_of(std::initializer_list<std::initializer_list<double>> probs) {
  MatD m(probs.size(), probs.begin()->size());
  int i = 0;
  for (const auto& row : probs) {
    int j = 0;
    for (double p : row) m(i, j++) = std::log(p);
    ++i;
  }
  return m;
}

// --- collapse ----------------------------------------------------------------

TEST(Collapse, MergesRunsThenDropsBlanks) {
  const std::vector<int> x = {kA, kA, kBlank, kB, kB};
  EXPECT_EQ(ctc_collapse(x, kBlank, 3), (LabelSequence{kA, kB}));
}

TEST(Collapse, AllBlankGivesEmpty) {
  const std::vector<int> x = {kBlank, kBlank, kBlank};
  EXPECT_TRUE(ctc_collapse(x, kBlank, 3).empty());
}

TEST(Collapse, BlankSeparatesRepeats) {
  const std::vector<int> x = {kA, kBlank, kA};
  EXPECT_EQ(ctc_collapse(x, kBlank, 3), (LabelSequence{kA, kA}));
}

TEST(Collapse, RejectsOutOfRangeIndex) {
  const std::vector<int> x = {kA, 3};
  EXPECT_THROW(ctc_collapse(x, kBlank, 3), InvalidInput);
  const std::vector<int> neg = {-1};
  EXPECT_THROW(ctc_collapse(neg, kBlank, 3), InvalidInput);
}

TEST(Collapse, ShrinksAndIsIdempotentOnItsOutput) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> x(uniform_int(rng, 0, 12));
    for (int& v : x) v = uniform_int(rng, 0, 3);
    const LabelSequence y = ctc_collapse(x, kBlank, 4);
    EXPECT_LE(y.size(), x.size());
    // A blank-free sequence without adjacent repeats is a fixed point.
    LabelSequence dedup;
    for (int v : y) {
      if (dedup.empty() || dedup.back() != v) dedup.push_back(v);
    }
    EXPECT_EQ(ctc_collapse(dedup, kBlank, 4), dedup);
  }
}

TEST(Collapse, MinAlignableFramesCountsRepeats) {
  EXPECT_EQ(min_alignable_frames(std::vector<int>{}), 0);
  EXPECT_EQ(min_alignable_frames(std::vector<int>{kA, kB}), 2);
  EXPECT_EQ(min_alignable_frames(std::vector<int>{kA, kA, kB, kB}), 6);
}

// --- loss examples -------------------------------------------------------------

TEST(CtcLoss, SingleFrameSingleLabel) {
  const auto r = ctc_loss(FramePosteriors::from(log_of({{0.4, 0.6}})), std::vector<int>{kA}, kBlank);
  EXPECT_NEAR(r.loss, -std::log(0.6), 1e-12);
  EXPECT_NEAR(r.loss, 0.5108, 1e-4);
}

TEST(CtcLoss, EmptyTargetIsAllBlankPath) {
  const MatD lp = log_of({{0.7, 0.3}, {0.2, 0.8}});
  const auto r = ctc_loss(FramePosteriors::from(lp), std::vector<int>{}, kBlank);
  EXPECT_NEAR(r.loss, -(std::log(0.7) + std::log(0.2)), 1e-12);
}

TEST(CtcLoss, TwoUniformFrames) {
  const MatD lp = log_of({{0.5, 0.5}, {0.5, 0.5}});
  const auto r = ctc_loss(FramePosteriors::from(lp), std::vector<int>{kA}, kBlank);
  EXPECT_NEAR(r.loss, -std::log(0.75), 1e-12);
  EXPECT_NEAR(r.loss, 0.2877, 1e-4);
  EXPECT_NEAR(ctc_loss_bruteforce(FramePosteriors::from(lp), std::vector<int>{kA}, kBlank),
              0.2877, 1e-4);
}

TEST(CtcLoss, InfeasibleTargetIsInfiniteWithZeroGradient) {
  const MatD lp = log_of({{0.5, 0.5}, {0.5, 0.5}});
  // [a, a] needs a separating blank: three frames.
  const auto r = ctc_loss(FramePosteriors::from(lp), std::vector<int>{kA, kA}, kBlank);
  EXPECT_FALSE(r.feasible);
  EXPECT_TRUE(std::isinf(r.loss) && r.loss > 0);
  EXPECT_TRUE(r.grad_log_probs.isZero());
  EXPECT_TRUE(r.grad_logits.isZero());
  EXPECT_TRUE(std::isinf(
      ctc_loss_bruteforce(FramePosteriors::from(lp), std::vector<int>{kA, kA}, kBlank)));
}

TEST(CtcLoss, RejectsNaN) {
  MatD lp = log_of({{0.5, 0.5}});
  lp(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(ctc_loss<double>(lp, 1, std::vector<int>{kA}, kBlank), InvalidInput);
}

TEST(CtcLoss, RejectsBlankInTarget) {
  const MatD lp = log_of({{0.5, 0.5}});
  EXPECT_THROW(ctc_loss<double>(lp, 1, std::vector<int>{kBlank}, kBlank), InvalidInput);
}

TEST(CtcLoss, ZeroOnlyWhenAlignmentIsCertain) {
  const MatD certain = log_of({{1.0, 1e-300}, {1e-300, 1.0}});
  const auto r = ctc_loss(FramePosteriors::from(certain), std::vector<int>{kA}, kBlank);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const MatD lp = random_log_probs(rng, 5, 3);
    const auto res = ctc_loss<double>(lp, 5, random_target(rng, 2, 3), kBlank);
    EXPECT_GT(res.loss, 0.0);
  }
}

TEST(CtcLoss, BruteforceGuard) {
  std::mt19937_64 rng(1);
  const MatD lp = random_log_probs(rng, 13, 3);  // 3^13 > 1e6
  EXPECT_THROW(ctc_loss_bruteforce(FramePosteriors::from(lp), std::vector<int>{kA}, kBlank),
               SizeError);
}

// --- properties ----------------------------------------------------------------

TEST(CtcProperty, ForwardBackwardAgree) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = uniform_int(rng, 2, 6);
    const int t = uniform_int(rng, 1, 20);
    const int l = uniform_int(rng, 0, 8);
    const std::vector<int> target = random_target(rng, l, c);
    if (min_alignable_frames(target) > t) continue;
    const CtcLattice lat = ctc_lattice(random_log_probs(rng, t, c), t, target, kBlank);
    EXPECT_NEAR(lat.log_likelihood_forward, lat.log_likelihood_backward, 1e-9);
  }
}

TEST(CtcProperty, MatchesPathEnumeration) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const int c = uniform_int(rng, 2, 3);
    const int t = uniform_int(rng, 1, 6);
    const std::vector<int> target = random_target(rng, uniform_int(rng, 0, 3), c);
    const MatD lp = random_log_probs(rng, t, c);
    const double p = path_sum_probability(lp, target, kBlank);
    const auto r = ctc_loss<double>(lp, t, target, kBlank);
    const double brute = ctc_loss_bruteforce(FramePosteriors::from(lp), target, kBlank);
    if (p == 0.0) {
      EXPECT_FALSE(r.feasible);
      EXPECT_TRUE(std::isinf(brute));
    } else {
      EXPECT_NEAR(r.loss, -std::log(p), 1e-9);
      EXPECT_NEAR(brute, -std::log(p), 1e-9);
    }
  }
}

TEST(CtcProperty, LogitGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const int c = uniform_int(rng, 2, 5);
    const int t = uniform_int(rng, 2, 10);
    const std::vector<int> target = random_target(rng, uniform_int(rng, 1, 4), c);
    if (min_alignable_frames(target) > t) continue;
    const MatD logits = testing::random_logits(rng, t, c);
    const auto r = ctc_loss<double>(log_softmax_rows<double>(logits), t, target, kBlank);
    const MatD num = testing::numeric_gradient(
        [&](const MatD& z) {
          return ctc_loss<double>(log_softmax_rows<double>(z), t, target, kBlank).loss;
        },
        logits);
    for (Eigen::Index i = 0; i < num.size(); ++i) {
      EXPECT_LT(testing::rel_error(r.grad_logits.data()[i], num.data()[i], 1e-5), 1e-4);
    }
  }
}

TEST(CtcProperty, LogProbGradientIsNegativeOccupancy) {
  // Each frame's alignment occupancy sums to one.
  std::mt19937_64 rng(14);
  const MatD lp = random_log_probs(rng, 8, 4);
  const auto r = ctc_loss<double>(lp, 8, std::vector<int>{1, 2, 3}, kBlank);
  for (int t = 0; t < 8; ++t) EXPECT_NEAR(r.grad_log_probs.row(t).sum(), -1.0, 1e-9);
}

TEST(CtcProperty, FloatMatchesDouble) {
  std::mt19937_64 rng(15);
  const MatD lp = random_log_probs(rng, 12, 5);
  const std::vector<int> target = {1, 3, 3, 2};
  const auto d = ctc_loss<double>(lp, 12, target, kBlank);
  const auto f = ctc_loss<float>(lp.cast<float>(), 12, target, kBlank);
  EXPECT_NEAR(d.loss, f.loss, 1e-4);
}

TEST(CtcBatch, PaddedFramesAreIgnored) {
  std::mt19937_64 rng(16);
  MatD a = random_log_probs(rng, 6, 3);
  const MatD b = random_log_probs(rng, 6, 3);
  const std::vector<int> lengths = {4, 6};
  const std::vector<LabelSequence> targets = {{1, 2}, {2}};
  const auto first = ctc_loss_batch<double>({a, b}, lengths, targets, kBlank);
  a.bottomRows(2).setConstant(-0.1);
  const auto second = ctc_loss_batch<double>({a, b}, lengths, targets, kBlank);
  EXPECT_EQ(first[0].loss, second[0].loss);
  EXPECT_DOUBLE_EQ(first[0].loss, ctc_loss<double>(a.topRows(4), 4, targets[0], kBlank).loss);
  EXPECT_TRUE(second[0].grad_log_probs.bottomRows(2).isZero());
}

// --- greedy --------------------------------------------------------------------

TEST(Greedy, ArgmaxThenCollapse) {
  const MatD lp = log_of({{0.2, 0.7, 0.1}, {0.1, 0.8, 0.1}, {0.6, 0.3, 0.1}});
  const GreedyDecoding g = greedy_decode(FramePosteriors::from(lp), kBlank);
  EXPECT_EQ(g.frame_labels, (std::vector<int>{kA, kA, kBlank}));
  EXPECT_EQ(g.collapsed, (LabelSequence{kA}));
}

TEST(Greedy, TieTakesLowestIndex) {
  const MatD lp = log_of({{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  EXPECT_EQ(greedy_decode(FramePosteriors::from(lp), kBlank).frame_labels,
            (std::vector<int>{0}));
  MatD tie = MatD::Constant(1, 3, std::log(0.25));
  tie(0, 0) = std::log(0.5) - 1.0;
  tie(0, 1) = tie(0, 2);
  EXPECT_EQ(frame_argmax<double>(tie, 1), (std::vector<int>{1}));
}

TEST(Greedy, EmptyPosteriors) {
  const GreedyDecoding g = greedy_decode(FramePosteriors::from(MatD(0, 3)), kBlank);
  EXPECT_TRUE(g.frame_labels.empty());
  EXPECT_TRUE(g.collapsed.empty());
}

// --- vocabulary and files --------------------------------------------------------

TEST(Vocabulary, BlankFirstAndUnique) {
  const Vocabulary v = Vocabulary::with_blank({"a", "b"});
  EXPECT_EQ(v.blank_index, 0);
  EXPECT_EQ(v.labels[0], "<blank>");
  EXPECT_EQ(v.index_of("b"), 2);
  EXPECT_EQ(v.index_of("zz"), -1);
  Vocabulary dup = v;
  dup.labels.push_back("a");
  EXPECT_THROW(dup.validate(), InvalidInput);
  Vocabulary two_blanks = v;
  two_blanks.labels.push_back("<blank>");
  EXPECT_THROW(two_blanks.validate(), InvalidInput);
}

TEST(Vocabulary, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "ctcc_vocab_test.txt";
  const Vocabulary v = Vocabulary::with_blank({"p_B", "q_E", "x"});
  write_vocabulary(path, v);
  const Vocabulary back = read_vocabulary(path);
  EXPECT_EQ(back.labels, v.labels);
  EXPECT_EQ(back.blank_index, 0);
  std::filesystem::remove(path);
}

TEST(Posteriors, FileRoundTripIsExact) {
  std::mt19937_64 rng(17);
  const MatF lp = random_log_probs(rng, 7, 4).cast<float>();
  const auto path = std::filesystem::temp_directory_path() / "ctcc_post_test.ctcp";
  write_posteriors(path, lp);
  EXPECT_EQ(std::filesystem::file_size(path), 16u + 7u * 4u * 4u);
  EXPECT_TRUE(read_posteriors(path) == lp);
  std::filesystem::remove(path);
}

TEST(Posteriors, ValidateChecksNormalization) {
  MatD lp = MatD::Constant(2, 2, std::log(0.5));
  EXPECT_NO_THROW(FramePosteriors::from(lp).validate());
  lp(1, 1) = std::log(0.6);
  EXPECT_THROW(FramePosteriors::from(lp).validate(), InvalidInput);
}

}  // namespace
}  // namespace ctcc
