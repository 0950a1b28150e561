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
#include <cstring>
#include <filesystem>
#include <sstream>

#include "ctcc/train.hpp"
#include "model_fixtures.hpp"

namespace ctcc {
namespace {

TEST(LrSchedule, DefaultValues) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(lr_at_step(0, c), 3e-4);
  EXPECT_DOUBLE_EQ(lr_at_step(4000, c), 5e-3);
  EXPECT_NEAR(lr_at_step(16000, c), 2.5e-3, 1e-15);
  EXPECT_NEAR(lr_at_step(2000, c), 0.5 * (3e-4 + 5e-3), 1e-15);
  EXPECT_NEAR(lr_at_step(4001, c), lr_at_step(4000, c), 1e-6);
  EXPECT_LT(std::abs(lr_at_step(4000, c) - c.lr_peak * std::sqrt(4000.0 / 4000.0)), 1e-12);
  EXPECT_THROW(lr_at_step(-1, c), InvalidInput);
}

TEST(LrSchedule, ContinuousAndMonotonePieces) {
  TrainConfig c;
  c.warmup_updates = 50;
  for (long u = 1; u <= 50; ++u) EXPECT_GT(lr_at_step(u, c), lr_at_step(u - 1, c));
  for (long u = 51; u <= 500; ++u) EXPECT_LT(lr_at_step(u, c), lr_at_step(u - 1, c));
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  c.lr_start = 1.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = TrainConfig{};
  c.warmup_updates = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = TrainConfig::desk_profile();
  c.seed = 99;
  c.log_steps = true;
  EXPECT_EQ(to_json(train_config_from_json(to_json(c))), to_json(c));
  const TrainConfig full = TrainConfig::full_profile();
  EXPECT_EQ(full.batch_sentences, 8);
  EXPECT_EQ(full.accumulation_steps, 8);
  EXPECT_EQ(full.patience_epochs, 5);
  EXPECT_EQ(full.checkpoint_avg_n, 5);
  EXPECT_DOUBLE_EQ(full.adam_beta2, 0.98);
}

ParamStore<double> scalar_store(double value, double grad) {
  ParamStore<double> ps;
  auto& p = ps.add("w", MatD::Constant(1, 1, value));
  p.grad = MatD::Constant(1, 1, grad);
  return ps;
}

TEST(Adam, FirstStepClosedForm) {
  ParamStore<double> ps = scalar_store(1.0, 1.0);
  AdamState<double> state;
  ASSERT_TRUE(adam_step(ps, state, 0.1, {}));
  // m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps).
  EXPECT_NEAR(ps.at("w").value(0, 0), 1.0 - 0.1 / (1.0 + 1e-8), 1e-10);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, MatchesReferenceRecurrence) {
  ParamStore<double> ps = scalar_store(0.5, 0.0);
  AdamState<double> state;
  double w = 0.5, m = 0.0, v = 0.0;
  const double g_seq[] = {0.3, -1.2, 2.0, 0.01, -0.4};
  for (int t = 1; t <= 5; ++t) {
    const double g = g_seq[t - 1];
    ps.at("w").grad(0, 0) = g;
    adam_step(ps, state, 0.01, {0.9, 0.98, 1e-8});
    m = 0.9 * m + 0.1 * g;
    v = 0.98 * v + 0.02 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.98, t));
    w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(ps.at("w").value(0, 0), w, 1e-12) << t;
  }
}

TEST(Adam, ZeroGradientLeavesParamsAndNonFiniteSkips) {
  ParamStore<double> ps = scalar_store(2.0, 0.0);
  AdamState<double> state;
  for (int i = 0; i < 10; ++i) adam_step(ps, state, 0.1, {});
  EXPECT_EQ(ps.at("w").value(0, 0), 2.0);

  ps.at("w").grad(0, 0) = std::nan("");
  EXPECT_FALSE(adam_step(ps, state, 0.1, {}));
  EXPECT_EQ(ps.at("w").value(0, 0), 2.0);
  EXPECT_EQ(state.skipped, 1);
  EXPECT_EQ(state.step, 10);
}

ParamStore<float> constant_store(float value) {
  ParamStore<float> ps;
  ps.add("a", MatF::Constant(2, 3, value));
  ps.add("b", MatF::Constant(1, 1, -value));
  return ps;
}

TEST(Averaging, Examples) {
  const std::vector<ParamStore<float>> same = {constant_store(1.5f), constant_store(1.5f)};
  EXPECT_TRUE(average_checkpoints(same).at("a").value == same[0].at("a").value);

  const std::vector<ParamStore<float>> two = {constant_store(0.0f), constant_store(2.0f)};
  const ParamStore<float> avg = average_checkpoints(two);
  EXPECT_TRUE((avg.at("a").value.array() == 1.0f).all());
  EXPECT_EQ(avg.at("b").value(0, 0), -1.0f);

  std::vector<std::string> warnings;
  const std::vector<ParamStore<float>> three = {constant_store(1), constant_store(2),
                                                constant_store(6)};
  const ParamStore<float> m3 =
      average_checkpoints(three, 5, [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_FLOAT_EQ(m3.at("a").value(0, 0), 3.0f);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_THROW(average_checkpoints(std::span<const ParamStore<float>>()), InvalidInput);
}

TEST(Activations, ShrinkWithCompressionAndEarlierTap) {
  const auto p = testing::tiny_problem(PoolingKind::kAverage);
  ModelConfig c = p.config;
  c.n_encoder_layers = 8;
  const std::vector<int> frames = {400, 360};
  const std::vector<int> targets = {10, 12};
  const std::vector<int> half = {50, 45};
  c.ctc_layer = 8;
  const auto none = activation_elements(c, frames, {}, targets);
  const auto top = activation_elements(c, frames, half, targets);
  EXPECT_EQ(none.encoder_below, top.encoder_below);
  EXPECT_LT(top.decoder, none.decoder);
  long long previous = top.total();
  for (int tap : {6, 4, 2}) {
    c.ctc_layer = tap;
    const auto a = activation_elements(c, frames, half, targets);
    EXPECT_LT(a.total(), previous) << tap;
    EXPECT_EQ(a.decoder, top.decoder);
    previous = a.total();
  }
}

TEST(Activations, AttentionIsQuadraticAndBatchIsPadded) {
  const auto p = testing::tiny_problem(std::nullopt);
  ModelConfig c = p.config;
  const std::vector<int> tg = {5};
  const auto a = activation_elements(c, std::vector<int>{400}, {}, tg);
  const auto b = activation_elements(c, std::vector<int>{800}, {}, tg);
  EXPECT_EQ(b.encoder_attention, 4 * a.encoder_attention);
  EXPECT_EQ(a.encoder_attention, c.n_encoder_layers * 2LL * c.n_heads * 100 * 100);

  // Every item is padded to the longest one.
  const auto padded = activation_elements(c, std::vector<int>{800, 3}, {}, std::vector<int>{5, 1});
  EXPECT_EQ(padded.total(), 2 * b.total());
  EXPECT_EQ(peak_activation_elements(c, std::vector<int>{800}, {}, tg), b.total());
  EXPECT_THROW(activation_elements(c, std::vector<int>{}, {}, {}), InvalidInput);
}

struct ToyData {
  ModelConfig config;
  Dataset train;
  Dataset dev;
};

ToyData toy_data(int n_train = 12) {
  const auto p = testing::tiny_problem(PoolingKind::kWeighted);
  SyntheticParams sp;
  sp.alphabet_size = 4;
  sp.feature_dim = 6;
  sp.frames_per_unit = 4;
  sp.min_duration = 1;
  sp.max_duration = 2;
  sp.word_gap = 1;
  sp.max_words = 2;
  sp.max_word_length = 2;
  const SyntheticTask task = SyntheticTask::create(sp);
  ToyData d{p.config, generate_dataset(task, n_train, 3, "tr"), generate_dataset(task, 4, 4, "dv")};
  d.config.dropout = 0.1;
  return d;
}

TrainConfig toy_train_config() {
  TrainConfig c;
  c.lr_start = 1e-3;
  c.lr_peak = 1e-2;
  c.warmup_updates = 4;
  c.batch_sentences = 2;
  c.accumulation_steps = 2;
  c.max_epochs = 3;
  c.patience_epochs = 10;
  c.checkpoint_avg_n = 2;
  c.spec_augment.max_freq_width = 2;
  c.seed = 5;
  return c;
}

bool same_params(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.num_tensors() != b.num_tensors()) return false;
  for (const auto& [name, p] : a.map()) {
    const MatF& q = b.at(name).value;
    if (q.size() != p.value.size() ||
        std::memcmp(q.data(), p.value.data(), sizeof(float) * q.size()) != 0) {
      return false;
    }
  }
  return true;
}

TEST(TrainLoop, OneUpdateMatchesManualAccumulation) {
  const ToyData d = toy_data(4);
  TrainConfig tc = toy_train_config();
  tc.shuffle = false;
  tc.max_updates = 1;
  Seq2SeqModel<float> trained(d.config, 1);
  TrainState state;
  train_loop(trained, tc, d.train, d.dev, state);
  EXPECT_EQ(state.update_count, 1);

  Seq2SeqModel<float> manual(d.config, 1);
  manual.params().zero_grad();
  const std::uint64_t epoch_seed = mix_seed(tc.seed, 1);
  long tokens = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    std::mt19937_64 rng(mix_seed(epoch_seed, i));
    FeatureSequence fs;
    fs.frames = d.train[i].features;
    const MatF aug = spec_augment(fs, tc.spec_augment, rng).frames;
    ag::Tape<float> tape;
    const auto lt =
        manual.forward_loss(tape, aug, d.train[i].phones, d.train[i].translation, {true, &rng});
    tape.backward(lt.total);
    tokens += lt.num_tokens;
  }
  for (auto& [name, p] : manual.params().map()) p.grad *= 1.0f / static_cast<float>(tokens);
  AdamState<float> adam;
  adam_step(manual.params(), adam, tc.lr_start, {tc.adam_beta1, tc.adam_beta2, tc.adam_eps});
  EXPECT_TRUE(same_params(trained.params(), manual.params()));
}

TEST(TrainLoop, AccumulationMatchesLargerBatch) {
  const ToyData d = toy_data(8);
  TrainConfig k_by_b = toy_train_config();
  k_by_b.max_epochs = 1;
  TrainConfig big = k_by_b;
  big.batch_sentences = 4;
  big.accumulation_steps = 1;
  Seq2SeqModel<float> a(d.config, 2), b(d.config, 2);
  TrainState sa, sb;
  train_loop(a, k_by_b, d.train, d.dev, sa);
  train_loop(b, big, d.train, d.dev, sb);
  EXPECT_EQ(sa.update_count, 2);
  EXPECT_EQ(sb.update_count, 2);
  for (const auto& [name, p] : a.params().map()) {
    EXPECT_LT((p.value - b.params().at(name).value).cwiseAbs().maxCoeff(), 1e-6) << name;
  }
}

TEST(TrainLoop, PatienceZeroRunsOneEpoch) {
  const ToyData d = toy_data(4);
  TrainConfig tc = toy_train_config();
  tc.patience_epochs = 0;
  Seq2SeqModel<float> model(d.config, 3);
  TrainState state;
  const TrainResult r = train_loop(model, tc, d.train, d.dev, state);
  EXPECT_EQ(r.epochs_run, 1);
  EXPECT_TRUE(r.early_stopped);
}

TEST(TrainLoop, MetricsAndAveraging) {
  const ToyData d = toy_data();
  const TrainConfig tc = toy_train_config();
  Seq2SeqModel<float> model(d.config, 3);
  TrainState state;
  std::ostringstream metrics;
  TrainHooks hooks;
  hooks.metrics = &metrics;
  const TrainResult r = train_loop(model, tc, d.train, d.dev, state, hooks);
  EXPECT_EQ(r.epochs_run, 3);
  ASSERT_EQ(state.ring.size(), 2u);
  const std::vector<ParamStore<float>> ring(state.ring.begin(), state.ring.end());
  EXPECT_TRUE(same_params(r.averaged, average_checkpoints(ring)));
  EXPECT_TRUE(same_params(state.ring.back(), model.params()));

  std::istringstream lines(metrics.str());
  std::string line;
  int epochs = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j["type"] != "epoch") continue;
    ++epochs;
    EXPECT_EQ(j["epoch"], epochs);
    EXPECT_EQ(j["updates"], 3 * epochs);
    for (const char* key : {"loss", "ctc", "ce", "mean_length_before", "mean_length_after"}) {
      EXPECT_TRUE(j["train"].contains(key)) << key;
    }
    EXPECT_LE(j["train"]["mean_length_after"].get<double>(),
              j["train"]["mean_length_before"].get<double>());
    EXPECT_GT(j["peak_activation_elements"].get<long long>(), 0);
    EXPECT_TRUE(j["dev"].contains("token_accuracy"));
  }
  EXPECT_EQ(epochs, 3);
}

std::vector<std::string> epoch_records(const std::string& jsonl) {
  std::vector<std::string> out;
  std::istringstream lines(jsonl);
  std::string line;
  while (std::getline(lines, line)) {
    if (nlohmann::json::parse(line)["type"] == "epoch") out.push_back(line);
  }
  return out;
}

TEST(TrainLoop, ResumeIsBitExact) {
  const ToyData d = toy_data();
  const TrainConfig tc = toy_train_config();
  Seq2SeqModel<float> straight(d.config, 4);
  TrainState s1;
  std::ostringstream m1;
  TrainHooks h1;
  h1.metrics = &m1;
  const TrainResult r1 = train_loop(straight, tc, d.train, d.dev, s1, h1);

  TrainConfig first = tc;
  first.max_epochs = 1;
  Seq2SeqModel<float> part(d.config, 4);
  TrainState s2;
  std::ostringstream m2;
  TrainHooks h2;
  h2.metrics = &m2;
  train_loop(part, first, d.train, d.dev, s2, h2);
  const auto path = std::filesystem::temp_directory_path() / "ctcc_test_state.bin";
  save_train_state(path, part, s2);

  Seq2SeqModel<float> resumed(d.config, 99);
  TrainState s3 = load_train_state(path, resumed);
  std::filesystem::remove(path);
  const TrainResult r3 = train_loop(resumed, tc, d.train, d.dev, s3, h2);
  EXPECT_EQ(r3.epochs_run, 2);
  EXPECT_TRUE(same_params(resumed.params(), straight.params()));
  EXPECT_TRUE(same_params(r3.averaged, r1.averaged));
  EXPECT_EQ(epoch_records(m1.str()).size(), 3u);
  EXPECT_EQ(epoch_records(m2.str()), epoch_records(m1.str()));
}

TEST(TrainLoop, DivergenceAborts) {
  const ToyData d = toy_data(4);
  Seq2SeqModel<float> model(d.config, 3);
  model.params().at("frontend.proj.weight").value(0, 0) = std::nanf("");
  TrainState state;
  EXPECT_THROW(train_loop(model, toy_train_config(), d.train, d.dev, state), TrainingDiverged);
  EXPECT_EQ(state.update_count, 0);
}

TEST(TrainLoop, RejectsInconsistentData) {
  ToyData d = toy_data(4);
  Seq2SeqModel<float> model(d.config, 3);
  TrainState state;
  Dataset bad = d.train;
  bad[0].translation.push_back(9999);
  EXPECT_THROW(train_loop(model, toy_train_config(), bad, d.dev, state), InvalidInput);
  bad = d.train;
  bad[1].features(0, 0) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(train_loop(model, toy_train_config(), bad, d.dev, state), InvalidInput);
  EXPECT_THROW(train_loop(model, toy_train_config(), {}, d.dev, state), InvalidInput);
}

TEST(DevEvaluation, CountsTokensIncludingEos) {
  const ToyData d = toy_data(4);
  Seq2SeqModel<float> model(d.config, 3);
  const DevStats s = evaluate_dev(model, d.dev);
  long expected = 0;
  for (const auto& u : d.dev) expected += static_cast<long>(u.translation.size()) + 1;
  EXPECT_EQ(s.tokens, expected);
  EXPECT_GE(s.token_accuracy, 0.0);
  EXPECT_LE(s.token_accuracy, 1.0);
  EXPECT_LE(s.mean_length_after, s.mean_length_before);
}

}  // namespace
}  // namespace ctcc
