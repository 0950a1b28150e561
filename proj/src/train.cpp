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

#include "ctcc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace ctcc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(lr_start >= 0.0) || !(lr_start <= lr_peak)) {
    throw InvalidInput("learning rates must satisfy 0 <= lr_start <= lr_peak");
  }
  if (warmup_updates < 1) throw InvalidInput("warmup_updates must be at least 1");
  if (batch_sentences < 1 || accumulation_steps < 1 || checkpoint_avg_n < 1 || max_epochs < 1) {
    throw InvalidInput("batch, accumulation, averaging and epoch counts must be positive");
  }
  if (patience_epochs < 0) throw InvalidInput("patience_epochs must be non-negative");
  if (max_updates < 0) throw InvalidInput("max_updates must be non-negative");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0 ||
      adam_eps <= 0.0) {
    throw InvalidInput("Adam betas must lie in [0, 1) and eps must be positive");
  }
  spec_augment.validate();
}

TrainConfig TrainConfig::full_profile() { return TrainConfig{}; }

TrainConfig TrainConfig::desk_profile() {
  TrainConfig c;
  c.lr_start = 1e-4;
  c.lr_peak = 3e-3;
  c.warmup_updates = 1000;
  c.accumulation_steps = 1;
  c.max_epochs = 30;
  c.spec_augment.n_freq_masks = 0;
  c.spec_augment.n_time_masks = 0;
  return c;
}

json to_json(const TrainConfig& c) {
  return json{{"lr_start", c.lr_start},
              {"lr_peak", c.lr_peak},
              {"warmup_updates", c.warmup_updates},
              {"adam_betas", {c.adam_beta1, c.adam_beta2}},
              {"adam_eps", c.adam_eps},
              {"batch_sentences", c.batch_sentences},
              {"accumulation_steps", c.accumulation_steps},
              {"patience_epochs", c.patience_epochs},
              {"checkpoint_avg_n", c.checkpoint_avg_n},
              {"max_epochs", c.max_epochs},
              {"max_updates", c.max_updates},
              {"seed", c.seed},
              {"shuffle", c.shuffle},
              {"log_steps", c.log_steps},
              {"spec_augment",
               {{"n_freq_masks", c.spec_augment.n_freq_masks},
                {"max_freq_width", c.spec_augment.max_freq_width},
                {"n_time_masks", c.spec_augment.n_time_masks},
                {"max_time_width_fraction", c.spec_augment.max_time_width_fraction},
                {"mask_value", c.spec_augment.mask_value}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lr_start = j.value("lr_start", c.lr_start);
  c.lr_peak = j.value("lr_peak", c.lr_peak);
  c.warmup_updates = j.value("warmup_updates", c.warmup_updates);
  if (j.contains("adam_betas")) {
    const auto betas = j.at("adam_betas").get<std::vector<double>>();
    if (betas.size() != 2) throw InvalidInput("adam_betas needs two values");
    c.adam_beta1 = betas[0];
    c.adam_beta2 = betas[1];
  }
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.batch_sentences = j.value("batch_sentences", c.batch_sentences);
  c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
  c.patience_epochs = j.value("patience_epochs", c.patience_epochs);
  c.checkpoint_avg_n = j.value("checkpoint_avg_n", c.checkpoint_avg_n);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.max_updates = j.value("max_updates", c.max_updates);
  c.seed = j.value("seed", c.seed);
  c.shuffle = j.value("shuffle", c.shuffle);
  c.log_steps = j.value("log_steps", c.log_steps);
  if (j.contains("spec_augment")) {
    const json& s = j.at("spec_augment");
    auto& sa = c.spec_augment;
    sa.n_freq_masks = s.value("n_freq_masks", sa.n_freq_masks);
    sa.max_freq_width = s.value("max_freq_width", sa.max_freq_width);
    sa.n_time_masks = s.value("n_time_masks", sa.n_time_masks);
    sa.max_time_width_fraction = s.value("max_time_width_fraction", sa.max_time_width_fraction);
    sa.mask_value = s.value("mask_value", sa.mask_value);
  }
  return c;
}

double lr_at_step(long update_count, const TrainConfig& config) {
  if (update_count < 0) throw InvalidInput("lr_at_step: negative update count");
  const double u = static_cast<double>(update_count);
  const double w = static_cast<double>(config.warmup_updates);
  if (u <= w) return config.lr_start + (config.lr_peak - config.lr_start) * u / w;
  return config.lr_peak * std::sqrt(w / u);
}

// ---------------------------------------------------------------------------
// Adam and averaging

template <typename T>
bool adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const AdamOptions& options) {
  for (const auto& [name, p] : params.map()) {
    if (p.grad.size() != 0 && !all_finite(p.grad)) {
      ++state.skipped;
      return false;
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(options.beta1);
  const T b2 = static_cast<T>(options.beta2);
  for (auto& [name, p] : params.map()) {
    Mat<T>& m = state.m[name];
    Mat<T>& v = state.v[name];
    if (m.size() == 0) {
      m = Mat<T>::Zero(p.value.rows(), p.value.cols());
      v = Mat<T>::Zero(p.value.rows(), p.value.cols());
    }
    if (p.grad.size() != 0) {
      m = b1 * m + (T(1) - b1) * p.grad;
      v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
    } else {
      m *= b1;
      v *= b2;
    }
    const auto m_hat = m.array() / static_cast<T>(bc1);
    const auto v_hat = v.array() / static_cast<T>(bc2);
    p.value.array() -= static_cast<T>(lr) * m_hat / (v_hat.sqrt() + static_cast<T>(options.eps));
  }
  return true;
}

ParamStore<float> average_checkpoints(std::span<const ParamStore<float>> checkpoints,
                                      std::size_t expected,
                                      const std::function<void(const std::string&)>& warn) {
  if (checkpoints.empty()) throw InvalidInput("average_checkpoints: no checkpoints");
  if (checkpoints.size() < expected && warn) {
    warn("averaging " + std::to_string(checkpoints.size()) + " checkpoints instead of " +
         std::to_string(expected));
  }
  ParamStore<float> out;
  for (const auto& [name, first] : checkpoints.front().map()) {
    Mat<double> sum = Mat<double>::Zero(first.value.rows(), first.value.cols());
    for (const ParamStore<float>& ck : checkpoints) {
      const MatF& v = ck.at(name).value;
      if (v.rows() != sum.rows() || v.cols() != sum.cols()) {
        throw InvalidInput("average_checkpoints: shape mismatch for " + name);
      }
      sum += v.cast<double>();
    }
    out.add(name, (sum / static_cast<double>(checkpoints.size())).cast<float>());
  }
  for (const ParamStore<float>& ck : checkpoints) {
    if (ck.num_tensors() != out.num_tensors()) {
      throw InvalidInput("average_checkpoints: parameter sets differ");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activation accounting

namespace {

long long max_of(std::span<const int> xs) {
  long long m = 0;
  for (int x : xs) m = std::max<long long>(m, x);
  return m;
}

}  // namespace

ActivationCount activation_elements(const ModelConfig& c, std::span<const int> input_frames,
                                    std::span<const int> compressed_lengths,
                                    std::span<const int> target_lengths) {
  if (input_frames.empty()) throw InvalidInput("activation_elements: empty batch");
  if (target_lengths.size() != input_frames.size() ||
      (!compressed_lengths.empty() && compressed_lengths.size() != input_frames.size())) {
    throw InvalidInput("activation_elements: batch sizes disagree");
  }
  const long long b = static_cast<long long>(input_frames.size());
  const long long d = c.d_model;
  const long long h = c.n_heads;
  const long long ffn = c.ffn_dim;
  const long long ch = c.conv_channels;
  const long long t_in = max_of(input_frames);
  const long long t1 = ag::conv_out_length(static_cast<int>(t_in));
  const long long t2 = ag::conv_out_length(static_cast<int>(t1));
  const long long f1 = ag::conv_out_length(c.feature_dim);
  const long long f2 = ag::conv_out_length(static_cast<int>(f1));
  const long long t_after = compressed_lengths.empty() ? t2 : max_of(compressed_lengths);
  const long long u = max_of(target_lengths) + 1;  // BOS-shifted input / EOS-terminated output

  // Per layer: two norms, q, k, v, context, output, two residual sums,
  // FFN hidden before and after ReLU; scores and probabilities per head.
  auto layer_states = [&](long long t) { return t * (9 * d + 2 * ffn); };
  auto layer_attention = [&](long long t) { return 2 * h * t * t; };

  ActivationCount out;
  out.frontend = b * (2 * t1 * f1 * ch + 2 * t2 * f2 * ch + t2 * d);
  for (int l = 1; l <= c.n_encoder_layers; ++l) {
    const long long t = l <= c.ctc_layer ? t2 : t_after;
    const long long states = b * layer_states(t);
    const long long att = b * layer_attention(t);
    out.encoder_attention += att;
    (l <= c.ctc_layer ? out.encoder_below : out.encoder_above) += states + att;
  }
  out.encoder_below += b * (t2 * d + 2 * t2 * c.ctc_vocab.size());  // final norm, CTC head
  if (!compressed_lengths.empty()) out.encoder_above += b * t_after * d;

  const long long v = c.target_vocab.size();
  long long dec = u * d * 2;  // embedding and positions
  for (int l = 0; l < c.n_decoder_layers; ++l) {
    dec += u * (13 * d + 2 * ffn) + 2 * h * u * u;      // self attention and FFN
    dec += 2 * t_after * d + 2 * h * u * t_after;       // cross-attention keys, values, scores
  }
  dec += u * d + 2 * u * v;  // final norm, logits, log-probabilities
  out.decoder = b * dec;
  return out;
}

long long peak_activation_elements(const ModelConfig& config, std::span<const int> input_frames,
                                   std::span<const int> compressed_lengths,
                                   std::span<const int> target_lengths) {
  return activation_elements(config, input_frames, compressed_lengths, target_lengths).total();
}

// ---------------------------------------------------------------------------
// Evaluation

DevStats evaluate_dev(const Seq2SeqModel<float>& model, const Dataset& data) {
  DevStats s;
  if (data.empty()) return s;
  const ModelConfig& c = model.config();
  double ce_sum = 0.0;
  double ctc_sum = 0.0;
  long ctc_tokens = 0;
  long correct = 0;
  double before = 0.0;
  double after = 0.0;
  for (const Utterance& u : data) {
    ag::Tape<float> tape(false);
    const EncoderOutput<float> enc = model.encode(tape, u.features, ForwardContext{});
    std::vector<int> dec_in = {TokenVocabulary::kBos};
    dec_in.insert(dec_in.end(), u.translation.begin(), u.translation.end());
    std::vector<int> dec_out(u.translation.begin(), u.translation.end());
    dec_out.push_back(TokenVocabulary::kEos);
    const ag::Var logits_var = model.decoder_logits(tape, enc.states, dec_in, ForwardContext{});
    const MatF& logits = tape.value(logits_var);
    const CeResult<float> ce =
        label_smoothed_ce(logits, dec_out, c.label_smoothing, TokenVocabulary::kPad,
                          Reduction::kSum);
    ce_sum += ce.loss;
    s.tokens += ce.num_tokens;
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
      Eigen::Index best = 0;
      logits.row(t).maxCoeff(&best);
      if (best == dec_out[t]) ++correct;
    }
    const MatF& lp = tape.value(enc.ctc_log_probs);
    const CtcResult<float> ctc =
        ctc_loss(lp, static_cast<int>(lp.rows()), u.phones, c.ctc_vocab.blank_index);
    if (ctc.feasible) {
      ctc_sum += ctc.loss;
      ctc_tokens += static_cast<long>(dec_out.size());
    } else {
      ++s.ctc_infeasible;
    }
    before += enc.length_before;
    after += enc.length_after;
  }
  s.ce = ce_sum / static_cast<double>(s.tokens);
  s.ctc = ctc_tokens > 0 ? ctc_sum / static_cast<double>(ctc_tokens) : 0.0;
  s.token_accuracy = static_cast<double>(correct) / static_cast<double>(s.tokens);
  s.mean_length_before = before / static_cast<double>(data.size());
  s.mean_length_after = after / static_cast<double>(data.size());
  return s;
}

// ---------------------------------------------------------------------------
// State files

namespace {

constexpr char kStateMagic[4] = {'C', 'T', 'S', 'T'};
constexpr std::uint32_t kStateVersion = 1;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw DataError("training state truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

void put_tensors(std::string& out, const std::map<std::string, MatF>& tensors) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()),
               sizeof(float) * static_cast<std::size_t>(m.size()));
  }
}

std::map<std::string, MatF> get_tensors(const std::string& in, std::size_t& pos) {
  std::map<std::string, MatF> out;
  const auto n = get<std::uint32_t>(in, pos);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(in, pos);
    if (pos + len > in.size()) throw DataError("training state truncated");
    std::string name = in.substr(pos, len);
    pos += len;
    const auto rows = get<std::uint32_t>(in, pos);
    const auto cols = get<std::uint32_t>(in, pos);
    const std::size_t bytes = sizeof(float) * rows * cols;
    if (pos + bytes > in.size()) throw DataError("training state truncated");
    MatF m(rows, cols);
    if (bytes) std::memcpy(m.data(), in.data() + pos, bytes);
    pos += bytes;
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

std::map<std::string, MatF> values_of(const ParamStore<float>& ps) {
  std::map<std::string, MatF> out;
  for (const auto& [name, p] : ps.map()) out.emplace(name, p.value);
  return out;
}

ParamStore<float> store_of(std::map<std::string, MatF> tensors) {
  ParamStore<float> ps;
  for (auto& [name, m] : tensors) ps.add(name, std::move(m));
  return ps;
}

}  // namespace

void save_train_state(const std::filesystem::path& path, const Seq2SeqModel<float>& model,
                      const TrainState& state) {
  const json meta = {{"update_count", state.update_count},
                     {"epoch", state.epoch},
                     {"best_dev", state.best_dev},
                     {"has_best", state.has_best},
                     {"epochs_since_improvement", state.epochs_since_improvement},
                     {"stopped", state.stopped},
                     {"ctc_skipped", state.ctc_skipped},
                     {"adam_step", state.adam.step},
                     {"adam_skipped", state.adam.skipped},
                     {"ring_size", state.ring.size()}};
  std::string out(kStateMagic, 4);
  put<std::uint32_t>(out, kStateVersion);
  const std::string meta_text = meta.dump();
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  put_tensors(out, values_of(model.params()));
  put_tensors(out, state.adam.m);
  put_tensors(out, state.adam.v);
  for (const ParamStore<float>& ck : state.ring) put_tensors(out, values_of(ck));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write training state: " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw DataError("training state write failed: " + path.string());
}

TrainState load_train_state(const std::filesystem::path& path, Seq2SeqModel<float>& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open training state: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string in = ss.str();
  if (in.size() < 4 || std::memcmp(in.data(), kStateMagic, 4) != 0) {
    throw DataError("not a training state file: " + path.string());
  }
  std::size_t pos = 4;
  if (get<std::uint32_t>(in, pos) != kStateVersion) {
    throw DataError("unsupported training state version");
  }
  const auto meta_len = get<std::uint64_t>(in, pos);
  if (pos + meta_len > in.size()) throw DataError("training state truncated");
  TrainState st;
  std::size_t ring_size = 0;
  try {
    const json meta = json::parse(in.substr(pos, meta_len));
    st.update_count = meta.at("update_count").get<long>();
    st.epoch = meta.at("epoch").get<int>();
    st.best_dev = meta.at("best_dev").get<double>();
    st.has_best = meta.at("has_best").get<bool>();
    st.epochs_since_improvement = meta.at("epochs_since_improvement").get<int>();
    st.stopped = meta.at("stopped").get<bool>();
    st.ctc_skipped = meta.at("ctc_skipped").get<long>();
    st.adam.step = meta.at("adam_step").get<long>();
    st.adam.skipped = meta.at("adam_skipped").get<long>();
    ring_size = meta.at("ring_size").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("training state metadata: ") + e.what());
  }
  pos += meta_len;

  auto params = get_tensors(in, pos);
  for (auto& [name, p] : model.params().map()) {
    const auto it = params.find(name);
    if (it == params.end() || it->second.rows() != p.value.rows() ||
        it->second.cols() != p.value.cols()) {
      throw DataError("training state does not match the model at " + name);
    }
    p.value = std::move(it->second);
    p.grad.resize(0, 0);
  }
  st.adam.m = get_tensors(in, pos);
  st.adam.v = get_tensors(in, pos);
  for (std::size_t i = 0; i < ring_size; ++i) st.ring.push_back(store_of(get_tensors(in, pos)));
  if (pos != in.size()) throw DataError("training state has trailing bytes");
  return st;
}

// ---------------------------------------------------------------------------
// Loop

namespace {

void shuffle_indices(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

void emit(const TrainHooks& hooks, const json& record) {
  if (hooks.metrics) *hooks.metrics << record.dump() << '\n';
  if (hooks.on_record) hooks.on_record(record);
}

json dev_json(const DevStats& s) {
  return {{"ce", s.ce},
          {"ctc", s.ctc},
          {"token_accuracy", s.token_accuracy},
          {"mean_length_before", s.mean_length_before},
          {"mean_length_after", s.mean_length_after},
          {"ctc_infeasible", s.ctc_infeasible}};
}

}  // namespace

TrainResult train_loop(Seq2SeqModel<float>& model, const TrainConfig& config,
                       const Dataset& train, const Dataset& dev, TrainState& state,
                       const TrainHooks& hooks) {
  config.validate();
  if (train.empty() || dev.empty()) throw InvalidInput("training needs non-empty datasets");
  const ModelConfig& mc = model.config();
  for (const Dataset* ds : {&train, &dev}) {
    for (const Utterance& u : *ds) {
      if (u.features.cols() != mc.feature_dim) {
        throw InvalidInput("utterance " + u.id + " has the wrong feature dimension");
      }
      if (!u.features.allFinite()) {
        throw InvalidInput("utterance " + u.id + " has non-finite features");
      }
      for (int p : u.phones) {
        if (p < 0 || p >= mc.ctc_vocab.size() || p == mc.ctc_vocab.blank_index) {
          throw InvalidInput("utterance " + u.id + " has a phone outside the CTC vocabulary");
        }
      }
      for (int t : u.translation) {
        if (t < TokenVocabulary::kNumSpecial || t >= mc.target_vocab.size()) {
          throw InvalidInput("utterance " + u.id + " has a token outside the target vocabulary");
        }
      }
    }
  }
  if (!hooks.checkpoint_dir.empty()) std::filesystem::create_directories(hooks.checkpoint_dir);

  const AdamOptions adam{config.adam_beta1, config.adam_beta2, config.adam_eps};
  const std::size_t group = static_cast<std::size_t>(config.batch_sentences) *
                            static_cast<std::size_t>(config.accumulation_steps);
  const bool compressing = mc.compression.has_value();
  TrainResult result;
  auto updates_exhausted = [&] {
    return config.max_updates > 0 && state.update_count >= config.max_updates;
  };

  while (!state.stopped && state.epoch < config.max_epochs && !updates_exhausted()) {
    const int epoch = state.epoch + 1;
    const std::uint64_t epoch_seed = mix_seed(config.seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (config.shuffle) {
      std::mt19937_64 shuffle_rng(epoch_seed);
      shuffle_indices(order, shuffle_rng);
    }

    double sum_total = 0.0;
    double sum_ctc = 0.0;
    double sum_ce = 0.0;
    long sum_tokens = 0;
    long finite_updates = 0;
    long attempted = 0;
    long long peak = 0;
    double len_before = 0.0;
    double len_after = 0.0;

    for (std::size_t start = 0; start < order.size() && !updates_exhausted(); start += group) {
      const std::size_t stop = std::min(order.size(), start + group);
      model.params().zero_grad();
      double g_total = 0.0;
      double g_ctc = 0.0;
      double g_ce = 0.0;
      long g_tokens = 0;
      std::vector<int> frames;
      std::vector<int> compressed;
      std::vector<int> targets;
      for (std::size_t i = start; i < stop; ++i) {
        const Utterance& u = train[order[i]];
        std::mt19937_64 rng(mix_seed(epoch_seed, order[i]));
        const ForwardContext ctx{true, &rng};
        ag::Tape<float> tape;
        LossTerms<float> lt;
        try {
          if (config.spec_augment.enabled()) {
            FeatureSequence fs;
            fs.frames = u.features;
            const MatF augmented = spec_augment(fs, config.spec_augment, rng).frames;
            lt = model.forward_loss(tape, augmented, u.phones, u.translation, ctx);
          } else {
            lt = model.forward_loss(tape, u.features, u.phones, u.translation, ctx);
          }
        } catch (const InvalidInput&) {
          // Inputs were validated above, so this is NaN reaching the posteriors.
          g_total = std::numeric_limits<double>::quiet_NaN();
          g_tokens += static_cast<long>(u.translation.size()) + 1;
          continue;
        }
        tape.backward(lt.total);
        g_total += lt.total_value;
        g_ce += lt.ce_value;
        if (lt.ctc_feasible) {
          g_ctc += lt.ctc_value;
        } else {
          ++state.ctc_skipped;
        }
        g_tokens += lt.num_tokens;
        len_before += lt.length_before;
        len_after += lt.length_after;
        // Batch peaks are tracked per training batch, not per update group.
        frames.push_back(static_cast<int>(u.features.rows()));
        compressed.push_back(lt.length_after);
        targets.push_back(static_cast<int>(u.translation.size()));
        if (frames.size() == static_cast<std::size_t>(config.batch_sentences) || i + 1 == stop) {
          peak = std::max(peak, peak_activation_elements(
                                    mc, frames, compressing ? std::span<const int>(compressed)
                                                            : std::span<const int>(),
                                    targets));
          frames.clear();
          compressed.clear();
          targets.clear();
        }
      }

      const float inv = 1.0f / static_cast<float>(g_tokens);
      for (auto& [name, p] : model.params().map()) {
        if (p.grad.size() != 0) p.grad *= inv;
      }
      const double lr = lr_at_step(state.update_count, config);
      ++attempted;
      const bool finite = std::isfinite(g_total);
      const bool applied = finite && adam_step(model.params(), state.adam, lr, adam);
      if (!finite) ++state.adam.skipped;
      if (applied) {
        ++state.update_count;
        ++finite_updates;
        sum_total += g_total;
        sum_ctc += g_ctc;
        sum_ce += g_ce;
        sum_tokens += g_tokens;
      }
      if (config.log_steps) {
        const double n = static_cast<double>(g_tokens);
        emit(hooks, {{"type", "step"},
                     {"epoch", epoch},
                     {"update", state.update_count},
                     {"lr", lr},
                     {"loss", g_total / n},
                     {"ctc", g_ctc / n},
                     {"ce", g_ce / n},
                     {"tokens", g_tokens},
                     {"applied", applied}});
      }
    }
    model.params().zero_grad();

    if (attempted > 0 && finite_updates == 0) {
      throw TrainingDiverged("training diverged: every update of epoch " + std::to_string(epoch) +
                             " had a non-finite loss or gradient");
    }

    const DevStats dv = evaluate_dev(model, dev);
    if (!state.has_best || dv.ce < state.best_dev) {
      state.best_dev = dv.ce;
      state.has_best = true;
      state.epochs_since_improvement = 0;
    } else {
      ++state.epochs_since_improvement;
    }
    if (state.epochs_since_improvement >= config.patience_epochs) state.stopped = true;

    ParamStore<float> snapshot;
    for (const auto& [name, p] : model.params().map()) snapshot.add(name, p.value);
    if (!hooks.checkpoint_dir.empty()) {
      write_checkpoint(hooks.checkpoint_dir / ("checkpoint" + std::to_string(epoch) + ".ckpt"),
                       mc, snapshot);
    }
    state.ring.push_back(std::move(snapshot));
    while (state.ring.size() > static_cast<std::size_t>(config.checkpoint_avg_n)) {
      state.ring.pop_front();
    }
    state.epoch = epoch;
    ++result.epochs_run;

    const double seen = static_cast<double>(std::max<std::size_t>(1, order.size()));
    const double tokens = static_cast<double>(std::max<long>(1, sum_tokens));
    emit(hooks, {{"type", "epoch"},
                 {"epoch", epoch},
                 {"updates", state.update_count},
                 {"lr", lr_at_step(state.update_count, config)},
                 {"train", {{"loss", sum_total / tokens},
                            {"ctc", sum_ctc / tokens},
                            {"ce", sum_ce / tokens},
                            {"mean_length_before", len_before / seen},
                            {"mean_length_after", len_after / seen}}},
                 {"dev", dev_json(dv)},
                 {"peak_activation_elements", peak},
                 {"ctc_skipped", state.ctc_skipped},
                 {"skipped_updates", state.adam.skipped},
                 {"epochs_since_improvement", state.epochs_since_improvement}});
  }
  result.early_stopped = state.stopped;

  if (state.ring.empty()) {
    for (const auto& [name, p] : model.params().map()) result.averaged.add(name, p.value);
  } else {
    const std::vector<ParamStore<float>> ring(state.ring.begin(), state.ring.end());
    result.averaged = average_checkpoints(ring, static_cast<std::size_t>(config.checkpoint_avg_n),
                                          hooks.warn);
  }
  ParamStore<float> copy;
  for (const auto& [name, p] : result.averaged.map()) copy.add(name, p.value);
  const Seq2SeqModel<float> averaged_model(mc, std::move(copy));
  result.final_dev = evaluate_dev(averaged_model, dev);
  json final_record = {{"type", "final"},
                       {"epochs", state.epoch},
                       {"early_stopped", state.stopped},
                       {"averaged_checkpoints", state.ring.size()},
                       {"dev", dev_json(result.final_dev)}};
  emit(hooks, final_record);
  return result;
}

template bool adam_step<float>(ParamStore<float>&, AdamState<float>&, double, const AdamOptions&);
template bool adam_step<double>(ParamStore<double>&, AdamState<double>&, double,
                                const AdamOptions&);

}  // namespace ctcc
