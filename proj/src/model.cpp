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

#include "ctcc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ctcc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (n_encoder_layers < 1 || n_decoder_layers < 1) {
    throw InvalidInput("model needs at least one encoder and one decoder layer");
  }
  if (ctc_layer < 1 || ctc_layer > n_encoder_layers) {
    throw InvalidInput("ctc_layer must lie in [1, n_encoder_layers]");
  }
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    throw InvalidInput("d_model must be a positive multiple of n_heads");
  }
  if (ffn_dim < 1 || feature_dim < 1 || conv_channels < 1) {
    throw InvalidInput("ffn_dim, feature_dim and conv_channels must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidInput("dropout must lie in [0, 1)");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw InvalidInput("label_smoothing must lie in [0, 1)");
  }
  if (loss_weight_ctc < 0.0) throw InvalidInput("loss_weight_ctc must be non-negative");
  ctc_vocab.validate();
  if (target_vocab.size() <= TokenVocabulary::kNumSpecial) {
    throw InvalidInput("target vocabulary has no tokens");
  }
}

ModelConfig ModelConfig::full_profile(Vocabulary ctc_vocab, TokenVocabulary target_vocab) {
  ModelConfig c;
  c.ctc_vocab = std::move(ctc_vocab);
  c.target_vocab = std::move(target_vocab);
  return c;
}

ModelConfig ModelConfig::desk_profile(Vocabulary ctc_vocab, TokenVocabulary target_vocab) {
  ModelConfig c;
  c.n_encoder_layers = 4;
  c.n_decoder_layers = 2;
  c.ctc_layer = 3;
  c.d_model = 64;
  c.n_heads = 4;
  c.ffn_dim = 256;
  c.dropout = 0.0;
  c.conv_channels = 16;
  c.encoder_positions = true;
  c.ctc_vocab = std::move(ctc_vocab);
  c.target_vocab = std::move(target_vocab);
  return c;
}

json to_json(const ModelConfig& c) {
  json j;
  j["n_encoder_layers"] = c.n_encoder_layers;
  j["n_decoder_layers"] = c.n_decoder_layers;
  j["ctc_layer"] = c.ctc_layer;
  if (c.compression) {
    j["compression"] = {{"kind", to_string(c.compression->kind)},
                        {"keep_blank_segments", c.compression->keep_blank_segments},
                        {"detach_weights", c.compression->detach_weights}};
  } else {
    j["compression"] = nullptr;
  }
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["ffn_dim"] = c.ffn_dim;
  j["dropout"] = c.dropout;
  j["label_smoothing"] = c.label_smoothing;
  j["feature_dim"] = c.feature_dim;
  j["conv_channels"] = c.conv_channels;
  j["loss_weight_ctc"] = c.loss_weight_ctc;
  j["encoder_positions"] = c.encoder_positions;
  j["ctc_vocab"] = c.ctc_vocab.labels;
  j["ctc_blank_index"] = c.ctc_vocab.blank_index;
  j["target_vocab"] = c.target_vocab.tokens();
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.n_encoder_layers = j.value("n_encoder_layers", c.n_encoder_layers);
  c.n_decoder_layers = j.value("n_decoder_layers", c.n_decoder_layers);
  c.ctc_layer = j.value("ctc_layer", c.ctc_layer);
  if (j.contains("compression") && !j.at("compression").is_null()) {
    const json& cj = j.at("compression");
    CompressionPolicy p;
    if (cj.is_string()) {
      p.kind = parse_pooling_kind(cj.get<std::string>());
    } else {
      p.kind = parse_pooling_kind(cj.value("kind", std::string("average")));
      p.keep_blank_segments = cj.value("keep_blank_segments", true);
      p.detach_weights = cj.value("detach_weights", false);
    }
    c.compression = p;
  }
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.loss_weight_ctc = j.value("loss_weight_ctc", c.loss_weight_ctc);
  c.encoder_positions = j.value("encoder_positions", c.encoder_positions);
  if (j.contains("ctc_vocab")) {
    c.ctc_vocab.labels = j.at("ctc_vocab").get<std::vector<std::string>>();
    c.ctc_vocab.blank_index = j.value("ctc_blank_index", 0);
  }
  if (j.contains("target_vocab")) {
    c.target_vocab = TokenVocabulary(j.at("target_vocab").get<std::vector<std::string>>());
  }
  return c;
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
ag::Parameter<T>& ParamStore<T>::add(const std::string& name, Mat<T> value) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw InvalidInput("duplicate parameter: " + name);
  it->second.value = std::move(value);
  return it->second;
}

template <typename T>
ag::Parameter<T>& ParamStore<T>::at(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) throw InvalidInput("unknown parameter: " + name);
  return it->second;
}

template <typename T>
const ag::Parameter<T>& ParamStore<T>::at(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw InvalidInput("unknown parameter: " + name);
  return it->second;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::num_elements() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---------------------------------------------------------------------------
// Stateless pieces

template <typename T>
Mat<T> log_distance_penalty(int length) {
  Mat<T> bias(length, length);
  for (int i = 0; i < length; ++i) {
    for (int j = 0; j < length; ++j) {
      bias(i, j) = static_cast<T>(-std::log1p(static_cast<double>(std::abs(i - j))));
    }
  }
  return bias;
}

int subsampled_length(int num_frames) {
  if (num_frames < 1) throw InvalidInput("subsampled_length: no frames");
  return ag::conv_out_length(ag::conv_out_length(num_frames));
}

template <typename T>
Mat<T> sinusoidal_positions(int length, int dim) {
  Mat<T> pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
      pe(pos, i) = static_cast<T>(std::sin(pos * freq));
      if (i + 1 < dim) pe(pos, i + 1) = static_cast<T>(std::cos(pos * freq));
    }
  }
  return pe;
}

template <typename T>
CeResult<T> label_smoothed_ce(const Mat<T>& logits, std::span<const int> target_ids, double eps,
                              int pad_id, Reduction reduction) {
  if (eps < 0.0 || eps >= 1.0) throw InvalidInput("label smoothing must lie in [0, 1)");
  if (logits.rows() != static_cast<Eigen::Index>(target_ids.size())) {
    throw InvalidInput("label_smoothed_ce: one target per logits row required");
  }
  CeResult<T> r;
  r.grad = Mat<T>::Zero(logits.rows(), logits.cols());
  if (target_ids.empty()) return r;
  const Mat<T> lp = log_softmax_rows(logits);
  const Eigen::Index c = logits.cols();
  const double uniform = eps / static_cast<double>(c);
  for (Eigen::Index t = 0; t < lp.rows(); ++t) {
    const int y = target_ids[t];
    if (y == pad_id) continue;
    if (y < 0 || y >= c) throw InvalidInput("label_smoothed_ce: target out of range");
    ++r.num_tokens;
    double row = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) {
      const double q = uniform + (k == y ? 1.0 - eps : 0.0);
      row -= q * double(lp(t, k));
      r.grad(t, k) = static_cast<T>(std::exp(double(lp(t, k))) - q);
    }
    r.loss += row;
  }
  if (reduction == Reduction::kMean && r.num_tokens > 0) {
    r.loss /= r.num_tokens;
    r.grad /= static_cast<T>(r.num_tokens);
  }
  return r;
}

double multitask_loss(double ctc_loss_value, double ce_loss_value, double loss_weight_ctc,
                      LossCounters& counters) {
  if (!std::isfinite(ctc_loss_value)) {
    ++counters.ctc_skipped;
    return ce_loss_value;
  }
  return loss_weight_ctc * ctc_loss_value + ce_loss_value;
}

// ---------------------------------------------------------------------------
// Parameter initialization

namespace {

class InitRng {
 public:
  explicit InitRng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
Mat<T> uniform_matrix(InitRng& rng, Eigen::Index rows, Eigen::Index cols, double limit) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
  return m;
}

template <typename T>
void add_linear(ParamStore<T>& ps, InitRng& rng, const std::string& name, int in, int out) {
  ps.add(name + ".weight", uniform_matrix<T>(rng, in, out, std::sqrt(6.0 / (in + out))));
  ps.add(name + ".bias", Mat<T>::Zero(1, out));
}

template <typename T>
void add_norm(ParamStore<T>& ps, const std::string& name, int dim) {
  ps.add(name + ".gamma", Mat<T>::Ones(1, dim));
  ps.add(name + ".beta", Mat<T>::Zero(1, dim));
}

template <typename T>
void add_attention(ParamStore<T>& ps, InitRng& rng, const std::string& name, int d) {
  for (const char* proj : {"q", "k", "v", "o"}) add_linear(ps, rng, name + "." + proj, d, d);
}

template <typename T>
void add_ffn(ParamStore<T>& ps, InitRng& rng, const std::string& name, int d, int ffn) {
  add_linear(ps, rng, name + ".fc1", d, ffn);
  add_linear(ps, rng, name + ".fc2", ffn, d);
}

std::string enc_layer(int l) { return "encoder.layers." + std::to_string(l); }
std::string dec_layer(int l) { return "decoder.layers." + std::to_string(l); }

template <typename T>
ParamStore<T> init_params(const ModelConfig& c, std::uint64_t seed) {
  InitRng rng(seed);
  ParamStore<T> ps;
  const int ch = c.conv_channels;
  const int d = c.d_model;
  const double lim1 = 1.0 / std::sqrt(9.0);
  ps.add("frontend.conv1.weight", uniform_matrix<T>(rng, ch, 9, lim1));
  ps.add("frontend.conv1.bias", uniform_matrix<T>(rng, 1, ch, lim1));
  const double lim2 = 1.0 / std::sqrt(9.0 * ch);
  ps.add("frontend.conv2.weight", uniform_matrix<T>(rng, ch, 9 * ch, lim2));
  ps.add("frontend.conv2.bias", uniform_matrix<T>(rng, 1, ch, lim2));
  const int freq2 = ag::conv_out_length(ag::conv_out_length(c.feature_dim));
  add_linear(ps, rng, "frontend.proj", freq2 * ch, d);

  for (int l = 0; l < c.n_encoder_layers; ++l) {
    add_norm(ps, enc_layer(l) + ".attn_norm", d);
    add_attention(ps, rng, enc_layer(l) + ".self_attn", d);
    add_norm(ps, enc_layer(l) + ".ffn_norm", d);
    add_ffn(ps, rng, enc_layer(l) + ".ffn", d, c.ffn_dim);
  }
  add_norm(ps, "encoder.final_norm", d);
  add_linear(ps, rng, "ctc.proj", d, c.ctc_vocab.size());

  Mat<T> embed(c.target_vocab.size(), d);
  for (Eigen::Index i = 0; i < embed.size(); ++i) {
    embed.data()[i] = static_cast<T>(rng.normal() / std::sqrt(static_cast<double>(d)));
  }
  embed.row(TokenVocabulary::kPad).setZero();
  ps.add("decoder.embed", std::move(embed));
  for (int l = 0; l < c.n_decoder_layers; ++l) {
    add_norm(ps, dec_layer(l) + ".self_attn_norm", d);
    add_attention(ps, rng, dec_layer(l) + ".self_attn", d);
    add_norm(ps, dec_layer(l) + ".cross_attn_norm", d);
    add_attention(ps, rng, dec_layer(l) + ".cross_attn", d);
    add_norm(ps, dec_layer(l) + ".ffn_norm", d);
    add_ffn(ps, rng, dec_layer(l) + ".ffn", d, c.ffn_dim);
  }
  add_norm(ps, "decoder.final_norm", d);
  add_linear(ps, rng, "decoder.out_proj", d, c.target_vocab.size());
  return ps;
}

}  // namespace

// ---------------------------------------------------------------------------
// Seq2SeqModel

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  params_ = init_params<T>(config_, seed);
}

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(ModelConfig config, ParamStore<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const ParamStore<T> reference = init_params<T>(config_, 0);
  for (const auto& [name, p] : reference.map()) {
    if (!params_.contains(name)) throw DataError("checkpoint is missing parameter " + name);
    const auto& v = params_.at(name).value;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw DataError("parameter " + name + " has the wrong shape");
    }
  }
  if (params_.num_tensors() != reference.num_tensors()) {
    throw DataError("checkpoint has unexpected extra parameters");
  }
}

template <typename T>
ag::Var Seq2SeqModel<T>::param(ag::Tape<T>& tape, const std::string& name) const {
  return tape.parameter(params_.at(name));
}

template <typename T>
ag::Var Seq2SeqModel<T>::norm(ag::Tape<T>& tape, const std::string& prefix, ag::Var x) const {
  return ag::layer_norm(tape, x, param(tape, prefix + ".gamma"), param(tape, prefix + ".beta"));
}

template <typename T>
ag::Var Seq2SeqModel<T>::attention_block(ag::Tape<T>& tape, const std::string& prefix,
                                         ag::Var query_in, ag::Var memory, const Mat<T>* bias,
                                         bool causal) const {
  auto lin = [&](const char* p, ag::Var x) {
    return ag::linear(tape, x, param(tape, prefix + "." + p + ".weight"),
                      param(tape, prefix + "." + p + ".bias"));
  };
  const ag::Var q = lin("q", query_in);
  const ag::Var k = lin("k", memory);
  const ag::Var v = lin("v", memory);
  const ag::Var a = ag::attention(tape, q, k, v, config_.n_heads, bias, causal);
  return lin("o", a);
}

template <typename T>
ag::Var Seq2SeqModel<T>::ffn_block(ag::Tape<T>& tape, const std::string& prefix,
                                   ag::Var x) const {
  const ag::Var h = ag::relu(tape, ag::linear(tape, x, param(tape, prefix + ".fc1.weight"),
                                              param(tape, prefix + ".fc1.bias")));
  return ag::linear(tape, h, param(tape, prefix + ".fc2.weight"),
                    param(tape, prefix + ".fc2.bias"));
}

template <typename T>
ag::Var Seq2SeqModel<T>::encoder_layer(ag::Tape<T>& tape, int layer, ag::Var x,
                                       const Mat<T>& bias, const ForwardContext& ctx) const {
  const std::string p = enc_layer(layer);
  const double drop = ctx.training ? config_.dropout : 0.0;
  std::mt19937_64 unused;
  std::mt19937_64& rng = ctx.rng ? *ctx.rng : unused;
  const ag::Var h = norm(tape, p + ".attn_norm", x);
  const ag::Var a = attention_block(tape, p + ".self_attn", h, h, &bias, false);
  x = ag::add(tape, x, ag::dropout(tape, a, drop, rng));
  const ag::Var f = ffn_block(tape, p + ".ffn", norm(tape, p + ".ffn_norm", x));
  return ag::add(tape, x, ag::dropout(tape, f, drop, rng));
}

template <typename T>
ag::Var Seq2SeqModel<T>::conv_subsample(ag::Tape<T>& tape, const Mat<T>& features) const {
  if (features.rows() < 1) throw InvalidInput("conv_subsample: no frames");
  if (features.cols() != config_.feature_dim) {
    throw InvalidInput("conv_subsample: feature dimension does not match the model");
  }
  const int ch = config_.conv_channels;
  const int f1 = ag::conv_out_length(config_.feature_dim);
  ag::Var x = tape.constant(features);
  x = ag::relu(tape, ag::conv2d_stride2(tape, x, param(tape, "frontend.conv1.weight"),
                                        param(tape, "frontend.conv1.bias"), config_.feature_dim,
                                        1));
  x = ag::relu(tape, ag::conv2d_stride2(tape, x, param(tape, "frontend.conv2.weight"),
                                        param(tape, "frontend.conv2.bias"), f1, ch));
  return ag::linear(tape, x, param(tape, "frontend.proj.weight"),
                    param(tape, "frontend.proj.bias"));
}

template <typename T>
EncoderOutput<T> Seq2SeqModel<T>::encode(ag::Tape<T>& tape, const Mat<T>& features,
                                         const ForwardContext& ctx) const {
  if (ctx.training && config_.dropout > 0.0 && ctx.rng == nullptr) {
    throw InvalidInput("training forward with dropout needs an rng");
  }
  EncoderOutput<T> out;
  std::mt19937_64 unused;
  std::mt19937_64& rng = ctx.rng ? *ctx.rng : unused;
  ag::Var x = conv_subsample(tape, features);
  if (config_.encoder_positions) {
    x = ag::add_constant(tape, x,
                         sinusoidal_positions<T>(static_cast<int>(tape.value(x).rows()),
                                                 config_.d_model));
  }
  x = ag::dropout(tape, x, ctx.training ? config_.dropout : 0.0, rng);
  int length = static_cast<int>(tape.value(x).rows());
  Mat<T> bias = log_distance_penalty<T>(length);
  out.length_before = length;
  out.length_after = length;

  for (int l = 0; l < config_.n_encoder_layers; ++l) {
    x = encoder_layer(tape, l, x, bias, ctx);
    const bool top = l + 1 == config_.n_encoder_layers;
    if (top) x = norm(tape, "encoder.final_norm", x);
    out.layer_states.push_back(x);
    if (l + 1 == config_.ctc_layer) {
      const ag::Var logits = ag::linear(tape, x, param(tape, "ctc.proj.weight"),
                                        param(tape, "ctc.proj.bias"));
      out.ctc_log_probs = ag::log_softmax(tape, logits);
      out.tap_states = x;
      out.length_before = length;
      if (config_.compression) {
        ag::CompressedVar<T> cv = ag::compress(tape, x, out.ctc_log_probs, *config_.compression,
                                               config_.ctc_vocab.blank_index);
        x = cv.out;
        out.spans = std::move(cv.spans);
        length = static_cast<int>(tape.value(x).rows());
        bias = log_distance_penalty<T>(length);
      }
      out.length_after = length;
    }
  }
  out.states = x;
  return out;
}

template <typename T>
ag::Var Seq2SeqModel<T>::decoder_logits(ag::Tape<T>& tape, ag::Var encoder_states,
                                        std::span<const int> input_ids,
                                        const ForwardContext& ctx) const {
  const double drop = ctx.training ? config_.dropout : 0.0;
  std::mt19937_64 unused;
  std::mt19937_64& rng = ctx.rng ? *ctx.rng : unused;
  const int len = static_cast<int>(input_ids.size());
  ag::Var x = ag::embedding(tape, param(tape, "decoder.embed"), input_ids);
  x = ag::scale(tape, x, static_cast<T>(std::sqrt(static_cast<double>(config_.d_model))));
  x = ag::add_constant(tape, x, sinusoidal_positions<T>(len, config_.d_model));
  x = ag::dropout(tape, x, drop, rng);
  for (int l = 0; l < config_.n_decoder_layers; ++l) {
    const std::string p = dec_layer(l);
    ag::Var h = norm(tape, p + ".self_attn_norm", x);
    ag::Var a = attention_block(tape, p + ".self_attn", h, h, nullptr, true);
    x = ag::add(tape, x, ag::dropout(tape, a, drop, rng));
    h = norm(tape, p + ".cross_attn_norm", x);
    a = attention_block(tape, p + ".cross_attn", h, encoder_states, nullptr, false);
    x = ag::add(tape, x, ag::dropout(tape, a, drop, rng));
    const ag::Var f = ffn_block(tape, p + ".ffn", norm(tape, p + ".ffn_norm", x));
    x = ag::add(tape, x, ag::dropout(tape, f, drop, rng));
  }
  x = norm(tape, "decoder.final_norm", x);
  return ag::linear(tape, x, param(tape, "decoder.out_proj.weight"),
                    param(tape, "decoder.out_proj.bias"));
}

template <typename T>
LossTerms<T> Seq2SeqModel<T>::forward_loss(ag::Tape<T>& tape, const Mat<T>& features,
                                           std::span<const int> ctc_target,
                                           std::span<const int> target_ids,
                                           const ForwardContext& ctx) const {
  LossTerms<T> r;
  const EncoderOutput<T> enc = encode(tape, features, ctx);
  r.length_before = enc.length_before;
  r.length_after = enc.length_after;

  std::vector<int> dec_in;
  std::vector<int> dec_out;
  dec_in.reserve(target_ids.size() + 1);
  dec_in.push_back(TokenVocabulary::kBos);
  dec_in.insert(dec_in.end(), target_ids.begin(), target_ids.end());
  dec_out.assign(target_ids.begin(), target_ids.end());
  dec_out.push_back(TokenVocabulary::kEos);
  r.num_tokens = static_cast<int>(dec_out.size());

  const ag::Var logits = decoder_logits(tape, enc.states, dec_in, ctx);
  r.ce = ag::label_smoothed_ce(tape, logits, dec_out, config_.label_smoothing);
  r.ce_value = tape.value(r.ce)(0, 0);

  const ag::CtcVar ctc = ag::ctc_loss(tape, enc.ctc_log_probs, ctc_target,
                                      config_.ctc_vocab.blank_index);
  r.ctc_feasible = ctc.feasible;
  r.ctc_value = ctc.value;
  if (ctc.feasible) {
    r.ctc = ctc.loss;
    const ag::Var terms[] = {r.ctc, r.ce};
    const T coeffs[] = {static_cast<T>(config_.loss_weight_ctc), T(1)};
    r.total = ag::weighted_sum(tape, std::span<const ag::Var>(terms), std::span<const T>(coeffs));
  } else {
    r.total = r.ce;
  }
  r.total_value = tape.value(r.total)(0, 0);
  return r;
}

template <typename T>
Hypothesis Seq2SeqModel<T>::decode(const Mat<T>& features, const DecodeOptions& options) const {
  if (options.beam_size < 1) throw InvalidInput("beam size must be at least 1");
  if (options.max_length < 1) throw InvalidInput("max_length must be at least 1");
  ag::Tape<T> tape(false);
  const ForwardContext ctx;
  const EncoderOutput<T> enc = encode(tape, features, ctx);

  Hypothesis result;
  result.length_before = enc.length_before;
  result.length_after = enc.length_after;
  const Mat<T>& lp = tape.value(enc.ctc_log_probs);
  result.ctc_transcript =
      ctc_collapse(frame_argmax(lp, static_cast<int>(lp.rows())),
                   config_.ctc_vocab.blank_index, config_.ctc_vocab.size());
  const Mat<T> memory = tape.value(enc.states);

  struct Beam {
    std::vector<int> ids;  // starts with BOS
    double score;
  };
  struct Finished {
    std::vector<int> tokens;
    double score;
    double normalized;
  };
  std::vector<Beam> active = {{{TokenVocabulary::kBos}, 0.0}};
  std::vector<Finished> finished;
  const int k = options.beam_size;

  for (int step = 0; step < options.max_length && !active.empty(); ++step) {
    struct Candidate {
      std::size_t beam;
      int token;
      double score;
    };
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < active.size(); ++b) {
      ag::Tape<T> dt(false);
      const ag::Var mem = dt.constant(memory);
      const ag::Var logits = decoder_logits(dt, mem, active[b].ids, ctx);
      const Mat<T>& lv = dt.value(logits);
      const Mat<T> last = log_softmax_rows<T>(lv.bottomRows(1));
      std::vector<int> order(last.cols());
      for (int i = 0; i < static_cast<int>(order.size()); ++i) order[i] = i;
      const int take = std::min<int>(k, static_cast<int>(order.size()));
      std::partial_sort(order.begin(), order.begin() + take, order.end(),
                        [&](int a, int c) {
                          return last(0, a) > last(0, c) || (last(0, a) == last(0, c) && a < c);
                        });
      for (int i = 0; i < take; ++i) {
        cands.push_back({b, order[i], active[b].score + double(last(0, order[i]))});
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<Beam> next;
    for (const Candidate& c : cands) {
      if (static_cast<int>(next.size()) >= k) break;
      std::vector<int> ids = active[c.beam].ids;
      if (c.token == TokenVocabulary::kEos) {
        std::vector<int> tokens(ids.begin() + 1, ids.end());
        const double len = static_cast<double>(tokens.size() + 1);
        finished.push_back({tokens, c.score, c.score / std::pow(len, options.length_penalty)});
        if (static_cast<int>(finished.size()) >= k) break;
        continue;
      }
      ids.push_back(c.token);
      next.push_back({std::move(ids), c.score});
    }
    if (static_cast<int>(finished.size()) >= k) break;
    active = std::move(next);
  }

  if (!finished.empty()) {
    const auto best = std::max_element(
        finished.begin(), finished.end(),
        [](const Finished& a, const Finished& b) { return a.normalized < b.normalized; });
    result.tokens = best->tokens;
    result.score = best->score;
  } else {
    result.truncated = true;
    if (!active.empty()) {
      result.tokens.assign(active.front().ids.begin() + 1, active.front().ids.end());
      result.score = active.front().score;
    }
  }
  return result;
}

template <typename T>
EncoderOutput<T> encoder_forward(ag::Tape<T>& tape, const Seq2SeqModel<T>& model,
                                 const Mat<T>& features) {
  return model.encode(tape, features, ForwardContext{});
}

template <typename T>
Hypothesis decode_translation(const Seq2SeqModel<T>& model, const Mat<T>& features,
                              const DecodeOptions& options) {
  return model.decode(features, options);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'T', 'C', 'K'};

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw DataError("checkpoint truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace

std::string encode_checkpoint(const ModelConfig& config, const ParamStore<float>& params,
                              CheckpointFormat format) {
  if (format == CheckpointFormat::kJson) {
    json j;
    j["format"] = "ctcc-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = to_json(config);
    json ps = json::object();
    for (const auto& [name, p] : params.map()) {
      ps[name] = {{"shape", {p.value.rows(), p.value.cols()}},
                  {"data", std::vector<float>(p.value.data(), p.value.data() + p.value.size())}};
    }
    j["params"] = std::move(ps);
    return j.dump();
  }
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = to_json(config).dump();
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.num_tensors()));
  for (const auto& [name, p] : params.map()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    out.append(reinterpret_cast<const char*>(p.value.data()),
               sizeof(float) * static_cast<std::size_t>(p.value.size()));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Checkpoint ck;
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0) {
    std::size_t pos = 4;
    const auto version = get<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion) {
      throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto cfg_len = get<std::uint64_t>(bytes, pos);
    if (pos + cfg_len > bytes.size()) throw DataError("checkpoint truncated");
    try {
      ck.config = model_config_from_json(json::parse(bytes.substr(pos, cfg_len)));
    } catch (const json::exception& e) {
      throw DataError(std::string("checkpoint config: ") + e.what());
    }
    pos += cfg_len;
    const auto n = get<std::uint32_t>(bytes, pos);
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto name_len = get<std::uint32_t>(bytes, pos);
      if (pos + name_len > bytes.size()) throw DataError("checkpoint truncated");
      std::string name = bytes.substr(pos, name_len);
      pos += name_len;
      const auto rows = get<std::uint32_t>(bytes, pos);
      const auto cols = get<std::uint32_t>(bytes, pos);
      const std::size_t count = static_cast<std::size_t>(rows) * cols;
      if (pos + count * sizeof(float) > bytes.size()) throw DataError("checkpoint truncated");
      MatF m(rows, cols);
      if (count) std::memcpy(m.data(), bytes.data() + pos, count * sizeof(float));
      pos += count * sizeof(float);
      ck.params.add(name, std::move(m));
    }
    if (pos != bytes.size()) throw DataError("checkpoint has trailing bytes");
    return ck;
  }
  try {
    const json j = json::parse(bytes);
    if (j.value("format", std::string()) != "ctcc-checkpoint") {
      throw DataError("not a checkpoint file");
    }
    if (j.at("version").get<std::uint32_t>() != kCheckpointVersion) {
      throw DataError("unsupported checkpoint version");
    }
    ck.config = model_config_from_json(j.at("config"));
    for (const auto& [name, pj] : j.at("params").items()) {
      const auto shape = pj.at("shape").get<std::vector<Eigen::Index>>();
      const auto data = pj.at("data").get<std::vector<float>>();
      if (shape.size() != 2 || static_cast<std::size_t>(shape[0] * shape[1]) != data.size()) {
        throw DataError("parameter " + name + " has inconsistent shape");
      }
      ck.params.add(name, Eigen::Map<const MatF>(data.data(), shape[0], shape[1]));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                      const ParamStore<float>& params, CheckpointFormat format) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path.string());
  const std::string bytes = encode_checkpoint(config, params, format);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("checkpoint write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

// ---------------------------------------------------------------------------

template class ParamStore<float>;
template class ParamStore<double>;
template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;
template Mat<float> log_distance_penalty<float>(int);
template Mat<double> log_distance_penalty<double>(int);
template Mat<float> sinusoidal_positions<float>(int, int);
template Mat<double> sinusoidal_positions<double>(int, int);
template CeResult<float> label_smoothed_ce<float>(const Mat<float>&, std::span<const int>, double,
                                                  int, Reduction);
template CeResult<double> label_smoothed_ce<double>(const Mat<double>&, std::span<const int>,
                                                    double, int, Reduction);
template EncoderOutput<float> encoder_forward<float>(ag::Tape<float>&, const Seq2SeqModel<float>&,
                                                     const Mat<float>&);
template EncoderOutput<double> encoder_forward<double>(ag::Tape<double>&,
                                                       const Seq2SeqModel<double>&,
                                                       const Mat<double>&);
template Hypothesis decode_translation<float>(const Seq2SeqModel<float>&, const Mat<float>&,
                                              const DecodeOptions&);
template Hypothesis decode_translation<double>(const Seq2SeqModel<double>&, const Mat<double>&,
                                               const DecodeOptions&);

}  // namespace ctcc
