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

#include "ctcc/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcc/compress.hpp"
#include "ctcc/features.hpp"
#include "ctcc/metrics.hpp"
#include "ctcc/model.hpp"
#include "ctcc/train.hpp"

namespace ctcc {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad flag values and inconsistent configs.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  for (int n = 1; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

/// Relative names are tried in the working directory, then in every entry of
/// CTCC_CONFIG_PATH.
fs::path resolve_config(const std::string& name) {
  const fs::path direct(name);
  if (fs::exists(direct) || direct.is_absolute()) return direct;
  if (const char* env = std::getenv(kConfigPathEnv)) {
    std::stringstream dirs(env);
    for (std::string dir; std::getline(dirs, dir, ':');) {
      if (dir.empty()) continue;
      const fs::path candidate = fs::path(dir) / name;
      if (fs::exists(candidate)) return candidate;
    }
  }
  return direct;
}

// ---------------------------------------------------------------------------
// Synthetic generator config

SyntheticParams synthetic_params_from_json(const json& j) {
  SyntheticParams p;
  p.alphabet_size = j.value("alphabet_size", p.alphabet_size);
  p.feature_dim = j.value("feature_dim", p.feature_dim);
  p.min_duration = j.value("min_duration", p.min_duration);
  p.max_duration = j.value("max_duration", p.max_duration);
  p.frames_per_unit = j.value("frames_per_unit", p.frames_per_unit);
  p.word_gap = j.value("word_gap", p.word_gap);
  p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
  const std::string suffixes = j.value("suffixes", std::string("none"));
  if (suffixes == "positional") {
    p.suffixes = PhoneSuffixes::kPositional;
  } else if (suffixes != "none") {
    throw UsageError("suffixes must be \"none\" or \"positional\"");
  }
  p.min_words = j.value("min_words", p.min_words);
  p.max_words = j.value("max_words", p.max_words);
  p.min_word_length = j.value("min_word_length", p.min_word_length);
  p.max_word_length = j.value("max_word_length", p.max_word_length);
  p.num_speakers = j.value("num_speakers", p.num_speakers);
  p.speaker_shift = j.value("speaker_shift", p.speaker_shift);
  p.prototype_seed = j.value("prototype_seed", p.prototype_seed);
  return p;
}

json to_json(const SyntheticParams& p) {
  return {{"alphabet_size", p.alphabet_size},
          {"feature_dim", p.feature_dim},
          {"min_duration", p.min_duration},
          {"max_duration", p.max_duration},
          {"frames_per_unit", p.frames_per_unit},
          {"word_gap", p.word_gap},
          {"noise_sigma", p.noise_sigma},
          {"suffixes", p.suffixes == PhoneSuffixes::kPositional ? "positional" : "none"},
          {"min_words", p.min_words},
          {"max_words", p.max_words},
          {"min_word_length", p.min_word_length},
          {"max_word_length", p.max_word_length},
          {"num_speakers", p.num_speakers},
          {"speaker_shift", p.speaker_shift},
          {"prototype_seed", p.prototype_seed}};
}

void write_references(const fs::path& path, const Dataset& data, const TokenVocabulary& vocab,
                      const Vocabulary& ctc_vocab) {
  std::ostringstream os;
  for (const Utterance& u : data) {
    json phones = json::array();
    for (int p : u.phones) phones.push_back(ctc_vocab.labels.at(p));
    os << json{{"id", u.id}, {"tokens", vocab.decode(u.translation)}, {"phones", phones}}.dump()
       << '\n';
  }
  write_text(path, os.str());
}

int run_synth(const std::string& config_name, const fs::path& out_dir,
              std::optional<std::uint64_t> seed_override, std::ostream& out) {
  const json cfg = read_json_file(resolve_config(config_name));
  const SyntheticParams params = synthetic_params_from_json(cfg.value("generator", cfg));
  try {
    params.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
  const std::uint64_t seed = seed_override.value_or(cfg.value("seed", std::uint64_t{1}));
  const json splits = cfg.value("splits", json{{"train", 2000}, {"dev", 200}, {"test", 200}});

  const SyntheticTask task = SyntheticTask::create(params);
  fs::create_directories(out_dir);
  write_vocabulary(out_dir / "ctc_vocab.txt", task.ctc_vocab);
  write_token_vocabulary(out_dir / "target_vocab.txt", task.target_vocab);
  json task_json = {{"generator", to_json(params)}, {"seed", seed}, {"splits", splits}};
  write_text(out_dir / "task.json", task_json.dump(2) + "\n");

  std::uint64_t split_index = 0;
  for (const auto& [name, count] : splits.items()) {
    const int n = count.get<int>();
    if (n < 0) throw UsageError("split sizes must be non-negative");
    Dataset data = generate_dataset(task, n, mix_seed(seed, ++split_index), name);
    normalize_dataset(data);
    write_manifest(out_dir / (name + ".jsonl"), data, task.ctc_vocab, task.target_vocab,
                   fs::path("features") / name);
    write_references(out_dir / (name + ".ref.jsonl"), data, task.target_vocab, task.ctc_vocab);
    out << name << ": " << n << " utterances\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Train

struct TrainSetup {
  fs::path data_dir;
  std::string train_split = "train";
  std::string dev_split = "dev";
  json model;
  json train;
};

TrainSetup read_train_setup(const fs::path& config_path) {
  const json cfg = read_json_file(config_path);
  TrainSetup s;
  if (cfg.contains("data")) {
    s.data_dir = cfg.at("data").get<std::string>();
    if (s.data_dir.is_relative()) s.data_dir = config_path.parent_path() / s.data_dir;
  }
  s.train_split = cfg.value("train_split", s.train_split);
  s.dev_split = cfg.value("dev_split", s.dev_split);
  s.model = cfg.value("model", json::object());
  s.train = cfg.value("train", json::object());
  return s;
}

ModelConfig build_model_config(const json& j, Vocabulary ctc_vocab, TokenVocabulary target_vocab) {
  const std::string profile = j.value("profile", std::string("desk"));
  ModelConfig base;
  if (profile == "desk") {
    base = ModelConfig::desk_profile(ctc_vocab, target_vocab);
  } else if (profile == "full") {
    base = ModelConfig::full_profile(ctc_vocab, target_vocab);
  } else {
    throw UsageError("model profile must be \"desk\" or \"full\"");
  }
  json merged = to_json(base);
  for (const auto& [key, value] : j.items()) {
    if (key != "profile") merged[key] = value;
  }
  ModelConfig c = model_config_from_json(merged);
  c.ctc_vocab = std::move(ctc_vocab);
  c.target_vocab = std::move(target_vocab);
  return c;
}

TrainConfig build_train_config(const json& j) {
  const std::string profile = j.value("profile", std::string("desk"));
  TrainConfig base;
  if (profile == "desk") {
    base = TrainConfig::desk_profile();
  } else if (profile != "full") {
    throw UsageError("train profile must be \"desk\" or \"full\"");
  }
  json merged = to_json(base);
  for (const auto& [key, value] : j.items()) {
    if (key != "profile") merged[key] = value;
  }
  return train_config_from_json(merged);
}

struct TrainFlags {
  std::string config = "ctcc.json";
  fs::path out_dir = "run";
  std::string data_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
  std::optional<long> max_updates;
  bool deterministic = false;
  bool log_steps = false;
  std::string resume;
  std::string format = "binary";
};

int run_train(const TrainFlags& flags, std::ostream& out, std::ostream& err) {
  const fs::path config_path = resolve_config(flags.config);
  TrainSetup setup = read_train_setup(config_path);
  if (!flags.data_dir.empty()) setup.data_dir = flags.data_dir;
  if (setup.data_dir.empty()) throw UsageError("no data directory (config \"data\" or --data)");

  const Vocabulary ctc_vocab = read_vocabulary(setup.data_dir / "ctc_vocab.txt");
  const TokenVocabulary target_vocab = read_token_vocabulary(setup.data_dir / "target_vocab.txt");
  ModelConfig mc;
  TrainConfig tc;
  try {
    mc = build_model_config(setup.model, ctc_vocab, target_vocab);
    tc = build_train_config(setup.train);
    if (flags.seed) tc.seed = *flags.seed;
    if (flags.max_epochs) tc.max_epochs = *flags.max_epochs;
    if (flags.max_updates) tc.max_updates = *flags.max_updates;
    if (flags.log_steps) tc.log_steps = true;
    mc.validate();
    tc.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (flags.format != "binary" && flags.format != "json") {
    throw UsageError("--format must be binary or json");
  }
  const CheckpointFormat format =
      flags.format == "json" ? CheckpointFormat::kJson : CheckpointFormat::kBinary;
  if (flags.deterministic) Eigen::setNbThreads(1);

  const Dataset train =
      read_manifest(setup.data_dir / (setup.train_split + ".jsonl"), ctc_vocab, target_vocab);
  const Dataset dev =
      read_manifest(setup.data_dir / (setup.dev_split + ".jsonl"), ctc_vocab, target_vocab);
  if (train.empty() || dev.empty()) throw DataError("training and dev manifests must be non-empty");
  if (!setup.model.contains("feature_dim")) {
    mc.feature_dim = static_cast<int>(train.front().features.cols());
  }
  for (const Utterance& u : train) {
    if (u.features.cols() != mc.feature_dim) {
      throw DataError("feature dimension " + std::to_string(u.features.cols()) +
                      " does not match the model's " + std::to_string(mc.feature_dim));
    }
  }

  fs::create_directories(flags.out_dir);
  write_text(flags.out_dir / "config.json",
             json{{"model", to_json(mc)}, {"train", to_json(tc)}}.dump(2) + "\n");

  Seq2SeqModel<float> model(mc, tc.seed);
  TrainState state;
  std::ios::openmode mode = std::ios::binary;
  if (!flags.resume.empty()) {
    state = load_train_state(flags.resume, model);
    mode |= std::ios::app;
  }
  std::ofstream metrics(flags.out_dir / "metrics.jsonl", mode);
  if (!metrics) throw DataError("cannot write metrics log");

  TrainHooks hooks;
  hooks.metrics = &metrics;
  hooks.checkpoint_dir = flags.out_dir / "checkpoints";
  hooks.warn = [&err](const std::string& msg) { err << "warning: " << msg << '\n'; };
  hooks.on_record = [&out](const json& r) {
    if (r.value("type", "") != "epoch") return;
    out << "epoch " << r.at("epoch") << "  train " << r.at("train").at("loss") << "  dev ce "
        << r.at("dev").at("ce") << "  dev acc " << r.at("dev").at("token_accuracy") << '\n';
  };
  TrainResult result;
  try {
    result = train_loop(model, tc, train, dev, state, hooks);
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  save_train_state(flags.out_dir / "state.bin", model, state);
  write_checkpoint(flags.out_dir / "checkpoint_avg.ckpt", mc, result.averaged, format);
  out << "averaged checkpoint: " << (flags.out_dir / "checkpoint_avg.ckpt").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Decode

int run_decode(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out_path,
               const DecodeOptions& options, std::ostream& out) {
  Checkpoint ck = read_checkpoint(checkpoint);
  const ModelConfig mc = ck.config;
  const Seq2SeqModel<float> model(mc, std::move(ck.params));
  const Dataset data = read_manifest(manifest, mc.ctc_vocab, mc.target_vocab);
  std::ostringstream os;
  for (const Utterance& u : data) {
    if (u.features.cols() != mc.feature_dim) {
      throw DataError("utterance " + u.id + " has the wrong feature dimension");
    }
    const Hypothesis h = model.decode(u.features, options);
    json ctc = json::array();
    for (int p : h.ctc_transcript) ctc.push_back(mc.ctc_vocab.labels.at(p));
    os << json{{"id", u.id},
               {"tokens", mc.target_vocab.decode(h.tokens)},
               {"ctc_transcript", ctc},
               {"score", h.score},
               {"truncated", h.truncated},
               {"length_before", h.length_before},
               {"length_after", h.length_after}}
              .dump()
       << '\n';
  }
  write_text(out_path, os.str());
  out << "decoded " << data.size() << " utterances\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Eval

std::vector<std::string> record_tokens(const json& r, bool tokenize) {
  std::vector<std::string> toks;
  if (r.contains("tokens")) {
    toks = r.at("tokens").get<std::vector<std::string>>();
  } else if (r.contains("text")) {
    std::istringstream is(r.at("text").get<std::string>());
    for (std::string t; is >> t;) toks.push_back(t);
  } else {
    throw DataError("record without \"tokens\" or \"text\"");
  }
  if (!tokenize) return toks;
  std::string joined;
  for (const std::string& t : toks) joined += (joined.empty() ? "" : " ") + t;
  return tokenize_13a(joined);
}

/// Polyline chart of one or more series sharing an x axis.
std::string svg_plot(const std::string& title,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series,
                     const std::vector<double>& xs) {
  constexpr double kW = 640;
  constexpr double kH = 400;
  constexpr double kPad = 50;
  double lo = 1e300;
  double hi = -1e300;
  for (const auto& [name, ys] : series) {
    for (double y : ys) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const double x0 = xs.empty() ? 0.0 : xs.front();
  const double x1 = xs.size() < 2 ? x0 + 1.0 : xs.back();
  auto px = [&](double x) { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); };
  auto py = [&](double y) { return kH - kPad - (y - lo) / (hi - lo) * (kH - 2 * kPad); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n"
     << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\""
     << kH - kPad << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\""
     << kH - kPad << "\" stroke=\"black\"/>\n"
     << "<text x=\"5\" y=\"" << py(hi) + 4 << "\" font-size=\"10\">" << hi << "</text>\n"
     << "<text x=\"5\" y=\"" << py(lo) + 4 << "\" font-size=\"10\">" << lo << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 5];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < xs.size() && i < series[s].second.size(); ++i) {
      os << px(xs[i]) << ',' << py(series[s].second[i]) << ' ';
    }
    os << "\"/>\n<text x=\"" << kW - kPad - 120 << "\" y=\"" << kPad + 15 * s << "\" fill=\""
       << color << "\" font-size=\"12\">" << series[s].first << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_plots(const std::vector<json>& log, const fs::path& dir) {
  std::vector<double> epoch, train_loss, train_ctc, train_ce, dev_ce, dev_acc, before, after;
  for (const json& r : log) {
    if (r.value("type", "") != "epoch") continue;
    epoch.push_back(r.at("epoch").get<double>());
    train_loss.push_back(r.at("train").at("loss").get<double>());
    train_ctc.push_back(r.at("train").at("ctc").get<double>());
    train_ce.push_back(r.at("train").at("ce").get<double>());
    dev_ce.push_back(r.at("dev").at("ce").get<double>());
    dev_acc.push_back(r.at("dev").at("token_accuracy").get<double>());
    before.push_back(r.at("dev").at("mean_length_before").get<double>());
    after.push_back(r.at("dev").at("mean_length_after").get<double>());
  }
  std::ostringstream csv;
  csv << "epoch,train_loss,train_ctc,train_ce,dev_ce,dev_token_accuracy,"
         "mean_length_before,mean_length_after\n";
  for (std::size_t i = 0; i < epoch.size(); ++i) {
    csv << epoch[i] << ',' << train_loss[i] << ',' << train_ctc[i] << ',' << train_ce[i] << ','
        << dev_ce[i] << ',' << dev_acc[i] << ',' << before[i] << ',' << after[i] << '\n';
  }
  write_text(dir / "curves.csv", csv.str());
  write_text(dir / "loss.svg", svg_plot("loss per token", {{"train", train_loss},
                                                           {"train ctc", train_ctc},
                                                           {"train ce", train_ce},
                                                           {"dev ce", dev_ce}},
                                        epoch));
  write_text(dir / "length.svg",
             svg_plot("mean encoder length", {{"before", before}, {"after", after}}, epoch));
}

struct EvalFlags {
  fs::path hyps;
  fs::path refs;
  fs::path out;
  fs::path metrics_log;
  fs::path plot_dir;
  std::string tokenize = "13a";
};

int run_eval(const EvalFlags& flags, std::ostream& out) {
  if (flags.tokenize != "13a" && flags.tokenize != "none") {
    throw UsageError("--tokenize must be 13a or none");
  }
  const bool tok = flags.tokenize == "13a";
  const std::vector<json> hyp_records = read_jsonl(flags.hyps);
  const std::vector<json> ref_records = read_jsonl(flags.refs);
  std::map<std::string, const json*> hyp_by_id;
  for (const json& h : hyp_records) {
    if (!h.contains("id")) throw DataError("hypothesis without id");
    hyp_by_id[h.at("id").get<std::string>()] = &h;
  }
  std::vector<std::vector<std::string>> hyps;
  std::vector<std::vector<std::string>> refs;
  EvalReport report;
  double ratio_sum = 0.0;
  long ratio_count = 0;
  for (const json& r : ref_records) {
    const std::string id = r.at("id").get<std::string>();
    const auto it = hyp_by_id.find(id);
    if (it == hyp_by_id.end()) throw DataError("no hypothesis for " + id);
    const json& h = *it->second;
    hyps.push_back(record_tokens(h, tok));
    refs.push_back(record_tokens(r, tok));
    UtteranceScore u;
    u.id = id;
    u.edits = edit_counts<std::string>(hyps.back(), refs.back());
    u.wer = u.edits.ref_length ? static_cast<double>(u.edits.errors()) / u.edits.ref_length : 0.0;
    report.utterances.push_back(u);
    if (h.contains("length_before") && h.contains("length_after")) {
      ratio_sum += h.at("length_after").get<double>() / h.at("length_before").get<double>();
      ++ratio_count;
    }
  }
  if (hyp_by_id.size() != ref_records.size()) {
    throw DataError("hypothesis and reference files cover different utterances");
  }
  try {
    report.wer = corpus_wer(hyps, refs);
  } catch (const InvalidInput& e) {
    throw DataError(e.what());
  }
  report.bleu = corpus_bleu(hyps, refs);
  if (ratio_count > 0) report.compression_ratio = ratio_sum / static_cast<double>(ratio_count);
  if (!flags.metrics_log.empty()) {
    const std::vector<json> log = read_jsonl(flags.metrics_log);
    long long peak = 0;
    for (const json& r : log) {
      if (r.value("type", "") == "epoch") {
        peak = std::max(peak, r.value("peak_activation_elements", 0LL));
      }
    }
    report.peak_activation_elements = peak;
    if (!flags.plot_dir.empty()) write_plots(log, flags.plot_dir);
  } else if (!flags.plot_dir.empty()) {
    throw UsageError("--plot-dir needs --metrics-log");
  }
  const std::string text = to_json(report).dump(2) + "\n";
  if (flags.out.empty()) {
    out << text;
  } else {
    write_text(flags.out, text);
    out << "WER " << report.wer << "  BLEU " << report.bleu.score << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Compress dump

int run_compress_dump(const fs::path& checkpoint, const fs::path& manifest,
                      const fs::path& out_path, const std::string& policy_name, int limit,
                      std::ostream& out) {
  Checkpoint ck = read_checkpoint(checkpoint);
  const ModelConfig mc = ck.config;
  CompressionPolicy policy = mc.compression.value_or(CompressionPolicy{});
  if (!policy_name.empty()) {
    try {
      policy.kind = parse_pooling_kind(policy_name);
    } catch (const InvalidInput& e) {
      throw UsageError(e.what());
    }
  }
  const Seq2SeqModel<float> model(mc, std::move(ck.params));
  const Dataset data = read_manifest(manifest, mc.ctc_vocab, mc.target_vocab);
  std::ostringstream os;
  int n = 0;
  for (const Utterance& u : data) {
    if (limit > 0 && n++ >= limit) break;
    ag::Tape<float> tape(false);
    const EncoderOutput<float> enc = model.encode(tape, u.features, ForwardContext{});
    const MatF& lp = tape.value(enc.ctc_log_probs);
    const CompressResult<float> cr = compress(tape.value(enc.tap_states), lp,
                                              static_cast<int>(lp.rows()), policy,
                                              mc.ctc_vocab.blank_index);
    for (const SegmentSpan& s : cr.spans) {
      std::vector<double> w;
      for (int t = s.start; t < s.end; ++t) w.push_back(cr.weights[t]);
      os << json{{"id", u.id},
                 {"start", s.start},
                 {"end", s.end},
                 {"label", mc.ctc_vocab.labels.at(s.label)},
                 {"weights", w}}
                .dump()
         << '\n';
    }
  }
  if (out_path.empty()) {
    out << os.str();
  } else {
    write_text(out_path, os.str());
  }
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"CTC-compressed speech translation toolkit"};
  app.require_subcommand(1);

  std::string synth_config = "synth.json";
  fs::path synth_out = "data";
  std::optional<std::uint64_t> synth_seed;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("-c,--config", synth_config, "Generator config (JSON)");
  synth->add_option("-o,--out", synth_out, "Output directory");
  synth->add_option("--seed", synth_seed, "Master seed, overrides the config");

  TrainFlags tf;
  CLI::App* train = app.add_subcommand("train", "Train a model and write checkpoints");
  train->add_option("-c,--config", tf.config, "Training config (JSON)");
  train->add_option("-o,--out", tf.out_dir, "Run directory");
  train->add_option("--data", tf.data_dir, "Dataset directory, overrides the config");
  train->add_option("--seed", tf.seed, "Seed for initialization and data order");
  train->add_option("--max-epochs", tf.max_epochs, "Epoch limit");
  train->add_option("--max-updates", tf.max_updates, "Update limit");
  train->add_flag("--deterministic", tf.deterministic, "Single-threaded, fixed-order execution");
  train->add_flag("--log-steps", tf.log_steps, "Log every update to the metrics file");
  train->add_option("--resume", tf.resume, "Continue from a saved state.bin");
  train->add_option("--format", tf.format, "Checkpoint format: binary or json");

  fs::path dec_ckpt;
  fs::path dec_manifest;
  fs::path dec_out = "hyps.jsonl";
  DecodeOptions dec_opts;
  CLI::App* decode = app.add_subcommand("decode", "Translate a manifest with a checkpoint");
  decode->add_option("--checkpoint", dec_ckpt, "Checkpoint file")->required();
  decode->add_option("--manifest", dec_manifest, "Manifest (JSON Lines)")->required();
  decode->add_option("-o,--out", dec_out, "Hypotheses output (JSON Lines)");
  decode->add_option("--beam", dec_opts.beam_size, "Beam size");
  decode->add_option("--max-length", dec_opts.max_length, "Maximum output length");
  decode->add_option("--length-penalty", dec_opts.length_penalty, "Length normalization power");

  EvalFlags ef;
  CLI::App* eval = app.add_subcommand("eval", "Score hypotheses against references");
  eval->add_option("--hyps", ef.hyps, "Hypotheses (JSON Lines)")->required();
  eval->add_option("--refs", ef.refs, "References (JSON Lines)")->required();
  eval->add_option("-o,--out", ef.out, "Report output (JSON); stdout when omitted");
  eval->add_option("--metrics-log", ef.metrics_log, "Training metrics log for curves and peaks");
  eval->add_option("--plot-dir", ef.plot_dir, "Directory for CSV and SVG curves");
  eval->add_option("--tokenize", ef.tokenize, "13a or none");

  fs::path cd_ckpt;
  fs::path cd_manifest;
  fs::path cd_out;
  std::string cd_policy;
  int cd_limit = 0;
  CLI::App* dump = app.add_subcommand("compress-dump", "Print compression spans and weights");
  dump->add_option("--checkpoint", cd_ckpt, "Checkpoint file")->required();
  dump->add_option("--manifest", cd_manifest, "Manifest (JSON Lines)")->required();
  dump->add_option("-o,--out", cd_out, "Output (JSON Lines); stdout when omitted");
  dump->add_option("--policy", cd_policy, "average, weighted or softmax");
  dump->add_option("--limit", cd_limit, "Number of utterances, 0 for all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*synth) return run_synth(synth_config, synth_out, synth_seed, out);
    if (*train) return run_train(tf, out, err);
    if (*decode) {
      if (dec_opts.beam_size < 1 || dec_opts.max_length < 1) {
        throw UsageError("--beam and --max-length must be positive");
      }
      return run_decode(dec_ckpt, dec_manifest, dec_out, dec_opts, out);
    }
    if (*eval) return run_eval(ef, out);
    if (*dump) return run_compress_dump(cd_ckpt, cd_manifest, cd_out, cd_policy, cd_limit, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace ctcc
