#include "commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "dslu/codec.hpp"
#include "dslu/config.hpp"
#include "dslu/eval.hpp"
#include "dslu/fixtures.hpp"
#include "dslu/train.hpp"

namespace dslu::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using T = RunConfig::Type;

// Bad flags, unknown keys, missing prerequisites.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void declare_global(RunConfig& c) {
  c.declare("seed", T::kInt, "1", "root seed; every random stream derives from it");
  c.declare("out", T::kString, "", "output directory (required)");
  c.declare("workers", T::kInt, "1", "inference worker threads");
}

void declare_gen(RunConfig& c) {
  c.declare("intents", T::kInt, "31", "number of intents");
  c.declare("templates", T::kInt, "6", "phrasings per intent (a third held out)");
  c.declare("late_fraction", T::kDouble, "0.4", "fraction of phrasings with late keywords");
  c.declare("feat_dim", T::kInt, "16", "acoustic feature dimension");
  c.declare("train", T::kInt, "2400", "training utterances");
  c.declare("test_each", T::kInt, "300", "utterances per test split");
  c.declare("speakers", T::kInt, "48", "speakers in total");
  c.declare("heldout_speakers", T::kInt, "8", "speakers reserved for test_unseen_speaker");
  c.declare("extra_text", T::kInt, "4000", "extra unlabeled sentences beyond the phrasings");
  c.declare("noise", T::kDouble, "0.5", "feature noise level");
  c.declare("frames_per_char", T::kDouble, "6.0", "frames per character at rate 1");
}

void declare_model(RunConfig& c) {
  const ModelConfig m;
  c.declare("model_dim", T::kInt, std::to_string(m.model_dim), "model width d");
  c.declare("heads", T::kInt, std::to_string(m.heads), "attention heads");
  c.declare("ff_dim", T::kInt, std::to_string(m.ff_dim), "feed-forward width");
  c.declare("subsample", T::kInt, std::to_string(m.subsample), "frame stacking factor");
  c.declare("acoustic_layers", T::kInt, std::to_string(m.acoustic_layers), "acoustic encoder layers");
  c.declare("decoder_layers", T::kInt, std::to_string(m.decoder_layers), "layers per decoder");
  c.declare("semantic_dim", T::kInt, std::to_string(m.semantic_dim), "semantic encoder width o");
  c.declare("semantic_heads", T::kInt, std::to_string(m.semantic_heads), "semantic encoder heads");
  c.declare("semantic_layers", T::kInt, std::to_string(m.semantic_layers), "semantic encoder layers");
  c.declare("deliberation_layers", T::kInt, std::to_string(m.deliberation_layers),
            "deliberation encoder layers");
}

void declare_train(RunConfig& c, Stage stage) {
  const TrainConfig d;
  c.declare("corpus", T::kString, "", "corpus directory (required)");
  c.declare("checkpoint", T::kString, "",
            stage == Stage::kStage2 ? "stage-1 checkpoint (required)"
                                    : "checkpoint to continue from (optional)");
  const char* epochs = stage == Stage::kPretrainLm ? "6" : stage == Stage::kStage1 ? "15" : "10";
  c.declare("epochs", T::kInt, epochs, "training epochs");
  c.declare("batch", T::kInt, stage == Stage::kPretrainLm ? "32" : "16", "batch size");
  c.declare("lr", T::kDouble, "0.002", "peak learning rate");
  c.declare("warmup", T::kInt, "200", "warmup steps");
  c.declare("label_smoothing", T::kDouble, "0.1", "label smoothing");
  c.declare("dropout", T::kDouble, "0.1", "dropout rate");
  c.declare("clip_norm", T::kDouble, "5.0", "global gradient norm clip");
  c.declare("dev_size", T::kInt, std::to_string(d.dev_size), "held-back dev items");
  if (stage == Stage::kPretrainLm) {
    c.declare("mask_prob", T::kDouble, "0.15", "masked-token probability");
  }
  if (stage == Stage::kStage1) {
    c.declare("time_masks", T::kInt, std::to_string(d.spec.n_time_masks), "time mask bands");
    c.declare("time_width", T::kInt, std::to_string(d.spec.max_time_width), "max time band width");
    c.declare("feat_masks", T::kInt, std::to_string(d.spec.n_feat_masks), "feature mask bands");
    c.declare("feat_width", T::kInt, std::to_string(d.spec.max_feat_width), "max feature band width");
  }
  if (stage == Stage::kStage2) {
    c.declare("joint_update", T::kBool, "false", "also update the acoustic encoder");
    c.declare("acoustic_dropout", T::kDouble, std::to_string(d.acoustic_dropout),
              "dropout on cached acoustic embeddings");
    c.declare("hypothesis_beam", T::kInt, std::to_string(d.hypothesis_beam),
              "beam for pass-1 hypotheses");
    c.declare("hypothesis_nbest", T::kInt, std::to_string(d.hypothesis_nbest),
              "pass-1 hypotheses sampled per utterance");
  }
  if (stage != Stage::kStage2) declare_model(c);
}

void declare_eval(RunConfig& c) {
  c.declare("corpus", T::kString, "", "corpus directory (required)");
  c.declare("checkpoint", T::kString, "", "stage-2 checkpoint (required)");
  c.declare("split", T::kString, "test_unseen_phrasing", "split to evaluate");
  c.declare("beam", T::kInt, "4", "beam width");
  c.declare("max_len", T::kInt, "24", "maximum decoded length");
  c.declare("prefix", T::kDouble, "0", "pass-1 prefix seconds (0 = full audio)");
  c.declare("threshold", T::kDouble, "0.8", "routing confidence threshold");
  c.declare("confidence", T::kString, "intent", "confidence mode: intent | sequence");
  c.declare("route", T::kBool, "false", "routing mode (the default when --both-passes is off)");
  c.declare("both_passes", T::kBool, "false", "run both passes for every utterance");
  c.declare("prefix_sweep", T::kString, "", "comma-separated prefixes for a pass-1 curve");
}

void declare_analyze(RunConfig& c) {
  c.declare("predictions", T::kString, "", "predictions.jsonl from eval");
  c.declare("threshold", T::kDouble, "0.8", "confidence threshold for bucket tables");
  c.declare("wer_edges", T::kString, "0,5,15,30,100", "WER bucket edges in percent");
  c.declare("fixture", T::kString, "", "reference confidence table: fsc-utt | fsc-spk | slurp");
  c.declare("prefix_fixture", T::kBool, "false", "render the reference prefix curve");
  c.declare("heatmap_utt", T::kString, "", "utterance id for deliberation heatmaps");
  c.declare("corpus", T::kString, "", "corpus directory (heatmaps)");
  c.declare("checkpoint", T::kString, "", "stage-2 checkpoint (heatmaps)");
}

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

// Every declared key becomes a flag; flags override the config file.
struct Binding {
  std::map<std::string, std::string> values;
  std::map<std::string, bool> bools;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
};

void bind(CLI::App* sub, const RunConfig& c, Binding& b) {
  sub->add_option("--config", b.config_path, "flat key = value config file");
  for (const auto& [key, e] : c.entries()) {
    if (e.type == T::kBool) {
      b.bools[key] = false;
      b.options[key] = sub->add_flag(flag_name(key), b.bools[key], e.help);
    } else {
      b.values[key];
      b.options[key] = sub->add_option(flag_name(key), b.values[key], e.help);
    }
  }
}

void resolve(RunConfig& c, const Binding& b) {
  if (!b.config_path.empty()) c.load_file(b.config_path);
  for (const auto& [key, opt] : b.options) {
    if (opt->count() == 0) continue;
    if (b.bools.count(key))
      c.set(key, b.bools.at(key) ? "true" : "false", "flag");
    else
      c.set(key, b.values.at(key), "flag");
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

fs::path prepare_out(const RunConfig& c) {
  const std::string out = c.get_string("out");
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
  write_file(fs::path(out) / "config.resolved", c.resolved_text());
  return out;
}

std::string require(const RunConfig& c, const std::string& key) {
  const std::string v = c.get_string(key);
  if (v.empty()) throw UsageError(flag_name(key) + " is required");
  return v;
}

// Content hashes of every file under `dir` except the manifest itself.
void write_manifest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& f : files) {
    const std::string data = read_file(f);
    list.push_back({{"path", fs::relative(f, dir).generic_string()},
                    {"bytes", data.size()},
                    {"sha256", codec::sha256_hex(data)}});
  }
  write_file(dir / "manifest.json", json{{"files", list}}.dump(2) + "\n");
}

std::uint64_t root_seed(const RunConfig& c) {
  return static_cast<std::uint64_t>(c.get_int("seed"));
}

Corpus load_corpus(const RunConfig& c) {
  const fs::path dir = require(c, "corpus");
  if (!fs::exists(dir / "corpus.jsonl"))
    throw UsageError("corpus directory " + dir.string() + " has no corpus.jsonl; run gen-corpus");
  return read_corpus(dir);
}

int cmd_gen_corpus(const RunConfig& c) {
  const fs::path out = prepare_out(c);
  GrammarOptions go;
  go.n_intents = static_cast<int>(c.get_int("intents"));
  go.n_templates_per_intent = static_cast<int>(c.get_int("templates"));
  go.late_fraction = c.get_double("late_fraction");
  go.feat_dim = static_cast<int>(c.get_int("feat_dim"));
  SplitRequest req;
  req.n_train = static_cast<int>(c.get_int("train"));
  req.n_test_each = static_cast<int>(c.get_int("test_each"));
  req.n_speakers = static_cast<int>(c.get_int("speakers"));
  req.n_heldout_speakers = static_cast<int>(c.get_int("heldout_speakers"));
  req.n_extra_text = static_cast<int>(c.get_int("extra_text"));
  req.noise_level = c.get_double("noise");
  req.synthesis.frames_per_char = c.get_double("frames_per_char");
  IntentGrammar g;
  Corpus corpus;
  try {
    g = build_grammar(derive_seed(root_seed(c), "grammar"), go);
    corpus = make_splits(g, req, derive_seed(root_seed(c), "corpus"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  write_corpus(corpus, out);
  write_manifest(out);
  std::cerr << "wrote " << corpus.utterances.size() << " utterances, " << g.intents.size()
            << " intents to " << out.string() << "\n";
  return kOk;
}

ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  m.model_dim = static_cast<std::size_t>(c.get_int("model_dim"));
  m.heads = static_cast<std::size_t>(c.get_int("heads"));
  m.ff_dim = static_cast<std::size_t>(c.get_int("ff_dim"));
  m.subsample = static_cast<std::size_t>(c.get_int("subsample"));
  m.acoustic_layers = static_cast<std::size_t>(c.get_int("acoustic_layers"));
  m.decoder_layers = static_cast<std::size_t>(c.get_int("decoder_layers"));
  m.semantic_dim = static_cast<std::size_t>(c.get_int("semantic_dim"));
  m.semantic_heads = static_cast<std::size_t>(c.get_int("semantic_heads"));
  m.semantic_layers = static_cast<std::size_t>(c.get_int("semantic_layers"));
  m.deliberation_layers = static_cast<std::size_t>(c.get_int("deliberation_layers"));
  m.init_seed = derive_seed(root_seed(c), "init");
  return m;
}

TrainConfig train_config(const RunConfig& c, Stage stage) {
  TrainConfig t;
  t.stage = stage;
  t.seed = root_seed(c);
  t.epochs = static_cast<int>(c.get_int("epochs"));
  t.batch_size = static_cast<int>(c.get_int("batch"));
  t.adam.peak_lr = c.get_double("lr");
  t.adam.warmup_steps = static_cast<std::uint64_t>(c.get_int("warmup"));
  t.label_smoothing = c.get_double("label_smoothing");
  t.dropout = c.get_double("dropout");
  t.clip_norm = c.get_double("clip_norm");
  t.dev_size = static_cast<int>(c.get_int("dev_size"));
  if (stage == Stage::kPretrainLm) t.mask_prob = c.get_double("mask_prob");
  if (stage == Stage::kStage1) {
    t.spec.n_time_masks = static_cast<int>(c.get_int("time_masks"));
    t.spec.max_time_width = static_cast<int>(c.get_int("time_width"));
    t.spec.n_feat_masks = static_cast<int>(c.get_int("feat_masks"));
    t.spec.max_feat_width = static_cast<int>(c.get_int("feat_width"));
  }
  if (stage == Stage::kStage2) {
    t.joint_update = c.get_bool("joint_update");
    t.acoustic_dropout = c.get_double("acoustic_dropout");
    t.hypothesis_beam = static_cast<std::size_t>(c.get_int("hypothesis_beam"));
    t.hypothesis_nbest = static_cast<std::size_t>(c.get_int("hypothesis_nbest"));
  }
  t.on_epoch = [stage](const EpochLog& e) {
    std::fprintf(stderr, "%s epoch %d  loss %.4f  dev %.2f  %.1fs\n", stage_name(stage), e.epoch,
                 e.mean_loss, e.dev_accuracy, e.wall_seconds);
  };
  return t;
}

int cmd_train(const RunConfig& c, Stage stage) {
  const std::string ckpt_in = c.get_string("checkpoint");
  if (stage == Stage::kStage2 && ckpt_in.empty())
    throw UsageError("train-stage2 needs --checkpoint from train-stage1");
  if (!ckpt_in.empty() && !fs::exists(ckpt_in))
    throw UsageError("checkpoint " + ckpt_in + " does not exist" +
                     (stage == Stage::kStage2 ? " (train-stage2 needs a train-stage1 checkpoint)"
                                              : ""));
  const Corpus corpus = load_corpus(c);
  const fs::path out = prepare_out(c);
  TwoPassModel model;
  if (!ckpt_in.empty()) {
    model = load_checkpoint(ckpt_in).model;
    if (stage == Stage::kStage2 && !model.stage1_trained)
      throw UsageError("checkpoint " + ckpt_in + " has not been through train-stage1");
  } else {
    ModelConfig mc = model_config(c);
    mc.feat_dim = static_cast<std::size_t>(corpus.grammar.options.feat_dim);
    model = TwoPassModel::create(mc, Vocabulary::from_grammar(corpus.grammar));
  }
  const TrainConfig tc = train_config(c, stage);
  TrainLog log;
  try {
    switch (stage) {
      case Stage::kPretrainLm:
        log = pretrain_semantic_encoder(model, corpus.splits.unlabeled_text, tc);
        break;
      case Stage::kStage1: log = train_stage1(model, corpus, tc); break;
      case Stage::kStage2: log = train_stage2(model, corpus, tc); break;
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  for (const auto& w : log.warnings) std::cerr << "warning: " << w << "\n";
  save_checkpoint(model, nullptr, {}, out / "model.ckpt");
  write_file(out / "trainlog.json", log.to_json() + "\n");
  write_manifest(out);
  return kOk;
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::istringstream in(s);
  for (std::string cell; std::getline(in, cell, ',');) {
    if (cell == "full") {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw UsageError(what + ": bad number '" + cell + "'");
    }
  }
  return out;
}

int cmd_eval(const RunConfig& c) {
  Split split;
  try {
    split = parse_split(c.get_string("split"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::string ckpt = require(c, "checkpoint");
  if (!fs::exists(ckpt)) throw UsageError("checkpoint " + ckpt + " does not exist");
  DecodeOptions opt;
  try {
    opt.confidence = parse_confidence_mode(c.get_string("confidence"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  opt.beam_width = static_cast<std::size_t>(c.get_int("beam"));
  opt.max_len = static_cast<std::size_t>(c.get_int("max_len"));
  const double threshold = c.get_double("threshold");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("--threshold must be in [0, 1]");
  const double prefix_s = c.get_double("prefix");
  if (prefix_s < 0.0) throw UsageError("--prefix must be >= 0");
  const std::optional<double> prefix =
      prefix_s > 0.0 ? std::optional<double>(prefix_s) : std::nullopt;
  const auto sweep = parse_list(c.get_string("prefix_sweep"), "--prefix-sweep");
  const int workers = static_cast<int>(c.get_int("workers"));
  if (workers < 1) throw UsageError("--workers must be >= 1");

  const Corpus corpus = load_corpus(c);
  const TwoPassModel model = load_checkpoint(ckpt).model;
  if (!model.stage2_trained)
    throw UsageError("checkpoint " + ckpt + " has not been through train-stage2");
  const fs::path out = prepare_out(c);
  const auto utts = corpus.split(split);
  if (utts.empty()) throw UsageError(std::string("split ") + split_name(split) + " is empty");

  std::vector<PredictionRecord> records;
  std::vector<LatencyRow> rows;
  json summary = {{"split", split_name(split)},
                  {"utterances", utts.size()},
                  {"threshold", threshold},
                  {"prefix_seconds", prefix ? json(*prefix) : json("full")},
                  {"confidence", confidence_mode_name(opt.confidence)},
                  {"beam", opt.beam_width}};
  if (c.get_bool("both_passes")) {
    const auto both = run_both_passes_all(model, utts, prefix, opt, workers);
    std::vector<int> p1, p2, gold;
    for (const auto& r : both) {
      records.push_back(to_record(r, corpus.grammar, model.vocab, threshold));
      const auto& p = records.back();
      rows.push_back({p.utt_id, p.t_pass1, p.t_pass2, p.t_total, p.t_pass1 + p.t_pass2_full,
                      p.audio_seconds});
      p1.push_back(r.pass1.intent);
      p2.push_back(r.pass2.intent);
      gold.push_back(r.intent_true);
    }
    const BucketTable table = bucket_by_confidence(records, threshold);
    write_file(out / "confidence_buckets.csv", table.to_csv());
    summary["first_pass_accuracy"] = intent_accuracy(p1, gold);
    summary["second_pass_accuracy"] = intent_accuracy(p2, gold);
    summary["routed_accuracy"] = routed_accuracy(table);
  } else {
    const auto routed = route_all(model, utts, threshold, prefix, opt, workers);
    std::vector<int> pred, gold;
    for (const auto& r : routed) {
      records.push_back(to_record(r, corpus.grammar, model.vocab));
      rows.push_back({r.utt_id, r.t_pass1, r.t_pass2, r.t_total, 0.0, r.audio_seconds});
      pred.push_back(r.intent);
      gold.push_back(r.intent_true);
    }
    summary["routed_accuracy"] = intent_accuracy(pred, gold);
  }
  std::vector<std::string> pred_labels, gold_labels;
  std::size_t n_second = 0;
  for (const auto& r : records) n_second += r.source == "second_pass";
  summary["second_pass_fraction"] =
      static_cast<double>(n_second) / static_cast<double>(records.size());
  write_predictions(records, out / "predictions.jsonl");
  const LatencyReport lat =
      measure_latency(rows, prefix.value_or(std::numeric_limits<double>::infinity()));
  write_file(out / "latency.json", lat.to_json() + "\n");
  if (!sweep.empty()) {
    PrefixCurve curve;
    try {
      curve = prefix_sweep(model, utts, sweep, opt, workers);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    write_file(out / "prefix_curve.csv", curve.to_csv());
  }
  write_file(out / "summary.json", summary.dump(2) + "\n");
  write_manifest(out);
  std::cerr << summary.dump() << "\n";
  return kOk;
}

json table_json(const BucketTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"bucket", r.label},
                    {"support", r.support},
                    {"first_pass_accuracy", r.first_accuracy},
                    {"second_pass_accuracy", r.second_accuracy}});
  return rows;
}

int cmd_analyze(const RunConfig& c) {
  const fs::path out = prepare_out(c);
  json summary = json::object();
  const double threshold = c.get_double("threshold");
  const std::string fixture = c.get_string("fixture");
  if (!fixture.empty()) {
    BucketTable t;
    try {
      t = fixtures::confidence_table(fixture);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    write_file(out / ("fixture_" + fixture + ".csv"), t.to_csv());
    summary["fixture"] = {{"name", fixture},
                          {"table", table_json(t)},
                          {"routed_accuracy", routed_accuracy(t)}};
  }
  if (c.get_bool("prefix_fixture")) {
    const PrefixCurve curve = PrefixCurve::from_csv(fixtures::prefix_curve_csv());
    write_file(out / "prefix_curve_fixture.csv", curve.to_csv());
  }
  const std::string pred_path = c.get_string("predictions");
  if (!pred_path.empty()) {
    const auto records = read_predictions(pred_path);
    if (records.empty()) throw std::runtime_error(pred_path + " holds no predictions");
    std::vector<std::string> pred, gold;
    for (const auto& r : records) {
      pred.push_back(r.intent_pred);
      gold.push_back(r.intent_true);
    }
    summary["predictions"] = {{"utterances", records.size()},
                              {"accuracy", intent_accuracy(pred, gold)}};
    const bool both = std::all_of(records.begin(), records.end(),
                                  [](const PredictionRecord& r) { return r.both_passes; });
    if (both) {
      std::vector<double> edges = parse_list(c.get_string("wer_edges"), "--wer-edges");
      BucketTable wer_table, conf_table;
      try {
        wer_table = bucket_by_wer(records, edges);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      conf_table = bucket_by_confidence(records, threshold);
      write_file(out / "wer_buckets.csv", wer_table.to_csv());
      write_file(out / "confidence_buckets.csv", conf_table.to_csv());
      summary["wer_buckets"] = table_json(wer_table);
      summary["low_wer_fraction"] = wer_table.low_wer_fraction.value_or(0.0);
      summary["confidence_buckets"] = table_json(conf_table);
      summary["routed_accuracy"] = routed_accuracy(conf_table);
    }
  }
  const std::string heat = c.get_string("heatmap_utt");
  if (!heat.empty()) {
    const Corpus corpus = load_corpus(c);
    const TwoPassModel model = load_checkpoint(require(c, "checkpoint")).model;
    const Utterance* utt = nullptr;
    try {
      utt = &corpus.get(heat);
    } catch (const std::out_of_range& e) {
      throw UsageError(e.what());
    }
    const auto p1 = infer_first_pass(model, *utt, std::nullopt, {});
    const auto maps = export_heatmaps(model, *utt, p1.transcript);
    write_heatmaps(maps, heat, out / "heatmaps");
    summary["heatmaps"] = {{"utt_id", heat},
                           {"maps", maps.size()},
                           {"transcript", model.vocab.decode(p1.transcript)}};
  }
  if (summary.empty())
    throw UsageError("analyze needs --predictions, --fixture, --prefix-fixture or --heatmap-utt");
  write_file(out / "summary.json", summary.dump(2) + "\n");
  write_manifest(out);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"two-pass spoken language understanding engine"};
  app.require_subcommand(1);
  struct Sub {
    CLI::App* app;
    RunConfig config;
    Binding binding;
  };
  std::map<std::string, Sub> subs;
  auto add = [&](const std::string& name, const std::string& help, auto declare) {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, help);
    declare_global(s.config);
    declare(s.config);
    bind(s.app, s.config, s.binding);
  };
  add("gen-corpus", "generate a synthetic corpus", declare_gen);
  add("pretrain-lm", "masked-token pretraining of the semantic encoder",
      [](RunConfig& c) { declare_train(c, Stage::kPretrainLm); });
  add("train-stage1", "train the acoustic encoder and pass-1 decoder",
      [](RunConfig& c) { declare_train(c, Stage::kStage1); });
  add("train-stage2", "train deliberation and pass-2 decoder on pass-1 transcripts",
      [](RunConfig& c) { declare_train(c, Stage::kStage2); });
  add("eval", "evaluate a split", declare_eval);
  add("analyze", "bucket tables, heatmaps and routing summaries", declare_analyze);

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  for (auto& [name, s] : subs) {
    if (!s.app->parsed()) continue;
    try {
      resolve(s.config, s.binding);
      if (name == "gen-corpus") return cmd_gen_corpus(s.config);
      if (name == "pretrain-lm") return cmd_train(s.config, Stage::kPretrainLm);
      if (name == "train-stage1") return cmd_train(s.config, Stage::kStage1);
      if (name == "train-stage2") return cmd_train(s.config, Stage::kStage2);
      if (name == "eval") return cmd_eval(s.config);
      if (name == "analyze") return cmd_analyze(s.config);
    } catch (const UsageError& e) {
      std::cerr << "error: " << e.what() << "\n\n" << s.app->help();
      return kUsage;
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kUsage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kRuntime;
    }
  }
  return kUsage;
}

}  // namespace dslu::cli
