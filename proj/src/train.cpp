#include "dslu/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace dslu {
namespace {

using Clock = std::chrono::steady_clock;

std::vector<Tensor> trainable(const TwoPassModel& model) {
  std::vector<Tensor> out;
  for (const auto& p : model.parameters())
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  return out;
}

void set_dropout(nn::Encoder& e, double rate) {
  e.config.dropout = rate;
}
void set_dropout(nn::Decoder& d, double rate) { d.config.dropout = rate; }

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// One optimization pass per epoch over `n` items. Each item's loss is
// backpropagated on its own tape; gradients accumulate over a batch.
template <class LossFn, class DevFn>
void run_epochs(TwoPassModel& model, std::size_t n, const TrainConfig& config, LossFn loss_fn,
                DevFn dev_fn, TrainLog& log) {
  if (n == 0) throw std::invalid_argument("training set is empty");
  std::vector<Tensor> params = trainable(model);
  OptimizerState state = make_optimizer_state(params, config.adam);
  Rng order_rng(derive_seed(config.seed, std::string("order/") + stage_name(config.stage)));
  Rng dropout_rng(derive_seed(config.seed, std::string("dropout/") + stage_name(config.stage)));
  std::vector<std::size_t> order(n);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, config.batch_size));
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, order_rng);
    double total = 0.0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::size_t e = std::min(n, b + batch);
      for (auto& p : params) p.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn(order[i], InferenceMode{true, &dropout_rng});
        const double v = loss.item();
        if (!std::isfinite(v)) throw std::runtime_error("non-finite training loss");
        total += v;
        tape.backward(ops::scale(loss, 1.0 / static_cast<double>(e - b)));
      }
      clip_grad_norm(params, config.clip_norm);
      optimizer_step(params, state);
    }
    EpochLog el;
    el.epoch = epoch;
    el.mean_loss = total / static_cast<double>(n);
    el.dev_accuracy = dev_fn();
    el.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    log.epochs.push_back(el);
    if (config.on_epoch) config.on_epoch(el);
  }
}

double argmax_intent_accuracy(const TwoPassModel& model, const std::vector<Tensor>& logits_rows,
                              const std::vector<const Utterance*>& utts) {
  if (utts.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const Tensor& l = logits_rows[i];
    int best = model.vocab.intent_begin();
    for (int t = model.vocab.intent_begin(); t < model.vocab.intent_end(); ++t)
      if (l(0, static_cast<std::size_t>(t)) > l(0, static_cast<std::size_t>(best))) best = t;
    if (model.vocab.intent_of(best) == utts[i]->intent) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(utts.size());
}

std::vector<int> teacher_inputs(const std::vector<int>& target) {
  return {target.begin(), target.end() - 1};
}
std::vector<int> teacher_outputs(const std::vector<int>& target) {
  return {target.begin() + 1, target.end()};
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrainLm: return "pretrain_lm";
    case Stage::kStage1: return "stage1";
    case Stage::kStage2: return "stage2";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  if (name == "pretrain_lm") return Stage::kPretrainLm;
  if (name == "stage1") return Stage::kStage1;
  if (name == "stage2") return Stage::kStage2;
  throw std::invalid_argument("unknown stage '" + name + "'");
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw std::invalid_argument("label_smoothing must be in [0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (!(acoustic_dropout >= 0.0 && acoustic_dropout < 1.0))
    throw std::invalid_argument("acoustic_dropout must be in [0, 1)");
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("epochs >= 0 and batch >= 1");
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw std::invalid_argument("mask_prob in (0, 1)");
  if (spec.n_time_masks < 0 || spec.n_feat_masks < 0 || spec.max_time_width < 0 ||
      spec.max_feat_width < 0)
    throw std::invalid_argument("spec mask counts and widths must be >= 0");
  if (spec.max_feat_width > static_cast<int>(model.feat_dim))
    throw std::invalid_argument("max_feat_width exceeds feature dimension");
  if (hypothesis_beam < 1) throw std::invalid_argument("hypothesis_beam must be >= 1");
}

std::string TrainLog::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs)
    ep.push_back({{"epoch", e.epoch},
                  {"mean_loss", e.mean_loss},
                  {"dev_accuracy", e.dev_accuracy},
                  {"wall_seconds", e.wall_seconds}});
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(checksum));
  return nlohmann::json{{"stage", stage},
                        {"train_items", train_items},
                        {"dev_items", dev_items},
                        {"epochs", ep},
                        {"checksum", hex},
                        {"warnings", warnings}}
      .dump(2);
}

std::vector<double> apply_spec_mask(const std::vector<double>& frames, int n_frames, int feat_dim,
                                    const SpecMaskConfig& config, std::uint64_t seed) {
  std::vector<double> out = frames;
  Rng rng(seed);
  auto band = [&](int extent, int max_width) {
    const int w = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(max_width, extent)) + 1));
    const int s = static_cast<int>(rng.below(static_cast<std::uint64_t>(extent - w) + 1));
    return std::pair{s, w};
  };
  for (int m = 0; m < config.n_time_masks; ++m) {
    auto [s, w] = band(n_frames, config.max_time_width);
    for (int t = s; t < s + w; ++t)
      std::fill_n(out.begin() + static_cast<long>(t) * feat_dim, feat_dim, 0.0);
  }
  for (int m = 0; m < config.n_feat_masks; ++m) {
    auto [s, w] = band(feat_dim, config.max_feat_width);
    for (int t = 0; t < n_frames; ++t)
      for (int f = s; f < s + w; ++f) out[static_cast<std::size_t>(t * feat_dim + f)] = 0.0;
  }
  return out;
}

double expected_mask_fraction(int n_frames, int feat_dim, const SpecMaskConfig& config) {
  // Mean over positions of P(position untouched by all bands along an axis).
  auto untouched = [](int extent, int max_width, int n_masks) {
    const int wmax = std::min(max_width, extent);
    double acc = 0.0;
    for (int r = 0; r < extent; ++r) {
      double q = 0.0;
      for (int w = 0; w <= wmax; ++w) {
        const int starts = extent - w + 1;
        const int lo = std::max(0, r - w + 1), hi = std::min(r, extent - w);
        const int covering = w == 0 ? 0 : std::max(0, hi - lo + 1);
        q += static_cast<double>(covering) / starts;
      }
      q /= (wmax + 1);
      acc += std::pow(1.0 - q, n_masks);
    }
    return acc / extent;
  };
  return 1.0 - untouched(n_frames, config.max_time_width, config.n_time_masks) *
                   untouched(feat_dim, config.max_feat_width, config.n_feat_masks);
}

TrainDevSplit train_dev_split(const Corpus& corpus, int dev_size) {
  TrainDevSplit s;
  auto train = corpus.split(Split::kTrain);
  const std::size_t dev = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, dev_size)),
                                                train.size() / 2);
  s.train.assign(train.begin(), train.end() - static_cast<long>(dev));
  s.dev.assign(train.end() - static_cast<long>(dev), train.end());
  return s;
}

MaskedSentence mask_sentence(const Vocabulary& vocab, const Words& sentence, double mask_prob,
                             Rng& rng) {
  MaskedSentence m;
  m.input = vocab.encode(sentence);
  m.targets.assign(m.input.size(), -1);
  bool any = false;
  for (std::size_t i = 0; i < m.input.size(); ++i)
    if (rng.uniform() < mask_prob) {
      m.targets[i] = m.input[i] - vocab.word_begin();
      m.input[i] = Vocabulary::kMask;
      any = true;
    }
  if (!any && !m.input.empty()) {
    const std::size_t i = rng.below(m.input.size());
    m.targets[i] = m.input[i] - vocab.word_begin();
    m.input[i] = Vocabulary::kMask;
  }
  return m;
}

double masked_token_loss(const TwoPassModel& model, const std::vector<Words>& sentences,
                         double mask_prob, std::uint64_t seed) {
  if (sentences.empty()) throw std::invalid_argument("masked_token_loss: no sentences");
  Rng rng(seed);
  double total = 0.0;
  for (const auto& s : sentences) {
    const auto m = mask_sentence(model.vocab, s, mask_prob, rng);
    const auto logits = masked_token_logits(model, encode_semantic(model, m.input));
    total += ops::cross_entropy_label_smoothed(logits, m.targets, 0.0).item();
  }
  return total / static_cast<double>(sentences.size());
}

TrainLog pretrain_semantic_encoder(TwoPassModel& model, const std::vector<Words>& text,
                                   const TrainConfig& config) {
  if (config.stage != Stage::kPretrainLm)
    throw std::invalid_argument("pretrain_semantic_encoder needs stage pretrain_lm");
  if (text.empty()) throw std::invalid_argument("pretrain_semantic_encoder: empty text pool");
  config.validate(model.config);
  TrainLog log;
  log.stage = stage_name(config.stage);
  // A fixed slice of the pool tracks held-out masked-token loss.
  std::vector<Words> train = text, dev;
  Rng split_rng(derive_seed(config.seed, "pretrain/split"));
  shuffle(train, split_rng);
  const std::size_t n_dev = std::min<std::size_t>(static_cast<std::size_t>(config.dev_size),
                                                  train.size() / 5);
  dev.assign(train.end() - static_cast<long>(n_dev), train.end());
  train.resize(train.size() - n_dev);
  log.train_items = train.size();
  log.dev_items = dev.size();

  model.set_trainable({ParamGroup::kSemantic});
  set_dropout(model.semantic, config.dropout);
  Rng mask_rng(derive_seed(config.seed, "masking"));
  run_epochs(
      model, train.size(), config,
      [&](std::size_t i, const InferenceMode& mode) {
        const auto m = mask_sentence(model.vocab, train[i], config.mask_prob, mask_rng);
        const auto logits = masked_token_logits(model, encode_semantic(model, m.input, mode));
        return ops::cross_entropy_label_smoothed(logits, m.targets, config.label_smoothing);
      },
      [&] {
        // Dev metric: masked-token top-1 accuracy.
        if (dev.empty()) return 0.0;
        Rng r(derive_seed(config.seed, "pretrain/dev"));
        std::size_t hit = 0, total = 0;
        for (const auto& s : dev) {
          const auto m = mask_sentence(model.vocab, s, config.mask_prob, r);
          const auto logits = masked_token_logits(model, encode_semantic(model, m.input));
          for (std::size_t p = 0; p < m.targets.size(); ++p) {
            if (m.targets[p] < 0) continue;
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols(); ++c)
              if (logits(p, c) > logits(p, best)) best = c;
            hit += static_cast<int>(best) == m.targets[p];
            ++total;
          }
        }
        return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
      },
      log);
  model.set_trainable({});
  model.semantic_pretrained = true;
  log.checksum = parameter_checksum(model);
  return log;
}

Tensor stage1_loss(const TwoPassModel& model, const Utterance& utt, const TrainConfig& config,
                   const InferenceMode& mode) {
  Tensor frames = frames_tensor(utt);
  if (mode.train && mode.rng != nullptr)
    frames = Tensor::from(frames.shape(), apply_spec_mask(utt.frames, utt.n_frames, utt.feat_dim,
                                                          config.spec, mode.rng->next_u64()));
  const auto target = model.vocab.target_sequence(utt.intent, utt.transcript);
  const auto c_aco = encode_acoustic(model, frames, std::nullopt, mode);
  const auto logits = first_pass_logits(model, c_aco, teacher_inputs(target), mode);
  return ops::cross_entropy_label_smoothed(logits, teacher_outputs(target),
                                           config.label_smoothing);
}

namespace {

void check_corpus(const TwoPassModel& model, const Corpus& corpus) {
  if (static_cast<int>(corpus.grammar.intents.size()) != model.vocab.n_intents())
    throw std::invalid_argument("corpus has " + std::to_string(corpus.grammar.intents.size()) +
                                " intents, model vocabulary " +
                                std::to_string(model.vocab.n_intents()));
  for (const auto& w : corpus.grammar.lexicon) model.vocab.word_id(w);
  if (corpus.grammar.options.feat_dim != static_cast<int>(model.config.feat_dim))
    throw std::invalid_argument("corpus feature dimension differs from the model's");
}

}  // namespace

double quick_intent_accuracy(const TwoPassModel& model, const std::vector<const Utterance*>& utts,
                             int pass, const std::vector<std::vector<int>>* transcripts) {
  const std::vector<int> bos{Vocabulary::kBos};
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const auto c_aco = encode_acoustic(model, frames_tensor(*utts[i]));
    if (pass == 1) {
      rows.push_back(first_pass_logits(model, c_aco, bos));
    } else {
      if (transcripts == nullptr) throw std::invalid_argument("pass 2 accuracy needs transcripts");
      const auto c_sem = encode_semantic(model, semantic_input(model.vocab, (*transcripts)[i]));
      rows.push_back(second_pass_logits(model, deliberate(model, c_aco, c_sem), bos));
    }
  }
  return argmax_intent_accuracy(model, rows, utts);
}

TrainLog train_stage1(TwoPassModel& model, const Corpus& corpus, const TrainConfig& config) {
  if (config.stage != Stage::kStage1) throw std::invalid_argument("train_stage1 needs stage1");
  config.validate(model.config);
  check_corpus(model, corpus);
  TrainLog log;
  log.stage = stage_name(config.stage);
  const auto split = train_dev_split(corpus, config.dev_size);
  log.train_items = split.train.size();
  log.dev_items = split.dev.size();
  model.set_trainable({ParamGroup::kAcoustic, ParamGroup::kFirstPass});
  set_dropout(model.acoustic, config.dropout);
  set_dropout(model.first_decoder, config.dropout);
  run_epochs(
      model, split.train.size(), config,
      [&](std::size_t i, const InferenceMode& mode) {
        return stage1_loss(model, *split.train[i], config, mode);
      },
      [&] { return quick_intent_accuracy(model, split.dev, 1); }, log);
  model.set_trainable({});
  model.stage1_trained = true;
  log.checksum = parameter_checksum(model);
  return log;
}

std::vector<std::vector<int>> first_pass_transcripts(const TwoPassModel& model,
                                                     const std::vector<const Utterance*>& utts,
                                                     std::size_t beam_width, int workers) {
  DecodeOptions opts;
  opts.beam_width = beam_width;
  return parallel_map<std::vector<int>>(utts.size(), workers, [&](std::size_t i) {
    return infer_first_pass(model, *utts[i], std::nullopt, opts).transcript;
  });
}

std::vector<std::vector<std::vector<int>>> first_pass_nbest(
    const TwoPassModel& model, const std::vector<const Utterance*>& utts, std::size_t beam_width,
    std::size_t n, int workers) {
  const OutputLayout layout = OutputLayout::of(model.vocab);
  return parallel_map<std::vector<std::vector<int>>>(utts.size(), workers, [&](std::size_t i) {
    const auto c_aco = encode_acoustic(model, frames_tensor(*utts[i]));
    const DecodeStep step = [&](std::span<const int> prefix) {
      const Tensor l = first_pass_logits(model, c_aco, prefix);
      const auto d = l.data();
      return std::vector<double>(d.end() - static_cast<long>(l.cols()), d.end());
    };
    std::vector<std::vector<int>> out;
    for (const auto& h : beam_search(step, layout, {std::max(beam_width, n), 24})) {
      auto t = h.transcript();
      if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(std::move(t));
      if (out.size() == n) break;
    }
    return out;
  });
}

Tensor stage2_loss(const TwoPassModel& model, const AcousticEmbedding& c_aco,
                   const std::vector<int>& pass1_transcript, const Utterance& utt,
                   const TrainConfig& config, const InferenceMode& mode) {
  AcousticEmbedding aco = c_aco;
  if (mode.train && config.acoustic_dropout > 0.0 && mode.rng != nullptr)
    aco.values = ops::dropout(aco.values, config.acoustic_dropout, true, *mode.rng);
  // The semantic encoder is frozen: evaluate it without dropout.
  const auto c_sem = encode_semantic(model, semantic_input(model.vocab, pass1_transcript));
  SemanticEmbedding sem{c_sem.raw, ops::matmul(c_sem.raw, model.projection)};
  const auto target = model.vocab.target_sequence(utt.intent, utt.transcript);
  const auto c_del = deliberate(model, aco, sem, mode);
  const auto logits = second_pass_logits(model, c_del, teacher_inputs(target), mode);
  return ops::cross_entropy_label_smoothed(logits, teacher_outputs(target),
                                           config.label_smoothing);
}

TrainLog train_stage2(TwoPassModel& model, const Corpus& corpus, const TrainConfig& config) {
  if (config.stage != Stage::kStage2) throw std::invalid_argument("train_stage2 needs stage2");
  config.validate(model.config);
  check_corpus(model, corpus);
  TrainLog log;
  log.stage = stage_name(config.stage);
  if (!model.stage1_trained)
    log.warnings.push_back("stage 2 on a model without stage-1 training; first-pass "
                           "transcripts come from an untrained decoder");
  const auto split = train_dev_split(corpus, config.dev_size);
  log.train_items = split.train.size();
  log.dev_items = split.dev.size();

  model.set_trainable({});
  // The first pass is frozen, so its hypotheses and (without joint update)
  // the acoustic embeddings are constants for the whole stage.
  const auto hyps = first_pass_nbest(model, split.train, config.hypothesis_beam,
                                     std::max<std::size_t>(1, config.hypothesis_nbest));
  const auto dev_hyps = first_pass_transcripts(model, split.dev, config.hypothesis_beam);
  std::vector<AcousticEmbedding> cache;
  if (!config.joint_update)
    for (const auto* u : split.train) cache.push_back(encode_acoustic(model, frames_tensor(*u)));

  if (config.joint_update)
    model.set_trainable({ParamGroup::kAcoustic, ParamGroup::kProjection, ParamGroup::kDeliberation,
                         ParamGroup::kSecondPass});
  else
    model.set_trainable(
        {ParamGroup::kProjection, ParamGroup::kDeliberation, ParamGroup::kSecondPass});
  Rng pick_rng(derive_seed(config.seed, "stage2/nbest"));
  auto pick = [&](std::size_t i) -> const std::vector<int>& {
    return hyps[i][pick_rng.below(hyps[i].size())];
  };
  set_dropout(model.deliberation, config.dropout);
  set_dropout(model.second_decoder, config.dropout);
  if (config.joint_update) set_dropout(model.acoustic, config.dropout);
  run_epochs(
      model, split.train.size(), config,
      [&](std::size_t i, const InferenceMode& mode) {
        const Utterance& u = *split.train[i];
        if (config.joint_update) {
          Tensor frames = Tensor::from(
              {static_cast<std::size_t>(u.n_frames), static_cast<std::size_t>(u.feat_dim)},
              apply_spec_mask(u.frames, u.n_frames, u.feat_dim, config.spec,
                              mode.rng->next_u64()));
          return stage2_loss(model, encode_acoustic(model, frames, std::nullopt, mode), pick(i),
                             u, config, mode);
        }
        return stage2_loss(model, cache[i], pick(i), u, config, mode);
      },
      [&] { return quick_intent_accuracy(model, split.dev, 2, &dev_hyps); }, log);
  model.set_trainable({});
  model.stage2_trained = true;
  log.checksum = parameter_checksum(model);
  return log;
}

}  // namespace dslu
