#include <doctest.h>

#include <cmath>
#include <set>

#include "dslu/train.hpp"
#include "support.hpp"

using namespace dslu;

namespace {

const Corpus& corpus() {
  static const Corpus c = testing::tiny_corpus();
  return c;
}

TrainConfig quick(Stage stage, int epochs = 4) {
  TrainConfig t;
  t.stage = stage;
  t.epochs = epochs;
  t.batch_size = 8;
  t.dev_size = 8;
  t.adam.peak_lr = 5e-3;
  t.adam.warmup_steps = 10;
  t.hypothesis_beam = 2;
  t.hypothesis_nbest = 2;
  t.seed = 21;
  return t;
}

std::vector<std::vector<double>> group_snapshot(const TwoPassModel& m,
                                                std::initializer_list<ParamGroup> groups) {
  std::vector<std::vector<double>> out;
  for (auto g : groups)
    for (auto& v : testing::snapshot(m.parameters(g))) out.push_back(std::move(v));
  return out;
}

std::vector<double> losses(const TrainLog& log) {
  std::vector<double> out;
  for (const auto& e : log.epochs) out.push_back(e.mean_loss);
  return out;
}

// A text pool large enough to hold out a slice.
std::vector<Words> text_pool(std::uint64_t seed) {
  SplitRequest req;
  req.n_train = 8;
  req.n_test_each = 2;
  req.n_speakers = 3;
  req.n_heldout_speakers = 1;
  req.n_extra_text = 300;
  return make_splits(corpus().grammar, req, seed).splits.unlabeled_text;
}

double stage_loss_gradient_error(Stage stage, std::size_t samples, std::uint64_t seed) {
  auto m = testing::tiny_model(corpus(), 31, false);
  m.set_trainable({ParamGroup::kAcoustic, ParamGroup::kFirstPass, ParamGroup::kSemantic,
                   ParamGroup::kProjection, ParamGroup::kDeliberation, ParamGroup::kSecondPass});
  const Utterance& u = corpus().utterances[7];
  TrainConfig cfg;
  const std::vector<int> hyp = m.vocab.encode(corpus().utterances[9].transcript);
  auto loss = [&] {
    if (stage == Stage::kStage1) return stage1_loss(m, u, cfg, {});
    return stage2_loss(m, encode_acoustic(m, frames_tensor(u)), hyp, u, cfg, {});
  };
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(loss());
  }
  auto params = m.parameters();
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    Tensor& t = params[rng.below(params.size())].tensor;
    const std::size_t i = rng.below(t.numel());
    const double numeric =
        testing::central_difference([&] { return loss().item(); }, t.data()[i], 1e-5);
    worst = std::max(worst, testing::relative_error(t.grad()[i], numeric));
  }
  m.set_trainable({});
  return worst;
}

}  // namespace

TEST_CASE("spec mask identity and exact zeroing") {
  const auto& u = corpus().utterances[0];
  CHECK(apply_spec_mask(u.frames, u.n_frames, u.feat_dim, {0, 5, 0, 2}, 1) == u.frames);
  const SpecMaskConfig cfg{2, 6, 1, 3};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto out = apply_spec_mask(u.frames, u.n_frames, u.feat_dim, cfg, seed);
    CHECK(out == apply_spec_mask(u.frames, u.n_frames, u.feat_dim, cfg, seed));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK((out[i] == 0.0 || out[i] == u.frames[i]));
    // Zeroed cells form whole time rows or whole feature columns.
    const auto fd = static_cast<std::size_t>(u.feat_dim);
    for (std::size_t t = 0; t < static_cast<std::size_t>(u.n_frames); ++t)
      for (std::size_t f = 0; f < fd; ++f) {
        if (out[t * fd + f] != 0.0) continue;
        bool row = true, col = true;
        for (std::size_t g = 0; g < fd; ++g) row &= out[t * fd + g] == 0.0;
        for (std::size_t s = 0; s < static_cast<std::size_t>(u.n_frames); ++s)
          col &= out[s * fd + f] == 0.0;
        CHECK((row || col));
      }
  }
  // Widths larger than the matrix are clamped.
  const auto all = apply_spec_mask(u.frames, u.n_frames, u.feat_dim, {3, 10000, 2, 100}, 3);
  CHECK(all.size() == u.frames.size());
}

TEST_CASE("spec mask fraction matches the closed form") {
  for (const SpecMaskConfig cfg : {SpecMaskConfig{2, 12, 1, 3}, SpecMaskConfig{1, 40, 0, 0},
                                   SpecMaskConfig{0, 0, 2, 6}, SpecMaskConfig{3, 8, 2, 4}}) {
    const int t = 60, f = 16;
    const std::vector<double> ones(static_cast<std::size_t>(t * f), 1.0);
    double masked = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed)
      for (double v : apply_spec_mask(ones, t, f, cfg, seed)) masked += v == 0.0;
    const double mc = masked / (1000.0 * t * f);
    const double exact = expected_mask_fraction(t, f, cfg);
    CHECK(exact > 0.0);
    CHECK(std::abs(mc - exact) <= 0.2 * exact);
  }
  CHECK(expected_mask_fraction(60, 16, {0, 12, 0, 3}) == 0.0);
}

TEST_CASE("masking picks at least one token") {
  const auto v = Vocabulary::from_grammar(corpus().grammar);
  Rng rng(4);
  std::size_t masked = 0, total = 0;
  for (const auto& s : text_pool(2)) {
    const auto m = mask_sentence(v, s, 0.15, rng);
    std::size_t here = 0;
    for (std::size_t i = 0; i < m.input.size(); ++i) {
      if (m.targets[i] >= 0) {
        ++here;
        CHECK(m.input[i] == Vocabulary::kMask);
        CHECK(m.targets[i] + v.word_begin() == v.word_id(s[i]));
      } else {
        CHECK(m.input[i] == v.word_id(s[i]));
      }
    }
    CHECK(here >= 1);
    masked += here;
    total += s.size();
  }
  CHECK(static_cast<double>(masked) / static_cast<double>(total) > 0.12);
  CHECK(static_cast<double>(masked) / static_cast<double>(total) < 0.30);
}

TEST_CASE("untrained masked-token loss with a uniform head is ln of the word count") {
  auto m = testing::tiny_model(corpus());
  std::fill(m.semantic_embed.data().begin(), m.semantic_embed.data().end(), 0.0);
  const double loss = masked_token_loss(m, text_pool(3), 0.15, 1);
  CHECK(std::abs(loss - std::log(static_cast<double>(m.vocab.n_words()))) < 1e-12);
}

TEST_CASE("pretraining lowers held-out loss and touches only the semantic encoder") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto m = testing::tiny_model(corpus(), seed);
    auto pool = text_pool(seed + 10);
    const std::vector<Words> held(pool.end() - 60, pool.end());
    pool.resize(pool.size() - 60);
    const double before = masked_token_loss(m, held, 0.15, 99);
    const auto frozen = group_snapshot(m, {ParamGroup::kAcoustic, ParamGroup::kFirstPass,
                                           ParamGroup::kProjection, ParamGroup::kDeliberation,
                                           ParamGroup::kSecondPass});
    auto cfg = quick(Stage::kPretrainLm, 6);
    cfg.seed = seed;
    cfg.batch_size = 16;
    const auto log = pretrain_semantic_encoder(m, pool, cfg);
    CHECK(masked_token_loss(m, held, 0.15, 99) < before);
    CHECK(frozen == group_snapshot(m, {ParamGroup::kAcoustic, ParamGroup::kFirstPass,
                                       ParamGroup::kProjection, ParamGroup::kDeliberation,
                                       ParamGroup::kSecondPass}));
    CHECK(m.semantic_pretrained);
    CHECK(log.epochs.size() == 6);
  }
  auto m = testing::tiny_model(corpus());
  CHECK_THROWS(pretrain_semantic_encoder(m, {}, quick(Stage::kPretrainLm)));
  CHECK_THROWS(pretrain_semantic_encoder(m, text_pool(1), quick(Stage::kStage1)));
}

TEST_CASE("train/dev split holds the tail of the train split back") {
  const auto s = train_dev_split(corpus(), 8);
  CHECK(s.dev.size() == 8);
  CHECK(s.train.size() + s.dev.size() == corpus().splits.train.size());
  std::set<const Utterance*> t(s.train.begin(), s.train.end());
  for (const auto* d : s.dev) CHECK(t.count(d) == 0);
  CHECK(s.dev.back()->id == corpus().splits.train.back());
}

TEST_CASE("stage 1 learns, freezes the rest, and is deterministic") {
  auto run = [] {
    auto m = testing::tiny_model(corpus());
    const auto frozen = group_snapshot(m, {ParamGroup::kSemantic, ParamGroup::kProjection,
                                           ParamGroup::kDeliberation, ParamGroup::kSecondPass});
    const auto log = train_stage1(m, corpus(), quick(Stage::kStage1, 5));
    CHECK(frozen == group_snapshot(m, {ParamGroup::kSemantic, ParamGroup::kProjection,
                                       ParamGroup::kDeliberation, ParamGroup::kSecondPass}));
    CHECK(m.stage1_trained);
    return std::pair{log, m};
  };
  const auto [a, ma] = run();
  const auto [b, mb] = run();
  REQUIRE(a.epochs.size() == 5);
  CHECK(a.epochs.back().mean_loss < a.epochs.front().mean_loss);
  for (const auto& e : a.epochs) CHECK(std::isfinite(e.mean_loss));
  for (std::size_t i = 0; i < a.epochs.size(); ++i) CHECK(a.epochs[i].epoch == static_cast<int>(i + 1));
  CHECK(losses(a) == losses(b));
  CHECK(a.checksum == b.checksum);
  CHECK(testing::same_parameters(ma.parameters(), mb.parameters()));
  CHECK(a.train_items == 40);
  CHECK(a.dev_items == 8);
  CHECK(a.to_json().find("\"stage1\"") != std::string::npos);
}

TEST_CASE("stage 1 rejects a mismatched corpus") {
  GrammarOptions go;
  go.n_intents = 5;
  go.feat_dim = 8;
  const auto other = build_grammar(9, go);
  auto m = TwoPassModel::create(testing::tiny_model_config(),
                                Vocabulary::from_grammar(other));
  CHECK_THROWS_AS(train_stage1(m, corpus(), quick(Stage::kStage1)), std::invalid_argument);
  auto ok = testing::tiny_model(corpus());
  CHECK_THROWS(train_stage1(ok, corpus(), quick(Stage::kStage2)));
}

TEST_CASE("stage 2 freezes the first pass and the semantic encoder") {
  auto m = testing::tiny_model(corpus());
  train_stage1(m, corpus(), quick(Stage::kStage1, 4));
  const auto split = train_dev_split(corpus(), 8);
  const auto hyps_before = first_pass_nbest(m, split.train, 2, 2);
  const auto frozen =
      group_snapshot(m, {ParamGroup::kAcoustic, ParamGroup::kFirstPass, ParamGroup::kSemantic});
  const auto trained_before = group_snapshot(m, {ParamGroup::kDeliberation, ParamGroup::kSecondPass});
  const auto log = train_stage2(m, corpus(), quick(Stage::kStage2, 5));
  CHECK(frozen ==
        group_snapshot(m, {ParamGroup::kAcoustic, ParamGroup::kFirstPass, ParamGroup::kSemantic}));
  CHECK(trained_before != group_snapshot(m, {ParamGroup::kDeliberation, ParamGroup::kSecondPass}));
  CHECK(log.warnings.empty());
  CHECK(log.epochs.back().mean_loss < log.epochs.front().mean_loss);
  CHECK(m.stage2_trained);
  // Hypotheses computed once equal a regeneration after training.
  CHECK(first_pass_nbest(m, split.train, 2, 2) == hyps_before);
  for (const auto& h : hyps_before) {
    CHECK(!h.empty());
    CHECK(h.size() <= 2);
    CHECK(std::set<std::vector<int>>(h.begin(), h.end()).size() == h.size());
  }
  CHECK(first_pass_transcripts(m, split.dev, 2).size() == split.dev.size());
}

TEST_CASE("stage 2 is deterministic") {
  auto run = [] {
    auto m = testing::tiny_model(corpus());
    train_stage1(m, corpus(), quick(Stage::kStage1, 2));
    auto cfg = quick(Stage::kStage2, 3);
    cfg.acoustic_dropout = 0.1;
    const auto log = train_stage2(m, corpus(), cfg);
    return std::pair{losses(log), parameter_checksum(m)};
  };
  CHECK(run() == run());
}

TEST_CASE("stage 2 joint update also moves the acoustic encoder") {
  auto m = testing::tiny_model(corpus());
  train_stage1(m, corpus(), quick(Stage::kStage1, 2));
  const auto aco = group_snapshot(m, {ParamGroup::kAcoustic});
  const auto first = group_snapshot(m, {ParamGroup::kFirstPass, ParamGroup::kSemantic});
  auto cfg = quick(Stage::kStage2, 1);
  cfg.joint_update = true;
  train_stage2(m, corpus(), cfg);
  CHECK(aco != group_snapshot(m, {ParamGroup::kAcoustic}));
  CHECK(first == group_snapshot(m, {ParamGroup::kFirstPass, ParamGroup::kSemantic}));
}

TEST_CASE("stage 2 before stage 1 warns and proceeds") {
  auto m = testing::tiny_model(corpus());
  const auto log = train_stage2(m, corpus(), quick(Stage::kStage2, 1));
  REQUIRE(log.warnings.size() == 1);
  CHECK(log.warnings[0].find("stage-1") != std::string::npos);
  CHECK(log.epochs.size() == 1);
  CHECK(log.to_json().find("stage-1") != std::string::npos);
}

TEST_CASE("training configuration is validated") {
  const auto mc = testing::tiny_model_config();
  auto bad = [&](auto edit) {
    TrainConfig c;
    edit(c);
    CHECK_THROWS_AS(c.validate(mc), std::invalid_argument);
  };
  bad([](TrainConfig& c) { c.label_smoothing = 1.0; });
  bad([](TrainConfig& c) { c.label_smoothing = -0.1; });
  bad([](TrainConfig& c) { c.dropout = 1.0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.spec.max_feat_width = 9; });
  bad([](TrainConfig& c) { c.spec.n_time_masks = -1; });
  bad([](TrainConfig& c) { c.mask_prob = 0.0; });
  TrainConfig ok;
  CHECK_NOTHROW(ok.validate(mc));
  CHECK(parse_stage("stage2") == Stage::kStage2);
  CHECK(parse_stage(stage_name(Stage::kPretrainLm)) == Stage::kPretrainLm);
  CHECK_THROWS(parse_stage("stage3"));
}

TEST_CASE("stage losses have correct gradients") {
  CHECK(stage_loss_gradient_error(Stage::kStage1, 20, 1) < 1e-3);
  CHECK(stage_loss_gradient_error(Stage::kStage2, 20, 2) < 1e-3);
}
