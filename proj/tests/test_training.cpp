#include <doctest.h>

#include <cmath>
#include <limits>

#include "cyclecap/gradcheck.hpp"
#include "cyclecap/training.hpp"
#include "fixtures.hpp"

using namespace cyclecap;

namespace {

fixtures::Corpus small_corpus(int images = 6) {
  SynthSpec spec;
  spec.images = images;
  spec.regions = 4;
  spec.feature_dim = 6;
  spec.object_classes = 4;
  spec.filler_words = 3;
  spec.objects_max = 1;
  spec.filler_max = 1;
  return fixtures::make_corpus(spec);
}

TrainConfig quick(int epochs) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 4;
  cfg.max_epochs = epochs;
  cfg.patience = epochs;
  cfg.dropout = 0.3;
  cfg.seed = 5;
  return cfg;
}

std::vector<std::uint8_t> train_checkpoint(const fixtures::Corpus& c, Variant v, double lambda) {
  ModelBundle m(fixtures::dims_for(c, 8, 6), v, 3);
  TrainConfig cfg = quick(3);
  cfg.lambda = lambda;
  train_part2(m, c.triples, {}, cfg);
  return encode_checkpoint(m.params());
}

}  // namespace

TEST_CASE("nll: probability one everywhere gives zero") {
  Graph g;
  std::vector<Var> lps;
  const TokenSeq targets = {2, 0 + 4, 1};
  for (int t : targets) {
    Matrix col = Matrix::Constant(5, 1, -std::numeric_limits<double>::max());
    col(t, 0) = 0.0;
    lps.push_back(g.constant(col));
  }
  CHECK(nll_loss(lps, targets).scalar() == 0.0);
}

TEST_CASE("nll: uniform model over K classes for T steps gives T ln K") {
  for (int K : {2, 5, 11})
    for (int T : {1, 4}) {
      Graph g;
      std::vector<Var> lps;
      TokenSeq targets;
      for (int t = 0; t < T; ++t) {
        lps.push_back(log_softmax(g.constant(Matrix::Zero(K, 1)), 0));
        targets.push_back((t + 1) % K == kPad ? 1 : (t + 1) % K);
      }
      CHECK(nll_loss(lps, targets).scalar() == doctest::Approx(T * std::log(static_cast<double>(K))).epsilon(1e-14));
    }
}

TEST_CASE("nll: random instance matches an explicit sum and skips PAD") {
  Rng rng(3);
  Graph g;
  std::vector<Var> lps;
  std::vector<Vector> raw;
  const TokenSeq targets = {4, kPad, 1, 6, kEos};
  double expected = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Matrix logits(7, 1);
    for (int k = 0; k < 7; ++k) logits(k, 0) = rng.normal();
    Var lp = log_softmax(g.constant(logits), 0);
    lps.push_back(lp);
    raw.push_back(lp.value().col(0));
    if (targets[t] == kPad) continue;
    double z = 0.0;
    for (int k = 0; k < 7; ++k) z += std::exp(logits(k, 0));
    expected -= logits(targets[t], 0) - std::log(z);
  }
  CHECK(nll_loss(lps, targets).scalar() == doctest::Approx(expected).epsilon(1e-13));
  CHECK(nll_loss(raw, targets) == doctest::Approx(expected).epsilon(1e-13));
  CHECK_THROWS_AS(nll_loss(std::vector<Var>(lps.begin(), lps.begin() + 2), targets), DimensionError);
}

TEST_CASE("composed L_nll + lambda L_cyc passes the gradient check at tiny dims") {
  const fixtures::Corpus c = small_corpus(2);
  ModelBundle m(fixtures::dims_for(c, 4, 6), Variant::cycle_attn, 9);
  Rng rng(10);
  for (Parameter* p : m.params().all())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-0.5, 0.5);
  for (CycleNorm norm : {CycleNorm::frobenius, CycleNorm::squared}) {
    const auto errs = check_gradients(m.params().all(), [&](Graph& g) {
      return triple_loss(g, m, c.triples[0], 0.7, norm).total;
    });
    CHECK(max_rel_error(errs) < 1e-3);
  }
}

TEST_CASE("training config validation") {
  TrainConfig cfg;
  cfg.lambda = -1.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("same seed twice gives identical loss curves and weights") {
  const fixtures::Corpus c = small_corpus();
  const auto run = [&] {
    ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::cycle_attn, 3);
    const TrainReport r = train_part2(m, c.triples, {}, quick(3));
    std::vector<double> curve;
    for (const EpochRecord& e : r.epochs) curve.insert(curve.end(), {e.loss, e.nll_per_token, e.cycle});
    return std::make_pair(curve, encode_checkpoint(m.params()));
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("lambda = 0 reproduces the dual-attention run bit-for-bit") {
  const fixtures::Corpus c = small_corpus();
  const auto dual = train_checkpoint(c, Variant::dual_attn, 1.0);
  CHECK(train_checkpoint(c, Variant::cycle_attn, 0.0) == dual);
  CHECK(train_checkpoint(c, Variant::cycle_attn, 1.0) != dual);
}

TEST_CASE("loss decreases on a small corpus") {
  const fixtures::Corpus c = small_corpus();
  ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::cycle_attn, 3);
  TrainConfig cfg = quick(15);
  cfg.dropout = 0.0;
  const TrainReport r = train_part2(m, c.triples, {}, cfg);
  CHECK(r.epochs.back().nll_per_token < 0.8 * r.epochs.front().nll_per_token);
}

TEST_CASE("freeze-part1 leaves Part1 parameters untouched") {
  const fixtures::Corpus c = small_corpus();
  ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::cycle_attn, 3);
  std::vector<Matrix> p1_before, p2_before;
  for (Parameter* p : m.part1_params()) p1_before.push_back(p->value);
  for (Parameter* p : m.part2_params()) p2_before.push_back(p->value);
  TrainConfig cfg = quick(2);
  cfg.freeze_part1 = true;
  train_part2(m, c.triples, {}, cfg);
  const auto p1 = m.part1_params(), p2 = m.part2_params();
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value == p1_before[i]);
  bool moved = false;
  for (std::size_t i = 0; i < p2.size(); ++i) moved = moved || p2[i]->value != p2_before[i];
  CHECK(moved);
}

TEST_CASE("pretraining touches only Part1") {
  const fixtures::Corpus c = small_corpus();
  ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::cycle_attn, 3);
  std::vector<Matrix> p2_before;
  for (Parameter* p : m.part2_params()) p2_before.push_back(p->value);
  const TrainReport r = pretrain_part1(m, c.pairs, {}, quick(2));
  CHECK(r.stage == "part1");
  const auto p2 = m.part2_params();
  for (std::size_t i = 0; i < p2.size(); ++i) CHECK(p2[i]->value == p2_before[i]);
}

TEST_CASE("patience 0 stops after the first non-improving validation epoch") {
  const fixtures::Corpus c = small_corpus();
  ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::dual_attn, 3);
  TrainConfig cfg = quick(10);
  cfg.patience = 0;
  cfg.learning_rate = 1e-12;  // outputs cannot change, so CIDEr never improves
  cfg.max_len = 6;
  const TrainReport r = train_part2(m, c.triples, c.triples, cfg);
  CHECK(r.early_stopped);
  CHECK(r.epochs.size() == 2);
  CHECK(r.best_epoch == 1);
  CHECK(r.epochs[0].improved);
  CHECK_FALSE(r.epochs[1].improved);
}

TEST_CASE("best weights are restored after training") {
  const fixtures::Corpus c = small_corpus();
  ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::dual_attn, 3);
  TrainConfig cfg = quick(4);
  cfg.patience = 4;
  cfg.max_len = 6;
  std::vector<std::vector<std::uint8_t>> per_epoch;
  TrainHooks hooks;
  hooks.on_epoch = [&](const std::string&, const EpochRecord&) { per_epoch.push_back(encode_checkpoint(m.params())); };
  const TrainReport r = train_part2(m, c.triples, c.triples, cfg, hooks);
  REQUIRE(r.best_epoch >= 1);
  CHECK(encode_checkpoint(m.params()) == per_epoch[static_cast<std::size_t>(r.best_epoch - 1)]);
  CHECK(report_lines(r).find("\"stage\":\"part2\"") != std::string::npos);
}

TEST_CASE("pair superset with extra captions is accepted for pretraining") {
  SynthSpec spec;
  spec.images = 4;
  spec.regions = 4;
  spec.feature_dim = 6;
  spec.objects_max = 1;
  spec.extra_en_captions = 4;
  const fixtures::Corpus c = fixtures::make_corpus(spec);
  REQUIRE(c.pairs.size() == 20);
  ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::cycle_attn, 3);
  const TrainReport r = pretrain_part1(m, c.pairs, {}, quick(2));
  CHECK(r.epochs.size() == 2);
  CHECK(std::isfinite(r.epochs.back().loss));
}

TEST_CASE("records without German are skipped with a warning in Part2") {
  fixtures::Corpus c = small_corpus(3);
  std::vector<TripleRecord> mixed = c.triples;
  mixed.push_back(c.pairs[0]);
  ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::dual_attn, 3);
  std::vector<std::string> warnings;
  TrainHooks hooks;
  hooks.warn = [&](const std::string& w) { warnings.push_back(w); };
  const TrainReport r = train_part2(m, mixed, {}, quick(1), hooks);
  CHECK(warnings.size() == 1);
  CHECK(r.warnings.size() == 1);
  CHECK_THROWS_AS(train_part2(m, std::vector<TripleRecord>{c.pairs[0]}, {}, quick(1)), InputError);
}

TEST_CASE("numeric failures name the epoch, batch and images") {
  const fixtures::Corpus c = small_corpus(2);
  ModelBundle m(fixtures::dims_for(c, 8, 6), Variant::dual_attn, 3);
  m.params().at("img.W").value(0, 0) = std::numeric_limits<double>::infinity();
  try {
    train_part2(m, c.triples, {}, quick(1));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch 1") != std::string::npos);
    CHECK(what.find(c.triples[0].image_id) != std::string::npos);
  }
}
