#include "cyclecap/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "cyclecap/inference.hpp"
#include "cyclecap/metrics.hpp"

namespace cyclecap {

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (c.max_epochs < 1) throw ConfigError("max epochs must be >= 1");
  if (c.patience < 0) throw ConfigError("patience must be >= 0");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (c.max_len < 1) throw ConfigError("max-len must be >= 1");
  if (c.validate_every < 1) throw ConfigError("validate-every must be >= 1");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
}

std::string report_lines(const TrainReport& report) {
  std::string out;
  for (const EpochRecord& e : report.epochs) {
    nlohmann::ordered_json j;
    j["stage"] = report.stage;
    j["epoch"] = e.epoch;
    j["nll_per_token"] = e.nll_per_token;
    j["cycle"] = e.cycle;
    j["loss"] = e.loss;
    j["val_cider"] = e.val_cider;
    j["improved"] = e.improved;
    j["best"] = e.epoch == report.best_epoch;
    out += j.dump() + "\n";
  }
  return out;
}

Var nll_loss(const std::vector<Var>& log_probs, const TokenSeq& targets) {
  if (log_probs.size() != targets.size())
    throw DimensionError("nll_loss: " + std::to_string(log_probs.size()) + " log-prob rows vs " +
                         std::to_string(targets.size()) + " targets");
  if (log_probs.empty()) throw InputError("nll_loss: empty sequence");
  Graph& g = *log_probs.front().graph();
  std::vector<Var> picked;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == kPad) continue;
    picked.push_back(pick(log_probs[t], targets[t], 0));
  }
  if (picked.empty()) return g.constant_scalar(0.0);
  return scale(sum(concat(picked)), -1.0);
}

double nll_loss(std::span<const Vector> log_probs, const TokenSeq& targets) {
  if (log_probs.size() != targets.size())
    throw DimensionError("nll_loss: " + std::to_string(log_probs.size()) + " log-prob rows vs " +
                         std::to_string(targets.size()) + " targets");
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == kPad) continue;
    if (targets[t] < 0 || targets[t] >= log_probs[t].size())
      throw DimensionError("nll_loss: target " + std::to_string(targets[t]) + " outside vocabulary");
    total -= log_probs[t](targets[t]);
  }
  return total;
}

namespace {

Eigen::Index count_tokens(const TokenSeq& targets) {
  return static_cast<Eigen::Index>(std::count_if(targets.begin(), targets.end(), [](int t) { return t != kPad; }));
}

}  // namespace

TripleLoss triple_loss(Graph& g, const ModelBundle& model, const TripleRecord& triple, double lambda,
                       CycleNorm norm, const DropoutContext& german_drop,
                       const DropoutContext& english_drop) {
  TripleLoss out;
  const ImageContext img = encode_image(g, model, *triple.features);
  const TokenSeq de_targets = targets_of(triple.de);
  out.tokens = count_tokens(de_targets);
  std::optional<CaptionEncoding> caption;
  if (model.dual()) caption = prepare_caption(g, model, targets_of(triple.en), german_drop);
  const ForcedRun de = force_german(g, model, img, caption ? &*caption : nullptr, triple.de, german_drop);
  out.nll = nll_loss(de.log_probs, de_targets);
  out.total = out.nll;
  if (model.variant() == Variant::cycle_attn) {
    const ForcedRun en = force_english(g, model, img, triple.en, english_drop);
    out.cycle = cycle_loss(de.alpha, de.beta, en.alpha, norm);
    out.total = add(out.nll, scale(out.cycle, lambda));
  }
  return out;
}

Var english_loss(Graph& g, const ModelBundle& model, const TripleRecord& pair, const DropoutContext& drop) {
  const ImageContext img = encode_image(g, model, *pair.features);
  const ForcedRun en = force_english(g, model, img, pair.en, drop);
  return nll_loss(en.log_probs, targets_of(pair.en));
}

namespace {

constexpr std::uint64_t kOrderStream = 0x6F72646572ULL;
constexpr std::uint64_t kGermanDropStream = 0x6465ULL;
constexpr std::uint64_t kEnglishDropStream = 0x656EULL;

// Shuffles, groups by length, chunks, then shuffles batch order.
std::vector<std::vector<std::size_t>> make_batches(std::span<const TripleRecord> records,
                                                   int batch_size, bool by_german, Rng& rng) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = records[a];
    const auto& rb = records[b];
    return (by_german ? ra.de.size() : ra.en.size()) < (by_german ? rb.de.size() : rb.en.size());
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size))
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(order.size(), i + static_cast<std::size_t>(batch_size))));
  for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[rng.index(i)]);
  return batches;
}

struct ImageRefs {
  std::vector<const FeatureGrid*> grids;
  std::vector<References> refs;
};

ImageRefs group_by_image(std::span<const TripleRecord> records, bool german) {
  ImageRefs out;
  std::map<std::string, std::size_t> index;
  for (const TripleRecord& r : records) {
    const TokenSeq& seq = german ? r.de : r.en;
    if (seq.empty()) continue;
    Words words;
    for (int t : targets_of(seq))
      if (t != kEos && t != kPad) words.push_back(std::to_string(t));
    auto [it, inserted] = index.try_emplace(r.image_id, out.grids.size());
    if (inserted) {
      out.grids.push_back(r.features.get());
      out.refs.emplace_back();
    }
    out.refs[it->second].push_back(std::move(words));
  }
  return out;
}

Words id_words(const TokenSeq& tokens) {
  Words w;
  for (int t : tokens) {
    if (t == kEos) break;
    if (t != kPad && t != kBos) w.push_back(std::to_string(t));
  }
  return w;
}

double validation_cider(const ModelBundle& model, std::span<const TripleRecord> validation, bool german,
                        const TrainConfig& cfg) {
  const ImageRefs groups = group_by_image(validation, german);
  if (groups.grids.empty()) return 0.0;
  const BeamConfig greedy{1, cfg.max_len};
  std::vector<Words> cands;
  if (german) {
    for (const CaptionResult& r : caption_images(model, groups.grids, greedy, cfg.threads))
      cands.push_back(id_words(r.de));
  } else {
    for (const FeatureGrid* g : groups.grids) cands.push_back(id_words(caption_english(model, *g, greedy).tokens));
  }
  return cider(cands, groups.refs);
}

std::vector<Matrix> snapshot(const ParameterStore& store) {
  std::vector<Matrix> out;
  for (const Parameter* p : store.all()) out.push_back(p->value);
  return out;
}

void restore(ParameterStore& store, const std::vector<Matrix>& values) {
  auto params = store.all();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

void warn(const TrainHooks& hooks, TrainReport& report, const std::string& msg) {
  report.warnings.push_back(msg);
  if (hooks.warn) hooks.warn(msg);
}

std::vector<TripleRecord> usable(std::span<const TripleRecord> records, bool require_german,
                                 const TrainConfig& cfg, const TrainHooks& hooks, TrainReport& report) {
  std::vector<TripleRecord> out;
  for (const TripleRecord& r : records) {
    try {
      validate_record(r, require_german, cfg.max_len);
      out.push_back(r);
    } catch (const InputError& e) {
      warn(hooks, report, std::string("skipping record: ") + e.what());
    }
  }
  return out;
}

// Shared epoch loop. batch_loss builds the summed objective of one batch and
// accumulates the statistics; returns the 1x1 objective.
struct BatchStats {
  double nll = 0.0;
  double cycle = 0.0;
  double loss = 0.0;
  double tokens = 0.0;
  double records = 0.0;
};

template <typename BatchLoss>
TrainReport run_epochs(ModelBundle& model, const std::string& stage, std::span<const TripleRecord> records,
                       bool by_german, std::span<const TripleRecord> validation, bool validate_german,
                       const std::vector<Parameter*>& trainable, const TrainConfig& cfg,
                       const TrainHooks& hooks, TrainReport report, BatchLoss&& batch_loss) {
  Rng order_rng(cfg.seed ^ kOrderStream);
  Adam adam(AdamConfig{cfg.learning_rate});
  std::vector<Matrix> best = snapshot(model.params());
  report.stage = stage;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    BatchStats stats;
    const auto batches = make_batches(records, cfg.batch_size, by_german, order_rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      model.params().zero_grad();
      Graph g;
      try {
        Var total = batch_loss(g, batches[b], stats);
        g.backward(total);
        adam.step(trainable);
      } catch (const NumericError& e) {
        std::string ids;
        for (std::size_t i : batches[b]) ids += " " + records[i].image_id;
        throw NumericError(stage + " epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                           " (images" + ids + "): " + e.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.nll_per_token = stats.tokens > 0 ? stats.nll / stats.tokens : 0.0;
    rec.cycle = stats.records > 0 ? stats.cycle / stats.records : 0.0;
    rec.loss = stats.records > 0 ? stats.loss / stats.records : 0.0;
    const bool last = epoch == cfg.max_epochs;
    if (!validation.empty() && (epoch % cfg.validate_every == 0 || last)) {
      rec.val_cider = validation_cider(model, validation, validate_german, cfg);
      if (rec.val_cider > report.best_cider) {
        rec.improved = true;
        report.best_cider = rec.val_cider;
        report.best_epoch = epoch;
        best = snapshot(model.params());
      }
    } else if (validation.empty()) {
      report.best_epoch = epoch;
      best = snapshot(model.params());
    }
    report.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(stage, rec);
    if (!validation.empty() && epoch - report.best_epoch > cfg.patience && !last) {
      report.early_stopped = true;
      break;
    }
  }
  if (cfg.restore_best) restore(model.params(), best);
  return report;
}

}  // namespace

TrainReport pretrain_part1(ModelBundle& model, std::span<const TripleRecord> pairs,
                           std::span<const TripleRecord> validation, const TrainConfig& cfg,
                           const TrainHooks& hooks) {
  validate(cfg);
  TrainReport report;
  const auto records = usable(pairs, false, cfg, hooks, report);
  if (records.empty()) throw InputError("pretrain-part1: no usable Image-English pairs");
  Rng drop_rng(cfg.seed ^ kEnglishDropStream);
  const DropoutContext drop{&drop_rng, cfg.dropout, true};
  const auto trainable = model.part1_params();
  return run_epochs(model, "part1", records, false, validation, false, trainable, cfg, hooks, std::move(report),
                    [&](Graph& g, const std::vector<std::size_t>& batch, BatchStats& stats) {
                      std::vector<Var> losses;
                      for (std::size_t i : batch) {
                        Var l = english_loss(g, model, records[i], drop);
                        stats.nll += l.scalar();
                        stats.loss += l.scalar();
                        stats.tokens += static_cast<double>(count_tokens(targets_of(records[i].en)));
                        stats.records += 1.0;
                        losses.push_back(l);
                      }
                      return scale(sum(concat(losses)), 1.0 / static_cast<double>(batch.size()));
                    });
}

TrainReport train_part2(ModelBundle& model, std::span<const TripleRecord> triples,
                        std::span<const TripleRecord> validation, const TrainConfig& cfg,
                        const TrainHooks& hooks) {
  validate(cfg);
  TrainReport report;
  const auto records = usable(triples, true, cfg, hooks, report);
  if (records.empty()) throw InputError("train-part2: no usable Image-English-German triples");
  Rng de_rng(cfg.seed ^ kGermanDropStream);
  Rng en_rng(cfg.seed ^ kEnglishDropStream);
  const DropoutContext de_drop{&de_rng, cfg.dropout, true};
  const DropoutContext en_drop{&en_rng, cfg.dropout, true};
  const auto trainable = cfg.freeze_part1 ? model.part2_params() : model.params().all();
  return run_epochs(model, "part2", records, true, validation, true, trainable, cfg, hooks, std::move(report),
                    [&](Graph& g, const std::vector<std::size_t>& batch, BatchStats& stats) {
                      std::vector<Var> nlls, cycles;
                      for (std::size_t i : batch) {
                        TripleLoss l = triple_loss(g, model, records[i], cfg.lambda, cfg.cycle_norm, de_drop, en_drop);
                        stats.nll += l.nll.scalar();
                        stats.tokens += static_cast<double>(l.tokens);
                        stats.records += 1.0;
                        stats.loss += l.total.scalar();
                        nlls.push_back(l.nll);
                        if (l.cycle.valid()) {
                          stats.cycle += l.cycle.scalar();
                          cycles.push_back(l.cycle);
                        }
                      }
                      const double inv = 1.0 / static_cast<double>(batch.size());
                      Var total = scale(sum(concat(nlls)), inv);
                      if (!cycles.empty()) total = add(total, scale(sum(concat(cycles)), cfg.lambda * inv));
                      return total;
                    });
}

double evaluate_german_nll(const ModelBundle& model, std::span<const TripleRecord> triples) {
  double nll = 0.0, tokens = 0.0;
  for (const TripleRecord& t : triples) {
    Graph g(false);
    const TripleLoss l = triple_loss(g, model, t, 0.0, CycleNorm::frobenius);
    nll += l.nll.scalar();
    tokens += static_cast<double>(l.tokens);
  }
  return tokens > 0 ? nll / tokens : 0.0;
}

double evaluate_english_nll(const ModelBundle& model, std::span<const TripleRecord> pairs) {
  double nll = 0.0, tokens = 0.0;
  for (const TripleRecord& p : pairs) {
    Graph g(false);
    nll += english_loss(g, model, p).scalar();
    tokens += static_cast<double>(count_tokens(targets_of(p.en)));
  }
  return tokens > 0 ? nll / tokens : 0.0;
}

double evaluate_cycle(const ModelBundle& model, std::span<const TripleRecord> triples, CycleNorm norm) {
  if (!model.dual()) throw ConfigError("cycle loss needs a dual-attention model");
  double total = 0.0;
  for (const TripleRecord& t : triples) total += cycle_loss(teacher_forced_record(model, t), norm);
  return triples.empty() ? 0.0 : total / static_cast<double>(triples.size());
}

}  // namespace cyclecap
