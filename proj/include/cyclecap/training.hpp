#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cyclecap/adam.hpp"
#include "cyclecap/cycle.hpp"
#include "cyclecap/models.hpp"

namespace cyclecap {

struct TrainConfig {
  double learning_rate = 4e-4;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 20;  // epochs without validation CIDEr gain before stopping
  double dropout = 0.5;
  double lambda = 1.0;  // cycle-loss weight; 0 gives the dual-attention baseline
  bool freeze_part1 = false;
  CycleNorm cycle_norm = CycleNorm::frobenius;
  std::uint64_t seed = 1;
  int max_len = 50;
  int validate_every = 1;
  int threads = 1;
  bool restore_best = true;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double nll_per_token = 0.0;  // training-mode German (or English for Part1) NLL
  double cycle = 0.0;          // mean L_cyc per triple (0 when not computed)
  double loss = 0.0;           // mean objective per triple
  double val_cider = -1.0;     // -1 when not validated this epoch
  bool improved = false;
};

struct TrainReport {
  std::string stage;  // "part1" or "part2"
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_cider = -1.0;
  bool early_stopped = false;
  std::vector<std::string> warnings;
};

// One JSON object per epoch.
std::string report_lines(const TrainReport& report);

struct TrainHooks {
  std::function<void(const std::string& stage, const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> warn;
};

// -sum_t log p(y_t); PAD targets are skipped.
Var nll_loss(const std::vector<Var>& log_probs, const TokenSeq& targets);
double nll_loss(std::span<const Vector> log_probs, const TokenSeq& targets);

// Pieces of the Part2 objective for one triple.
struct TripleLoss {
  Var nll;    // German NLL
  Var cycle;  // L_cyc (invalid unless the cycle is computed)
  Var total;  // nll + lambda * cycle
  Eigen::Index tokens = 0;
};

// Teacher-forces the German decoder (A_de, B) and, for the cycle variant,
// the English decoder on the ground-truth English caption (A_en).
TripleLoss triple_loss(Graph& g, const ModelBundle& model, const TripleRecord& triple,
                       double lambda, CycleNorm norm, const DropoutContext& german_drop = {},
                       const DropoutContext& english_drop = {});

// English teacher-forced NLL for Part1.
Var english_loss(Graph& g, const ModelBundle& model, const TripleRecord& pair,
                 const DropoutContext& drop = {});

// Trains img.* and en.* on Image-English pairs. Validation CIDEr uses greedy
// English decoding; the best-validation weights are restored on return.
TrainReport pretrain_part1(ModelBundle& model, std::span<const TripleRecord> pairs,
                           std::span<const TripleRecord> validation, const TrainConfig& cfg,
                           const TrainHooks& hooks = {});

// Trains on triples with L_nll + lambda L_cyc (cycle-attn) or L_nll alone.
// Part1 parameters are updated too unless cfg.freeze_part1. Early stopping on
// greedy validation CIDEr of the German output.
TrainReport train_part2(ModelBundle& model, std::span<const TripleRecord> triples,
                        std::span<const TripleRecord> validation, const TrainConfig& cfg,
                        const TrainHooks& hooks = {});

// Mean per-token NLL over records in evaluation mode (no dropout).
double evaluate_german_nll(const ModelBundle& model, std::span<const TripleRecord> triples);
double evaluate_english_nll(const ModelBundle& model, std::span<const TripleRecord> pairs);
// Mean teacher-forced L_cyc per triple in evaluation mode.
double evaluate_cycle(const ModelBundle& model, std::span<const TripleRecord> triples, CycleNorm norm);

}  // namespace cyclecap
