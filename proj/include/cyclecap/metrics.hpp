#pragma once

#include <span>
#include <string>
#include <vector>

#include "cyclecap/data.hpp"

namespace cyclecap {

using References = std::vector<Words>;

// Corpus BLEU-4 x 100: clipped n-gram precisions (n = 1..4) pooled over the
// corpus, uniform geometric mean, brevity penalty against the closest
// reference length (shorter wins ties). Any zero precision gives 0.
double bleu4(std::span<const Words> candidates, std::span<const References> references);

// CIDEr-D x 100 (the coco-caption "CIDEr" scorer scaled to table units):
// tf-idf weighted 1..4-gram vectors with idf from the evaluation references,
// clipped cosine similarity, gaussian length penalty (sigma = 6), averaged
// over references, n and candidates.
double cider(std::span<const Words> candidates, std::span<const References> references);
// Per-candidate CIDEr-D x 100 against the same corpus statistics.
std::vector<double> cider_scores(std::span<const Words> candidates,
                                 std::span<const References> references);

inline constexpr const char* kCiderVariant = "CIDEr-D";

struct MetricReport {
  std::string model;
  double cider = 0.0;
  double bleu4 = 0.0;
  std::size_t records = 0;
};

MetricReport evaluate(const std::string& model, std::span<const Words> candidates,
                      std::span<const References> references);

// Fixed-width text table: Model | CIDEr-D | BLEU4 | Records.
std::string format_report(std::span<const MetricReport> rows);

}  // namespace cyclecap
