#include "cyclecap/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>

namespace cyclecap {

namespace {

constexpr int kMaxN = 4;
constexpr double kCiderSigma = 6.0;

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, int>;

// counts[n - 1] holds the n-grams of length n.
std::vector<NGramCounts> ngram_counts(const Words& words) {
  std::vector<NGramCounts> counts(kMaxN);
  for (int n = 1; n <= kMaxN; ++n)
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i)
      ++counts[static_cast<std::size_t>(n - 1)][NGram(words.begin() + static_cast<long>(i),
                                                      words.begin() + static_cast<long>(i) + n)];
  return counts;
}

void check_corpus(std::span<const Words> candidates, std::span<const References> references) {
  if (candidates.empty()) throw InputError("metric: empty candidate list");
  if (candidates.size() != references.size())
    throw InputError("metric: " + std::to_string(candidates.size()) + " candidates vs " +
                     std::to_string(references.size()) + " reference sets");
  for (const References& r : references)
    if (r.empty()) throw InputError("metric: candidate without references");
}

}  // namespace

double bleu4(std::span<const Words> candidates, std::span<const References> references) {
  check_corpus(candidates, references);
  std::array<double, kMaxN> matched{}, total{};
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Words& cand = candidates[i];
    const auto cand_counts = ngram_counts(cand);
    std::vector<NGramCounts> max_ref(kMaxN);
    std::size_t closest = references[i].front().size();
    for (const Words& ref : references[i]) {
      const auto rc = ngram_counts(ref);
      for (int n = 0; n < kMaxN; ++n)
        for (const auto& [g, c] : rc[static_cast<std::size_t>(n)]) {
          int& m = max_ref[static_cast<std::size_t>(n)][g];
          m = std::max(m, c);
        }
      const auto diff = [&](std::size_t len) {
        return std::abs(static_cast<long>(len) - static_cast<long>(cand.size()));
      };
      if (diff(ref.size()) < diff(closest) || (diff(ref.size()) == diff(closest) && ref.size() < closest))
        closest = ref.size();
    }
    for (int n = 0; n < kMaxN; ++n) {
      for (const auto& [g, c] : cand_counts[static_cast<std::size_t>(n)]) {
        auto it = max_ref[static_cast<std::size_t>(n)].find(g);
        if (it != max_ref[static_cast<std::size_t>(n)].end()) matched[static_cast<std::size_t>(n)] += std::min(c, it->second);
      }
      total[static_cast<std::size_t>(n)] += static_cast<double>(
          cand.size() >= static_cast<std::size_t>(n + 1) ? cand.size() - static_cast<std::size_t>(n) : 0);
    }
    hyp_len += static_cast<double>(cand.size());
    ref_len += static_cast<double>(closest);
  }
  double log_sum = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    if (total[static_cast<std::size_t>(n)] == 0.0 || matched[static_cast<std::size_t>(n)] == 0.0) return 0.0;
    log_sum += std::log(matched[static_cast<std::size_t>(n)] / total[static_cast<std::size_t>(n)]);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / kMaxN);
}

namespace {

struct TfIdf {
  std::vector<std::map<NGram, double>> vec;
  std::array<double, kMaxN> norm{};
  double length = 0.0;
};

TfIdf tfidf(const Words& words, const std::map<NGram, int>& doc_freq, double log_docs) {
  TfIdf out;
  out.vec.resize(kMaxN);
  const auto counts = ngram_counts(words);
  for (int n = 0; n < kMaxN; ++n) {
    double sq = 0.0;
    for (const auto& [g, tf] : counts[static_cast<std::size_t>(n)]) {
      auto it = doc_freq.find(g);
      const double df = std::log(std::max(1.0, it == doc_freq.end() ? 0.0 : static_cast<double>(it->second)));
      const double w = static_cast<double>(tf) * (log_docs - df);
      out.vec[static_cast<std::size_t>(n)][g] = w;
      sq += w * w;
    }
    out.norm[static_cast<std::size_t>(n)] = std::sqrt(sq);
  }
  out.length = static_cast<double>(words.size());
  return out;
}

double similarity(const TfIdf& hyp, const TfIdf& ref) {
  const double delta = hyp.length - ref.length;
  const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  double total = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    double val = 0.0;
    const auto& rv = ref.vec[static_cast<std::size_t>(n)];
    for (const auto& [g, w] : hyp.vec[static_cast<std::size_t>(n)]) {
      auto it = rv.find(g);
      if (it != rv.end()) val += std::min(w, it->second) * it->second;
    }
    const double nh = hyp.norm[static_cast<std::size_t>(n)], nr = ref.norm[static_cast<std::size_t>(n)];
    if (nh != 0.0 && nr != 0.0) val /= nh * nr;
    total += val * penalty;
  }
  return total / kMaxN;
}

}  // namespace

std::vector<double> cider_scores(std::span<const Words> candidates, std::span<const References> references) {
  check_corpus(candidates, references);
  std::map<NGram, int> doc_freq;
  for (const References& refs : references) {
    std::set<NGram> present;
    for (const Words& r : refs)
      for (const auto& level : ngram_counts(r))
        for (const auto& [g, c] : level) present.insert(g);
    for (const NGram& g : present) ++doc_freq[g];
  }
  const double log_docs = std::log(static_cast<double>(references.size()));
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TfIdf hyp = tfidf(candidates[i], doc_freq, log_docs);
    double s = 0.0;
    for (const Words& r : references[i]) s += similarity(hyp, tfidf(r, doc_freq, log_docs));
    // coco-caption scales by 10; tables report a further x100.
    scores.push_back(1000.0 * s / static_cast<double>(references[i].size()));
  }
  return scores;
}

double cider(std::span<const Words> candidates, std::span<const References> references) {
  const auto scores = cider_scores(candidates, references);
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

MetricReport evaluate(const std::string& model, std::span<const Words> candidates,
                      std::span<const References> references) {
  return {model, cider(candidates, references), bleu4(candidates, references), candidates.size()};
}

std::string format_report(std::span<const MetricReport> rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %10s %8s\n", "Model", kCiderVariant, "BLEU4", "Records");
  out += line;
  for (const MetricReport& r : rows) {
    std::snprintf(line, sizeof line, "%-16s %10.2f %10.2f %8zu\n", r.model.c_str(), r.cider, r.bleu4, r.records);
    out += line;
  }
  return out;
}

}  // namespace cyclecap
