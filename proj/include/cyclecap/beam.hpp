#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cyclecap/tensor.hpp"

namespace cyclecap {

struct BeamConfig {
  int beam_size = 3;
  int max_len = 50;  // maximum words per caption, EOS excluded
};

inline void validate(const BeamConfig& c) {
  if (c.beam_size < 1) throw ConfigError("beam size must be >= 1");
  if (c.max_len < 1) throw ConfigError("max-len must be >= 1");
}

// Result of one decoder step from a hypothesis: a log-distribution over the
// next token, the state after consuming the previous token, and the
// attention rows produced while predicting (one vector per head).
template <typename State>
struct StepResult {
  Vector log_probs;
  State state;
  std::vector<Vector> attention;
};

template <typename State>
struct BeamHypothesis {
  std::vector<int> tokens;  // generated tokens; BOS implicit
  double log_prob = 0.0;
  State state;
  std::vector<std::vector<Vector>> attention;  // per generated token
};

struct DecodeResult {
  std::vector<int> tokens;  // generated tokens, EOS included when finished
  double log_prob = 0.0;
  std::vector<std::vector<Vector>> attention;
  bool truncated = false;  // no hypothesis finished within max_len words
};

namespace detail {

// Finished hypotheses: higher log-prob, then earlier EOS, then smaller ids.
inline bool better_finished(double lp_a, const std::vector<int>& a, double lp_b,
                            const std::vector<int>& b) {
  if (lp_a != lp_b) return lp_a > lp_b;
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

}  // namespace detail

// Length-capped beam search over summed log-probabilities (no length
// normalization). Each step expands every alive hypothesis, keeps the
// beam_size best candidates, and retires those ending in EOS. A hypothesis
// holding max_len words may only continue with EOS. Tokens with -inf
// log-prob are never proposed. Decoding stops once the best finished score
// is at least the best alive score, since scores can only fall.
template <typename State, typename StepFn>
DecodeResult beam_decode(StepFn&& step, const State& init, int bos, int eos, const BeamConfig& cfg) {
  validate(cfg);
  using Hyp = BeamHypothesis<State>;
  std::vector<Hyp> alive(1);
  alive[0].state = init;
  std::vector<Hyp> finished;
  std::vector<Hyp> last_alive = alive;

  struct Candidate {
    std::size_t parent;
    int token;
    double log_prob;
    std::vector<int> tokens;
  };

  for (int words = 0; words <= cfg.max_len && !alive.empty(); ++words) {
    std::vector<StepResult<State>> results;
    results.reserve(alive.size());
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      const int prev = alive[h].tokens.empty() ? bos : alive[h].tokens.back();
      results.push_back(step(alive[h].state, prev));
      const Vector& lp = results.back().log_probs;
      for (Eigen::Index w = 0; w < lp.size(); ++w) {
        if (!(lp(w) > -std::numeric_limits<double>::infinity())) continue;
        if (words == cfg.max_len && w != eos) continue;
        Candidate c{h, static_cast<int>(w), alive[h].log_prob + lp(w), alive[h].tokens};
        c.tokens.push_back(static_cast<int>(w));
        cands.push_back(std::move(c));
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.tokens < b.tokens;
    });
    if (cands.size() > static_cast<std::size_t>(cfg.beam_size))
      cands.resize(static_cast<std::size_t>(cfg.beam_size));

    std::vector<Hyp> next;
    for (Candidate& c : cands) {
      Hyp hyp;
      hyp.tokens = std::move(c.tokens);
      hyp.log_prob = c.log_prob;
      hyp.state = results[c.parent].state;
      hyp.attention = alive[c.parent].attention;
      hyp.attention.push_back(results[c.parent].attention);
      if (c.token == eos)
        finished.push_back(std::move(hyp));
      else
        next.push_back(std::move(hyp));
    }
    last_alive = std::move(alive);
    alive = std::move(next);
    if (!alive.empty()) last_alive = alive;

    if (!finished.empty() && !alive.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const Hyp& f : finished) best_finished = std::max(best_finished, f.log_prob);
      if (best_finished >= alive.front().log_prob) break;
    }
  }

  DecodeResult out;
  const Hyp* best = nullptr;
  if (!finished.empty()) {
    for (const Hyp& f : finished)
      if (!best || detail::better_finished(f.log_prob, f.tokens, best->log_prob, best->tokens)) best = &f;
  } else {
    out.truncated = true;
    for (const Hyp& h : last_alive)
      if (!best || detail::better_finished(h.log_prob, h.tokens, best->log_prob, best->tokens)) best = &h;
  }
  if (best) {
    out.tokens = best->tokens;
    out.log_prob = best->log_prob;
    out.attention = best->attention;
  }
  return out;
}

// Argmax decoding (lowest id on ties) with the same length rule.
template <typename State, typename StepFn>
DecodeResult greedy_decode(StepFn&& step, const State& init, int bos, int eos, int max_len) {
  if (max_len < 1) throw ConfigError("max-len must be >= 1");
  DecodeResult out;
  State state = init;
  int prev = bos;
  for (int words = 0; words <= max_len; ++words) {
    StepResult<State> r = step(state, prev);
    int best = -1;
    for (Eigen::Index w = 0; w < r.log_probs.size(); ++w) {
      if (!(r.log_probs(w) > -std::numeric_limits<double>::infinity())) continue;
      if (words == max_len && w != eos) continue;
      if (best < 0 || r.log_probs(w) > r.log_probs(best)) best = static_cast<int>(w);
    }
    if (best < 0) {
      out.truncated = true;
      return out;
    }
    out.tokens.push_back(best);
    out.log_prob += r.log_probs(best);
    out.attention.push_back(std::move(r.attention));
    if (best == eos) return out;
    state = std::move(r.state);
    prev = best;
  }
  out.truncated = true;
  return out;
}

}  // namespace cyclecap
