// Straightforward re-implementations used as test oracles. Plain loops over
// std::vector, no tape and no Eigen arithmetic.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cyclecap/models.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const cyclecap::Matrix& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline Vec to_vec(const cyclecap::Matrix& m) {
  Vec out;
  for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data()[i]);
  return out;
}

inline Vec matvec(const Mat& w, const Vec& x) {
  Vec y(w.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += w[i][j] * x[j];
  return y;
}

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec softmax(const Vec& s) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : s) mx = std::max(mx, v);
  double z = 0.0;
  Vec out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) z += (out[i] = std::exp(s[i] - mx));
  for (double& v : out) v /= z;
  return out;
}

inline Vec concat(std::initializer_list<Vec> parts) {
  Vec out;
  for (const Vec& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

struct Attention {
  Vec weights;
  Vec context;
};

// e_i = sum_a v_a tanh(sum_d key_id Wk_da + sum_q Wq_aq query_q)
inline Attention attend(const cyclecap::AttentionLayer& layer, const Mat& keys, const Vec& query) {
  const Mat wk = to_mat(layer.key_proj->value), wq = to_mat(layer.query_proj->value);
  const Vec v = to_vec(layer.combine->value);
  const std::size_t A = v.size();
  Vec scores(keys.size(), 0.0);
  for (std::size_t i = 0; i < keys.size(); ++i)
    for (std::size_t a = 0; a < A; ++a) {
      double pre = 0.0;
      for (std::size_t d = 0; d < keys[i].size(); ++d) pre += keys[i][d] * wk[d][a];
      for (std::size_t q = 0; q < query.size(); ++q) pre += wq[a][q] * query[q];
      scores[i] += v[a] * std::tanh(pre);
    }
  Attention out;
  out.weights = softmax(scores);
  out.context.assign(keys.empty() ? 0 : keys[0].size(), 0.0);
  for (std::size_t i = 0; i < keys.size(); ++i)
    for (std::size_t d = 0; d < out.context.size(); ++d) out.context[d] += out.weights[i] * keys[i][d];
  return out;
}

struct LstmOut {
  Vec h, c;
};

inline LstmOut lstm(const cyclecap::LstmParams& p, const Vec& x, const Vec& h, const Vec& c) {
  const Vec wx = matvec(to_mat(p.input_weights->value), x);
  const Vec uh = matvec(to_mat(p.hidden_weights->value), h);
  const Vec b = to_vec(p.bias->value);
  const std::size_t H = h.size();
  LstmOut out{Vec(H), Vec(H)};
  for (std::size_t k = 0; k < H; ++k) {
    const auto pre = [&](std::size_t gate) { return wx[gate * H + k] + uh[gate * H + k] + b[gate * H + k]; };
    const double i = sigm(pre(0)), f = sigm(pre(1)), g = std::tanh(pre(2)), o = sigm(pre(3));
    out.c[k] = f * c[k] + i * g;
    out.h[k] = o * std::tanh(out.c[k]);
  }
  return out;
}

inline Vec gru(const cyclecap::GruParams& p, const Vec& x, const Vec& h) {
  const Vec wx = matvec(to_mat(p.input_weights->value), x);
  const Vec uh = matvec(to_mat(p.hidden_weights->value), h);
  const Vec b = to_vec(p.bias->value);
  const std::size_t H = h.size();
  Vec out(H);
  for (std::size_t k = 0; k < H; ++k) {
    const double z = sigm(wx[k] + b[k] + uh[k]);
    const double r = sigm(wx[H + k] + b[H + k] + uh[H + k]);
    const double n = std::tanh(wx[2 * H + k] + b[2 * H + k] + r * uh[2 * H + k]);
    out[k] = (1.0 - z) * n + z * h[k];
  }
  return out;
}

inline Vec state_init(const cyclecap::StateInit& p, const Mat& rows) {
  Vec mean(rows[0].size(), 0.0);
  for (const Vec& r : rows)
    for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += r[d] / static_cast<double>(rows.size());
  Vec y = matvec(to_mat(p.weights->value), mean);
  const Vec b = to_vec(p.bias->value);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i] + b[i]);
  return y;
}

inline Vec log_softmax_linear(const cyclecap::Linear& p, const Vec& h) {
  Vec logits = matvec(to_mat(p.weights->value), h);
  const Vec b = to_vec(p.bias->value);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += b[i];
  Vec probs = softmax(logits);
  for (double& v : probs) v = std::log(v);
  return probs;
}

inline Vec embed_row(const cyclecap::Parameter& table, int id) {
  Vec out;
  for (Eigen::Index e = 0; e < table.value.cols(); ++e) out.push_back(table.value(id, e));
  return out;
}

inline Mat project_regions(const cyclecap::ModelBundle& m, const cyclecap::FeatureGrid& grid) {
  const Mat v = to_mat(grid.values), w = to_mat(m.image.weights->value);
  const Vec b = to_vec(m.image.bias->value);
  Mat out(v.size(), Vec(b.size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t p = 0; p < b.size(); ++p) {
      double s = b[p];
      for (std::size_t d = 0; d < v[i].size(); ++d) s += v[i][d] * w[d][p];
      out[i][p] = std::tanh(s);
    }
  return out;
}

// Teacher-forced English log-likelihood and attention rows, no dropout.
inline double english_log_likelihood(const cyclecap::ModelBundle& m, const cyclecap::FeatureGrid& grid,
                                     const cyclecap::TokenSeq& seq, Mat* alphas = nullptr) {
  const Mat regions = project_regions(m, grid);
  Vec h = state_init(m.english.init_h, regions), c = state_init(m.english.init_c, regions);
  double ll = 0.0;
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    const Attention att = attend(m.english.attention, regions, h);
    if (alphas) alphas->push_back(att.weights);
    const LstmOut next = lstm(m.english.lstm, concat({att.context, embed_row(*m.english.embed, seq[t])}), h, c);
    h = next.h;
    c = next.c;
    ll += log_softmax_linear(m.english.output, h)[static_cast<std::size_t>(seq[t + 1])];
  }
  return ll;
}

inline Mat encode_caption(const cyclecap::ModelBundle& m, const cyclecap::TokenSeq& tokens) {
  const std::size_t H = static_cast<std::size_t>(m.dims().hidden), n = tokens.size();
  Mat fwd(n), bwd(n);
  Vec h(H, 0.0);
  for (std::size_t j = 0; j < n; ++j) fwd[j] = h = gru(m.encoder.forward, embed_row(*m.encoder.embed, tokens[j]), h);
  h.assign(H, 0.0);
  for (std::size_t j = n; j-- > 0;) bwd[j] = h = gru(m.encoder.backward, embed_row(*m.encoder.embed, tokens[j]), h);
  Mat out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = concat({fwd[j], bwd[j]});
  return out;
}

struct GermanRun {
  double log_likelihood = 0.0;
  Mat alpha, beta;
  std::vector<Vec> log_probs;
};

inline GermanRun german_forced(const cyclecap::ModelBundle& m, const cyclecap::FeatureGrid& grid,
                               const cyclecap::TokenSeq& en_targets, const cyclecap::TokenSeq& de) {
  GermanRun run;
  const Mat regions = project_regions(m, grid);
  const Mat states = m.dual() ? encode_caption(m, en_targets) : Mat{};
  Vec h = state_init(m.german.init_h, regions), c = state_init(m.german.init_c, regions);
  for (std::size_t t = 0; t + 1 < de.size(); ++t) {
    const Attention ra = attend(m.german.region_attention, regions, h);
    run.alpha.push_back(ra.weights);
    Vec x;
    if (m.dual()) {
      const Attention ca = attend(m.german.caption_attention, states, h);
      run.beta.push_back(ca.weights);
      x = concat({ra.context, ca.context, embed_row(*m.german.embed, de[t])});
    } else {
      x = concat({ra.context, embed_row(*m.german.embed, de[t])});
    }
    const LstmOut next = lstm(m.german.lstm, x, h, c);
    h = next.h;
    c = next.c;
    run.log_probs.push_back(log_softmax_linear(m.german.output, h));
    run.log_likelihood += run.log_probs.back()[static_cast<std::size_t>(de[t + 1])];
  }
  return run;
}

// ---- metrics ----------------------------------------------------------------

using Sentence = std::vector<std::string>;

inline std::string gram_key(const Sentence& s, std::size_t i, std::size_t n) {
  std::string k = std::to_string(n) + "|";
  for (std::size_t j = i; j < i + n; ++j) k += s[j] + '\x1f';
  return k;
}

inline std::unordered_map<std::string, int> grams(const Sentence& s, std::size_t n) {
  std::unordered_map<std::string, int> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[gram_key(s, i, n)];
  return out;
}

inline double bleu4(const std::vector<Sentence>& cands, const std::vector<std::vector<Sentence>>& refs) {
  double match[5] = {}, total[5] = {}, c_len = 0, r_len = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const Sentence& c = cands[i];
    c_len += static_cast<double>(c.size());
    long best = -1;
    for (const Sentence& r : refs[i]) {
      const long d = std::labs(static_cast<long>(r.size()) - static_cast<long>(c.size()));
      const long bd = best < 0 ? 0 : std::labs(best - static_cast<long>(c.size()));
      if (best < 0 || d < bd || (d == bd && static_cast<long>(r.size()) < best)) best = static_cast<long>(r.size());
    }
    r_len += static_cast<double>(best);
    for (std::size_t n = 1; n <= 4; ++n) {
      for (const auto& [k, cnt] : grams(c, n)) {
        int clip = 0;
        for (const Sentence& r : refs[i]) {
          const auto rg = grams(r, n);
          auto it = rg.find(k);
          if (it != rg.end()) clip = std::max(clip, it->second);
        }
        match[n] += std::min(cnt, clip);
      }
      total[n] += c.size() >= n ? static_cast<double>(c.size() - n + 1) : 0.0;
    }
  }
  double logp = 0.0;
  for (int n = 1; n <= 4; ++n) {
    if (match[n] == 0.0) return 0.0;
    logp += 0.25 * std::log(match[n] / total[n]);
  }
  const double bp = c_len < r_len ? std::exp(1.0 - r_len / c_len) : 1.0;
  return 100.0 * bp * std::exp(logp);
}

inline std::vector<double> cider(const std::vector<Sentence>& cands, const std::vector<std::vector<Sentence>>& refs) {
  std::unordered_map<std::string, double> df;
  for (const auto& set : refs) {
    std::set<std::string> seen;
    for (const Sentence& r : set)
      for (std::size_t n = 1; n <= 4; ++n)
        for (const auto& [k, cnt] : grams(r, n)) seen.insert(k);
    for (const auto& k : seen) df[k] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(refs.size()));
  const auto weights = [&](const Sentence& s, std::size_t n) {
    std::unordered_map<std::string, double> w;
    for (const auto& [k, cnt] : grams(s, n)) {
      const double d = df.count(k) ? df[k] : 0.0;
      w[k] = cnt * (log_n - std::log(std::max(1.0, d)));
    }
    return w;
  };
  const auto norm = [](const std::unordered_map<std::string, double>& w) {
    double s = 0.0;
    for (const auto& [k, v] : w) s += v * v;
    return std::sqrt(s);
  };
  std::vector<double> out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double acc = 0.0;
    for (const Sentence& r : refs[i]) {
      const double delta = static_cast<double>(cands[i].size()) - static_cast<double>(r.size());
      const double pen = std::exp(-delta * delta / 72.0);
      double sim = 0.0;
      for (std::size_t n = 1; n <= 4; ++n) {
        const auto wc = weights(cands[i], n), wr = weights(r, n);
        double dot = 0.0;
        for (const auto& [k, v] : wc) {
          auto it = wr.find(k);
          if (it != wr.end()) dot += std::min(v, it->second) * it->second;
        }
        const double nc = norm(wc), nr = norm(wr);
        if (nc != 0.0 && nr != 0.0) dot /= nc * nr;
        sim += dot * pen;
      }
      acc += sim / 4.0;
    }
    out.push_back(10.0 * acc / static_cast<double>(refs[i].size()) * 100.0);
  }
  return out;
}

// ---- exhaustive decoding ----------------------------------------------------

struct Best {
  std::vector<int> tokens;
  double log_prob = -std::numeric_limits<double>::infinity();
  bool found = false;
};

// Enumerates every sequence of at most max_len words followed by EOS and
// returns the highest-scoring one (ties: shorter, then lexicographic). The
// log-probability function sees the full prefix.
inline Best exhaustive(const std::function<std::vector<double>(const std::vector<int>&)>& log_probs,
                       int vocab, int eos, int max_len) {
  Best best;
  std::function<void(std::vector<int>&, double)> rec = [&](std::vector<int>& prefix, double lp) {
    const std::vector<double> dist = log_probs(prefix);
    for (int w = 0; w < vocab; ++w) {
      if (!(dist[static_cast<std::size_t>(w)] > -std::numeric_limits<double>::infinity())) continue;
      const double score = lp + dist[static_cast<std::size_t>(w)];
      if (w == eos) {
        std::vector<int> seq = prefix;
        seq.push_back(eos);
        const bool better = !best.found || score > best.log_prob ||
                            (score == best.log_prob && (seq.size() < best.tokens.size() ||
                                                        (seq.size() == best.tokens.size() && seq < best.tokens)));
        if (better) best = {seq, score, true};
      } else if (static_cast<int>(prefix.size()) < max_len) {
        prefix.push_back(w);
        rec(prefix, score);
        prefix.pop_back();
      }
    }
  };
  std::vector<int> prefix;
  rec(prefix, 0.0);
  return best;
}

}  // namespace oracle
