#pragma once

#include <memory>

#include "cyclecap/data.hpp"
#include "cyclecap/models.hpp"

namespace fixtures {

struct Corpus {
  cyclecap::SynthCorpus raw;
  cyclecap::Vocabulary en_vocab;
  cyclecap::Vocabulary de_vocab;
  std::vector<cyclecap::TripleRecord> triples;
  std::vector<cyclecap::TripleRecord> pairs;
};

inline std::vector<cyclecap::TripleRecord> encode(const std::vector<cyclecap::RawRecord>& raw,
                                                  const std::vector<cyclecap::FeatureGrid>& grids,
                                                  std::size_t per_image, const cyclecap::Vocabulary& en,
                                                  const cyclecap::Vocabulary* de) {
  std::map<std::string, std::shared_ptr<const cyclecap::FeatureGrid>> by_path;
  for (std::size_t i = 0; i < raw.size(); ++i)
    by_path.try_emplace(raw[i].features_path, std::make_shared<const cyclecap::FeatureGrid>(grids[i / per_image]));
  cyclecap::EncodeOptions opts;
  opts.require_german = de != nullptr;
  return cyclecap::encode_records(raw, by_path, en, de, opts).records;
}

inline Corpus make_corpus(const cyclecap::SynthSpec& spec) {
  Corpus c;
  c.raw = cyclecap::generate_synthetic(spec);
  std::vector<cyclecap::Words> en, de;
  for (const auto& r : c.raw.pairs) en.push_back(r.en);
  for (const auto& r : c.raw.triples) de.push_back(r.de);
  c.en_vocab = cyclecap::Vocabulary::build(en, 1);
  c.de_vocab = cyclecap::Vocabulary::build(de, 1);
  c.triples = encode(c.raw.triples, c.raw.grids, 1, c.en_vocab, &c.de_vocab);
  c.pairs = encode(c.raw.pairs, c.raw.grids, c.raw.pairs.size() / c.raw.triples.size(), c.en_vocab, nullptr);
  return c;
}

inline cyclecap::ModelDims dims_for(const Corpus& c, int hidden, int feature_dim) {
  cyclecap::ModelDims d;
  d.feature_dim = feature_dim;
  d.proj_dim = hidden / 2;
  d.embed = hidden / 2;
  d.hidden = hidden;
  d.att_hidden = hidden / 2;
  d.en_vocab = c.en_vocab.size();
  d.de_vocab = c.de_vocab.size();
  return d;
}

}  // namespace fixtures
