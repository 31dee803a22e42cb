#pragma once

#include <span>
#include <vector>

#include "cyclecap/beam.hpp"
#include "cyclecap/cycle.hpp"
#include "cyclecap/models.hpp"

namespace cyclecap {

struct CaptionResult {
  TokenSeq en;  // pseudo English caption, EOS included when finished
  TokenSeq de;
  bool en_truncated = false;
  bool de_truncated = false;
  // English stage produced no words; the encoder then sees EOS only, so
  // caption attention is trivially uniform.
  bool empty_pseudo_caption = false;
  AttentionRecord record;  // N x L, M x L, M x N from decode-time rows
};

// English decode -> encode pseudo caption -> German decode (dual variants).
// Soft-attn models skip the English stage; record.a_en and record.b stay empty.
CaptionResult caption_image(const ModelBundle& model, const FeatureGrid& grid, const BeamConfig& beam);

// Decodes independent images on `threads` workers over a read-only model.
std::vector<CaptionResult> caption_images(const ModelBundle& model,
                                          std::span<const FeatureGrid* const> grids,
                                          const BeamConfig& beam, int threads = 1);

// English-only decode for Part1 validation.
DecodeResult caption_english(const ModelBundle& model, const FeatureGrid& grid, const BeamConfig& beam);

// Attention of a ground-truth triple under teacher forcing: A_en from the
// English decoder on the English caption, A_de and B from the German decoder
// given the encoded English caption.
AttentionRecord teacher_forced_record(const ModelBundle& model, const TripleRecord& triple);

// Mean attention mass German object words put on their ground-truth region,
// under teacher forcing. Records without alignment metadata are ignored.
double object_alignment_mass(const ModelBundle& model, std::span<const TripleRecord> triples);

}  // namespace cyclecap
