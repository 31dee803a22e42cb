#pragma once

#include <cstdint>
#include <span>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cyclecap/attention.hpp"
#include "cyclecap/cells.hpp"
#include "cyclecap/data.hpp"

namespace cyclecap {

struct ModelDims {
  int feature_dim = 32;  // D
  int proj_dim = 32;     // projected region size
  int embed = 64;
  int hidden = 64;
  int att_hidden = 64;
  int en_vocab = 0;
  int de_vocab = 0;
};

// soft_attn: German decoder over regions only.
// dual_attn: regions + English caption, no cycle term.
// cycle_attn: dual_attn trained with the cycle-consistency term.
enum class Variant { soft_attn, dual_attn, cycle_attn };

Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);

// Stand-in for the image encoder: V' = tanh(V W + b), applied row-wise.
struct ImageProjection {
  Parameter* weights = nullptr;  // D x P
  Parameter* bias = nullptr;     // 1 x P
};

struct EnglishDecoder {
  Parameter* embed = nullptr;  // Ven x E
  LstmParams lstm;             // input [c_t ; y_{t-1}]
  AttentionLayer attention;    // over projected regions
  Linear output;               // H -> Ven
  StateInit init_h;
  StateInit init_c;
};

struct CaptionEncoder {
  Parameter* embed = nullptr;  // Ven x E
  GruParams forward;
  GruParams backward;
};

struct GermanDecoder {
  Parameter* embed = nullptr;        // Vde x E
  LstmParams lstm;                   // input [c_t ; z_t ; y_{t-1}] (z_t absent for soft_attn)
  AttentionLayer region_attention;   // over projected regions
  AttentionLayer caption_attention;  // over encoder states (dual variants)
  Linear output;                     // H -> Vde
  StateInit init_h;
  StateInit init_c;
  bool dual = true;
};

// All parameters of the four networks. Names are hierarchical and carry the
// owning network as prefix: img., en. (Part1), cap., de. (Part2).
class ModelBundle {
 public:
  ModelBundle(const ModelDims& dims, Variant variant, std::uint64_t seed);

  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;

  const ModelDims& dims() const { return dims_; }
  Variant variant() const { return variant_; }
  bool dual() const { return variant_ != Variant::soft_attn; }

  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  std::vector<Parameter*> part1_params();
  std::vector<Parameter*> part2_params();

  ImageProjection image;
  EnglishDecoder english;
  CaptionEncoder encoder;
  GermanDecoder german;

 private:
  ModelDims dims_;
  Variant variant_;
  ParameterStore store_;
};

bool is_part1(const std::string& param_name);

// Binary checkpoint: "CYCK", u16 version = 1, u32 entry count, then per entry
// u32 name length, name bytes, u32 rank, u32 dims[rank], float64 payload
// (little-endian, row-major).
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store);
std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& store);
// Loads into an existing store; every stored name must exist with the same
// shape and every store parameter must be present unless allow_missing.
void load_checkpoint(const std::filesystem::path& path, ParameterStore& store,
                     bool allow_missing = false);
void decode_checkpoint(std::span<const std::uint8_t> bytes, ParameterStore& store,
                       bool allow_missing = false);

// ---- per-step network evaluation ------------------------------------------

// Optional dropout applied to embeddings and to the decoder output state.
struct DropoutContext {
  Rng* rng = nullptr;
  double rate = 0.0;
  bool training = false;

  Var apply(Var v) const { return rng ? dropout(v, rate, *rng, training) : v; }
};

struct RecurrentState {
  Var h;
  Var c;
};

// Projected regions with each attention head's key projection cached.
struct ImageContext {
  Var regions;                // L x P
  ProjectedKeys english_keys;  // for D_en
  ProjectedKeys german_keys;   // for D_de
};

ImageContext encode_image(Graph& g, const ModelBundle& m, const FeatureGrid& grid);

// tanh(W mean(rows) + b) for both recurrent vectors.
RecurrentState init_english_state(Graph& g, const ModelBundle& m, const ImageContext& img);
RecurrentState init_german_state(Graph& g, const ModelBundle& m, const ImageContext& img);

struct EnglishStepOutput {
  Var log_probs;  // Ven x 1
  RecurrentState state;
  Var alpha;  // L x 1
};

EnglishStepOutput english_step(Graph& g, const ModelBundle& m, const ImageContext& img,
                               const RecurrentState& prev, int y_prev,
                               const DropoutContext& drop = {});

// Encodes the tokens after BOS (EOS included). Row j = [forward state after
// token j ; backward state after reading tokens N..j].
struct CaptionEncoding {
  Var states;  // N x 2H
  ProjectedKeys keys;
};

Var encode_caption(Graph& g, const ModelBundle& m, const TokenSeq& tokens,
                   const DropoutContext& drop = {});
CaptionEncoding prepare_caption(Graph& g, const ModelBundle& m, const TokenSeq& tokens,
                                const DropoutContext& drop = {});

struct GermanStepOutput {
  Var log_probs;  // Vde x 1
  RecurrentState state;
  Var alpha;  // L x 1
  Var beta;   // N x 1 (invalid for soft_attn)
};

GermanStepOutput german_step(Graph& g, const ModelBundle& m, const ImageContext& img,
                             const CaptionEncoding* caption, const RecurrentState& prev,
                             int y_prev, const DropoutContext& drop = {});

// Teacher-forced unrolls over [BOS, w1, ..., EOS]: one step per target.
struct ForcedRun {
  std::vector<Var> log_probs;  // one per target
  Var alpha;                   // T x L
  Var beta;                    // T x N (German dual variants only)
};

ForcedRun force_english(Graph& g, const ModelBundle& m, const ImageContext& img,
                        const TokenSeq& tokens, const DropoutContext& drop = {});
ForcedRun force_german(Graph& g, const ModelBundle& m, const ImageContext& img,
                       const CaptionEncoding* caption, const TokenSeq& tokens,
                       const DropoutContext& drop = {});

// Tokens after BOS, i.e. the decoder targets.
TokenSeq targets_of(const TokenSeq& seq);

}  // namespace cyclecap
