#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cyclecap/tensor.hpp"

namespace cyclecap {

// Reserved token ids.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReservedTokens = 4;

using TokenSeq = std::vector<int>;
using Words = std::vector<std::string>;

// L region feature vectors of one image (L x D).
struct FeatureGrid {
  Matrix values;

  Eigen::Index regions() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

// Binary feature file: "CYCF", u16 version = 1, u32 L, u32 D, then L*D
// little-endian float64 in row-major order.
std::vector<std::uint8_t> encode_features(const FeatureGrid& grid);
FeatureGrid decode_features(std::span<const std::uint8_t> bytes);
void save_features(const std::filesystem::path& path, const FeatureGrid& grid);
FeatureGrid load_features(const std::filesystem::path& path);

// Whitespace split, ASCII lowercase, punctuation characters removed; tokens
// left empty are dropped.
Words tokenize(std::string_view text);
bool is_punctuation_only(std::string_view token);

class Vocabulary {
 public:
  Vocabulary();

  // Punctuation-only and reserved-name tokens are discarded before counting.
  // Tokens with count >= min_freq get ids from 4 upward in order of
  // descending count, ties broken lexicographically; the rest map to UNK.
  static Vocabulary build(std::span<const Words> corpus, int min_freq);

  // One token per line; line k (0-based) holds id k + 4.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  int size() const { return static_cast<int>(tokens_.size()); }

  // [BOS, ids..., EOS]
  TokenSeq encode(const Words& words) const;
  // Drops PAD/BOS and stops at EOS.
  Words decode(const TokenSeq& ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

// Ground-truth link between one object's region and its word in each
// caption. Positions index the word sequence without BOS, which is also the
// decoder step that predicts the word.
struct ObjectAlignment {
  int region = 0;
  std::string en_word;
  std::string de_word;
  int en_pos = 0;
  int de_pos = 0;
};

// One manifest line before vocabulary encoding.
struct RawRecord {
  std::string image_id;
  std::string features_path;  // relative to the manifest directory
  Words en;
  Words de;  // empty for Image-English pair manifests
  std::vector<ObjectAlignment> objects;
};

struct TripleRecord {
  std::string image_id;
  std::shared_ptr<const FeatureGrid> features;
  TokenSeq en;  // BOS ... EOS
  TokenSeq de;  // BOS ... EOS; empty for pair records
  std::vector<ObjectAlignment> objects;

  // Target counts (tokens after BOS, EOS included).
  Eigen::Index en_length() const { return static_cast<Eigen::Index>(en.size()) - 1; }
  Eigen::Index de_length() const { return static_cast<Eigen::Index>(de.size()) - 1; }
};

// Manifest: JSON lines with keys image_id, features, en, de (space-separated
// token strings) and optional objects (alignment metadata).
std::vector<RawRecord> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, std::span<const RawRecord> records);
std::string manifest_line(const RawRecord& record);
RawRecord parse_manifest_line(std::string_view line);

// Loads each distinct features file once; paths resolve against base_dir.
std::map<std::string, std::shared_ptr<const FeatureGrid>> load_feature_files(
    std::span<const RawRecord> records, const std::filesystem::path& base_dir);

struct EncodeOptions {
  bool require_german = true;
  int max_len = 50;  // maximum word count per caption, EOS excluded
};

struct EncodedCorpus {
  std::vector<TripleRecord> records;
  std::vector<std::string> skipped;  // one reason per skipped record
};

EncodedCorpus encode_records(std::span<const RawRecord> raw,
                             const std::map<std::string, std::shared_ptr<const FeatureGrid>>& grids,
                             const Vocabulary& en_vocab, const Vocabulary* de_vocab,
                             const EncodeOptions& options = {});

// Throws InputError if the record breaks a TripleRecord invariant.
void validate_record(const TripleRecord& record, bool require_german, int max_len);

// ---- synthetic corpus ------------------------------------------------------

struct SynthSpec {
  std::uint64_t seed = 1;
  int images = 16;
  int regions = 16;
  int feature_dim = 32;
  int object_classes = 8;  // distinct object words per language
  int filler_words = 8;    // distinct non-object words per language
  int objects_min = 1;
  int objects_max = 2;
  int filler_min = 1;
  int filler_max = 3;
  int extra_en_captions = 0;  // additional English-only captions per image
  double object_scale = 1.0;
  double noise = 0.1;
};

void validate(const SynthSpec& spec);

struct SynthCorpus {
  std::vector<FeatureGrid> grids;   // one per image, index-aligned with triples
  std::vector<RawRecord> triples;   // Image-English-German
  std::vector<RawRecord> pairs;     // Image-English (triples' English plus extras)
};

// Pure function of the spec. Each object class owns a unit feature direction;
// an image with k objects writes those directions into k distinct regions and
// the captions name the objects (English in order, German reversed).
SynthCorpus generate_synthetic(const SynthSpec& spec);

// Writes features/<id>.cycf, triples.jsonl, pairs.jsonl under dir.
void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace cyclecap
