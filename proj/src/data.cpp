#include "cyclecap/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace cyclecap {

namespace {

constexpr std::array<std::uint8_t, 4> kFeatureMagic = {'C', 'Y', 'C', 'F'};
constexpr std::uint16_t kFeatureVersion = 1;
constexpr std::size_t kFeatureHeader = 4 + 2 + 4 + 4;

const std::array<std::string, kReservedTokens> kReservedNames = {"<pad>", "<bos>", "<eos>",
                                                                 "<unk>"};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string join(const Words& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

Words split_ws(std::string_view text) {
  Words out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

// ---- feature files ---------------------------------------------------------

std::vector<std::uint8_t> encode_features(const FeatureGrid& grid) {
  if (grid.regions() < 1 || grid.dim() < 1)
    throw InputError("feature grid must have L >= 1 and D >= 1, got " + shape_str(grid.values));
  if (!grid.values.allFinite()) throw NumericError("feature grid holds non-finite values");
  std::vector<std::uint8_t> out(kFeatureMagic.begin(), kFeatureMagic.end());
  out.reserve(kFeatureHeader + 8 * static_cast<std::size_t>(grid.values.size()));
  put_le<std::uint16_t>(out, kFeatureVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.regions()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.dim()));
  for (Eigen::Index i = 0; i < grid.values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, grid.values.data() + i, sizeof bits);
    put_le<std::uint64_t>(out, bits);
  }
  return out;
}

FeatureGrid decode_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFeatureHeader)
    throw FormatError("feature header truncated at offset " + std::to_string(bytes.size()) +
                      " (need " + std::to_string(kFeatureHeader) + " bytes)");
  if (!std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), bytes.begin()))
    throw FormatError("bad feature magic at offset 0");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kFeatureVersion)
    throw FormatError("unsupported feature version " + std::to_string(version) + " at offset 4");
  const auto regions = get_le<std::uint32_t>(bytes, 6);
  const auto dim = get_le<std::uint32_t>(bytes, 10);
  if (regions == 0 || dim == 0)
    throw FormatError("feature header declares L=" + std::to_string(regions) +
                      ", D=" + std::to_string(dim) + " at offset 6");
  const std::size_t count = static_cast<std::size_t>(regions) * dim;
  const std::size_t expected = kFeatureHeader + 8 * count;
  if (bytes.size() < expected)
    throw FormatError("feature payload truncated at offset " + std::to_string(bytes.size()) +
                      " (expected " + std::to_string(expected) + " bytes for L=" +
                      std::to_string(regions) + ", D=" + std::to_string(dim) + ")");
  if (bytes.size() > expected)
    throw FormatError("trailing bytes after feature payload at offset " + std::to_string(expected));
  FeatureGrid grid;
  grid.values.resize(regions, dim);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t bits = get_le<std::uint64_t>(bytes, kFeatureHeader + 8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    if (!std::isfinite(v))
      throw NumericError("non-finite feature value at offset " +
                         std::to_string(kFeatureHeader + 8 * i));
    grid.values.data()[i] = v;
  }
  return grid;
}

void save_features(const std::filesystem::path& path, const FeatureGrid& grid) {
  const auto bytes = encode_features(grid);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FeatureGrid load_features(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_features(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---- tokens and vocabulary -------------------------------------------------

bool is_punctuation_only(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](unsigned char c) {
    return std::ispunct(c) != 0;
  });
}

Words tokenize(std::string_view text) {
  Words out;
  for (const std::string& raw : split_ws(text)) {
    std::string w;
    for (unsigned char c : raw)
      if (!std::ispunct(c)) w.push_back(static_cast<char>(std::tolower(c)));
    if (!w.empty()) out.push_back(std::move(w));
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (int i = 0; i < kReservedTokens; ++i) {
    tokens_.push_back(kReservedNames[i]);
    index_[kReservedNames[i]] = i;
  }
}

Vocabulary Vocabulary::build(std::span<const Words> corpus, int min_freq) {
  if (min_freq < 1) throw ConfigError("min-freq must be >= 1");
  std::map<std::string, long> counts;
  for (const Words& s : corpus)
    for (const std::string& w : s) {
      if (is_punctuation_only(w)) continue;
      if (std::find(kReservedNames.begin(), kReservedNames.end(), w) != kReservedNames.end())
        continue;
      ++counts[w];
    }
  if (counts.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [w, c] : counts)
    if (c >= min_freq) kept.emplace_back(w, c);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [w, c] : kept) {
    v.index_[w] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const std::string& w : tokens) {
    if (w.empty() || v.index_.count(w))
      throw FormatError("vocabulary token '" + w + "' is empty or duplicated");
    v.index_[w] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(tokens);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t i = kReservedTokens; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(size()));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(const Words& words) const {
  TokenSeq out;
  out.reserve(words.size() + 2);
  out.push_back(kBos);
  for (const std::string& w : words) out.push_back(id(w));
  out.push_back(kEos);
  return out;
}

Words Vocabulary::decode(const TokenSeq& ids) const {
  Words out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(token(id));
  }
  return out;
}

// ---- manifests -------------------------------------------------------------

std::string manifest_line(const RawRecord& r) {
  nlohmann::ordered_json j;
  j["image_id"] = r.image_id;
  j["features"] = r.features_path;
  j["en"] = join(r.en);
  j["de"] = join(r.de);
  if (!r.objects.empty()) {
    auto objs = nlohmann::ordered_json::array();
    for (const ObjectAlignment& o : r.objects) {
      nlohmann::ordered_json oj;
      oj["region"] = o.region;
      oj["en"] = o.en_word;
      oj["de"] = o.de_word;
      oj["en_pos"] = o.en_pos;
      oj["de_pos"] = o.de_pos;
      objs.push_back(std::move(oj));
    }
    j["objects"] = std::move(objs);
  }
  return j.dump();
}

RawRecord parse_manifest_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest line is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("image_id") || !j.contains("features") || !j.contains("en"))
    throw FormatError("manifest record needs image_id, features and en");
  RawRecord r;
  try {
    r.image_id = j.at("image_id").get<std::string>();
    r.features_path = j.at("features").get<std::string>();
    r.en = tokenize(j.at("en").get<std::string>());
    if (j.contains("de")) r.de = tokenize(j.at("de").get<std::string>());
    if (j.contains("objects"))
      for (const auto& oj : j.at("objects")) {
        ObjectAlignment o;
        o.region = oj.at("region").get<int>();
        o.en_word = oj.at("en").get<std::string>();
        o.de_word = oj.at("de").get<std::string>();
        o.en_pos = oj.at("en_pos").get<int>();
        o.de_pos = oj.at("de_pos").get<int>();
        r.objects.push_back(std::move(o));
      }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest record field: ") + e.what());
  }
  return r;
}

std::vector<RawRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<RawRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_manifest_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, std::span<const RawRecord> records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const RawRecord& r : records) out << manifest_line(r) << '\n';
}

std::map<std::string, std::shared_ptr<const FeatureGrid>> load_feature_files(
    std::span<const RawRecord> records, const std::filesystem::path& base_dir) {
  std::map<std::string, std::shared_ptr<const FeatureGrid>> grids;
  for (const RawRecord& r : records) {
    if (grids.count(r.features_path)) continue;
    const std::filesystem::path p = std::filesystem::path(r.features_path).is_absolute()
                                        ? std::filesystem::path(r.features_path)
                                        : base_dir / r.features_path;
    grids[r.features_path] = std::make_shared<const FeatureGrid>(load_features(p));
  }
  return grids;
}

void validate_record(const TripleRecord& r, bool require_german, int max_len) {
  auto check = [&](const TokenSeq& s, const char* lang) {
    if (s.size() < 3)
      throw InputError(r.image_id + ": " + lang + " caption is empty");
    if (s.front() != kBos || s.back() != kEos)
      throw InputError(r.image_id + ": " + lang + " caption must be wrapped in BOS/EOS");
    if (static_cast<int>(s.size()) - 2 > max_len)
      throw InputError(r.image_id + ": " + lang + " caption longer than " +
                       std::to_string(max_len) + " tokens");
  };
  if (!r.features) throw InputError(r.image_id + ": missing features");
  check(r.en, "English");
  if (require_german) check(r.de, "German");
}

EncodedCorpus encode_records(std::span<const RawRecord> raw,
                             const std::map<std::string, std::shared_ptr<const FeatureGrid>>& grids,
                             const Vocabulary& en_vocab, const Vocabulary* de_vocab,
                             const EncodeOptions& options) {
  EncodedCorpus out;
  for (const RawRecord& r : raw) {
    TripleRecord t;
    t.image_id = r.image_id;
    auto it = grids.find(r.features_path);
    if (it != grids.end()) t.features = it->second;
    t.en = en_vocab.encode(r.en);
    if (de_vocab && !r.de.empty()) t.de = de_vocab->encode(r.de);
    t.objects = r.objects;
    try {
      validate_record(t, options.require_german, options.max_len);
    } catch (const InputError& e) {
      out.skipped.emplace_back(e.what());
      continue;
    }
    out.records.push_back(std::move(t));
  }
  return out;
}

// ---- synthetic corpus ------------------------------------------------------

namespace {

const std::vector<std::pair<std::string, std::string>> kObjectWords = {
    {"dog", "hund"},    {"cat", "katze"},     {"man", "mann"},      {"woman", "frau"},
    {"child", "kind"},  {"horse", "pferd"},   {"bird", "vogel"},    {"bicycle", "fahrrad"},
    {"car", "auto"},    {"tree", "baum"},     {"boat", "boot"},     {"house", "haus"},
    {"flower", "blume"}, {"table", "tisch"},  {"street", "strasse"}, {"mountain", "berg"}};

const std::vector<std::pair<std::string, std::string>> kFillerWords = {
    {"is", "ist"},        {"on", "auf"},        {"the", "dem"},        {"grass", "gras"},
    {"near", "nahe"},     {"water", "wasser"},  {"playing", "spielt"}, {"standing", "steht"},
    {"outside", "draussen"}, {"together", "zusammen"}, {"sunny", "sonnig"}, {"day", "tag"}};

std::pair<std::string, std::string> word_pair(
    const std::vector<std::pair<std::string, std::string>>& table, int i, const char* en_stem,
    const char* de_stem) {
  if (i < static_cast<int>(table.size())) return table[static_cast<std::size_t>(i)];
  return {en_stem + std::to_string(i), de_stem + std::to_string(i)};
}

struct Caption {
  Words en;
  Words de;
  std::vector<int> en_pos;  // per object (in image order)
  std::vector<int> de_pos;
};

// English names objects in order, German in reverse; both end with the same
// filler phrase.
Caption make_caption(const SynthSpec& spec, const std::vector<int>& classes, Rng& rng) {
  Caption c;
  const int k = static_cast<int>(classes.size());
  c.en_pos.assign(static_cast<std::size_t>(k), 0);
  c.de_pos.assign(static_cast<std::size_t>(k), 0);
  for (int j = 0; j < k; ++j) {
    if (j) c.en.push_back("and");
    c.en.push_back("a");
    c.en_pos[static_cast<std::size_t>(j)] = static_cast<int>(c.en.size());
    c.en.push_back(word_pair(kObjectWords, classes[static_cast<std::size_t>(j)], "thing", "ding").first);
  }
  for (int j = k - 1; j >= 0; --j) {
    if (j != k - 1) c.de.push_back("und");
    c.de.push_back("ein");
    c.de_pos[static_cast<std::size_t>(j)] = static_cast<int>(c.de.size());
    c.de.push_back(word_pair(kObjectWords, classes[static_cast<std::size_t>(j)], "thing", "ding").second);
  }
  const int fillers =
      spec.filler_min + static_cast<int>(rng.index(static_cast<std::size_t>(spec.filler_max - spec.filler_min + 1)));
  for (int f = 0; f < fillers; ++f) {
    const auto [en, de] =
        word_pair(kFillerWords, static_cast<int>(rng.index(static_cast<std::size_t>(spec.filler_words))), "w", "v");
    c.en.push_back(en);
    c.de.push_back(de);
  }
  return c;
}

}  // namespace

void validate(const SynthSpec& s) {
  if (s.images < 1 || s.regions < 1 || s.feature_dim < 1 || s.object_classes < 1 ||
      s.filler_words < 1 || s.objects_min < 1 || s.filler_min < 0 || s.extra_en_captions < 0)
    throw InputError("synthetic spec counts must be positive");
  if (s.objects_max < s.objects_min || s.filler_max < s.filler_min)
    throw InputError("synthetic spec ranges must satisfy min <= max");
  if (s.objects_max > s.regions)
    throw InputError("object count " + std::to_string(s.objects_max) + " exceeds region count " +
                     std::to_string(s.regions));
  if (s.objects_max > s.object_classes)
    throw InputError("object count exceeds the number of object classes");
  if (!(s.noise >= 0.0) || !(s.object_scale > 0.0))
    throw InputError("synthetic spec noise must be >= 0 and object scale > 0");
}

SynthCorpus generate_synthetic(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  Rng dir_rng = rng.split();

  std::vector<Vector> directions;
  for (int c = 0; c < spec.object_classes; ++c) {
    Vector d(spec.feature_dim);
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = dir_rng.normal();
    directions.push_back(d.normalized());
  }

  SynthCorpus out;
  for (int img = 0; img < spec.images; ++img) {
    char id[32];
    std::snprintf(id, sizeof id, "img%05d", img);
    const int k = spec.objects_min +
                  static_cast<int>(rng.index(static_cast<std::size_t>(spec.objects_max - spec.objects_min + 1)));

    // Distinct classes and regions by partial Fisher-Yates.
    std::vector<int> classes(static_cast<std::size_t>(spec.object_classes));
    std::iota(classes.begin(), classes.end(), 0);
    std::vector<int> regions(static_cast<std::size_t>(spec.regions));
    std::iota(regions.begin(), regions.end(), 0);
    for (int j = 0; j < k; ++j) {
      std::swap(classes[static_cast<std::size_t>(j)],
                classes[static_cast<std::size_t>(j) + rng.index(classes.size() - static_cast<std::size_t>(j))]);
      std::swap(regions[static_cast<std::size_t>(j)],
                regions[static_cast<std::size_t>(j) + rng.index(regions.size() - static_cast<std::size_t>(j))]);
    }
    classes.resize(static_cast<std::size_t>(k));
    regions.resize(static_cast<std::size_t>(k));

    FeatureGrid grid;
    grid.values.resize(spec.regions, spec.feature_dim);
    for (Eigen::Index i = 0; i < grid.values.size(); ++i)
      grid.values.data()[i] = spec.noise * rng.normal();
    for (int j = 0; j < k; ++j)
      grid.values.row(regions[static_cast<std::size_t>(j)]) +=
          spec.object_scale * directions[static_cast<std::size_t>(classes[static_cast<std::size_t>(j)])].transpose();

    const Caption cap = make_caption(spec, classes, rng);
    RawRecord rec;
    rec.image_id = id;
    rec.features_path = std::string("features/") + id + ".cycf";
    rec.en = cap.en;
    rec.de = cap.de;
    for (int j = 0; j < k; ++j) {
      const auto words = word_pair(kObjectWords, classes[static_cast<std::size_t>(j)], "thing", "ding");
      rec.objects.push_back({regions[static_cast<std::size_t>(j)], words.first, words.second,
                             cap.en_pos[static_cast<std::size_t>(j)],
                             cap.de_pos[static_cast<std::size_t>(j)]});
    }

    RawRecord pair = rec;
    pair.de.clear();
    out.pairs.push_back(pair);
    for (int e = 0; e < spec.extra_en_captions; ++e) {
      const Caption extra = make_caption(spec, classes, rng);
      RawRecord p = pair;
      p.en = extra.en;
      for (int j = 0; j < k; ++j) p.objects[static_cast<std::size_t>(j)].en_pos = extra.en_pos[static_cast<std::size_t>(j)];
      out.pairs.push_back(std::move(p));
    }
    out.triples.push_back(std::move(rec));
    out.grids.push_back(std::move(grid));
  }
  return out;
}

void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  for (std::size_t i = 0; i < corpus.triples.size(); ++i)
    save_features(dir / corpus.triples[i].features_path, corpus.grids[i]);
  save_manifest(dir / "triples.jsonl", corpus.triples);
  save_manifest(dir / "pairs.jsonl", corpus.pairs);
}

}  // namespace cyclecap
