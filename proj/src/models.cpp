#include "cyclecap/models.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace cyclecap {

Variant parse_variant(const std::string& name) {
  if (name == "soft-attn") return Variant::soft_attn;
  if (name == "dual-attn") return Variant::dual_attn;
  if (name == "cycle-attn") return Variant::cycle_attn;
  throw ConfigError("unknown model variant '" + name + "' (soft-attn | dual-attn | cycle-attn)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::soft_attn: return "soft-attn";
    case Variant::dual_attn: return "dual-attn";
    case Variant::cycle_attn: return "cycle-attn";
  }
  return "?";
}

bool is_part1(const std::string& name) {
  return name.rfind("img.", 0) == 0 || name.rfind("en.", 0) == 0;
}

ModelBundle::ModelBundle(const ModelDims& dims, Variant variant, std::uint64_t seed)
    : dims_(dims), variant_(variant) {
  if (dims.feature_dim < 1 || dims.proj_dim < 1 || dims.embed < 1 || dims.hidden < 1 ||
      dims.att_hidden < 1)
    throw ConfigError("model dimensions must be positive");
  if (dims.en_vocab <= kReservedTokens || dims.de_vocab <= kReservedTokens)
    throw ConfigError("vocabularies must contain at least one non-reserved token");
  Rng rng(seed);
  const int P = dims.proj_dim, E = dims.embed, H = dims.hidden, A = dims.att_hidden;

  image.weights = &store_.add("img.W", dims.feature_dim, P, rng, kInitScale);
  image.bias = &store_.add_zeros("img.b", 1, P);

  english.embed = &store_.add("en.embed", dims.en_vocab, E, rng, kInitScale);
  english.lstm = LstmParams::create(store_, "en.lstm", P + E, H, rng);
  english.attention = AttentionLayer::create(store_, "en.att", P, H, A, rng);
  english.output = Linear::create(store_, "en.out", H, dims.en_vocab, rng);
  english.init_h = StateInit::create(store_, "en.init_h", P, H, rng);
  english.init_c = StateInit::create(store_, "en.init_c", P, H, rng);

  german.dual = dual();
  if (german.dual) {
    encoder.embed = &store_.add("cap.embed", dims.en_vocab, E, rng, kInitScale);
    encoder.forward = GruParams::create(store_, "cap.fwd", E, H, rng);
    encoder.backward = GruParams::create(store_, "cap.bwd", E, H, rng);
  }
  german.embed = &store_.add("de.embed", dims.de_vocab, E, rng, kInitScale);
  german.lstm = LstmParams::create(store_, "de.lstm", german.dual ? P + 2 * H + E : P + E, H, rng);
  german.region_attention = AttentionLayer::create(store_, "de.att_img", P, H, A, rng);
  if (german.dual)
    german.caption_attention = AttentionLayer::create(store_, "de.att_cap", 2 * H, H, A, rng);
  german.output = Linear::create(store_, "de.out", H, dims.de_vocab, rng);
  german.init_h = StateInit::create(store_, "de.init_h", P, H, rng);
  german.init_c = StateInit::create(store_, "de.init_c", P, H, rng);
}

std::vector<Parameter*> ModelBundle::part1_params() {
  std::vector<Parameter*> out;
  for (Parameter* p : store_.all())
    if (is_part1(p->name)) out.push_back(p);
  return out;
}

std::vector<Parameter*> ModelBundle::part2_params() {
  std::vector<Parameter*> out;
  for (Parameter* p : store_.all())
    if (!is_part1(p->name)) out.push_back(p);
  return out;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr std::array<std::uint8_t, 4> kCheckpointMagic = {'C', 'Y', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw FormatError("checkpoint truncated at offset " + std::to_string(bytes_.size()) +
                        " (need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ")");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& store) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const Parameter* p : store.all()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.insert(out.end(), p->name.begin(), p->name.end());
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, p->value.data() + i, sizeof bits);
      put_le<std::uint64_t>(out, bits);
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void decode_checkpoint(std::span<const std::uint8_t> bytes, ParameterStore& store,
                       bool allow_missing) {
  Reader r(bytes);
  if (r.get_string(4) != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
    throw FormatError("bad checkpoint magic at offset 0");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::set<std::string> seen;
  std::vector<std::pair<Parameter*, Matrix>> staged;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank != 2) throw FormatError("checkpoint entry '" + name + "' has rank " + std::to_string(rank));
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (!store.contains(name)) throw FormatError("checkpoint entry '" + name + "' is not part of the model");
    Parameter& p = store.at(name);
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw DimensionError("checkpoint entry '" + name + "' is " + shape_str(rows, cols) +
                           ", model expects " + shape_str(p.value));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto bits = r.get<std::uint64_t>();
      std::memcpy(m.data() + i, &bits, sizeof bits);
    }
    if (!m.allFinite()) throw NumericError("checkpoint entry '" + name + "' is non-finite");
    seen.insert(name);
    staged.emplace_back(&p, std::move(m));
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint at offset " + std::to_string(r.pos()));
  if (!allow_missing)
    for (const Parameter* p : store.all())
      if (!seen.count(p->name)) throw FormatError("checkpoint lacks parameter '" + p->name + "'");
  for (auto& [p, m] : staged) p->value = std::move(m);
}

void load_checkpoint(const std::filesystem::path& path, ParameterStore& store, bool allow_missing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  decode_checkpoint(bytes, store, allow_missing);
}

// ---- network evaluation ----------------------------------------------------

ImageContext encode_image(Graph& g, const ModelBundle& m, const FeatureGrid& grid) {
  if (grid.dim() != m.dims().feature_dim)
    throw DimensionError("image features " + shape_str(grid.values) + " vs feature dim " +
                         std::to_string(m.dims().feature_dim));
  if (grid.regions() < 1) throw InputError("image has no regions");
  ImageContext img;
  Var v = g.constant(grid.values);
  img.regions = tanh(add(matmul(v, g.param(*m.image.weights)), g.param(*m.image.bias)));
  img.english_keys = project_keys(g, m.english.attention, img.regions);
  img.german_keys = project_keys(g, m.german.region_attention, img.regions);
  return img;
}

RecurrentState init_english_state(Graph& g, const ModelBundle& m, const ImageContext& img) {
  return {init_state(g, m.english.init_h, img.regions), init_state(g, m.english.init_c, img.regions)};
}

RecurrentState init_german_state(Graph& g, const ModelBundle& m, const ImageContext& img) {
  return {init_state(g, m.german.init_h, img.regions), init_state(g, m.german.init_c, img.regions)};
}

namespace {

void check_token(int token, int vocab, const char* which) {
  if (token < 0 || token >= vocab)
    throw DimensionError(std::string(which) + " token " + std::to_string(token) +
                         " outside vocabulary of size " + std::to_string(vocab));
}

}  // namespace

EnglishStepOutput english_step(Graph& g, const ModelBundle& m, const ImageContext& img,
                               const RecurrentState& prev, int y_prev, const DropoutContext& drop) {
  const EnglishDecoder& d = m.english;
  check_token(y_prev, m.dims().en_vocab, "English");
  AttentionOutput att = attend(g, d.attention, img.english_keys, prev.h);
  Var emb = drop.apply(embedding(g.param(*d.embed), y_prev));
  LstmState next = lstm_cell(g, d.lstm, concat({att.context, emb}), prev.h, prev.c);
  Var logits = linear(g, d.output, drop.apply(next.h));
  return {log_softmax(logits, 0), {next.h, next.c}, att.weights};
}

Var encode_caption(Graph& g, const ModelBundle& m, const TokenSeq& tokens, const DropoutContext& drop) {
  if (!m.dual()) throw ConfigError("soft-attn models have no caption encoder");
  if (tokens.empty()) throw InputError("encode_caption: empty token sequence");
  const CaptionEncoder& e = m.encoder;
  const Eigen::Index H = m.dims().hidden;
  std::vector<Var> inputs;
  for (int t : tokens) {
    check_token(t, m.dims().en_vocab, "English");
    inputs.push_back(drop.apply(embedding(g.param(*e.embed), t)));
  }
  const std::size_t n = inputs.size();
  std::vector<Var> fwd(n), bwd(n);
  Var h = g.constant(Matrix::Zero(H, 1));
  for (std::size_t j = 0; j < n; ++j) fwd[j] = h = gru_cell(g, e.forward, inputs[j], h);
  h = g.constant(Matrix::Zero(H, 1));
  for (std::size_t j = n; j-- > 0;) bwd[j] = h = gru_cell(g, e.backward, inputs[j], h);
  std::vector<Var> rows;
  for (std::size_t j = 0; j < n; ++j) rows.push_back(concat({fwd[j], bwd[j]}));
  return stack_rows(rows);
}

CaptionEncoding prepare_caption(Graph& g, const ModelBundle& m, const TokenSeq& tokens,
                                const DropoutContext& drop) {
  Var states = encode_caption(g, m, tokens, drop);
  return {states, project_keys(g, m.german.caption_attention, states)};
}

GermanStepOutput german_step(Graph& g, const ModelBundle& m, const ImageContext& img,
                             const CaptionEncoding* caption, const RecurrentState& prev, int y_prev,
                             const DropoutContext& drop) {
  const GermanDecoder& d = m.german;
  check_token(y_prev, m.dims().de_vocab, "German");
  if (d.dual && caption == nullptr) throw ConfigError("dual-attention decoder needs a caption encoding");
  GermanStepOutput out;
  AttentionOutput region = attend(g, d.region_attention, img.german_keys, prev.h);
  out.alpha = region.weights;
  Var emb = drop.apply(embedding(g.param(*d.embed), y_prev));
  Var x;
  if (d.dual) {
    AttentionOutput words = attend(g, d.caption_attention, caption->keys, prev.h);
    out.beta = words.weights;
    x = concat({region.context, words.context, emb});
  } else {
    x = concat({region.context, emb});
  }
  LstmState next = lstm_cell(g, d.lstm, x, prev.h, prev.c);
  out.state = {next.h, next.c};
  out.log_probs = log_softmax(linear(g, d.output, drop.apply(next.h)), 0);
  return out;
}

TokenSeq targets_of(const TokenSeq& seq) {
  if (seq.size() < 2) throw InputError("token sequence needs BOS and at least one target");
  return TokenSeq(seq.begin() + 1, seq.end());
}

ForcedRun force_english(Graph& g, const ModelBundle& m, const ImageContext& img,
                        const TokenSeq& tokens, const DropoutContext& drop) {
  if (tokens.size() < 2) throw InputError("force_english: sequence needs BOS and a target");
  ForcedRun run;
  RecurrentState state = init_english_state(g, m, img);
  std::vector<Var> alphas;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    EnglishStepOutput s = english_step(g, m, img, state, tokens[t], drop);
    run.log_probs.push_back(s.log_probs);
    alphas.push_back(s.alpha);
    state = s.state;
  }
  run.alpha = stack_rows(alphas);
  return run;
}

ForcedRun force_german(Graph& g, const ModelBundle& m, const ImageContext& img,
                       const CaptionEncoding* caption, const TokenSeq& tokens,
                       const DropoutContext& drop) {
  if (tokens.size() < 2) throw InputError("force_german: sequence needs BOS and a target");
  ForcedRun run;
  RecurrentState state = init_german_state(g, m, img);
  std::vector<Var> alphas, betas;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    GermanStepOutput s = german_step(g, m, img, caption, state, tokens[t], drop);
    run.log_probs.push_back(s.log_probs);
    alphas.push_back(s.alpha);
    if (s.beta.valid()) betas.push_back(s.beta);
    state = s.state;
  }
  run.alpha = stack_rows(alphas);
  if (!betas.empty()) run.beta = stack_rows(betas);
  return run;
}

}  // namespace cyclecap
