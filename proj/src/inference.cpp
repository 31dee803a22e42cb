#include "cyclecap/inference.hpp"

#include <limits>
#include <thread>

namespace cyclecap {

namespace {

Vector masked(const Matrix& log_probs) {
  Vector lp = log_probs.col(0);
  lp(kPad) = -std::numeric_limits<double>::infinity();
  lp(kBos) = -std::numeric_limits<double>::infinity();
  return lp;
}

template <typename State, typename StepFn>
DecodeResult run_decode(StepFn&& step, const State& init, const BeamConfig& beam) {
  return beam_decode(std::forward<StepFn>(step), init, kBos, kEos, beam);
}

Matrix rows_of(const std::vector<std::vector<Vector>>& attention, std::size_t head) {
  if (attention.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(attention.size()), attention.front()[head].size());
  for (std::size_t t = 0; t < attention.size(); ++t)
    m.row(static_cast<Eigen::Index>(t)) = attention[t][head].transpose();
  return m;
}

DecodeResult decode_english(Graph& g, const ModelBundle& model, const ImageContext& img,
                            const BeamConfig& beam) {
  auto step = [&](const RecurrentState& s, int prev) {
    EnglishStepOutput out = english_step(g, model, img, s, prev);
    return StepResult<RecurrentState>{masked(out.log_probs.value()), out.state,
                                      {Vector(out.alpha.value().col(0))}};
  };
  return run_decode(step, init_english_state(g, model, img), beam);
}

}  // namespace

DecodeResult caption_english(const ModelBundle& model, const FeatureGrid& grid, const BeamConfig& beam) {
  Graph g(false);
  const ImageContext img = encode_image(g, model, grid);
  return decode_english(g, model, img, beam);
}

CaptionResult caption_image(const ModelBundle& model, const FeatureGrid& grid, const BeamConfig& beam) {
  validate(beam);
  Graph g(false);
  const ImageContext img = encode_image(g, model, grid);
  CaptionResult out;

  CaptionEncoding caption;
  if (model.dual()) {
    const DecodeResult en = decode_english(g, model, img, beam);
    out.en = en.tokens;
    out.en_truncated = en.truncated;
    out.record.a_en = rows_of(en.attention, 0);
    TokenSeq encoder_input = en.tokens;
    const bool has_words = std::any_of(en.tokens.begin(), en.tokens.end(), [](int t) { return t != kEos; });
    if (!has_words) out.empty_pseudo_caption = true;
    if (encoder_input.empty()) {
      encoder_input = {kEos};
      out.record.a_en = Matrix::Constant(1, grid.regions(), 1.0 / static_cast<double>(grid.regions()));
    }
    caption = prepare_caption(g, model, encoder_input);
  }

  auto step = [&](const RecurrentState& s, int prev) {
    GermanStepOutput o = german_step(g, model, img, model.dual() ? &caption : nullptr, s, prev);
    StepResult<RecurrentState> r{masked(o.log_probs.value()), o.state, {Vector(o.alpha.value().col(0))}};
    if (o.beta.valid()) r.attention.push_back(Vector(o.beta.value().col(0)));
    return r;
  };
  const DecodeResult de = run_decode(step, init_german_state(g, model, img), beam);
  out.de = de.tokens;
  out.de_truncated = de.truncated;
  out.record.a_de = rows_of(de.attention, 0);
  if (model.dual()) out.record.b = rows_of(de.attention, 1);
  return out;
}

std::vector<CaptionResult> caption_images(const ModelBundle& model,
                                          std::span<const FeatureGrid* const> grids,
                                          const BeamConfig& beam, int threads) {
  std::vector<CaptionResult> out(grids.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), grids.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < grids.size(); ++i) out[i] = caption_image(model, *grids[i], beam);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < grids.size(); i += workers) out[i] = caption_image(model, *grids[i], beam);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

AttentionRecord teacher_forced_record(const ModelBundle& model, const TripleRecord& triple) {
  if (!model.dual()) throw ConfigError("teacher_forced_record needs a dual-attention model");
  Graph g(false);
  const ImageContext img = encode_image(g, model, *triple.features);
  AttentionRecord rec;
  rec.a_en = force_english(g, model, img, triple.en).alpha.value();
  const CaptionEncoding caption = prepare_caption(g, model, targets_of(triple.en));
  const ForcedRun de = force_german(g, model, img, &caption, triple.de);
  rec.a_de = de.alpha.value();
  rec.b = de.beta.value();
  return rec;
}

double object_alignment_mass(const ModelBundle& model, std::span<const TripleRecord> triples) {
  double total = 0.0;
  long count = 0;
  for (const TripleRecord& t : triples) {
    if (t.objects.empty()) continue;
    Graph g(false);
    const ImageContext img = encode_image(g, model, *t.features);
    std::optional<CaptionEncoding> caption;
    if (model.dual()) caption = prepare_caption(g, model, targets_of(t.en));
    const Matrix a_de = force_german(g, model, img, caption ? &*caption : nullptr, t.de).alpha.value();
    for (const ObjectAlignment& o : t.objects) {
      if (o.de_pos < 0 || o.de_pos >= a_de.rows() || o.region < 0 || o.region >= a_de.cols())
        throw InputError(t.image_id + ": alignment metadata outside the attention matrix");
      total += a_de(o.de_pos, o.region);
      ++count;
    }
  }
  if (count == 0) throw InputError("no alignment metadata in the evaluated records");
  return total / static_cast<double>(count);
}

}  // namespace cyclecap
