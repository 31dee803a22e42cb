// cyclecap: command-line driver for data generation, training, decoding,
// evaluation and the built-in verification checks.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "cyclecap/export.hpp"
#include "cyclecap/gradcheck.hpp"
#include "cyclecap/inference.hpp"
#include "cyclecap/metrics.hpp"
#include "cyclecap/training.hpp"
#include "run_manifest.hpp"

using namespace cyclecap;
using cyclecap::cli::json;
using cyclecap::cli::Run;
namespace fs = std::filesystem;

namespace {

// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitData = 4;
constexpr int kExitNumeric = 5;
constexpr int kExitIo = 6;
constexpr int kExitState = 7;
constexpr int kExitInternal = 70;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return kExitConfig;
    case ErrorCategory::data: return kExitData;
    case ErrorCategory::numeric: return kExitNumeric;
    case ErrorCategory::io: return kExitIo;
    case ErrorCategory::state: return kExitState;
  }
  return kExitInternal;
}

// Defaults. "_source" tells which values reproduce the reference training
// setup and which were picked for this implementation.
json default_config() {
  json c;
  c["seed"] = 1;
  c["threads"] = 1;
  c["data"] = {{"min_freq", 5}, {"max_len", 50}};
  c["model"] = {{"variant", "cycle-attn"}, {"proj_dim", 32}, {"embed", 64}, {"hidden", 64}, {"att_hidden", 64}};
  c["train"] = {{"learning_rate", 4e-4}, {"batch_size", 32}, {"max_epochs", 50}, {"patience", 20},
                {"dropout", 0.5},        {"lambda", 1.0},    {"freeze_part1", false}, {"cycle_norm", "frobenius"},
                {"validate_every", 1}};
  c["decode"] = {{"beam_size", 3}, {"max_len", 50}};
  c["synth"] = {{"images", 16},      {"regions", 16},    {"feature_dim", 32}, {"object_classes", 8},
                {"filler_words", 8}, {"objects_min", 1}, {"objects_max", 2},  {"filler_min", 1},
                {"filler_max", 3},   {"extra_en_captions", 0}, {"object_scale", 1.0}, {"noise", 0.1}};
  c["_source"] = {{"reference-setup", {"train.learning_rate", "train.batch_size", "train.patience", "train.dropout",
                             "decode.beam_size", "decode.max_len", "data.min_freq", "data.max_len"}},
                  {"implementation", {"model.*", "train.max_epochs", "train.cycle_norm", "synth.*"}}};
  return c;
}

// Overlays `over` onto `base`; keys must already exist in the defaults.
void merge_config(json& base, const json& over, const std::string& where) {
  for (const auto& [key, value] : over.items()) {
    if (key.starts_with("_")) continue;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    if (base[key].is_object()) {
      if (!value.is_object()) throw ConfigError("config key '" + where + key + "' must be an object");
      merge_config(base[key], value, where + key + ".");
    } else {
      const bool num_ok = base[key].is_number() && value.is_number();
      if (!num_ok && base[key].type() != value.type())
        throw ConfigError("config key '" + where + key + "' has the wrong type");
      base[key] = value;
    }
  }
}

template <typename T>
T get(const json& c, const char* section, const char* key) {
  try {
    return c.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config value ") + section + "." + key + " missing or mistyped");
  }
}

TrainConfig train_config(const json& c) {
  TrainConfig t;
  t.learning_rate = get<double>(c, "train", "learning_rate");
  t.batch_size = get<int>(c, "train", "batch_size");
  t.max_epochs = get<int>(c, "train", "max_epochs");
  t.patience = get<int>(c, "train", "patience");
  t.dropout = get<double>(c, "train", "dropout");
  t.lambda = get<double>(c, "train", "lambda");
  t.freeze_part1 = get<bool>(c, "train", "freeze_part1");
  t.cycle_norm = parse_cycle_norm(get<std::string>(c, "train", "cycle_norm"));
  t.validate_every = get<int>(c, "train", "validate_every");
  t.max_len = get<int>(c, "decode", "max_len");
  t.seed = c.at("seed").get<std::uint64_t>();
  t.threads = c.at("threads").get<int>();
  validate(t);
  return t;
}

BeamConfig beam_config(const json& c) {
  BeamConfig b{get<int>(c, "decode", "beam_size"), get<int>(c, "decode", "max_len")};
  validate(b);
  return b;
}

SynthSpec synth_spec(const json& c) {
  SynthSpec s;
  s.seed = c.at("seed").get<std::uint64_t>();
  s.images = get<int>(c, "synth", "images");
  s.regions = get<int>(c, "synth", "regions");
  s.feature_dim = get<int>(c, "synth", "feature_dim");
  s.object_classes = get<int>(c, "synth", "object_classes");
  s.filler_words = get<int>(c, "synth", "filler_words");
  s.objects_min = get<int>(c, "synth", "objects_min");
  s.objects_max = get<int>(c, "synth", "objects_max");
  s.filler_min = get<int>(c, "synth", "filler_min");
  s.filler_max = get<int>(c, "synth", "filler_max");
  s.extra_en_captions = get<int>(c, "synth", "extra_en_captions");
  s.object_scale = get<double>(c, "synth", "object_scale");
  s.noise = get<double>(c, "synth", "noise");
  validate(s);
  return s;
}

std::string arg(const Run& run, const char* key) {
  return run.args.contains(key) && run.args[key].is_string() ? run.args[key].get<std::string>() : std::string();
}

std::string require_arg(const Run& run, const char* key) {
  std::string v = arg(run, key);
  if (v.empty()) throw ConfigError(std::string("--") + key + " is required for " + run.command);
  return v;
}

void log(const std::string& line) { std::cerr << line << "\n"; }

// ---- corpus and model directories ------------------------------------------

struct Loaded {
  std::vector<RawRecord> raw;
  std::map<std::string, std::shared_ptr<const FeatureGrid>> grids;
};

Loaded load_corpus(const fs::path& manifest) {
  Loaded l;
  l.raw = load_manifest(manifest);
  if (l.raw.empty()) throw InputError("manifest '" + manifest.string() + "' has no records");
  l.grids = load_feature_files(l.raw, manifest.parent_path());
  return l;
}

std::vector<TripleRecord> encode(const Loaded& l, const Vocabulary& en, const Vocabulary* de, const json& cfg,
                                 const std::string& what) {
  EncodeOptions opts;
  opts.require_german = de != nullptr;
  opts.max_len = get<int>(cfg, "data", "max_len");
  EncodedCorpus e = encode_records(l.raw, l.grids, en, de, opts);
  for (const std::string& s : e.skipped) log("skipped " + what + " record: " + s);
  if (e.records.empty()) throw InputError("no usable " + what + " records");
  return std::move(e.records);
}

Vocabulary build_vocab(const std::vector<RawRecord>& raw, bool german, int min_freq) {
  std::vector<Words> text;
  for (const RawRecord& r : raw) text.push_back(german ? r.de : r.en);
  return Vocabulary::build(text, min_freq);
}

ModelDims dims_from(const json& c, int feature_dim, const Vocabulary& en, const Vocabulary& de) {
  ModelDims d;
  d.feature_dim = feature_dim;
  d.proj_dim = get<int>(c, "model", "proj_dim");
  d.embed = get<int>(c, "model", "embed");
  d.hidden = get<int>(c, "model", "hidden");
  d.att_hidden = get<int>(c, "model", "att_hidden");
  d.en_vocab = en.size();
  d.de_vocab = de.size();
  return d;
}

json dims_json(const ModelDims& d) {
  return {{"feature_dim", d.feature_dim}, {"proj_dim", d.proj_dim}, {"embed", d.embed},        {"hidden", d.hidden},
          {"att_hidden", d.att_hidden},   {"en_vocab", d.en_vocab}, {"de_vocab", d.de_vocab}};
}

struct ModelDir {
  Vocabulary en;
  Vocabulary de;
  std::unique_ptr<ModelBundle> model;
};

ModelDir load_model_dir(const fs::path& dir, std::optional<Variant> variant = std::nullopt) {
  ModelDir m;
  json meta;
  try {
    meta = json::parse(cli::read_text(dir / "config.json"));
  } catch (const json::parse_error& e) {
    throw FormatError("model config: " + std::string(e.what()));
  }
  m.en = Vocabulary::load(dir / "en.vocab");
  m.de = Vocabulary::load(dir / "de.vocab");
  ModelDims d;
  try {
    const json& j = meta.at("dims");
    d.feature_dim = j.at("feature_dim");
    d.proj_dim = j.at("proj_dim");
    d.embed = j.at("embed");
    d.hidden = j.at("hidden");
    d.att_hidden = j.at("att_hidden");
    d.en_vocab = j.at("en_vocab");
    d.de_vocab = j.at("de_vocab");
  } catch (const json::exception& e) {
    throw FormatError("model config dims: " + std::string(e.what()));
  }
  if (d.en_vocab != m.en.size() || d.de_vocab != m.de.size())
    throw FormatError("model directory vocabularies do not match its config");
  const Variant v = variant ? *variant : parse_variant(meta.value("variant", "cycle-attn"));
  m.model = std::make_unique<ModelBundle>(d, v, 0);
  load_checkpoint(dir / "model.ckpt", m.model->params());
  return m;
}

std::vector<std::string> save_model_dir(const fs::path& dir, const ModelDir& m, const Run& run) {
  fs::create_directories(dir);
  save_checkpoint(dir / "model.ckpt", m.model->params());
  json meta;
  meta["variant"] = variant_name(m.model->variant());
  meta["dims"] = dims_json(m.model->dims());
  meta["config"] = run.config;
  cli::write_text(dir / "config.json", meta.dump(2) + "\n");
  m.en.save(dir / "en.vocab");
  m.de.save(dir / "de.vocab");
  return {"model.ckpt", "config.json", "en.vocab", "de.vocab"};
}

TrainHooks console_hooks() {
  TrainHooks h;
  h.on_epoch = [](const std::string& stage, const EpochRecord& e) {
    char line[200];
    std::snprintf(line, sizeof line, "[%s] epoch %d  nll/token %.4f  cycle %.4f  loss %.4f%s", stage.c_str(), e.epoch,
                  e.nll_per_token, e.cycle, e.loss, e.improved ? "  *" : "");
    std::string s = line;
    if (e.val_cider >= 0.0) {
      std::snprintf(line, sizeof line, "  val CIDEr-D %.2f", e.val_cider);
      s += line;
    }
    log(s);
  };
  h.warn = [](const std::string& w) { log("warning: " + w); };
  return h;
}

std::string join(const Words& w) {
  std::string s;
  for (const auto& t : w) s += (s.empty() ? "" : " ") + t;
  return s;
}

// ---- subcommands -----------------------------------------------------------

using Outputs = std::vector<std::string>;

Outputs cmd_synth(const Run& run) {
  const SynthCorpus corpus = generate_synthetic(synth_spec(run.config));
  write_synthetic(corpus, run.out_dir);
  Outputs out = {"triples.jsonl", "pairs.jsonl"};
  std::set<std::string> seen;
  for (const RawRecord& r : corpus.pairs)
    if (seen.insert(r.features_path).second) out.push_back(r.features_path);
  log("wrote " + std::to_string(corpus.triples.size()) + " triples and " + std::to_string(corpus.pairs.size()) +
      " pairs to " + run.out_dir.string());
  return out;
}

Outputs cmd_pretrain(const Run& run) {
  const Loaded pairs = load_corpus(require_arg(run, "pairs"));
  const Loaded triples = load_corpus(require_arg(run, "triples"));
  const int min_freq = get<int>(run.config, "data", "min_freq");
  ModelDir m;
  m.en = build_vocab(pairs.raw, false, min_freq);
  m.de = build_vocab(triples.raw, true, min_freq);
  const auto enc = encode(pairs, m.en, nullptr, run.config, "pair");
  std::vector<TripleRecord> val;
  if (!arg(run, "val").empty()) val = encode(load_corpus(arg(run, "val")), m.en, nullptr, run.config, "validation");
  const ModelDims dims = dims_from(run.config, static_cast<int>(enc.front().features->dim()), m.en, m.de);
  m.model = std::make_unique<ModelBundle>(dims, parse_variant(get<std::string>(run.config, "model", "variant")),
                                          run.config.at("seed").get<std::uint64_t>());
  const TrainReport report = pretrain_part1(*m.model, enc, val, train_config(run.config), console_hooks());
  Outputs out = save_model_dir(run.out_dir, m, run);
  cli::write_text(run.out_dir / "report.jsonl", report_lines(report));
  out.push_back("report.jsonl");
  return out;
}

Outputs cmd_train(const Run& run) {
  const Loaded triples = load_corpus(require_arg(run, "triples"));
  const Variant variant = parse_variant(get<std::string>(run.config, "model", "variant"));
  ModelDir m;
  if (!arg(run, "init").empty()) {
    m = load_model_dir(arg(run, "init"), variant);
  } else {
    const int min_freq = get<int>(run.config, "data", "min_freq");
    m.en = build_vocab(triples.raw, false, min_freq);
    m.de = build_vocab(triples.raw, true, min_freq);
  }
  const auto enc = encode(triples, m.en, &m.de, run.config, "triple");
  std::vector<TripleRecord> val;
  if (!arg(run, "val").empty()) val = encode(load_corpus(arg(run, "val")), m.en, &m.de, run.config, "validation");
  if (!m.model) {
    const ModelDims dims = dims_from(run.config, static_cast<int>(enc.front().features->dim()), m.en, m.de);
    m.model = std::make_unique<ModelBundle>(dims, variant, run.config.at("seed").get<std::uint64_t>());
  }
  const TrainReport report = train_part2(*m.model, enc, val, train_config(run.config), console_hooks());
  Outputs out = save_model_dir(run.out_dir, m, run);
  cli::write_text(run.out_dir / "report.jsonl", report_lines(report));
  out.push_back("report.jsonl");
  return out;
}

Outputs cmd_infer(const Run& run) {
  const ModelDir m = load_model_dir(require_arg(run, "model"));
  const Loaded data = load_corpus(require_arg(run, "manifest"));
  std::vector<std::string> ids;
  std::vector<const FeatureGrid*> grids;
  std::set<std::string> seen;
  for (const RawRecord& r : data.raw)
    if (seen.insert(r.image_id).second) {
      ids.push_back(r.image_id);
      grids.push_back(data.grids.at(r.features_path).get());
    }
  const auto results = caption_images(*m.model, grids, beam_config(run.config), run.config.at("threads").get<int>());
  std::string lines;
  for (std::size_t i = 0; i < results.size(); ++i) {
    json j;
    j["image_id"] = ids[i];
    j["en"] = join(m.en.decode(results[i].en));
    j["de"] = join(m.de.decode(results[i].de));
    j["en_truncated"] = results[i].en_truncated;
    j["de_truncated"] = results[i].de_truncated;
    lines += j.dump() + "\n";
  }
  cli::write_text(run.out_dir / "captions.jsonl", lines);
  log("captioned " + std::to_string(results.size()) + " images");
  return {"captions.jsonl"};
}

Outputs cmd_eval(const Run& run) {
  const bool german = arg(run, "lang") != "en";
  std::map<std::string, References> refs;
  for (const RawRecord& r : load_manifest(require_arg(run, "refs"))) {
    const Words& w = german ? r.de : r.en;
    if (!w.empty()) refs[r.image_id].push_back(w);
  }
  std::vector<Words> cands;
  std::vector<References> matched;
  std::istringstream in(cli::read_text(require_arg(run, "captions")));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const auto it = refs.find(j.at("image_id").get<std::string>());
      if (it == refs.end()) throw InputError("captions line " + std::to_string(lineno) + ": no references for image");
      cands.push_back(tokenize(j.at(german ? "de" : "en").get<std::string>()));
      matched.push_back(it->second);
    } catch (const json::exception& e) {
      throw FormatError("captions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  const std::string name = arg(run, "name").empty() ? "model" : arg(run, "name");
  const std::vector<MetricReport> rows = {evaluate(name, cands, matched)};
  const std::string table = format_report(rows);
  std::cout << table;
  json j = {{"model", name},
            {"language", german ? "de" : "en"},
            {"cider_variant", kCiderVariant},
            {"cider", rows[0].cider},
            {"bleu4", rows[0].bleu4},
            {"records", rows[0].records}};
  cli::write_text(run.out_dir / "metrics.txt", table);
  cli::write_text(run.out_dir / "metrics.json", j.dump(2) + "\n");
  return {"metrics.txt", "metrics.json"};
}

Words row_tokens(const Vocabulary& v, const TokenSeq& ids, Eigen::Index rows) {
  Words w;
  for (Eigen::Index i = 0; i < rows; ++i)
    w.push_back(i < static_cast<Eigen::Index>(ids.size()) ? v.token(ids[static_cast<std::size_t>(i)]) : "<eos>");
  return w;
}

Outputs cmd_attn_export(const Run& run) {
  const ModelDir m = load_model_dir(require_arg(run, "model"));
  const Loaded data = load_corpus(require_arg(run, "manifest"));
  const std::string want = arg(run, "image_id");
  const RawRecord* rec = nullptr;
  for (const RawRecord& r : data.raw)
    if (want.empty() || r.image_id == want) {
      rec = &r;
      break;
    }
  if (!rec) throw InputError("image '" + want + "' not in manifest");
  const FeatureGrid& grid = *data.grids.at(rec->features_path);
  GridGeometry geom;
  if (!arg(run, "geometry").empty()) {
    geom = parse_geometry(arg(run, "geometry"));
  } else {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(grid.regions()))));
    geom = side * side == grid.regions() ? GridGeometry{side, side} : GridGeometry{1, static_cast<int>(grid.regions())};
  }
  AttentionRecord record;
  Words en, de;
  if (run.args.value("teacher_forced", false)) {
    const auto one = std::vector<RawRecord>{*rec};
    Loaded single{one, data.grids};
    const auto enc = encode(single, m.en, &m.de, run.config, "triple");
    record = teacher_forced_record(*m.model, enc.front());
    en = row_tokens(m.en, targets_of(enc.front().en), record.a_en.rows());
    de = row_tokens(m.de, targets_of(enc.front().de), record.a_de.rows());
  } else {
    const CaptionResult r = caption_image(*m.model, grid, beam_config(run.config));
    record = r.record;
    en = row_tokens(m.en, r.en, record.a_en.rows());
    de = row_tokens(m.de, r.de, record.a_de.rows());
  }
  export_attention(record, en, de, geom, run.out_dir);
  Outputs out = {"attention.txt"};
  for (const auto& e : fs::directory_iterator(run.out_dir)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("de_") && name.ends_with(".pgm")) out.push_back(name);
  }
  std::sort(out.begin() + 1, out.end());
  log("exported " + std::to_string(de.size()) + " heatmaps for " + rec->image_id);
  return out;
}

Outputs cmd_gradcheck(const Run& run, bool& ok) {
  const std::string dims = arg(run, "dims").empty() ? "tiny" : arg(run, "dims");
  int hidden = 0;
  if (dims == "tiny")
    hidden = 4;
  else if (dims == "small")
    hidden = 8;
  else
    throw ConfigError("--dims must be tiny or small");
  SynthSpec spec;
  spec.seed = run.config.at("seed").get<std::uint64_t>();
  spec.images = 2;
  spec.regions = 4;
  spec.feature_dim = 6;
  spec.object_classes = 4;
  spec.filler_words = 3;
  spec.objects_max = 1;
  spec.filler_max = 1;
  const SynthCorpus corpus = generate_synthetic(spec);
  const Vocabulary en = build_vocab(corpus.triples, false, 1), de = build_vocab(corpus.triples, true, 1);
  Loaded l;
  l.raw = corpus.triples;
  for (std::size_t i = 0; i < corpus.triples.size(); ++i)
    l.grids[corpus.triples[i].features_path] = std::make_shared<const FeatureGrid>(corpus.grids[i]);
  const auto triples = encode(l, en, &de, run.config, "triple");
  ModelDims d;
  d.feature_dim = spec.feature_dim;
  d.proj_dim = d.embed = d.att_hidden = hidden / 2;
  d.hidden = hidden;
  d.en_vocab = en.size();
  d.de_vocab = de.size();
  ModelBundle m(d, Variant::cycle_attn, spec.seed);
  Rng rng(spec.seed + 1);
  for (Parameter* p : m.params().all())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-0.5, 0.5);

  std::string report;
  double worst = 0.0;
  const auto run_check = [&](const std::string& label, const std::function<Var(Graph&)>& loss) {
    const auto entries = check_gradients(m.params().all(), loss);
    const double e = max_rel_error(entries);
    worst = std::max(worst, e);
    char line[160];
    for (const GradCheckEntry& g : entries) {
      std::snprintf(line, sizeof line, "%-28s %-22s checked %4zu  max rel %.3e\n", label.c_str(), g.name.c_str(),
                    g.checked, g.max_rel_error);
      report += line;
    }
  };
  for (CycleNorm norm : {CycleNorm::frobenius, CycleNorm::squared})
    run_check(std::string("nll+cycle/") + cycle_norm_name(norm),
              [&](Graph& g) { return triple_loss(g, m, triples[0], 0.7, norm).total; });
  run_check("english-nll", [&](Graph& g) { return english_loss(g, m, triples[0]); });
  char line[120];
  std::snprintf(line, sizeof line, "max relative gradient error %.3e (threshold 1e-3)\n", worst);
  report += line;
  std::cout << line;
  ok = worst < 1e-3;
  cli::write_text(run.out_dir / "gradcheck.txt", report);
  return {"gradcheck.txt"};
}

Outputs cmd_oracle(const Run& run, bool& ok) {
  const AttentionRecord toy = toy_cycle_record();
  const double indirect = indirect_attention(toy)(0, 1);
  Rng rng(run.config.at("seed").get<std::uint64_t>());
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int nx = 1 + static_cast<int>(rng.index(6)), ny = 1 + static_cast<int>(rng.index(5)),
              nz = 1 + static_cast<int>(rng.index(4));
    worst = std::max(worst, check_conditional_independence(random_factorized_joint(nx, ny, nz, rng)).max_discrepancy);
  }
  const IndependenceReport perturbed = check_conditional_independence(perturb_joint(random_factorized_joint(4, 3, 2, rng), 0.01));
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "toy record indirect attention (Hund, R2): %.12f\n"
                "conditional independence over 100 factorized joints: max discrepancy %.3e\n"
                "perturbed joint: max discrepancy %.3e, flagged %s\n",
                indirect, worst, perturbed.max_discrepancy, perturbed.holds ? "no" : "yes");
  std::cout << buf;
  ok = std::abs(indirect - 0.75) < 1e-12 && worst < 1e-12 && !perturbed.holds;
  cli::write_text(run.out_dir / "oracle.txt", buf);
  return {"oracle.txt"};
}

// Runs one subcommand and writes its manifest. Returns the exit code.
int execute(const Run& run) {
  const json inputs = cli::hash_inputs(run);
  fs::create_directories(run.out_dir);
  bool ok = true;
  Outputs out;
  if (run.command == "synth-data")
    out = cmd_synth(run);
  else if (run.command == "pretrain")
    out = cmd_pretrain(run);
  else if (run.command == "train")
    out = cmd_train(run);
  else if (run.command == "infer")
    out = cmd_infer(run);
  else if (run.command == "eval")
    out = cmd_eval(run);
  else if (run.command == "attn-export")
    out = cmd_attn_export(run);
  else if (run.command == "gradcheck")
    out = cmd_gradcheck(run, ok);
  else if (run.command == "oracle-check")
    out = cmd_oracle(run, ok);
  else
    throw ConfigError("unknown command '" + run.command + "'");
  cli::write_text(run.out_dir / "run_manifest.json", cli::make_manifest(run, inputs, out).dump(2) + "\n");
  return ok ? kExitOk : kExitCheckFailed;
}

int replay(const fs::path& manifest_path, const std::string& out_override) {
  json manifest;
  try {
    manifest = json::parse(cli::read_text(manifest_path));
  } catch (const json::parse_error& e) {
    throw FormatError("run manifest: " + std::string(e.what()));
  }
  Run run = cli::run_from_manifest(manifest);
  if (!out_override.empty()) run.out_dir = fs::absolute(out_override);
  const json inputs = cli::hash_inputs(run);
  if (cli::combined_hash(inputs) != manifest.value("input_hash", ""))
    throw InputError("inputs changed since the run was recorded");
  const int code = execute(run);
  const json fresh = json::parse(cli::read_text(run.out_dir / "run_manifest.json"));
  int differ = 0;
  for (const auto& [file, hash] : manifest.at("outputs").items()) {
    const bool same = fresh["outputs"].contains(file) && fresh["outputs"][file] == hash;
    if (!same) {
      log("differs: " + file);
      ++differ;
    }
  }
  if (fresh["outputs"].size() != manifest.at("outputs").size()) ++differ;
  std::cout << "replay " << run.command << ": " << manifest.at("outputs").size() << " outputs, "
            << (differ ? std::to_string(differ) + " differ" : std::string("all identical")) << "\n";
  return differ ? kExitCheckFailed : code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cyclecap: cycle-consistent attention captioning"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> beam_size, max_len, min_freq, threads, epochs, patience, batch_size;
  std::optional<double> lr, dropout;
  std::optional<std::string> variant;
  bool freeze = false;
  std::map<std::string, std::string> paths;
  bool teacher_forced = false;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--threads", threads, "worker threads (default 1)");
    sub->add_option("--out-dir", out_dir, "output directory (default .)");
  };
  const auto training = [&](CLI::App* sub) {
    sub->add_option("--lambda", lambda, "cycle-loss weight");
    sub->add_flag("--freeze-part1", freeze, "keep image and English parameters fixed");
    sub->add_option("--min-freq", min_freq, "vocabulary frequency cutoff (default 5)");
    sub->add_option("--epochs", epochs, "maximum epochs");
    sub->add_option("--patience", patience, "early-stopping patience in epochs");
    sub->add_option("--lr", lr, "learning rate");
    sub->add_option("--dropout", dropout, "dropout rate");
    sub->add_option("--batch-size", batch_size, "minibatch size");
    sub->add_option("--variant", variant, "soft-attn | dual-attn | cycle-attn");
    sub->add_option("--max-len", max_len, "maximum caption length in words (default 50)");
  };
  const auto decoding = [&](CLI::App* sub) {
    sub->add_option("--beam-size", beam_size, "beam width (default 3)");
    sub->add_option("--max-len", max_len, "maximum caption length in words (default 50)");
  };
  const auto path = [&](CLI::App* sub, const std::string& key, const std::string& help, bool required) {
    auto* o = sub->add_option("--" + key, paths[key], help);
    if (required) o->required();
    return o;
  };

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic corpus with known alignments");
  common(synth);
  std::map<std::string, int> synth_ints;
  for (const char* k : {"images", "regions", "feature-dim", "objects-max", "extra-en-captions"})
    synth->add_option(std::string("--") + k, synth_ints[k]);

  auto* pre = app.add_subcommand("pretrain", "train the image projection and English decoder on image-English pairs");
  common(pre);
  training(pre);
  path(pre, "pairs", "image-English manifest", true);
  path(pre, "triples", "triple manifest (German vocabulary)", true);
  path(pre, "val", "validation pair manifest", false);

  auto* train = app.add_subcommand("train", "train on image-English-German triples");
  common(train);
  training(train);
  path(train, "triples", "triple manifest", true);
  path(train, "val", "validation triple manifest", false);
  path(train, "init", "pretrained model directory", false);

  auto* infer = app.add_subcommand("infer", "caption images with beam search");
  common(infer);
  decoding(infer);
  path(infer, "model", "model directory", true);
  path(infer, "manifest", "manifest listing images", true);

  auto* eval = app.add_subcommand("eval", "score captions with CIDEr-D and BLEU4");
  common(eval);
  path(eval, "captions", "captions.jsonl from infer", true);
  path(eval, "refs", "manifest with reference captions", true);
  std::string eval_name = "model", eval_lang = "de";
  eval->add_option("--name", eval_name, "model name for the report");
  eval->add_option("--lang", eval_lang, "de | en")->check(CLI::IsMember({"de", "en"}));

  auto* attn = app.add_subcommand("attn-export", "write attention heatmaps and matrices for one image");
  common(attn);
  decoding(attn);
  path(attn, "model", "model directory", true);
  path(attn, "manifest", "manifest listing images", true);
  std::string image_id, geometry;
  attn->add_option("--image-id", image_id, "image to export (default: first)");
  attn->add_option("--geometry", geometry, "region grid ROWSxCOLS (default: square)");
  attn->add_flag("--teacher-forced", teacher_forced, "use ground-truth captions instead of decoding");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full training objective");
  common(grad);
  std::string dims = "tiny";
  grad->add_option("--dims", dims, "tiny | small")->check(CLI::IsMember({"tiny", "small"}));

  auto* oracle = app.add_subcommand("oracle-check", "toy-record and conditional-independence checks");
  common(oracle);

  auto* rep = app.add_subcommand("replay", "rerun a command from its run_manifest.json and compare outputs");
  std::string manifest_path, replay_out;
  rep->add_option("manifest", manifest_path, "run_manifest.json")->required()->check(CLI::ExistingFile);
  rep->add_option("--out-dir", replay_out, "write to this directory instead of the recorded one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitUsage;
  }

  try {
    if (rep->parsed()) return replay(manifest_path, replay_out);

    Run run;
    run.command = app.get_subcommands().front()->get_name();
    run.config = default_config();
    if (!config_path.empty()) {
      json file;
      try {
        file = json::parse(cli::read_text(config_path), nullptr, true, true);
      } catch (const json::parse_error& e) {
        throw ConfigError("config '" + config_path + "': " + e.what());
      }
      merge_config(run.config, file, "");
    }
    json& c = run.config;
    if (seed) c["seed"] = *seed;
    if (threads) c["threads"] = *threads;
    if (lambda) c["train"]["lambda"] = *lambda;
    if (freeze) c["train"]["freeze_part1"] = true;
    if (min_freq) c["data"]["min_freq"] = *min_freq;
    if (epochs) c["train"]["max_epochs"] = *epochs;
    if (patience) c["train"]["patience"] = *patience;
    if (lr) c["train"]["learning_rate"] = *lr;
    if (dropout) c["train"]["dropout"] = *dropout;
    if (batch_size) c["train"]["batch_size"] = *batch_size;
    if (variant) c["model"]["variant"] = *variant;
    if (beam_size) c["decode"]["beam_size"] = *beam_size;
    if (max_len) c["decode"]["max_len"] = *max_len;
    for (const auto& [k, v] : synth_ints)
      if (synth->count("--" + k)) {
        std::string key = k;
        std::replace(key.begin(), key.end(), '-', '_');
        c["synth"][key] = v;
      }
    if (c["threads"].get<int>() < 1) throw ConfigError("--threads must be >= 1");

    run.args = json::object();
    for (const auto& [k, v] : paths)
      if (!v.empty()) run.args[k] = fs::absolute(v).lexically_normal().string();
    if (eval->parsed()) {
      run.args["name"] = eval_name;
      run.args["lang"] = eval_lang;
    }
    if (attn->parsed()) {
      run.args["image_id"] = image_id;
      run.args["geometry"] = geometry;
      run.args["teacher_forced"] = teacher_forced;
    }
    if (grad->parsed()) run.args["dims"] = dims;
    run.out_dir = fs::absolute(out_dir).lexically_normal();
    return execute(run);
  } catch (const Error& e) {
    std::cerr << "cyclecap: " << e.what() << " [" << category_name(e.category()) << "]\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "cyclecap: io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "cyclecap: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
