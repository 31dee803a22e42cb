#include "run_manifest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

#include "cyclecap/data.hpp"
#include "cyclecap/errors.hpp"

namespace cyclecap::cli {

namespace fs = std::filesystem;

std::string blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

std::string file_hash(const fs::path& path) { return blob_hash(read_text(path)); }

namespace {

const std::set<std::string> kManifestArgs = {"pairs", "triples", "val", "manifest", "refs"};
const std::set<std::string> kFileArgs = {"captions"};
const std::set<std::string> kModelArgs = {"init", "model"};
const char* kModelFiles[] = {"model.ckpt", "config.json", "en.vocab", "de.vocab"};

}  // namespace

json hash_inputs(const Run& run) {
  json inputs = json::object();
  for (const auto& [key, value] : run.args.items()) {
    if (!value.is_string() || value.get<std::string>().empty()) continue;
    const fs::path p = value.get<std::string>();
    if (kManifestArgs.count(key)) {
      inputs[p.string()] = file_hash(p);
      std::set<std::string> seen;
      for (const RawRecord& r : load_manifest(p))
        if (seen.insert(r.features_path).second) {
          const fs::path f = p.parent_path() / r.features_path;
          inputs[f.string()] = file_hash(f);
        }
    } else if (kFileArgs.count(key)) {
      inputs[p.string()] = file_hash(p);
    } else if (kModelArgs.count(key)) {
      for (const char* name : kModelFiles) inputs[(p / name).string()] = file_hash(p / name);
    }
  }
  return inputs;
}

std::string combined_hash(const json& inputs) {
  std::string all;
  for (const auto& [path, hash] : inputs.items()) all += hash.get<std::string>() + "\n";
  return blob_hash(all);
}

json make_manifest(const Run& run, const json& inputs, const std::vector<std::string>& outputs) {
  json m;
  m["format"] = "cyclecap-run-manifest-v1";
  m["command"] = run.command;
  m["seed"] = run.config.at("seed");
  m["config"] = run.config;
  m["args"] = run.args;
  m["out_dir"] = run.out_dir.string();
  m["inputs"] = inputs;
  m["input_hash"] = combined_hash(inputs);
  json out = json::object();
  for (const std::string& rel : outputs) out[rel] = file_hash(run.out_dir / rel);
  m["outputs"] = out;
  return m;
}

Run run_from_manifest(const json& manifest) {
  if (!manifest.is_object() || manifest.value("format", "") != "cyclecap-run-manifest-v1")
    throw FormatError("not a cyclecap run manifest");
  Run run;
  try {
    run.command = manifest.at("command").get<std::string>();
    run.config = manifest.at("config");
    run.args = manifest.at("args");
    run.out_dir = manifest.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("run manifest: ") + e.what());
  }
  return run;
}

}  // namespace cyclecap::cli
