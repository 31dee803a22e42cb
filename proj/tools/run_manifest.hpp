#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace cyclecap::cli {

using json = nlohmann::ordered_json;

// Git blob object id: sha1("blob <size>\0" + content), lowercase hex.
std::string blob_hash(const std::string& content);
std::string file_hash(const std::filesystem::path& path);

// Everything needed to rerun one subcommand.
struct Run {
  std::string command;
  json config;
  json args;
  std::filesystem::path out_dir;
};

// Inputs a run reads, hashed by content. Manifest files pull in the feature
// files they reference; model directories contribute their four artifacts.
json hash_inputs(const Run& run);
std::string combined_hash(const json& inputs);

json make_manifest(const Run& run, const json& inputs, const std::vector<std::string>& outputs);
Run run_from_manifest(const json& manifest);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cyclecap::cli
