#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "blindloss/train.hpp"

namespace blindloss {

using Json = nlohmann::ordered_json;

TrainConfig default_config();

// Strict parse: unknown keys are rejected with their full path; missing keys
// fall back to the documented defaults; values are range-checked.
TrainConfig config_from_json(const Json& j);
TrainConfig load_config(const std::filesystem::path& path);

// Canonical form: fixed key order, every field explicit.
Json config_to_json(const TrainConfig& cfg);
std::string dump_config(const TrainConfig& cfg);

void validate_config(const TrainConfig& cfg);

// Reproduction record for a CLI run. Re-running the same command from the
// manifest regenerates byte-identical metrics and summaries.
struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    Json config;
    std::string corpus;  // corpus manifest text used by the run
    std::string out_dir;
    std::string timestamp;
    std::string version;
    std::vector<std::string> outputs;
};

Json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);

std::string blindloss_version();

}  // namespace blindloss
