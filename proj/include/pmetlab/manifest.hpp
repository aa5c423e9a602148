#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmetlab {

struct ManifestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Provenance record dropped next to every command's outputs. The timestamp
// makes manifests the one artifact exempt from byte-identity across reruns;
// checkpoints, reports and datasets must still match exactly.
struct RunManifest {
    std::string command;
    std::vector<std::string> config_files;        // --config paths, in order
    std::map<std::string, uint64_t> seeds;        // role -> seed
    std::map<std::string, std::string> inputs;    // role -> path (hashed on write)
    std::vector<std::string> outputs;             // files the command wrote
    int64_t thread_bound = 1;
};

// Hashes every input file, stamps a UTC timestamp, and writes
// <dir>/manifest.json. Returns the manifest path.
std::string write_manifest(const std::string& dir, const RunManifest& manifest);

}  // namespace pmetlab
