#include "pmetlab/manifest.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pmetlab/hash.hpp"

namespace pmetlab {

namespace {

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

std::string write_manifest(const std::string& dir, const RunManifest& manifest) {
    if (manifest.command.empty()) throw ManifestError("manifest: empty command");

    nlohmann::json j;
    j["command"] = manifest.command;
    j["config_files"] = manifest.config_files;
    j["seeds"] = manifest.seeds;
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& [role, path] : manifest.inputs) {
        inputs[role] = {{"path", path}, {"fnv1a64", hash_hex(fnv1a_file(path))}};
    }
    j["inputs"] = inputs;
    j["outputs"] = manifest.outputs;
    j["thread_bound"] = manifest.thread_bound;
    j["timestamp"] = utc_timestamp();

    const std::filesystem::path out = std::filesystem::path(dir) / "manifest.json";
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw ManifestError("cannot open for writing: " + out.string());
    f << j.dump(2) << '\n';
    if (!f) throw ManifestError("write failed: " + out.string());
    return out.string();
}

}  // namespace pmetlab
