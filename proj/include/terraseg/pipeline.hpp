#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "terraseg/types.hpp"

namespace terraseg {

// Flat key = value config; # starts a comment. Flags given on the CLI
// override file values.
class RunConfig {
public:
    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_num(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

uint64_t fnv1a64_file(const std::string& path);
uint64_t fnv1a64_bytes(const void* data, size_t len);

struct PipelineResult {
    std::string report_path;
    std::string manifest_path;
    std::vector<std::pair<std::string, uint64_t>> artifacts;
    double gbt_auc = 0.0;
    double unet_f1 = 0.0;
    bool ran_gbt = false, ran_unet = false;
};

// One-shot run: synth (unless input paths are given) -> colorize -> encoder
// -> featurize -> gbt and/or rasterize -> unet -> stitch -> evaluate. Every
// artifact lands under out_dir and is listed in manifest.json with its
// content hash.
PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir);

} // namespace terraseg
